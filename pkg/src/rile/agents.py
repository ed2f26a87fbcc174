"""The two learners: an entropy-regularized actor-critic student whose
reward is the trainer's action, and a trainer agent whose scalar action in
[-1, 1] is optimized against discriminator feedback.

Both use tanh-squashed Gaussian policies and one-step TD(0) advantage
updates with a polyak-averaged target critic. The six trainer reward
formulas relating the discriminator output d and the trainer action a_T
live here as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import (
    AdamState,
    MlpParams,
    adam_init,
    adam_step,
    mlp_backward,
    mlp_forward,
    mlp_init,
)

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0

REWARD_VARIANTS = (
    "difference",
    "exponential_difference",
    "multiplication",
    "naive",
    "exponential_naive",
    "sigmoid",
)

ACT_MODES = ("stochastic", "deterministic", "epsilon_greedy")


def upsilon(x):
    """Affine rescale 2x - 1 of a probability to [-1, 1]."""
    x = np.asarray(x, dtype=np.float64)
    if (x < 0).any() or (x > 1).any():
        raise ValueError("upsilon input must lie in [0, 1]")
    out = 2.0 * x - 1.0
    return float(out) if out.ndim == 0 else out


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def trainer_reward(variant: str, d, a_t, exponent_sign: float = -1.0):
    """Reward for the trainer given discriminator output d in (0,1) and
    trainer action a_t in [-1, 1]. Vectorized over arrays.

    exponent_sign applies to the exponential-difference form only; the
    default -1 rewards agreement (the positive form is selectable for
    auditing and rewards maximal disagreement instead).
    """
    if variant not in REWARD_VARIANTS:
        raise ValueError(f"unknown trainer reward variant {variant!r}")
    d = np.asarray(d, dtype=np.float64)
    a = np.asarray(a_t, dtype=np.float64)
    if (d < 0).any() or (d > 1).any():
        raise ValueError("discriminator output must lie in [0, 1]")
    if (np.abs(a) > 1.0 + 1e-12).any():
        raise ValueError("trainer action must lie in [-1, 1]")
    if variant == "difference":
        out = -np.abs(2.0 * d - 1.0 - a)
    elif variant == "exponential_difference":
        out = np.exp(exponent_sign * np.abs(2.0 * d - 1.0 - a))
    elif variant == "multiplication":
        out = (2.0 * d - 1.0) * a
    elif variant == "naive":
        out = d + np.zeros_like(a)
    elif variant == "exponential_naive":
        out = np.exp(1.0 - d) + np.zeros_like(a)
    else:  # sigmoid
        out = d * _sigmoid(a)
    return float(out) if out.ndim == 0 else out


def _policy_heads(actor: MlpParams, states: np.ndarray):
    """(mean, log_std, raw log_std) from the actor net; log_std hard-clipped."""
    y = mlp_forward(actor, np.atleast_2d(states))
    da = y.shape[1] // 2
    mean = y[:, :da]
    raw = y[:, da:]
    return mean, np.clip(raw, LOG_STD_MIN, LOG_STD_MAX), raw


# Pre-squash values are clamped to +-3 (tanh(3) ~ 0.995): boundary actions
# (epsilon-greedy uniform draws near +-1) would otherwise produce unbounded
# atanh targets and blow up the likelihood gradients.
_ATANH_CLIP = 3.0


def _atanh(a):
    return np.clip(np.arctanh(np.clip(a, -1.0 + 1e-12, 1.0 - 1e-12)),
                   -_ATANH_CLIP, _ATANH_CLIP)


def gaussian_tanh_logprob(mean, log_std, actions) -> np.ndarray:
    """log pi(a|s) for a = tanh(u), u ~ N(mean, std), with the exact
    change-of-variables correction. Stable for |u| large."""
    u = _atanh(np.asarray(actions, dtype=np.float64))
    std = np.exp(log_std)
    base = -0.5 * ((u - mean) / std) ** 2 - log_std - 0.5 * np.log(2 * np.pi)
    # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
    corr = 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))
    return (base - corr).sum(axis=1)


def gaussian_entropy(log_std) -> np.ndarray:
    """Entropy of the pre-squash Gaussian, summed over action dims."""
    return (log_std + 0.5 * np.log(2 * np.pi * np.e)).sum(axis=1)


@dataclass
class StudentAgent:
    actor: MlpParams
    critic: MlpParams
    critic_target: MlpParams
    actor_opt: AdamState
    critic_opt: AdamState
    entropy_coef: float = 0.2
    epsilon_greedy: float = 0.2
    gamma: float = 0.99
    tau: float = 0.01
    advantage_norm: bool = True

    @property
    def state_dim(self) -> int:
        return self.critic.in_dim

    @property
    def action_dim(self) -> int:
        return self.actor.out_dim // 2


def make_student(state_dim: int, action_dim: int, hidden, rng,
                 actor_lr=3e-4, critic_lr=3e-4, entropy_coef=0.2,
                 epsilon_greedy=0.2, gamma=0.99, tau=0.01,
                 advantage_norm=True) -> StudentAgent:
    acts = ["relu"] * len(hidden) + ["identity"]
    actor = mlp_init([state_dim, *hidden, 2 * action_dim], acts, rng)
    critic = mlp_init([state_dim, *hidden, 1], acts, rng)
    return StudentAgent(actor, critic, critic.copy(),
                        adam_init(actor, lr=actor_lr), adam_init(critic, lr=critic_lr),
                        entropy_coef, epsilon_greedy, gamma, tau, advantage_norm)


def _sample_action(actor, state, mode, rng, epsilon, action_dim):
    if mode not in ACT_MODES:
        raise ValueError(f"unknown act mode {mode!r}")
    mean, log_std, _ = _policy_heads(actor, state)
    if mode == "deterministic":
        return np.tanh(mean[0])
    # epsilon = 0 must consume no extra draws so it seed-pairs with "stochastic"
    if mode == "epsilon_greedy" and epsilon > 0.0 and rng.uniform() < epsilon:
        return rng.uniform(-1.0, 1.0, size=action_dim)
    noise = rng.normal(size=mean.shape[1])
    return np.tanh(mean[0] + np.exp(log_std[0]) * noise)


def student_act(agent: StudentAgent, state, mode: str, rng=None) -> np.ndarray:
    """Action in [-1,1]^da. epsilon_greedy takes a uniform random action
    with probability epsilon, otherwise samples the policy."""
    return _sample_action(agent.actor, state, mode, rng, agent.epsilon_greedy,
                          agent.action_dim)


def _critic_loss_grads(critic, states, targets):
    v = mlp_forward(critic, states)[:, 0]
    err = v - targets
    loss = float(np.mean(err**2))
    grads, _ = mlp_backward(critic, states, (2.0 * err / len(err))[:, None])
    return loss, grads, v


# Exponentiated-advantage weights: non-negative, so the likelihood term is
# a weighted regression onto observed actions (negative linear weights make
# the mean and log-std diverge off-policy). Clipped for heavy-tail safety.
_ADV_WEIGHT_CLIP = 20.0


def advantage_weights(advantages) -> np.ndarray:
    return np.minimum(np.exp(advantages), _ADV_WEIGHT_CLIP)


def _actor_loss_grads(actor, states, actions, weights, entropy_coef):
    """Weighted log-likelihood ascent plus entropy bonus; weights >= 0 are
    treated as constants (exponentiated advantages in training)."""
    mean, log_std, raw = _policy_heads(actor, states)
    u = _atanh(actions)
    std = np.exp(log_std)
    z = (u - mean) / std
    logp = gaussian_tanh_logprob(mean, log_std, actions)
    ent = gaussian_entropy(log_std)
    n = len(states)
    loss = float(-np.mean(weights * logp) - entropy_coef * np.mean(ent))

    w = weights[:, None]
    d_mean = -(w * z / std) / n
    d_logstd = (-(w * (z**2 - 1.0)) - entropy_coef) / n
    d_logstd = d_logstd * ((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX))
    upstream = np.concatenate([d_mean, d_logstd], axis=1)
    grads, _ = mlp_backward(actor, states, upstream)
    return loss, grads, float(np.mean(ent))


def _polyak(target: MlpParams, source: MlpParams, tau: float) -> MlpParams:
    return MlpParams(
        [(1 - tau) * tw + tau * sw for tw, sw in zip(target.weights, source.weights)],
        [(1 - tau) * tb + tau * sb for tb, sb in zip(target.biases, source.biases)],
        list(target.activations),
        validate=False,
    )


def _td_update(agent, states, actions, rewards, next_states, dones):
    """Shared actor-critic step; returns diagnostics. Rejects non-finite
    losses before any state is touched."""
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    v_next = mlp_forward(agent.critic_target, next_states)[:, 0]
    targets = rewards + agent.gamma * (1.0 - dones) * v_next

    c_loss, c_grads, v = _critic_loss_grads(agent.critic, states, targets)
    adv = targets - v
    if agent.advantage_norm and len(adv) > 1 and adv.std() > 1e-8:
        adv = (adv - adv.mean()) / adv.std()
    a_loss, a_grads, mean_ent = _actor_loss_grads(
        agent.actor, states, actions, advantage_weights(adv), agent.entropy_coef)
    if not (np.isfinite(c_loss) and np.isfinite(a_loss)):
        raise ValueError("non-finite loss in actor-critic update; agent unchanged")

    agent.critic, agent.critic_opt = adam_step(agent.critic, c_grads, agent.critic_opt)
    agent.actor, agent.actor_opt = adam_step(agent.actor, a_grads, agent.actor_opt)
    agent.critic_target = _polyak(agent.critic_target, agent.critic, agent.tau)
    return {"critic_loss": c_loss, "actor_loss": a_loss, "entropy": mean_ent}


def student_update(agent: StudentAgent, batch):
    """One actor-critic step on (s, a, r, s', done) arrays. The critic
    regresses to r + gamma (1-done) V_target(s'); the actor ascends the
    advantage-weighted log-likelihood plus the entropy bonus."""
    states, actions, rewards, next_states, dones = batch
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if len(states) == 0:
        raise ValueError("empty batch")
    diag = _td_update(agent, states, np.atleast_2d(actions), rewards,
                      np.atleast_2d(next_states), dones)
    return agent, diag


@dataclass
class TrainerAgent:
    """Scalar-action policy over the student's (state, action) observation.
    Once frozen, updates are rejected and parameters stay immutable."""

    actor: MlpParams
    critic: MlpParams
    critic_target: MlpParams
    actor_opt: AdamState
    critic_opt: AdamState
    entropy_coef: float = 0.2
    gamma: float = 0.99
    tau: float = 0.01
    advantage_norm: bool = True
    frozen: bool = False

    @property
    def obs_dim(self) -> int:
        return self.critic.in_dim


def make_trainer(obs_dim: int, hidden, rng, actor_lr=3e-4, critic_lr=3e-4,
                 entropy_coef=0.2, gamma=0.99, tau=0.01,
                 advantage_norm=True) -> TrainerAgent:
    acts = ["relu"] * len(hidden) + ["identity"]
    actor = mlp_init([obs_dim, *hidden, 2], acts, rng)
    critic = mlp_init([obs_dim, *hidden, 1], acts, rng)
    return TrainerAgent(actor, critic, critic.copy(),
                        adam_init(actor, lr=actor_lr), adam_init(critic, lr=critic_lr),
                        entropy_coef, gamma, tau, advantage_norm)


def trainer_observation(state, action) -> np.ndarray:
    """The trainer observes the student's concatenated (state, action)."""
    return np.concatenate([np.asarray(state, float).ravel(),
                           np.asarray(action, float).ravel()])


def trainer_act(agent: TrainerAgent, obs, mode: str = "deterministic",
                rng=None) -> float:
    """Scalar action in [-1, 1] (tanh-squashed)."""
    a = _sample_action(agent.actor, obs, mode, rng, 0.0, 1)
    return float(a[0])


def trainer_act_batch(agent: TrainerAgent, obs: np.ndarray) -> np.ndarray:
    """Deterministic actions for a batch of observations."""
    mean, _, _ = _policy_heads(agent.actor, obs)
    return np.tanh(mean[:, 0])


def trainer_update(agent: TrainerAgent, batch):
    """Actor-critic step on (obs, a_T, r_T, obs', done). Rejected while
    frozen."""
    if agent.frozen:
        raise RuntimeError("trainer is frozen; updates are rejected")
    obs, actions, rewards, next_obs, dones = batch
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if len(obs) == 0:
        raise ValueError("empty batch")
    actions = np.asarray(actions, dtype=np.float64).reshape(len(obs), 1)
    diag = _td_update(agent, obs, actions, rewards, np.atleast_2d(next_obs), dones)
    return agent, diag
