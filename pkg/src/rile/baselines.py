"""GAIL, AIRL, and behavioral cloning on the shared harness.

All three reuse the student, discriminator, and orchestration machinery,
so comparisons against the trainer-student path differ only in how the
student's reward is produced: GAIL scores expert-likeness through the
discriminator, AIRL learns an explicit reward head plus a shaping
potential, BC regresses the actor mean directly onto expert actions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agents import StudentAgent, _policy_heads, gaussian_tanh_logprob, make_student
from .envs import ExpertDataset
from .nets import (
    AdamState,
    MlpParams,
    adam_init,
    adam_step,
    mlp_backward,
    mlp_forward,
    mlp_init,
)


def gail_student_reward(d):
    """-log(1 - d): monotone increasing in expert-likeness under the
    artifact-wide convention that the discriminator outputs 1 for expert."""
    d = np.asarray(d, dtype=np.float64)
    out = -np.log1p(-d)
    return float(out) if out.ndim == 0 else out


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class AirlHeads:
    """Learned reward r(s,a) decoupled from a shaping potential V(s)."""

    reward: MlpParams
    potential: MlpParams
    reward_opt: AdamState
    potential_opt: AdamState
    gamma: float = 0.99


def make_airl_heads(state_dim: int, action_dim: int, hidden, lr: float,
                    gamma: float, rng) -> AirlHeads:
    acts = ["relu"] * len(hidden) + ["identity"]
    reward = mlp_init([state_dim + action_dim, *hidden, 1], acts, rng)
    potential = mlp_init([state_dim, *hidden, 1], acts, rng)
    return AirlHeads(reward, potential, adam_init(reward, lr=lr),
                     adam_init(potential, lr=lr), gamma)


def airl_f(heads: AirlHeads, s, a, sp) -> float:
    """f(s,a,s') = r(s,a) + gamma V(s') - V(s) for a single transition."""
    return float(airl_f_batch(heads, np.atleast_2d(s), np.atleast_2d(a),
                              np.atleast_2d(sp))[0])


def airl_f_batch(heads: AirlHeads, s, a, sp) -> np.ndarray:
    sa = np.concatenate([np.atleast_2d(s), np.atleast_2d(a)], axis=1)
    r = mlp_forward(heads.reward, sa)[:, 0]
    v = mlp_forward(heads.potential, np.atleast_2d(s))[:, 0]
    vp = mlp_forward(heads.potential, np.atleast_2d(sp))[:, 0]
    return r + heads.gamma * vp - v


def airl_disc(f, pi_density) -> float:
    """exp(f) / (exp(f) + pi), evaluated in log space as sigmoid(f - log pi)."""
    pi = np.asarray(pi_density, dtype=np.float64)
    if (pi <= 0).any() or not np.isfinite(pi).all():
        raise ValueError("policy density must be positive and finite")
    out = 1.0 / (1.0 + np.exp(-(np.asarray(f, float) - np.log(pi))))
    return float(out) if out.ndim == 0 else out


def _student_logp(student: StudentAgent, s, a) -> np.ndarray:
    mean, log_std, _ = _policy_heads(student.actor, np.atleast_2d(s))
    return gaussian_tanh_logprob(mean, log_std, np.atleast_2d(a))


def airl_loss_and_grads(heads: AirlHeads, expert_batch, student_batch,
                        logp_expert, logp_student):
    """BCE of the structured discriminator vs labels (expert 1, student 0),
    with exact gradients for both heads. Policy log-densities are treated
    as constants."""
    se, ae, spe = (np.atleast_2d(v) for v in expert_batch)
    ss, as_, sps = (np.atleast_2d(v) for v in student_batch)
    fe = airl_f_batch(heads, se, ae, spe)
    fs = airl_f_batch(heads, ss, as_, sps)
    me = fe - logp_expert
    ms = fs - logp_student
    loss = float(np.mean(np.logaddexp(0.0, -me)) + np.mean(np.logaddexp(0.0, ms)))

    dme = -_stable_sigmoid(-me) / len(me)   # d softplus(-m) / dm
    dms = _stable_sigmoid(ms) / len(ms)

    r_grads = None
    v_grads = None
    for s, a, sp, df in ((se, ae, spe, dme), (ss, as_, sps, dms)):
        sa = np.concatenate([s, a], axis=1)
        g_r, _ = mlp_backward(heads.reward, sa, df[:, None])
        g_vp, _ = mlp_backward(heads.potential, sp, (heads.gamma * df)[:, None])
        g_v, _ = mlp_backward(heads.potential, s, (-df)[:, None])
        if r_grads is None:
            r_grads, v_grads = g_r, g_vp
            for k in range(v_grads.n_layers):
                v_grads.weights[k] += g_v.weights[k]
                v_grads.biases[k] += g_v.biases[k]
        else:
            for k in range(r_grads.n_layers):
                r_grads.weights[k] += g_r.weights[k]
                r_grads.biases[k] += g_r.biases[k]
            for k in range(v_grads.n_layers):
                v_grads.weights[k] += g_vp.weights[k] + g_v.weights[k]
                v_grads.biases[k] += g_vp.biases[k] + g_v.biases[k]
    return loss, r_grads, v_grads


def airl_update(heads: AirlHeads, student: StudentAgent, expert_batch,
                student_batch) -> float:
    """One Adam step on both heads using the student's current density."""
    logp_e = _student_logp(student, expert_batch[0], expert_batch[1])
    logp_s = _student_logp(student, student_batch[0], student_batch[1])
    loss, r_grads, v_grads = airl_loss_and_grads(heads, expert_batch, student_batch,
                                                 logp_e, logp_s)
    if not np.isfinite(loss):
        raise ValueError("non-finite AIRL loss; heads unchanged")
    heads.reward, heads.reward_opt = adam_step(heads.reward, r_grads, heads.reward_opt)
    heads.potential, heads.potential_opt = adam_step(heads.potential, v_grads,
                                                     heads.potential_opt)
    return loss


def run_gail(config, expert: ExpertDataset, run_dir=None):
    """Adversarial run with the discriminator-derived student reward."""
    from . import orchestrator

    cfg = orchestrator.replace(config, algorithm="gail")
    return orchestrator.run_training(cfg, expert, run_dir)


def run_airl(config, expert: ExpertDataset, run_dir=None):
    """Adversarial run training AirlHeads; student reward is f(s,a,s')."""
    from . import orchestrator

    cfg = orchestrator.replace(config, algorithm="airl")
    return orchestrator.run_training(cfg, expert, run_dir)


def _bc_loss_and_grads(actor: MlpParams, states, targets):
    """Squared error of the squashed actor mean against expert actions."""
    y = mlp_forward(actor, states)
    da = y.shape[1] // 2
    mean = np.tanh(y[:, :da])
    err = mean - targets
    loss = float(np.mean(np.sum(err**2, axis=1)))
    up_mean = 2.0 * err * (1.0 - mean**2) / len(states)
    upstream = np.concatenate([up_mean, np.zeros_like(up_mean)], axis=1)
    grads, _ = mlp_backward(actor, states, upstream)
    return loss, grads


def run_bc(config, expert: ExpertDataset, run_dir=None):
    """Supervised regression of the actor mean onto expert actions; no
    environment interaction during training. A 10% holdout split is scored
    every epoch."""
    from . import orchestrator

    if expert is None or expert.n_steps == 0:
        raise ValueError("behavioral cloning needs a non-empty expert dataset")
    cfg = orchestrator.replace(config, algorithm="bc").validate()
    if run_dir is not None:
        import os

        os.makedirs(run_dir, exist_ok=True)
    streams = orchestrator.seed_streams(cfg.seed)
    s, a = expert.all_pairs()
    student = make_student(s.shape[1], a.shape[1], cfg.student_hidden,
                           streams["init_student"], actor_lr=cfg.student_lr,
                           epsilon_greedy=cfg.epsilon_greedy, gamma=cfg.gamma)
    n = len(s)
    perm = streams["student"].permutation(n)
    n_hold = int(round(cfg.bc_holdout * n))
    hold, train = perm[:n_hold], perm[n_hold:]
    if len(train) == 0:
        train = perm
    diag = orchestrator._Logger(run_dir, "diagnostics.jsonl")
    metrics = orchestrator._Logger(run_dir, "metrics.jsonl")
    batch = min(cfg.student_batch, len(train))
    rng = streams["student"]
    for epoch in range(cfg.bc_epochs):
        order = rng.permutation(len(train))
        for lo in range(0, len(order), batch):
            idx = train[order[lo:lo + batch]]
            _, grads = _bc_loss_and_grads(student.actor, s[idx], a[idx])
            student.actor, student.actor_opt = adam_step(student.actor, grads,
                                                         student.actor_opt)
        train_loss, _ = _bc_loss_and_grads(student.actor, s[train], a[train])
        row = {"epoch": epoch, "train_loss": train_loss}
        if len(hold) > 0:
            row["holdout_loss"] = _bc_loss_and_grads(student.actor, s[hold], a[hold])[0]
        diag.write(row)

    artifacts = orchestrator.RunArtifacts(cfg, run_dir, student, None, None)
    orchestrator._checkpoint(run_dir, "final", student, None, None, None)
    from .metrics import evaluate_policy, goal_reached

    artifacts.final_return, _ = evaluate_policy(cfg.env, student, cfg.eval_episodes,
                                                seed=cfg.seed)
    artifacts.final_goal_rate = goal_reached(cfg.env, student, cfg.eval_episodes,
                                             seed=cfg.seed)
    artifacts.diagnostics_rows = diag.rows
    artifacts.metrics_rows = metrics.rows
    return artifacts
