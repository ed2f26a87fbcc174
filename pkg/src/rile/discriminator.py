"""Expert-vs-student binary classifier.

Convention fixed artifact-wide: output near 1 means expert-like. Training
is one Adam descent step per call on the binary cross-entropy (expert
label 1, student label 0) plus an optional two-sided gradient penalty at
uniform interpolates between expert and student inputs. The closed-form
optimal classifier over finite supports is provided as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import (
    AdamState,
    MlpParams,
    _act_grad,
    _act_grad2,
    _forward_cached,
    adam_init,
    adam_step,
    mlp_init,
    zeros_like_params,
)

LOGIT_CLAMP = 20.0


@dataclass
class DiscriminatorNet:
    """Scalar-logit MLP over concatenated (state, action), with its
    optimizer state and an update counter."""

    params: MlpParams
    opt: AdamState
    updates: int = 0

    @property
    def in_dim(self) -> int:
        return self.params.in_dim


def make_discriminator(state_dim: int, action_dim: int, hidden, lr: float,
                       rng) -> DiscriminatorNet:
    dims = [state_dim + action_dim, *hidden, 1]
    acts = ["relu"] * len(hidden) + ["identity"]
    params = mlp_init(dims, acts, rng)
    return DiscriminatorNet(params, adam_init(params, lr=lr))


def _join(state, action) -> np.ndarray:
    s = np.atleast_2d(np.asarray(state, dtype=np.float64))
    a = np.atleast_2d(np.asarray(action, dtype=np.float64))
    if s.shape[0] != a.shape[0]:
        raise ValueError("state and action batch sizes differ")
    return np.concatenate([s, a], axis=1)


def disc_logit(net: DiscriminatorNet, x: np.ndarray) -> np.ndarray:
    y, _, _ = _forward_cached(net.params, np.atleast_2d(x))
    return np.clip(y[:, 0], -LOGIT_CLAMP, LOGIT_CLAMP)


def disc_output(net: DiscriminatorNet, state, action):
    """Expert-likeness probability, strictly inside (0, 1) thanks to the
    logit clamp. Scalar for single inputs, 1-d array for batches."""
    single = np.asarray(state).ndim == 1
    x = _join(state, action)
    if x.shape[1] != net.in_dim:
        raise ValueError(f"input dim {x.shape[1]} does not match "
                         f"discriminator input dim {net.in_dim}")
    p = 1.0 / (1.0 + np.exp(-disc_logit(net, x)))
    return float(p[0]) if single else p


def _softplus(z):
    return np.logaddexp(0.0, z)


def _bce_loss_and_grads(params: MlpParams, xe: np.ndarray, xs: np.ndarray):
    """Loss = -mean log D(expert) - mean log(1-D(student)) and its exact
    parameter gradients, through the logit clamp."""
    ye, ze, he = _forward_cached(params, xe)
    ys, zs, hs = _forward_cached(params, xs)
    le = np.clip(ye[:, 0], -LOGIT_CLAMP, LOGIT_CLAMP)
    ls = np.clip(ys[:, 0], -LOGIT_CLAMP, LOGIT_CLAMP)
    loss = float(np.mean(_softplus(-le)) + np.mean(_softplus(ls)))

    # d loss / d logit; clamp saturation zeroes the gradient
    ge = -(1.0 / (1.0 + np.exp(le))) / len(le)
    ge = np.where(np.abs(ye[:, 0]) < LOGIT_CLAMP, ge, 0.0)
    gs = (1.0 / (1.0 + np.exp(-ls))) / len(ls)
    gs = np.where(np.abs(ys[:, 0]) < LOGIT_CLAMP, gs, 0.0)

    grads = zeros_like_params(params)
    for x, cache, up in ((xe, (ze, he), ge), (xs, (zs, hs), gs)):
        zsl, hsl = cache
        delta = up[:, None]
        for k in range(params.n_layers - 1, -1, -1):
            delta = delta * _act_grad(params.activations[k], zsl[k], hsl[k + 1])
            grads.weights[k] += delta.T @ hsl[k]
            grads.biases[k] += delta.sum(axis=0)
            delta = delta @ params.weights[k]
    return loss, grads


def input_gradients(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """d logit / d input for each row of x (raw logit, no clamp)."""
    _, zs, hs = _forward_cached(params, np.atleast_2d(x))
    v = np.ones((x.shape[0], 1))
    for k in range(params.n_layers - 1, -1, -1):
        v = v * _act_grad(params.activations[k], zs[k], hs[k + 1])
        v = v @ params.weights[k]
    return v


def _gp_loss_and_grads(params: MlpParams, x: np.ndarray):
    """Two-sided penalty mean((||d logit/d x|| - 1)^2) with exact parameter
    gradients, i.e. reverse-mode applied to the input-gradient program."""
    n = x.shape[0]
    _, zs, hs = _forward_cached(params, x)

    # input-gradient sweep, keeping every intermediate
    acts = params.activations
    vs = [None] * (params.n_layers + 1)   # vs[k] = gradient w.r.t. h_k
    ws = [None] * params.n_layers         # ws[k] = gradient w.r.t. z_k
    vs[params.n_layers] = np.ones((n, 1))
    for k in range(params.n_layers - 1, -1, -1):
        ws[k] = _act_grad(acts[k], zs[k], hs[k + 1]) * vs[k + 1]
        vs[k] = ws[k] @ params.weights[k]
    g = vs[0]

    norms = np.linalg.norm(g, axis=1)
    loss = float(np.mean((norms - 1.0) ** 2))
    g_bar = (2.0 / n) * ((norms - 1.0) / np.maximum(norms, 1e-12))[:, None] * g

    grads = zeros_like_params(params)
    z_bars = [np.zeros_like(z) for z in zs]
    v_bar = g_bar
    for k in range(params.n_layers):
        w_bar = v_bar @ params.weights[k].T
        grads.weights[k] += ws[k].T @ v_bar
        z_bars[k] += _act_grad2(acts[k], zs[k], hs[k + 1]) * vs[k + 1] * w_bar
        v_bar = _act_grad(acts[k], zs[k], hs[k + 1]) * w_bar

    # fold the z adjoints back through the forward chain
    h_bar = np.zeros((n, 1))
    for k in range(params.n_layers - 1, -1, -1):
        delta = z_bars[k] + _act_grad(acts[k], zs[k], hs[k + 1]) * h_bar
        grads.weights[k] += delta.T @ hs[k]
        grads.biases[k] += delta.sum(axis=0)
        h_bar = delta @ params.weights[k]
    return loss, grads


def _bce_loss_only(params: MlpParams, xe: np.ndarray, xs: np.ndarray) -> float:
    ye, _, _ = _forward_cached(params, xe)
    ys, _, _ = _forward_cached(params, xs)
    le = np.clip(ye[:, 0], -LOGIT_CLAMP, LOGIT_CLAMP)
    ls = np.clip(ys[:, 0], -LOGIT_CLAMP, LOGIT_CLAMP)
    return float(np.mean(_softplus(-le)) + np.mean(_softplus(ls)))


def disc_loss(net: DiscriminatorNet, expert_batch, student_batch,
              gp_weight: float, interp: np.ndarray | None = None) -> float:
    """Training loss at the current parameters (no update)."""
    xe = _join(*expert_batch)
    xs = _join(*student_batch)
    loss = _bce_loss_only(net.params, xe, xs)
    if gp_weight > 0 and interp is not None:
        norms = np.linalg.norm(input_gradients(net.params, interp), axis=1)
        loss += gp_weight * float(np.mean((norms - 1.0) ** 2))
    return loss


def disc_update(net: DiscriminatorNet, expert_batch, student_batch,
                gp_weight: float, rng=None):
    """One Adam step on BCE + gp_weight * gradient penalty.

    Returns (net, post-step loss). Rejects non-finite losses/gradients
    without touching the network.
    """
    xe = _join(*expert_batch)
    xs = _join(*student_batch)
    if len(xe) == 0 or len(xs) == 0:
        raise ValueError("expert and student batches must be non-empty")

    loss, grads = _bce_loss_and_grads(net.params, xe, xs)
    interp = None
    if gp_weight > 0:
        if rng is None:
            raise ValueError("gradient penalty needs an rng for interpolation")
        m = min(len(xe), len(xs))
        u = rng.uniform(size=(m, 1))
        interp = u * xe[:m] + (1.0 - u) * xs[:m]
        gp, gp_grads = _gp_loss_and_grads(net.params, interp)
        loss += gp_weight * gp
        for k in range(grads.n_layers):
            grads.weights[k] += gp_weight * gp_grads.weights[k]
            grads.biases[k] += gp_weight * gp_grads.biases[k]
    if not np.isfinite(loss):
        raise ValueError("non-finite discriminator loss; network unchanged")

    params, opt = adam_step(net.params, grads, net.opt)
    net.params, net.opt = params, opt
    net.updates += 1
    return net, disc_loss(net, expert_batch, student_batch, gp_weight, interp)


def optimal_disc_oracle(p_expert, p_student) -> np.ndarray:
    """Closed-form optimum p_E / (p_E + p_S) over a shared finite support.

    Entries where both probabilities are zero are undefined and returned
    as NaN.
    """
    pe = np.asarray(p_expert, dtype=np.float64)
    ps = np.asarray(p_student, dtype=np.float64)
    if pe.shape != ps.shape:
        raise ValueError("probability tables must share a support")
    if (pe < 0).any() or (ps < 0).any():
        raise ValueError("probabilities must be non-negative")
    for name, p in (("expert", pe), ("student", ps)):
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} table must sum to 1")
    tot = pe + ps
    out = np.full(pe.shape, np.nan)
    mask = tot > 0
    out[mask] = pe[mask] / tot[mask]
    return out
