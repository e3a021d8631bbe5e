"""Second-order optimizers on LayerCaptures: the rank-1 factor-inverse
method (paper-exact formula plus an algebraically exact Sherman-Morrison
variant), its hybrid first/second-order schedule, and KFAC / SNGD / SGD
baselines.

Conventions shared by every step function:
  * factor inverses start at the identity,
  * factor updates run only on iterations where iter % inversion_period == 0
    (1-based; period 0 means "never"), cached inverses precondition every step,
  * weights update as W <- W - lr * delta; biases always take the raw
    first-order gradient.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import counters, linalg
from .linalg import (
    add,
    dot,
    identity,
    inf_norm,
    matmul,
    matvec,
    mean_columns,
    outer,
    scale,
    symmetrize,
    transpose,
)
from .net import LayerCapture, NetworkState

logger = logging.getLogger(__name__)

FP16_MAX = 65504.0
fp16_clamp_count = 0


# ---------------------------------------------------------------------------
# configuration / state


@dataclass
class MkorConfig:
    gamma: float = 0.9  # factor momentum
    zeta: float = 0.95  # stabilizer blend weight
    epsilon_norm: float = 100.0  # stabilizer trigger threshold (inf-norm)
    inversion_period: int = 10  # factor-update cadence; 0 = never
    lr: float = 0.1
    second_order_layers: Callable[[int], bool] | None = None  # None = all
    half_precision_comm: bool = False

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if not 0.0 < self.zeta <= 1.0:
            raise ValueError("zeta must be in (0, 1]")
        if self.epsilon_norm <= 0.0:
            raise ValueError("epsilon_norm must be positive")
        if self.inversion_period < 0:
            raise ValueError("inversion_period must be >= 0")
        if self.lr <= 0.0:
            raise ValueError("lr must be positive")

    def is_second_order(self, layer_idx: int) -> bool:
        return self.second_order_layers is None or self.second_order_layers(layer_idx)


@dataclass
class KfacConfig:
    gamma: float = 0.9
    damping: float = 1e-3  # mu added to factors before inversion
    inversion_period: int = 100
    lr: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if self.damping <= 0.0:
            raise ValueError("damping must be positive")


@dataclass
class FactorState:
    """Per-layer inverse factors plus the latest rank-1 vectors."""

    l_inv: np.ndarray
    r_inv: np.ndarray
    a_bar: np.ndarray
    g_bar: np.ndarray
    iterations: int = 0

    @classmethod
    def identity_init(cls, out_dim: int, in_dim: int) -> "FactorState":
        return cls(
            l_inv=identity(out_dim),
            r_inv=identity(in_dim),
            a_bar=np.zeros(in_dim),
            g_bar=np.zeros(out_dim),
        )


@dataclass
class KfacState:
    l_cov: np.ndarray
    r_cov: np.ndarray
    l_inv: np.ndarray
    r_inv: np.ndarray
    iterations: int = 0

    @classmethod
    def identity_init(cls, out_dim: int, in_dim: int) -> "KfacState":
        return cls(
            l_cov=identity(out_dim),
            r_cov=identity(in_dim),
            l_inv=identity(out_dim),
            r_inv=identity(in_dim),
        )


@dataclass
class HybridState:
    """Loss-decrease-rate tracker for the second-to-first-order switch."""

    window: int = 50
    switch_ratio: float = 0.1
    ema_decay: float = 0.9
    mode: str = "second_order"
    prev_loss: float | None = None
    first_loss: float | None = None
    loss_ema: float | None = None  # EMA of per-iteration loss decrease
    baseline_rate: float | None = None
    seen: int = 0
    switch_iteration: int | None = None


@dataclass
class SgdState:
    velocities: list[np.ndarray] = field(default_factory=list)
    bias_velocities: list[np.ndarray | None] = field(default_factory=list)


# ---------------------------------------------------------------------------
# elementary operations


def fp16_roundtrip(x):
    """Round each entry to the nearest IEEE binary16 value, then widen back.

    Entries beyond the fp16 range are clamped to +-65504; clamps are counted
    in ``fp16_clamp_count`` and logged.
    """
    global fp16_clamp_count
    arr = np.asarray(x, dtype=np.float64)
    over = np.count_nonzero(np.abs(arr) > FP16_MAX)
    if over:
        fp16_clamp_count += over
        logger.warning("fp16 roundtrip clamped %d entries", over)
        arr = np.clip(arr, -FP16_MAX, FP16_MAX)
    out = arr.astype(np.float16).astype(np.float64)
    return float(out) if np.isscalar(x) or np.ndim(x) == 0 else out


def rank1_reduce(capture: LayerCapture) -> tuple[np.ndarray, np.ndarray]:
    """Column means of activations and pre-activation gradients: the rank-1
    stand-ins for the two covariance matrices."""
    return mean_columns(capture.a_prev), mean_columns(capture.g)


def allreduce_rank1(
    workers: list[tuple[np.ndarray, np.ndarray]], half_precision: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise mean of per-worker (a_bar, g_bar), reduced in worker order.

    With half_precision each vector is round-tripped through fp16 before
    averaging, modeling the compressed wire format.
    """
    if not workers:
        raise ValueError("allreduce over zero workers")
    a0, g0 = workers[0]
    acc_a = np.zeros_like(np.asarray(a0, dtype=np.float64))
    acc_g = np.zeros_like(np.asarray(g0, dtype=np.float64))
    for a, g in workers:
        if a.shape != acc_a.shape or g.shape != acc_g.shape:
            raise linalg.DimensionMismatch("worker vector dims differ")
        if half_precision:
            a = fp16_roundtrip(a)
            g = fp16_roundtrip(g)
        np.add(acc_a, a, out=acc_a)
        np.add(acc_g, g, out=acc_g)
    n = float(len(workers))
    counters.add_flops((acc_a.size + acc_g.size) * (len(workers) + 1.0))
    return acc_a / n, acc_g / n


def stabilize(f_inv: np.ndarray, epsilon_norm: float, zeta: float) -> np.ndarray:
    """Blend toward the identity when the inverse factor's norm runs away.

    Returns zeta * F_inv + (1 - zeta) * I when ||F_inv||_inf exceeds the
    threshold, otherwise F_inv untouched; a convex blend of PD matrices with
    the identity stays PD.
    """
    if inf_norm(f_inv) <= epsilon_norm:
        return f_inv
    return add(scale(f_inv, zeta), scale(identity(f_inv.shape[0]), 1.0 - zeta))


def _identity_round(x):
    return x


def _sm_formula(f_inv, v, gamma: float, q=_identity_round):
    """Shared body of the rank-1 inverse update; ``q`` rounds every
    intermediate (identity for the double-precision path, fp16 for the
    quantization study, keeping both paths op-for-op identical)."""
    u = q(matvec(f_inv, v))
    quad = q(dot(v, u))
    # denominator gamma^2 * (1 + gamma*(1-gamma)*v^T F^-1 v) is provably >= gamma^2
    t1 = q(gamma * (1.0 - gamma))
    t2 = q(t1 * quad)
    t3 = q(1.0 + t2)
    assert t3 >= 1.0, "rank-1 update denominator lost positivity"
    denom = q(q(gamma * gamma) * t3)
    coeff = q((1.0 - gamma) / denom)
    term = q(scale(q(outer(u, u)), coeff))
    base = q(scale(f_inv, gamma))
    return q(symmetrize(q(add(base, term))))


def sm_update(f_inv: np.ndarray, v: np.ndarray, gamma: float) -> np.ndarray:
    """Rank-1 factor-inverse update, exactly as the update rule is printed:

        F_t^-1 = g*F^-1 + (1-g) / (g^2 (1 + g(1-g) v^T F^-1 v)) * F^-1 v v^T F^-1

    The result is symmetrized and stays positive-definite for PD input.
    """
    return _sm_formula(f_inv, v, gamma)


def sm_update_quantized(f_inv, v, gamma: float) -> np.ndarray:
    """Same update with every input and intermediate rounded through fp16."""
    return _sm_formula(fp16_roundtrip(f_inv), fp16_roundtrip(v), gamma, q=fp16_roundtrip)


def sm_update_exact(f_inv: np.ndarray, v: np.ndarray, gamma: float) -> np.ndarray:
    """Algebraically exact inverse of gamma*F + (1-gamma)*v v^T given F^-1.

    Standard Sherman-Morrison applied to the momentum covariance update;
    differs from :func:`sm_update` (leading 1/gamma vs gamma, negative rank-1
    correction).  Used to quantify the printed formula's divergence.
    """
    u = matvec(f_inv, v)
    quad = dot(v, u)
    denom = 1.0 + (1.0 - gamma) / gamma * quad
    coeff = -(1.0 - gamma) / (gamma * gamma) / denom
    return symmetrize(add(scale(f_inv, 1.0 / gamma), scale(outer(u, u), coeff)))


def precondition(l_inv, w_grad, r_inv) -> np.ndarray:
    """L^-1 @ W_grad @ R^-1, evaluated left to right."""
    return matmul(matmul(l_inv, w_grad), r_inv)


def rescale(delta_hat: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Scale the preconditioned update so its Frobenius norm matches the raw
    gradient's; degenerate (near-zero) updates fall back to the gradient."""
    if delta_hat.shape != grad.shape:
        raise linalg.DimensionMismatch(f"rescale: {delta_hat.shape} vs {grad.shape}")
    nd = linalg.frobenius_norm(delta_hat)
    if nd < 1e-30:
        return grad
    return scale(delta_hat, linalg.frobenius_norm(grad) / nd)


# ---------------------------------------------------------------------------
# full steps


def _layer_grads(captures, grads, bias_grads):
    if grads is None:
        grads = [c.w_grad for c in captures]
    if bias_grads is None:
        bias_grads = [c.b_grad for c in captures]
    return grads, bias_grads


def _apply_update(net: NetworkState, idx: int, delta, bias_grad, lr: float) -> None:
    with counters.phase("weight_update"):
        np.subtract(net.weights[idx], lr * delta, out=net.weights[idx])
        counters.add_flops(2.0 * delta.size)
        if net.biases[idx] is not None and bias_grad is not None:
            np.subtract(net.biases[idx], lr * bias_grad, out=net.biases[idx])
            counters.add_flops(2.0 * bias_grad.size)


def mkor_step(
    net: NetworkState,
    captures: list[LayerCapture],
    states: list[FactorState | None],
    cfg: MkorConfig,
    synced: list[tuple[np.ndarray, np.ndarray]] | None = None,
    grads=None,
    bias_grads=None,
) -> list[np.ndarray]:
    """One optimizer iteration over all layers; returns the applied deltas.

    ``synced`` carries already-allreduced (a_bar, g_bar) per layer when a
    multi-worker driver performed the reduction; otherwise each layer reduces
    its own capture (the single-worker path).
    """
    grads, bias_grads = _layer_grads(captures, grads, bias_grads)
    deltas = []
    for idx, cap in enumerate(captures):
        grad = grads[idx]
        st = states[idx]
        if st is not None and cfg.is_second_order(idx):
            st.iterations += 1
            f = cfg.inversion_period
            if f > 0 and st.iterations % f == 0:
                with counters.phase("factor_update"):
                    if synced is not None:
                        a_bar, g_bar = synced[idx]
                    else:
                        a_bar, g_bar = allreduce_rank1(
                            [rank1_reduce(cap)], half_precision=cfg.half_precision_comm
                        )
                    st.a_bar, st.g_bar = a_bar, g_bar
                    l_hat = stabilize(st.l_inv, cfg.epsilon_norm, cfg.zeta)
                    r_hat = stabilize(st.r_inv, cfg.epsilon_norm, cfg.zeta)
                    st.l_inv = sm_update(l_hat, g_bar, cfg.gamma)
                    st.r_inv = sm_update(r_hat, a_bar, cfg.gamma)
            with counters.phase("precondition"):
                delta = rescale(precondition(st.l_inv, grad, st.r_inv), grad)
        else:
            delta = grad
        deltas.append(delta)
        _apply_update(net, idx, delta, bias_grads[idx], cfg.lr)
    return deltas


def kfac_accumulate(state: KfacState, capture: LayerCapture, gamma: float) -> None:
    """Momentum update of the full covariance factors from one batch."""
    b = capture.a_prev.shape[1]
    with counters.phase("factor_update"):
        l_new = scale(matmul(capture.g, transpose(capture.g)), 1.0 / b)
        r_new = scale(matmul(capture.a_prev, transpose(capture.a_prev)), 1.0 / b)
        state.l_cov = add(scale(state.l_cov, gamma), scale(l_new, 1.0 - gamma))
        state.r_cov = add(scale(state.r_cov, gamma), scale(r_new, 1.0 - gamma))


def kfac_invert(state: KfacState, damping: float) -> None:
    """Invert the damped factors and cache the results."""
    with counters.phase("inversion"):
        eye_l = identity(state.l_cov.shape[0])
        eye_r = identity(state.r_cov.shape[0])
        state.l_inv = linalg.direct_inverse(add(state.l_cov, scale(eye_l, damping)))
        state.r_inv = linalg.direct_inverse(add(state.r_cov, scale(eye_r, damping)))


def kfac_step(
    net: NetworkState,
    captures: list[LayerCapture],
    states: list[KfacState],
    cfg: KfacConfig,
    grads=None,
    bias_grads=None,
    synced_covs: list[tuple[np.ndarray, np.ndarray]] | None = None,
) -> list[np.ndarray]:
    """KFAC baseline: accumulate covariances every step, invert every
    inversion_period steps, precondition with the cached inverses."""
    grads, bias_grads = _layer_grads(captures, grads, bias_grads)
    deltas = []
    for idx, cap in enumerate(captures):
        st = states[idx]
        st.iterations += 1
        kfac_accumulate(st, cap, cfg.gamma)
        if synced_covs is not None:
            st.l_cov, st.r_cov = synced_covs[idx]
        f = cfg.inversion_period
        if f > 0 and st.iterations % f == 0:
            kfac_invert(st, cfg.damping)
        with counters.phase("precondition"):
            delta = precondition(st.l_inv, grads[idx], st.r_inv)
        deltas.append(delta)
        _apply_update(net, idx, delta, bias_grads[idx], cfg.lr)
    return deltas


MAX_SNGD_BATCH = 64


def sngd_precondition(captures: list[LayerCapture], mu: float) -> list[np.ndarray]:
    """SMW-based natural-gradient update per layer:

        (1/mu) * (I - U (A^T A . G^T G + mu I)^-1 U^T) vec(grad)

    realized in matrix form without materializing U; the inverted kernel is
    b x b.  Desk-scale guard: batch must not exceed 64 samples.
    """
    if mu <= 0.0:
        raise ValueError("mu must be positive")
    updates = []
    for cap in captures:
        a, g, grad = cap.a_prev, cap.g, cap.w_grad
        b = a.shape[1]
        if b > MAX_SNGD_BATCH:
            raise ValueError(f"sngd batch {b} exceeds desk-scale bound {MAX_SNGD_BATCH}")
        with counters.phase("factor_update"):
            kern = matmul(transpose(a), a) * matmul(transpose(g), g)
            counters.add_flops(float(kern.size))
        with counters.phase("inversion"):
            kinv = linalg.direct_inverse(add(kern, scale(identity(b), mu)))
        with counters.phase("precondition"):
            p = matmul(grad, a)  # d x b
            t = np.sum(g * p, axis=0)  # t_i = g_i^T grad a_i
            counters.add_flops(2.0 * g.size)
            y = matvec(kinv, t)
            correction = matmul(g * y[None, :], transpose(a))
            counters.add_flops(float(g.size))
            updates.append(scale(add(grad, scale(correction, -1.0)), 1.0 / mu))
    return updates


def sngd_step(
    net: NetworkState,
    captures: list[LayerCapture],
    mu: float,
    lr: float,
    grads=None,
    bias_grads=None,
) -> list[np.ndarray]:
    grads, bias_grads = _layer_grads(captures, grads, bias_grads)
    apply_caps = [
        LayerCapture(a_prev=c.a_prev, g=c.g, w_grad=gr, b_grad=bg)
        for c, gr, bg in zip(captures, grads, bias_grads)
    ]
    deltas = sngd_precondition(apply_caps, mu)
    for idx, delta in enumerate(deltas):
        _apply_update(net, idx, delta, bias_grads[idx], lr)
    return deltas


def sgd_momentum_step(
    net: NetworkState,
    grads: list[np.ndarray],
    lr: float,
    momentum: float,
    state: SgdState,
    bias_grads=None,
) -> list[np.ndarray]:
    """Heavy-ball update: v <- momentum*v + grad; W <- W - lr*v."""
    if not state.velocities:
        state.velocities = [np.zeros_like(w) for w in net.weights]
        state.bias_velocities = [
            None if b is None else np.zeros_like(b) for b in net.biases
        ]
    deltas = []
    for idx, grad in enumerate(grads):
        vel = state.velocities[idx]
        np.multiply(vel, momentum, out=vel)
        np.add(vel, grad, out=vel)
        counters.add_flops(2.0 * vel.size)
        deltas.append(vel.copy())
        bg = None if bias_grads is None else bias_grads[idx]
        if bg is not None and net.biases[idx] is not None:
            bvel = state.bias_velocities[idx]
            np.multiply(bvel, momentum, out=bvel)
            np.add(bvel, bg, out=bvel)
            bg = bvel
        _apply_update(net, idx, deltas[-1], bg, lr)
    return deltas


def mkorh_maybe_switch(h: HybridState, loss_t: float) -> HybridState:
    """Update the loss-decrease EMA; fall back to first-order permanently once
    the recent decrease rate drops below switch_ratio times the rate observed
    over the first `window` second-order iterations."""
    if h.mode == "first_order":
        return h
    if h.prev_loss is None:
        h.prev_loss = loss_t
        h.first_loss = loss_t
        return h
    dec = h.prev_loss - loss_t
    h.prev_loss = loss_t
    h.seen += 1
    h.loss_ema = dec if h.loss_ema is None else (
        h.ema_decay * h.loss_ema + (1.0 - h.ema_decay) * dec
    )
    if h.seen == h.window:
        h.baseline_rate = (h.first_loss - loss_t) / h.window
    elif h.baseline_rate is not None and h.seen > h.window:
        if h.baseline_rate <= 0.0 or h.loss_ema < h.switch_ratio * h.baseline_rate:
            h.mode = "first_order"
            h.switch_iteration = h.seen
    return h
