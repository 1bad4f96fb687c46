"""Gradient surrogates for optimizing through the non-differentiable
quantizer: straight-through weight gradients, learned-step-size scale and
zero-point gradients, and the rectified-sigmoid soft rounding used by
rounding optimization.
"""

from __future__ import annotations

import numpy as np

from .quant import ASYMMETRIC, QuantizerState

ROUND_ZETA = 1.1
ROUND_GAMMA = -0.1


def _regions(x: np.ndarray, q: QuantizerState):
    """Masks for below-grid / in-grid / above-grid elements of x under q."""
    s = q.scale_for(x)
    z = q.zero_for(x)
    u = np.rint(x / s) + z
    low = u < q.n
    high = u > q.p
    mid = ~(low | high)
    return low, mid, high


def ste_weight_grad(x: np.ndarray, q: QuantizerState, upstream: np.ndarray) -> np.ndarray:
    """Straight-through gradient wrt x: pass upstream inside the grid, else 0."""
    if q is None or q.disabled:
        return upstream
    _, mid, _ = _regions(x, q)
    return upstream * mid


def lsq_scale_grad(x: np.ndarray, q: QuantizerState, upstream: np.ndarray) -> np.ndarray:
    """Learned-step-size gradient wrt the per-group scale.

    d x_hat / d s is (rint(x/s) - x/s) in the grid interior and (n - z) or
    (p - z) on the clamped branches; the per-group sum is scaled by
    1/sqrt(count * p).
    """
    s = q.scale_for(x)
    z = q.zero_for(x)
    u = x / s
    low, mid, high = _regions(x, q)
    local = np.where(mid, np.rint(u) - u, 0.0)
    local = np.where(low, q.n - z, local)
    local = np.where(high, q.p - z, local)
    contrib = upstream * local
    flat = np.moveaxis(contrib, q.axis, 0) if q.granularity == "per_channel" else contrib
    if q.granularity == "per_channel":
        per_group = flat.reshape(flat.shape[0], -1).sum(axis=1)
        count = contrib.size // q.groups
    else:
        per_group = np.array([contrib.sum()])
        count = contrib.size
    gscale = 1.0 / np.sqrt(count * q.p)
    return per_group * gscale


def lsq_zero_grad(x: np.ndarray, q: QuantizerState, upstream: np.ndarray) -> np.ndarray:
    """Gradient wrt the zero-point: -s on clamped elements, 0 in the interior."""
    if q.scheme != ASYMMETRIC:
        return np.zeros(q.groups)
    s = q.scale_for(x)
    low, _, high = _regions(x, q)
    contrib = np.where(low | high, -s * upstream, 0.0)
    if q.granularity == "per_channel":
        flat = np.moveaxis(contrib, q.axis, 0)
        per_group = flat.reshape(flat.shape[0], -1).sum(axis=1)
        count = contrib.size // q.groups
    else:
        per_group = np.array([contrib.sum()])
        count = contrib.size
    return per_group / np.sqrt(count * q.p)


def softround(v: np.ndarray, zeta: float = ROUND_ZETA, gamma: float = ROUND_GAMMA) -> np.ndarray:
    """Rectified sigmoid h(v) = clamp(sigmoid(v)*(zeta-gamma)+gamma, 0, 1)."""
    sig = 1.0 / (1.0 + np.exp(-v))
    return np.clip(sig * (zeta - gamma) + gamma, 0.0, 1.0)


def softround_grad(v: np.ndarray, zeta: float = ROUND_ZETA, gamma: float = ROUND_GAMMA) -> np.ndarray:
    """dh/dv, zero where the rectification clips."""
    sig = 1.0 / (1.0 + np.exp(-v))
    raw = sig * (zeta - gamma) + gamma
    inside = (raw > 0.0) & (raw < 1.0)
    return np.where(inside, sig * (1.0 - sig) * (zeta - gamma), 0.0)


def softround_init(frac: np.ndarray, zeta: float = ROUND_ZETA, gamma: float = ROUND_GAMMA) -> np.ndarray:
    """v such that h(v) equals the given fractional remainder in (0, 1).

    Hardening h >= 0.5 then reproduces nearest rounding of the weights.
    """
    t = (np.clip(frac, 1e-6, 1.0 - 1e-6) - gamma) / (zeta - gamma)
    return -np.log(1.0 / t - 1.0)


def adaround_reg(v: np.ndarray, beta: float) -> float:
    """Regularizer sum(1 - |2 h(v) - 1|^beta): zero iff every h is binary."""
    h = softround(v)
    return float((1.0 - np.abs(2.0 * h - 1.0) ** beta).sum())


def adaround_reg_grad(v: np.ndarray, beta: float) -> np.ndarray:
    """Gradient of adaround_reg wrt v."""
    h = softround(v)
    t = 2.0 * h - 1.0
    at = np.abs(t)
    # |t|^(beta-1) with the t==0 singularity mapped to 0
    powed = np.where(at > 0, at ** (beta - 1.0), 0.0)
    dreg_dh = -beta * powed * np.sign(t) * 2.0
    return dreg_dh * softround_grad(v)
