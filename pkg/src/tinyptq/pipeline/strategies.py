"""Per-unit optimization strategies.

Each gradient strategy exposes the same surface: effective weights and
activation quantizers for the unit forward pass, a gradient step, and
snapshot/restore for best-iterate selection. The bit-plane coordinate
descent strategy is a direct (gradient-free) solver and lives in
`BitDescent`.
"""

from __future__ import annotations

import numpy as np

from ..quant import QuantizerState, dequantize_codes, quantize
from ..surrogates import (
    adaround_reg,
    adaround_reg_grad,
    lsq_scale_grad,
    lsq_zero_grad,
    softround,
    softround_grad,
    softround_init,
    ste_weight_grad,
)


class Adam:
    """Standard adaptive-moment optimizer over a list of arrays."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g is None:
                continue
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mhat = self.m[i] / (1 - self.b1 ** self.t)
            vhat = self.v[i] / (1 - self.b2 ** self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _with_scale(q: QuantizerState, scale: np.ndarray, zero=None) -> QuantizerState:
    out = q.copy()
    out.scale = np.maximum(np.atleast_1d(np.asarray(scale, dtype=np.float64)), 1e-8)
    if zero is not None:
        z = np.clip(np.rint(np.atleast_1d(zero)), q.n, q.p)
        out.zero_point = z.astype(np.int64)
    return out


class QParamStrategy:
    """Gradient descent on quantizer scales and zero-points; weights fixed.

    Zero-points are kept continuous underneath and rounded in the forward
    pass, so every iterate is already a valid hard quantizer state.
    """

    name = "qparam"

    def __init__(self, qg, unit, lr):
        self.qg = qg
        self.unit = unit
        self.w_scale = {li: qg.weight_q[li].scale.copy() for li in unit.weighted_ids
                        if not qg.weight_q[li].disabled}
        self.a_scale, self.a_zero = {}, {}
        for e in unit.quantized_edges(qg):
            self.a_scale[e] = qg.act_q[e].scale.astype(np.float64).copy()
            self.a_zero[e] = qg.act_q[e].zero_point.astype(np.float64).copy()
        params = list(self.w_scale.values()) + list(self.a_scale.values()) + list(self.a_zero.values())
        self.adam = Adam(params, lr)

    def weight(self, li, hard=False):
        q = self.qg.weight_q[li]
        if li not in self.w_scale:
            return quantize(self.qg.graph.layers[li].params["weight"], q)
        return quantize(self.qg.graph.layers[li].params["weight"], _with_scale(q, self.w_scale[li]))

    def act_q(self, e):
        if e not in self.a_scale:
            return self.qg.act_q.get(e)
        return _with_scale(self.qg.act_q[e], self.a_scale[e], self.a_zero[e])

    def grads(self, dW, act_grads, it):
        gs = []
        for li in self.w_scale:
            w = self.qg.graph.layers[li].params["weight"]
            gs.append(lsq_scale_grad(w, _with_scale(self.qg.weight_q[li], self.w_scale[li]), dW[li]))
        for e in self.a_scale:
            q = self.act_q(e)
            pre, up = act_grads[e]
            gs.append(lsq_scale_grad(pre, q, up))
        for e in self.a_zero:
            q = self.act_q(e)
            pre, up = act_grads[e]
            gs.append(lsq_zero_grad(pre, q, up))
        return gs

    def step(self, dW, act_grads, it):
        self.adam.step(self.grads(dW, act_grads, it))
        for arr in self.w_scale.values():
            np.maximum(arr, 1e-8, out=arr)
        for arr in self.a_scale.values():
            np.maximum(arr, 1e-8, out=arr)

    def extra_loss(self, it) -> float:
        return 0.0

    def snapshot(self):
        return (
            {k: v.copy() for k, v in self.w_scale.items()},
            {k: v.copy() for k, v in self.a_scale.items()},
            {k: v.copy() for k, v in self.a_zero.items()},
        )

    def restore(self, snap):
        ws, as_, az = snap
        for k in self.w_scale:
            self.w_scale[k][:] = ws[k]
        for k in self.a_scale:
            self.a_scale[k][:] = as_[k]
            self.a_zero[k][:] = az[k]

    def finalize(self):
        for li, s in self.w_scale.items():
            self.qg.weight_q[li] = _with_scale(self.qg.weight_q[li], s)
        for e in self.a_scale:
            self.qg.act_q[e] = _with_scale(self.qg.act_q[e], self.a_scale[e], self.a_zero[e])


class WeightStrategy:
    """Gradient descent on the continuous weights with straight-through
    gradients; quantizer parameters stay at their initialization."""

    name = "weights"

    def __init__(self, qg, unit, lr):
        self.qg = qg
        self.unit = unit
        self.w = {li: qg.graph.layers[li].params["weight"].copy() for li in unit.weighted_ids}
        self.adam = Adam(list(self.w.values()), lr)

    def weight(self, li, hard=False):
        return quantize(self.w[li], self.qg.weight_q[li])

    def act_q(self, e):
        return self.qg.act_q.get(e)

    def grads(self, dW, act_grads, it):
        return [ste_weight_grad(self.w[li], self.qg.weight_q[li], dW[li]) for li in self.w]

    def step(self, dW, act_grads, it):
        self.adam.step(self.grads(dW, act_grads, it))

    def extra_loss(self, it) -> float:
        return 0.0

    def snapshot(self):
        return {k: v.copy() for k, v in self.w.items()}

    def restore(self, snap):
        for k in self.w:
            self.w[k][:] = snap[k]

    def finalize(self):
        for li, w in self.w.items():
            self.qg.graph.layers[li].params["weight"] = w.copy()


class RoundStrategy:
    """Learned rounding: per-weight auxiliary variables choose floor or
    ceil through a rectified sigmoid, annealed toward binary decisions."""

    name = "round"

    def __init__(self, qg, unit, lr, iters, lam=0.01, beta_range=(20.0, 2.0)):
        self.qg = qg
        self.unit = unit
        self.lam = lam
        self.beta_range = beta_range
        self.iters = max(iters, 1)
        self.v = {}
        self.floor = {}
        for li in unit.weighted_ids:
            q = qg.weight_q[li]
            if q.disabled:
                continue
            w = qg.graph.layers[li].params["weight"]
            s = q.scale_for(w)
            u = w / s
            fl = np.floor(u)
            self.floor[li] = fl
            self.v[li] = softround_init(u - fl)
        self.adam = Adam(list(self.v.values()), lr)

    def beta(self, it) -> float:
        hi, lo = self.beta_range
        frac = min(max(it, 0), self.iters) / self.iters
        return hi + (lo - hi) * frac

    def _codes(self, li, h):
        q = self.qg.weight_q[li]
        w = self.qg.graph.layers[li].params["weight"]
        z = q.zero_for(w)
        return np.clip(self.floor[li] + h + z, q.n, q.p) - z

    def weight(self, li, hard=False):
        q = self.qg.weight_q[li]
        if li not in self.v:
            return quantize(self.qg.graph.layers[li].params["weight"], q)
        h = softround(self.v[li])
        if hard:
            h = (h >= 0.5).astype(np.float64)
        w = self.qg.graph.layers[li].params["weight"]
        return q.scale_for(w) * self._codes(li, h)

    def act_q(self, e):
        return self.qg.act_q.get(e)

    def grads(self, dW, act_grads, it):
        beta = self.beta(it)
        out = []
        for li, v in self.v.items():
            q = self.qg.weight_q[li]
            w = self.qg.graph.layers[li].params["weight"]
            s = q.scale_for(w)
            z = q.zero_for(w)
            h = softround(v)
            code = self.floor[li] + h + z
            inside = (code > q.n) & (code < q.p)
            dh = dW[li] * s * inside
            out.append(dh * softround_grad(v) + self.lam * adaround_reg_grad(v, beta))
        return out

    def step(self, dW, act_grads, it):
        self.adam.step(self.grads(dW, act_grads, it))

    def extra_loss(self, it) -> float:
        beta = self.beta(it)
        return self.lam * sum(adaround_reg(v, beta) for v in self.v.values())

    def snapshot(self):
        return {k: v.copy() for k, v in self.v.items()}

    def restore(self, snap):
        for k in self.v:
            self.v[k][:] = snap[k]

    def finalize(self):
        # harden: every weight lands exactly on its quantization grid
        for li in self.v:
            self.qg.graph.layers[li].params["weight"] = self.weight(li, hard=True)


def make_strategy(name, qg, unit, config):
    lr = config.unit_lr
    if name == "qparam":
        return QParamStrategy(qg, unit, lr)
    if name == "weights":
        return WeightStrategy(qg, unit, lr)
    if name == "round":
        return RoundStrategy(
            qg, unit, lr, config.iters, config.adaround_lambda, tuple(config.adaround_beta)
        )
    raise ValueError(f"no gradient strategy named {name!r}")


# -- bit-plane coordinate descent ---------------------------------------------

class BitDescent:
    """Coordinate descent on the integer weight codes of one layer.

    Sweeps bit planes from the (two's-complement) sign plane down to the
    least significant bit; for each plane and weight position, both bit
    values are scored through the layer's linearity in its weights and the
    better one kept. After each sweep the per-channel scale is refit by
    least squares. The best (codes, scale) state across sweeps wins.
    """

    def __init__(self, x_mat, target, bias, codes, scale, bits, shared_x=True):
        # x_mat: (M, K) shared design matrix, or (M, C, K) per channel
        # codes: (K, C) integer codes; scale: (C,); target: (M, C)
        self.x = x_mat
        self.t = target
        self.bias = bias
        self.codes = codes.astype(np.int64)
        self.scale = scale.astype(np.float64).copy()
        self.bits = bits
        self.shared = shared_x
        if shared_x:
            self.xtx = np.einsum("mk,mk->k", x_mat, x_mat)
        else:
            self.xtx = np.einsum("mck,mck->ck", x_mat, x_mat).T  # (K, C)

    def _lin(self, codes) -> np.ndarray:
        if self.shared:
            return self.x @ codes.astype(np.float64)
        return np.einsum("mck,kc->mc", self.x, codes.astype(np.float64))

    def residual(self, codes, scale) -> np.ndarray:
        return self._lin(codes) * scale[None, :] + self.bias[None, :] - self.t

    def sse(self, codes=None, scale=None) -> float:
        r = self.residual(self.codes if codes is None else codes,
                          self.scale if scale is None else scale)
        return float((r * r).sum())

    def _plane_values(self):
        yield -(1 << (self.bits - 1)), self.bits - 1  # sign plane first
        for j in range(self.bits - 2, -1, -1):
            yield (1 << j), j

    def sweep(self, residual) -> np.ndarray:
        K = self.codes.shape[0]
        for value, j in self._plane_values():
            for k in range(K):
                bit = (self.codes[k] >> j) & 1
                delta = np.where(bit == 0, value, -value).astype(np.float64)
                step = delta * self.scale  # (C,)
                if self.shared:
                    xk = self.x[:, k]  # (M,)
                    dots = xk @ residual  # (C,)
                    xx = self.xtx[k]
                else:
                    xk = self.x[:, :, k]  # (M, C)
                    dots = np.einsum("mc,mc->c", xk, residual)
                    xx = self.xtx[k]  # (C,)
                gain = 2.0 * step * dots + step * step * xx
                flip = gain < 0.0
                if not flip.any():
                    continue
                applied = np.where(flip, step, 0.0)
                if self.shared:
                    residual += xk[:, None] * applied[None, :]
                else:
                    residual += xk * applied[None, :]
                self.codes[k] = np.where(flip, self.codes[k] + np.where(bit == 0, value, -value), self.codes[k])
        return residual

    def exact_pass(self, residual) -> np.ndarray:
        """One exact integer coordinate-descent pass: each weight jumps to
        its conditionally optimal code. Catches moves a single bit flip
        cannot express (e.g. -1 <-> 0 in two's complement)."""
        n, p = -(1 << (self.bits - 1)), (1 << (self.bits - 1)) - 1
        K = self.codes.shape[0]
        for k in range(K):
            if self.shared:
                xk = self.x[:, k]
                dots = xk @ residual
                xx = self.xtx[k]
            else:
                xk = self.x[:, :, k]
                dots = np.einsum("mc,mc->c", xk, residual)
                xx = self.xtx[k]
            safe = self.scale * np.maximum(xx, 1e-30)
            # r = r_minus + xk * s * c: conditional optimum of ||r||^2 in c
            c_star = self.codes[k] - dots / safe
            best_codes = self.codes[k].copy()
            best_gain = np.zeros_like(self.scale)
            for cand in (np.floor(c_star), np.ceil(c_star)):
                cand = np.clip(cand, n, p)
                d = (cand - self.codes[k]) * self.scale
                gain = 2.0 * d * dots + d * d * xx
                better = gain < best_gain
                best_codes = np.where(better, cand.astype(np.int64), best_codes)
                best_gain = np.where(better, gain, best_gain)
            applied = (best_codes - self.codes[k]).astype(np.float64) * self.scale
            if np.any(applied != 0.0):
                if self.shared:
                    residual += xk[:, None] * applied[None, :]
                else:
                    residual += xk * applied[None, :]
                self.codes[k] = best_codes
        return residual

    def refit_scale(self) -> None:
        u = self._lin(self.codes)
        num = np.einsum("mc,mc->c", u, self.t - self.bias[None, :])
        den = np.einsum("mc,mc->c", u, u)
        ok = (den > 1e-30) & (num > 0)
        self.scale = np.where(ok, num / np.maximum(den, 1e-30), self.scale)

    def run(self, sweeps: int, refit: bool = True):
        best = (self.sse(), self.codes.copy(), self.scale.copy())
        for _ in range(max(sweeps, 1)):
            residual = self.residual(self.codes, self.scale)
            residual = self.sweep(residual)
            self.exact_pass(residual)
            if refit:
                self.refit_scale()
            cur = self.sse()
            if cur < best[0]:
                best = (cur, self.codes.copy(), self.scale.copy())
        self.codes, self.scale = best[1], best[2]
        return best[0], self.codes, self.scale
