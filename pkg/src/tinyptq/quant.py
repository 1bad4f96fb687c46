"""Uniform affine quantizers: simulate-quantize kernel, range-to-parameter
mapping, and MinMax / MSE range initialization.

Conventions used throughout:
  * rounding is nearest-with-ties-to-even (np.rint)
  * symmetric quantizers pin the zero-point at 0 and use the full signed
    grid [-2^(b-1), 2^(b-1)-1]
  * asymmetric quantizers use the unsigned grid [0, 2^b-1] with a free
    integer zero-point
  * per-channel quantizers hold one (scale, zero_point) pair per index
    along `axis`; per-tensor quantizers hold a single pair
  * bits >= 32 disables quantization (identity pass-through)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

DEGENERATE_RANGE_EPS = 1e-12
DEGENERATE_SCALE = 1e-8

SYMMETRIC = "symmetric"
ASYMMETRIC = "asymmetric"
PER_TENSOR = "per_tensor"
PER_CHANNEL = "per_channel"


class QuantError(ValueError):
    pass


@dataclass
class QuantizerState:
    """Parameters of one uniform quantizer (possibly one group per channel).

    `scale` and `zero_point` are 1-d arrays with one entry per group
    (a single entry for per-tensor granularity).
    """

    scheme: str
    granularity: str
    bits: int
    scale: np.ndarray
    zero_point: np.ndarray
    n: int
    p: int
    axis: int = -1
    degenerate: np.ndarray = field(default=None)  # bool per group

    def __post_init__(self):
        self.scale = np.atleast_1d(np.asarray(self.scale, dtype=np.float64))
        self.zero_point = np.atleast_1d(np.asarray(self.zero_point, dtype=np.int64))
        if self.degenerate is None:
            self.degenerate = np.zeros(self.scale.shape, dtype=bool)
        if self.scheme not in (SYMMETRIC, ASYMMETRIC):
            raise QuantError(f"unknown scheme {self.scheme!r}")
        if self.granularity not in (PER_TENSOR, PER_CHANNEL):
            raise QuantError(f"unknown granularity {self.granularity!r}")
        if not self.disabled:
            if np.any(self.scale <= 0):
                raise QuantError("scale must be positive for every group")
            if self.n >= self.p:
                raise QuantError("grid bounds must satisfy n < p")
            if self.scheme == SYMMETRIC and np.any(self.zero_point != 0):
                raise QuantError("symmetric quantizer requires zero_point == 0")
            if self.scheme == ASYMMETRIC and (
                np.any(self.zero_point < self.n) or np.any(self.zero_point > self.p)
            ):
                raise QuantError("asymmetric zero_point must lie in [n, p]")

    @property
    def disabled(self) -> bool:
        return self.bits >= 32

    @property
    def groups(self) -> int:
        return int(self.scale.shape[0])

    def group_shape(self, ndim: int) -> tuple:
        """Broadcast shape placing the group dimension along `axis`."""
        if self.granularity == PER_TENSOR:
            return (1,) * ndim
        shape = [1] * ndim
        shape[self.axis] = self.groups
        return tuple(shape)

    def scale_for(self, x: np.ndarray) -> np.ndarray:
        return self.scale.reshape(self.group_shape(x.ndim))

    def zero_for(self, x: np.ndarray) -> np.ndarray:
        return self.zero_point.astype(np.float64).reshape(self.group_shape(x.ndim))

    def copy(self) -> "QuantizerState":
        return replace(
            self,
            scale=self.scale.copy(),
            zero_point=self.zero_point.copy(),
            degenerate=self.degenerate.copy(),
        )


def grid_bounds(bits: int, scheme: str) -> tuple[int, int]:
    if scheme == SYMMETRIC:
        return -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return 0, (1 << bits) - 1


def quantize(x: np.ndarray, q: QuantizerState | None) -> np.ndarray:
    """Simulated quantization: quantize to the integer grid, de-quantize back.

    x_hat = s * (clamp(rint(x / s) + z, n, p) - z), per group.
    """
    if q is None or q.disabled:
        return x
    x = np.asarray(x, dtype=np.float64)
    s = q.scale_for(x)
    z = q.zero_for(x)
    code = np.clip(np.rint(x / s) + z, q.n, q.p)
    return s * (code - z)


def integer_codes(x: np.ndarray, q: QuantizerState) -> np.ndarray:
    """Clamped integer codes of x under q (the value inside Eq-style clamp)."""
    s = q.scale_for(x)
    z = q.zero_for(x)
    return np.clip(np.rint(x / s) + z, q.n, q.p).astype(np.int64)


def dequantize_codes(codes: np.ndarray, q: QuantizerState) -> np.ndarray:
    s = q.scale_for(codes)
    z = q.zero_for(codes)
    return s * (codes.astype(np.float64) - z)


def qparams_from_range(alpha, beta, bits: int, scheme: str):
    """Map a clipping range [alpha, beta] to (scale, zero_point, n, p).

    Accepts scalars or 1-d arrays (one range per group). Asymmetric ranges
    are widened to include zero. Degenerate ranges fall back to
    scale=1e-8, zero_point=0 and are flagged.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
    beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
    if alpha.shape != beta.shape:
        raise QuantError("alpha/beta group shapes differ")
    n, p = grid_bounds(bits, scheme)
    if scheme == ASYMMETRIC:
        alpha = np.minimum(alpha, 0.0)
        beta = np.maximum(beta, 0.0)
        degenerate = (beta - alpha) < DEGENERATE_RANGE_EPS
        span = np.where(degenerate, 1.0, beta - alpha)
        scale = span / (p - n)
        # computed from alpha,beta directly so exact halves tie-break cleanly
        zero = np.rint(-alpha * (p - n) / span) + n
        scale = np.where(degenerate, DEGENERATE_SCALE, scale)
        zero = np.where(degenerate, 0, zero).astype(np.int64)
        zero = np.clip(zero, n, p)
    else:
        amax = np.maximum(np.abs(alpha), np.abs(beta))
        degenerate = (2.0 * amax) < DEGENERATE_RANGE_EPS
        scale = np.where(degenerate, DEGENERATE_SCALE, amax / p)
        zero = np.zeros(scale.shape, dtype=np.int64)
    return scale, zero, n, p, degenerate


def _group_view(x: np.ndarray, granularity: str, axis: int) -> np.ndarray:
    """Return a (groups, elements) view of x for range statistics."""
    x = np.asarray(x, dtype=np.float64)
    if granularity == PER_TENSOR:
        return x.reshape(1, -1)
    return np.moveaxis(x, axis, 0).reshape(x.shape[axis], -1)


@dataclass
class QuantizerTemplate:
    """Scheme/granularity/bit choice before ranges are known."""

    scheme: str
    granularity: str
    bits: int
    axis: int = -1

    def disabled_state(self) -> QuantizerState:
        return QuantizerState(
            scheme=self.scheme,
            granularity=self.granularity,
            bits=self.bits,
            scale=np.ones(1),
            zero_point=np.zeros(1, dtype=np.int64),
            n=0,
            p=1,
            axis=self.axis,
        )

    def from_range(self, alpha, beta) -> QuantizerState:
        if self.bits >= 32:
            return self.disabled_state()
        scale, zero, n, p, degenerate = qparams_from_range(
            alpha, beta, self.bits, self.scheme
        )
        return QuantizerState(
            scheme=self.scheme,
            granularity=self.granularity,
            bits=self.bits,
            scale=scale,
            zero_point=zero,
            n=n,
            p=p,
            axis=self.axis,
            degenerate=degenerate,
        )


class RangeTracker:
    """Streaming per-group min/max over any number of sample tensors."""

    def __init__(self, template: QuantizerTemplate):
        self.template = template
        self.alpha = None
        self.beta = None

    def update(self, x: np.ndarray) -> None:
        g = _group_view(x, self.template.granularity, self.template.axis)
        lo = g.min(axis=1)
        hi = g.max(axis=1)
        if self.alpha is None:
            self.alpha, self.beta = lo, hi
        else:
            if lo.shape != self.alpha.shape:
                raise QuantError("inconsistent group count across samples")
            self.alpha = np.minimum(self.alpha, lo)
            self.beta = np.maximum(self.beta, hi)

    def result(self) -> tuple[np.ndarray, np.ndarray]:
        if self.alpha is None:
            raise QuantError("no samples observed")
        return self.alpha, self.beta


class MSERangeTracker:
    """Streaming grid search over proportionally shrunk clipping ranges.

    Candidate k in 1..grid_steps uses range (k/grid_steps)*(alpha, beta);
    candidate k=grid_steps is exactly the MinMax range, so the selected
    squared error can never exceed MinMax's.
    """

    def __init__(self, template: QuantizerTemplate, alpha, beta, grid_steps: int):
        if grid_steps < 2:
            raise QuantError("grid_steps must be >= 2")
        self.template = template
        self.grid_steps = grid_steps
        self.fractions = np.arange(1, grid_steps + 1, dtype=np.float64) / grid_steps
        self.candidates = [
            template.from_range(alpha * f, beta * f) for f in self.fractions
        ]
        self.alpha = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
        self.beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
        groups = self.candidates[0].groups
        self.sse = np.zeros((grid_steps, groups), dtype=np.float64)

    def update(self, x: np.ndarray) -> None:
        g = _group_view(x, self.template.granularity, self.template.axis)
        for k, cand in enumerate(self.candidates):
            s = cand.scale[:, None]
            z = cand.zero_point.astype(np.float64)[:, None]
            xq = s * (np.clip(np.rint(g / s) + z, cand.n, cand.p) - z)
            self.sse[k] += ((g - xq) ** 2).sum(axis=1)

    def result(self) -> tuple[np.ndarray, np.ndarray]:
        # prefer the larger (closer to MinMax) range on exact ties
        best = self.sse.shape[0] - 1 - np.argmin(self.sse[::-1], axis=0)
        f = self.fractions[best]
        return self.alpha * f, self.beta * f


def init_minmax(samples, template: QuantizerTemplate) -> QuantizerState:
    """Initialize from the global per-group min/max of the samples."""
    if template.bits >= 32:
        return template.disabled_state()
    tracker = RangeTracker(template)
    for x in samples:
        tracker.update(x)
    return template.from_range(*tracker.result())


def init_mse(samples, template: QuantizerTemplate, grid_steps: int = 100) -> QuantizerState:
    """Initialize by grid search minimizing Frobenius reconstruction error."""
    if template.bits >= 32:
        return template.disabled_state()
    samples = list(samples)
    tracker = RangeTracker(template)
    for x in samples:
        tracker.update(x)
    mse = MSERangeTracker(template, *tracker.result(), grid_steps=grid_steps)
    for x in samples:
        mse.update(x)
    return template.from_range(*mse.result())


def reconstruction_sse(samples, q: QuantizerState) -> float:
    """Total squared reconstruction error of q over the samples."""
    total = 0.0
    for x in samples:
        d = np.asarray(x, dtype=np.float64) - quantize(x, q)
        total += float((d * d).sum())
    return total
