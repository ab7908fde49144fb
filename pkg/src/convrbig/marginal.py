"""Channel-wise marginal Gaussianization and its inverse.

One monotone map per channel, fitted from samples pooled over all spatial
positions (translation invariance keeps the map compatible with the
convolution step).  The forward map is a piecewise-linear empirical CDF with
equal-count knots, support extended by a fractional tail ramp on each side,
composed with the standard-normal quantile function.  Both directions are
piecewise monotone, so the map is invertible on the clamped range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .errors import DegenerateMarginal, InsufficientData, ShapeMismatch

DEFAULT_BINS = 256
DEFAULT_TAIL_EXTENSION = 0.1
DEFAULT_CLAMP_EPS = 1e-6

# Peter Acklam's rational approximation of the normal quantile; |relative
# error| < 1.15e-9 on its own, driven to double precision by one Halley step.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def norm_cdf(z):
    """Standard normal CDF."""
    z = np.asarray(z, dtype=np.float64)
    return 0.5 * erfc(-z / np.sqrt(2.0))


def norm_quantile(u):
    """Standard normal quantile for u in (0, 1), accurate to double precision."""
    u = np.asarray(u, dtype=np.float64)
    z = np.empty_like(u)

    lo = u < _P_LOW
    hi = u > 1.0 - _P_LOW
    mid = ~(lo | hi)

    if mid.any():
        q = u[mid] - 0.5
        r = q * q
        num = ((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        z[mid] = num * q / den
    for sel, p in ((lo, u[lo]), (hi, 1.0 - u[hi])):
        if sel.any():
            q = np.sqrt(-2.0 * np.log(p))
            num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
            den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
            z[sel] = num / den
    z[hi] = -z[hi]

    # one Halley refinement against the erfc-based CDF
    err = norm_cdf(z) - u
    step = err * np.sqrt(2.0 * np.pi) * np.exp(z * z / 2.0)
    z -= step / (1.0 + z * step / 2.0)
    return z


@dataclass(frozen=True)
class MarginalMap:
    """Per-channel piecewise-linear CDF knots paired with the normal quantile.

    ``knots_x[c]`` and ``knots_u[c]`` are strictly increasing and equally long;
    the first/last knots sit at the extended support edges with CDF values
    ``clamp_eps`` and ``1 - clamp_eps``.
    """

    knots_x: tuple[np.ndarray, ...]
    knots_u: tuple[np.ndarray, ...]
    tail_extension: float
    clamp_eps: float

    @property
    def channels(self) -> int:
        return len(self.knots_x)

    def medians(self) -> np.ndarray:
        """Per-channel value mapped to zero by the forward transform."""
        return np.array(
            [np.interp(0.5, u, x) for x, u in zip(self.knots_x, self.knots_u)]
        )


def _pooled_channels(data: np.ndarray) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 3:
        data = data[None]
    if data.ndim != 4:
        raise ShapeMismatch(f"expected (h, w, ch) or (n, h, w, ch), got {data.shape}")
    return data.reshape(-1, data.shape[3])


def fit_marginal(
    data: np.ndarray,
    bins: int = DEFAULT_BINS,
    tail_extension: float = DEFAULT_TAIL_EXTENSION,
    clamp_eps: float = DEFAULT_CLAMP_EPS,
) -> MarginalMap:
    """Fit one equal-count piecewise-linear CDF per channel.

    Samples are pooled over batch and spatial positions.  Requires at least
    100 samples per channel and a non-constant channel.
    """
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    if 0.5 / bins <= clamp_eps:
        raise ValueError(f"bins={bins} too fine for clamp_eps={clamp_eps}")
    pooled = _pooled_channels(data)
    n = pooled.shape[0]
    if n < 100:
        raise InsufficientData(f"need >= 100 samples per channel, got {n}")

    probs = (np.arange(bins) + 0.5) / bins
    knots_x, knots_u = [], []
    for c in range(pooled.shape[1]):
        samples = pooled[:, c]
        lo, hi = samples.min(), samples.max()
        if not np.isfinite(samples).all():
            raise DegenerateMarginal(f"channel {c} contains non-finite values")
        if hi <= lo:
            raise DegenerateMarginal(f"channel {c} is constant")
        ext = tail_extension * (hi - lo)
        x = np.concatenate(([lo - ext], np.quantile(samples, probs), [hi + ext]))
        u = np.concatenate(([clamp_eps], probs, [1.0 - clamp_eps]))
        # quantized data produces tied knots; merge them, averaging the CDF
        x_uniq, start = np.unique(x, return_index=True)
        if x_uniq.size < x.size:
            counts = np.diff(np.append(start, x.size))
            u = np.add.reduceat(u, start) / counts
            x = x_uniq
        if x.size < 2:
            raise DegenerateMarginal(f"channel {c} collapses to a single knot")
        knots_x.append(x)
        knots_u.append(u)
    return MarginalMap(tuple(knots_x), tuple(knots_u), tail_extension, clamp_eps)


def _check_channels(m: MarginalMap, x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (3, 4):
        raise ShapeMismatch(f"{what} must be (h, w, ch) or (n, h, w, ch), got {x.shape}")
    if x.shape[-1] != m.channels:
        raise ShapeMismatch(f"{what} has {x.shape[-1]} channels, map has {m.channels}")
    return x


def marginal_forward(m: MarginalMap, x: np.ndarray) -> np.ndarray:
    """Empirical CDF then normal quantile, per channel; shape preserved."""
    x = _check_channels(m, x, "input")
    out = np.empty_like(x)
    for c in range(m.channels):
        u = np.interp(x[..., c], m.knots_x[c], m.knots_u[c])
        u = np.clip(u, m.clamp_eps, 1.0 - m.clamp_eps)
        out[..., c] = norm_quantile(u)
    return out


def marginal_inverse(m: MarginalMap, y: np.ndarray) -> np.ndarray:
    """Exact functional inverse of :func:`marginal_forward` on the clamped range."""
    y = _check_channels(m, y, "input")
    out = np.empty_like(y)
    for c in range(m.channels):
        u = np.clip(norm_cdf(y[..., c]), m.clamp_eps, 1.0 - m.clamp_eps)
        out[..., c] = np.interp(u, m.knots_u[c], m.knots_x[c])
    return out
