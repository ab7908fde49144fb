"""Univariate entropy estimation and per-layer multi-information reduction.

Marginal maps never change the joint redundancy, so the redundancy removed by
an orthonormal linear layer y = Cx reduces to a difference of marginal
entropies: sum_d h(x_d) - sum_d h(y_d) (the log-determinant term is zero for a
rotation).  Entropies are estimated with the Vasicek m-spacing estimator,
m = floor(sqrt(n)), with the digamma bias correction; all values are nats.

Per-dimension sums are approximated channel-wise under spatial stationarity:
the h*w*ch per-dimension terms collapse to h*w times the per-channel entropy
of samples pooled over all spatial positions, which keeps the estimator sample
counts large.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma

from .convops import conv_forward
from .errors import DegenerateSamples, NotSupported, ShapeMismatch
from .marginal import marginal_forward

ESTIMATOR_NAME = "vasicek-mspacing(m=floor(sqrt(n)),bias-corrected)"
_MIN_SAMPLES = 100


def entropy_univariate(samples: np.ndarray) -> float:
    """Bias-corrected Vasicek m-spacing entropy estimate in nats.

    H = (1/n) sum_i log( n/(2m) * (x_(i+m) - x_(i-m)) ) + b(n, m), with order
    statistics clamped at the ends and the standard digamma correction

        b = log(2m/n) - (1 - 2m/n) psi(2m) + psi(n+1) - (2/n) sum_{i=1}^{m} psi(i+m-1).

    Heavily tied samples (discrete data) push the estimate toward -inf; the
    spacings are floored at a tiny multiple of the data range so the result
    stays finite.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    n = x.size
    if n < _MIN_SAMPLES:
        raise DegenerateSamples(f"need >= {_MIN_SAMPLES} samples, got {n}")
    if not np.isfinite(x).all():
        raise DegenerateSamples("samples contain non-finite values")
    x = np.sort(x)
    scale = x[-1] - x[0]
    if scale <= 0:
        raise DegenerateSamples("samples are constant")

    m = int(math.floor(math.sqrt(n)))
    upper = np.concatenate((x[m:], np.full(m, x[-1])))
    lower = np.concatenate((np.full(m, x[0]), x[:-m]))
    spacings = np.maximum(upper - lower, 1e-12 * scale)
    raw = float(np.mean(np.log(n / (2.0 * m) * spacings)))

    i = np.arange(1, m + 1)
    correction = (
        math.log(2.0 * m / n)
        - (1.0 - 2.0 * m / n) * digamma(2.0 * m)
        + digamma(n + 1.0)
        - 2.0 / n * float(np.sum(digamma(i + m - 1.0)))
    )
    return raw + correction


def _channel_entropies(batch: np.ndarray, what: str) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 3:
        batch = batch[None]
    if batch.ndim != 4:
        raise ShapeMismatch(f"{what} must be (h, w, ch) or (n, h, w, ch), got {batch.shape}")
    pooled = batch.reshape(-1, batch.shape[3])
    return np.array([entropy_univariate(pooled[:, c]) for c in range(pooled.shape[1])])


def delta_mi_layer(
    x: np.ndarray, y: np.ndarray, assume_rotation: bool = True
) -> float:
    """Redundancy removed by the linear step y = Cx, in nats per dimension.

    Returns (sum_d h(x_d) - sum_d h(y_d)) / D with the per-dimension sums
    taken channel-wise under stationarity.  Only the rotation case is
    supported: for a non-rotation the log-determinant term would be needed.
    """
    if not assume_rotation:
        raise NotSupported("log|C| is not computed; only rotations are supported")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size:
        raise ShapeMismatch(f"element counts differ: {x.size} vs {y.size}")
    hx = _channel_entropies(x, "x")
    hy = _channel_entropies(y, "y")
    sx, sy = (a.shape[-3] * a.shape[-2] for a in (x, y))
    dim = sx * x.shape[-1]
    return float(sx * hx.sum() - sy * hy.sum()) / dim


@dataclass
class MiReport:
    """Per-layer redundancy-reduction values plus their running sums."""

    delta_mi_train: list[float] = field(default_factory=list)
    delta_mi_valid: list[float] = field(default_factory=list)
    ortho_residuals: list[float] = field(default_factory=list)
    n_train: int = 0
    n_valid: int = 0
    estimator: str = ESTIMATOR_NAME

    @property
    def accumulated_train(self) -> np.ndarray:
        return np.cumsum(self.delta_mi_train)

    @property
    def accumulated_valid(self) -> np.ndarray:
        return np.cumsum(self.delta_mi_valid)

    def write_csv(self, path) -> None:
        have_valid = len(self.delta_mi_valid) == len(self.delta_mi_train)
        acc_t = self.accumulated_train
        acc_v = self.accumulated_valid
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("layer_index,delta_mi_train,delta_mi_valid,"
                     "accumulated_train,accumulated_valid,ortho_residual\n")
            for k, dt in enumerate(self.delta_mi_train):
                dv = self.delta_mi_valid[k] if have_valid else math.nan
                av = acc_v[k] if have_valid else math.nan
                res = self.ortho_residuals[k] if k < len(self.ortho_residuals) else math.nan
                fh.write(f"{k},{dt!r},{dv!r},{acc_t[k]!r},{av!r},{res!r}\n")


def accumulated_mi_curve(model, data, validation=None) -> MiReport:
    """Replay a trained model layer by layer, measuring each convolution's yield.

    The marginal steps contribute nothing by construction; the report holds one
    entry per layer, measured around the convolution, on the data given (and
    optionally on a held-out set).
    """
    report = MiReport()
    x_t = np.asarray(data, dtype=np.float64)
    if x_t.ndim == 3:
        x_t = x_t[None]
    x_v = None
    if validation is not None:
        x_v = np.asarray(validation, dtype=np.float64)
        if x_v.ndim == 3:
            x_v = x_v[None]
        report.n_valid = x_v[..., 0].size
    report.n_train = x_t[..., 0].size

    for layer in model.layers:
        g_t = marginal_forward(layer.marginal, x_t)
        y_t = conv_forward(g_t, layer.filter)
        report.delta_mi_train.append(delta_mi_layer(g_t, y_t))
        if x_v is not None:
            g_v = marginal_forward(layer.marginal, x_v)
            y_v = conv_forward(g_v, layer.filter)
            report.delta_mi_valid.append(delta_mi_layer(g_v, y_v))
            x_v = y_v
        report.ortho_residuals.append(layer.trained_residual)
        x_t = y_t
    return report
