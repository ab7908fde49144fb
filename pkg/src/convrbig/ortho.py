"""Learning quasi-orthonormal convolutions with a tied-weight autoencoder.

A candidate filter is scored by running the convolution forward and its
transpose backward with the same weights and penalizing the reconstruction
error; at zero error the convolution matrix is orthonormal.  Two L1 terms can
be added: one on the activations (pushes the representation toward
independent, low-entropy marginals) and one on the weights (cleans up the
kernels).  The scalar objective per batch is

    mean_b [ mean((x_b - x_hat_b)**2) + lambda_act * mean(|conv(x_b)|) ]
        + lambda_w * sum(|weights|)

minimized by plain minibatch SGD with a fixed learning rate.  Gradients are
analytic, assembled from convolution / transposed-convolution compositions;
the L1 subgradient at zero is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .convops import ConvFilter, conv_forward, conv_transpose, gram_residual, weight_gradient
from .errors import Diverged, ShapeMismatch

# train_filter reports the orthonormality residual only up to this element
# count; the sparse Gram product gets slow well before the memory guard does
RESIDUAL_GUARD = 4096


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for filter training; defaults favor determinism over speed."""

    lambda_act: float = 0.0
    lambda_w: float = 0.0
    learning_rate: float = 0.1
    momentum: float = 0.9
    epochs: int = 100
    batch_size: int = 16
    seed: int = 0
    target_residual: float = 1e-9

    def __post_init__(self):
        if self.lambda_act < 0 or self.lambda_w < 0:
            raise ValueError("regularizer weights must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.target_residual <= 0:
            raise ValueError("target_residual must be positive")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")


@dataclass
class TrainReport:
    """Per-epoch diagnostics of a single filter-training run."""

    reconstruction_rmse: list[float] = field(default_factory=list)
    activity_l1: list[float] = field(default_factory=list)
    weight_l1: list[float] = field(default_factory=list)
    orthonormality_residual: float = math.nan

    @property
    def final_rmse(self) -> float:
        return self.reconstruction_rmse[-1] if self.reconstruction_rmse else math.nan

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,reconstruction_rmse,activity_l1,weight_l1\n")
            rows = zip(self.reconstruction_rmse, self.activity_l1, self.weight_l1)
            for epoch, (rmse, act, wl1) in enumerate(rows):
                fh.write(f"{epoch},{rmse!r},{act!r},{wl1!r}\n")


def _as_batch4(data: np.ndarray) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 3:
        data = data[None]
    if data.ndim != 4:
        raise ShapeMismatch(f"expected (n, h, w, ch) batch, got {data.shape}")
    return data


def loss_and_grad(
    f: ConvFilter, batch: np.ndarray, cfg: TrainConfig
) -> tuple[float, np.ndarray]:
    """Objective value and its exact gradient with respect to the filter weights."""
    xb = _as_batch4(batch)
    n_el = xb[0].size  # element count per image; preserved by the filter
    y = conv_forward(xb, f)
    xh = conv_transpose(y, f)
    r = xb - xh

    recon = float(np.mean(r**2))
    act = float(np.mean(np.abs(y)))
    wsum = float(np.sum(np.abs(f.weights)))
    loss = recon + cfg.lambda_act * act + cfg.lambda_w * wsum

    batch_n = xb.shape[0]
    # d/dw mean((x - C^T C x)^2) = -(2/N) [ dC(r -> y) + dC(x -> C r) ]
    grad = -(2.0 / (batch_n * n_el)) * (
        weight_gradient(r, y, f) + weight_gradient(xb, conv_forward(r, f), f)
    )
    if cfg.lambda_act > 0:
        grad += (cfg.lambda_act / (batch_n * n_el)) * weight_gradient(xb, np.sign(y), f)
    if cfg.lambda_w > 0:
        grad += cfg.lambda_w * np.sign(f.weights)
    return loss, grad


def random_orthonormal_filter(
    k_h: int, k_w: int, ch_in: int, stride: int, seed: int
) -> ConvFilter:
    """Random init projected onto column-orthonormal unfolded weights.

    Entries start i.i.d. normal with std 1/sqrt(k_h*k_w*ch_in), then the
    unfolded (k_h*k_w*ch_in, ch_out) matrix is QR-orthonormalized with the
    sign convention diag(R) > 0, so the init is deterministic given the seed.
    """
    ch_out = ch_in * stride * stride
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    w = rng.normal(0.0, 1.0 / np.sqrt(k_h * k_w * ch_in), size=(k_h * k_w * ch_in, ch_out))
    q, r = np.linalg.qr(w)
    q = q * np.sign(np.diag(r))
    return ConvFilter(q.reshape(k_h, k_w, ch_in, ch_out), stride=stride)


def _dataset_diagnostics(f: ConvFilter, data: np.ndarray) -> tuple[float, float]:
    y = conv_forward(data, f)
    xh = conv_transpose(y, f)
    rmse = float(np.sqrt(np.mean((data - xh) ** 2)))
    act = float(np.mean(np.abs(y)))
    return rmse, act


def train_filter(
    init: ConvFilter, data: np.ndarray, cfg: TrainConfig
) -> tuple[ConvFilter, TrainReport]:
    """Minibatch SGD on the tied-weight autoencoder objective.

    Deterministic given (init, data, cfg): shuffling comes from a seeded
    generator and gradients are accumulated in index order.  Stops early once
    the full-data reconstruction RMSE falls at or below ``target_residual``.
    """
    data = _as_batch4(data)
    if data.shape[3] != init.ch_in:
        raise ShapeMismatch(
            f"data has {data.shape[3]} channels, filter expects {init.ch_in}"
        )
    n = data.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    weights = init.weights.copy()
    f = init.with_weights(weights)
    report = TrainReport()

    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = data[order[start : start + cfg.batch_size]]
            loss, grad = loss_and_grad(f, batch, cfg)
            if not np.isfinite(loss) or not np.isfinite(grad).all():
                raise Diverged(f"non-finite loss/gradient at epoch {len(report.reconstruction_rmse)}")
            weights = weights - cfg.learning_rate * grad
            f = f.with_weights(weights)
        rmse, act = _dataset_diagnostics(f, data)
        if not np.isfinite(rmse):
            raise Diverged("non-finite reconstruction error")
        report.reconstruction_rmse.append(rmse)
        report.activity_l1.append(act)
        report.weight_l1.append(float(np.sum(np.abs(weights))))
        if rmse <= cfg.target_residual:
            break

    if data.shape[1] * data.shape[2] * f.ch_in <= RESIDUAL_GUARD:
        report.orthonormality_residual = orthonormality_residual(
            f, data.shape[1], data.shape[2]
        )
    return f, report


def orthonormality_residual(f: ConvFilter, h: int, w: int) -> float:
    """||C^T C - I||_F / sqrt(h*w*ch_in) for the matrix of the filter at (h, w)."""
    return gram_residual(f, h, w)
