"""Dense image tensors and the strided convolution / transposed-convolution pair.

Images are float64 arrays of shape ``(height, width, channels)``; batches add a
leading axis.  A :class:`ConvFilter` is a 4-D kernel ``(k_h, k_w, ch_in,
ch_out)`` with a stride, restricted so that the associated convolution matrix
is square (``ch_out = ch_in * stride**2``).  Boundary handling is zero padding
in "same" mode with ``(kernel - stride) / 2`` pixels per side, so the output
spatial size is exactly ``input / stride``.

``conv_transpose`` is the exact linear adjoint of ``conv_forward``: it is built
from the same patch-gather index map, run in scatter-add direction.
``filter_as_matrix`` builds the dense matrix of the map by direct index
arithmetic, deliberately sharing no code with the im2col path, so the two can
check each other.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.sparse
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch, TooLarge

# filter_as_matrix refuses images with more than this many elements
MATRIX_GUARD = 16384


@dataclass(frozen=True)
class ConvFilter:
    """Convolution kernel plus stride, constrained to preserve element count.

    ``weights`` has shape ``(k_h, k_w, ch_in, ch_out)``.  Both kernel sides
    must be multiples of the stride and leave an integral "same" padding
    ``(k - stride) / 2``.
    """

    weights: np.ndarray
    stride: int = 1

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 4:
            raise ShapeMismatch(f"filter weights must be 4-D, got shape {w.shape}")
        k_h, k_w, ch_in, ch_out = w.shape
        if min(k_h, k_w, ch_in, ch_out) < 1:
            raise ShapeMismatch(f"filter dimensions must be positive, got {w.shape}")
        s = int(self.stride)
        if s < 1:
            raise ShapeMismatch(f"stride must be positive, got {s}")
        if ch_out != ch_in * s * s:
            raise ShapeMismatch(
                f"ch_out must equal ch_in * stride**2 ({ch_in * s * s}), got {ch_out}"
            )
        if k_h % s or k_w % s:
            raise ShapeMismatch(
                f"kernel sides must be multiples of the stride, got {k_h}x{k_w} at stride {s}"
            )
        if (k_h - s) % 2 or (k_w - s) % 2:
            raise ShapeMismatch(
                f"kernel {k_h}x{k_w} at stride {s} leaves no integral same-padding"
            )
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "stride", s)

    @property
    def k_h(self) -> int:
        return self.weights.shape[0]

    @property
    def k_w(self) -> int:
        return self.weights.shape[1]

    @property
    def ch_in(self) -> int:
        return self.weights.shape[2]

    @property
    def ch_out(self) -> int:
        return self.weights.shape[3]

    @property
    def pad(self) -> tuple[int, int]:
        return (self.k_h - self.stride) // 2, (self.k_w - self.stride) // 2

    def with_weights(self, weights: np.ndarray) -> "ConvFilter":
        return replace(self, weights=weights)


def delta_filter(channels: int) -> ConvFilter:
    """1x1 identity kernel: conv_forward is the identity map."""
    w = np.eye(channels, dtype=np.float64).reshape(1, 1, channels, channels)
    return ConvFilter(w, stride=1)


def space_to_depth_filter(stride: int, ch_in: int) -> ConvFilter:
    """Stride-s rearrangement into s**2 times more channels; exactly orthonormal.

    The kernel is the set of one-hot indicators of the stride x stride cell
    positions, so the associated matrix is a permutation.
    """
    s = int(stride)
    w = np.zeros((s, s, ch_in, ch_in * s * s), dtype=np.float64)
    for u in range(s):
        for v in range(s):
            for c in range(ch_in):
                w[u, v, c, (u * s + v) * ch_in + c] = 1.0
    return ConvFilter(w, stride=s)


def _as_batch(x: np.ndarray, channels: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        xb, single = x[None], True
    elif x.ndim == 4:
        xb, single = x, False
    else:
        raise ShapeMismatch(f"{what} must be (h, w, ch) or (n, h, w, ch), got {x.shape}")
    if xb.shape[3] != channels:
        raise ShapeMismatch(f"{what} has {xb.shape[3]} channels, filter expects {channels}")
    return xb, single


@lru_cache(maxsize=32)
def _scatter_index(out_h: int, out_w: int, k_h: int, k_w: int, stride: int, ch: int) -> np.ndarray:
    """Flat indices into the padded image for every (patch, patch-element) pair."""
    pad_h, pad_w = (k_h - stride) // 2, (k_w - stride) // 2
    hp = out_h * stride + 2 * pad_h
    wp = out_w * stride + 2 * pad_w
    rows = np.arange(out_h)[:, None] * stride + np.arange(k_h)[None, :]  # (oh, kh)
    cols = np.arange(out_w)[:, None] * stride + np.arange(k_w)[None, :]  # (ow, kw)
    lin = (
        rows[:, None, :, None, None] * wp + cols[None, :, None, :, None]
    ) * ch + np.arange(ch)[None, None, None, None, :]
    idx = lin.reshape(out_h * out_w, k_h * k_w * ch)
    idx.flags.writeable = False
    return idx


def _im2col(xb: np.ndarray, f: ConvFilter) -> np.ndarray:
    """Gather stride-spaced patches: (n, out_h*out_w, k_h*k_w*ch_in)."""
    pad_h, pad_w = f.pad
    xp = np.pad(xb, ((0, 0), (pad_h, pad_h), (pad_w, pad_w), (0, 0)))
    win = sliding_window_view(xp, (f.k_h, f.k_w), axis=(1, 2))  # (n, H', W', ch, kh, kw)
    win = win[:, :: f.stride, :: f.stride]
    n, oh, ow = win.shape[:3]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n, oh * ow, f.k_h * f.k_w * f.ch_in)
    return cols


def conv_forward(x: np.ndarray, f: ConvFilter) -> np.ndarray:
    """Strided same-padded convolution; output (h/s, w/s, ch_out).

    Accepts a single image or a batch with a leading axis.
    """
    xb, single = _as_batch(x, f.ch_in, "input")
    n, h, w = xb.shape[:3]
    if h % f.stride or w % f.stride:
        raise ShapeMismatch(f"spatial size {h}x{w} not divisible by stride {f.stride}")
    cols = _im2col(xb, f)
    y = cols @ f.weights.reshape(-1, f.ch_out)
    y = y.reshape(n, h // f.stride, w // f.stride, f.ch_out)
    return y[0] if single else y


def conv_transpose(y: np.ndarray, f: ConvFilter) -> np.ndarray:
    """Exact adjoint of :func:`conv_forward`; output (h*s, w*s, ch_in)."""
    yb, single = _as_batch(y, f.ch_out, "input")
    n, oh, ow = yb.shape[:3]
    pad_h, pad_w = f.pad
    h, w = oh * f.stride, ow * f.stride
    hp, wp = h + 2 * pad_h, w + 2 * pad_w
    grads = yb.reshape(n, oh * ow, f.ch_out) @ f.weights.reshape(-1, f.ch_out).T
    idx = _scatter_index(oh, ow, f.k_h, f.k_w, f.stride, f.ch_in)
    flat = np.zeros(n * hp * wp * f.ch_in, dtype=np.float64)
    offs = (np.arange(n) * hp * wp * f.ch_in)[:, None, None]
    np.add.at(flat, (idx[None] + offs).ravel(), grads.ravel())
    xp = flat.reshape(n, hp, wp, f.ch_in)
    x = xp[:, pad_h : pad_h + h, pad_w : pad_w + w]
    return x[0] if single else x


def weight_gradient(inp: np.ndarray, out_grad: np.ndarray, f: ConvFilter) -> np.ndarray:
    """Gradient of <out_grad, conv_forward(inp)> with respect to the weights."""
    xb, _ = _as_batch(inp, f.ch_in, "input")
    gb, _ = _as_batch(out_grad, f.ch_out, "output gradient")
    n = xb.shape[0]
    cols = _im2col(xb, f).reshape(n * gb.shape[1] * gb.shape[2], -1)
    gmat = gb.reshape(-1, f.ch_out)
    return (cols.T @ gmat).reshape(f.weights.shape)


def _matrix_coords(f: ConvFilter, h: int, w: int):
    """(rows, cols, vals) of the dense convolution matrix, by index arithmetic.

    Kept independent of the im2col path: entry ((oi,oj,co),(ii,ij,ci)) is
    weights[u,v,ci,co] with ii = oi*s - pad_h + u, ij = oj*s - pad_w + v.
    """
    s = f.stride
    pad_h, pad_w = f.pad
    oh, ow = h // s, w // s
    rows, cols, vals = [], [], []
    oi = np.arange(oh)
    oj = np.arange(ow)
    ci = np.arange(f.ch_in)
    co = np.arange(f.ch_out)
    for u in range(f.k_h):
        ii = oi * s - pad_h + u
        mi = (ii >= 0) & (ii < h)
        if not mi.any():
            continue
        for v in range(f.k_w):
            jj = oj * s - pad_w + v
            mj = (jj >= 0) & (jj < w)
            if not mj.any():
                continue
            out_pos = oi[mi][:, None] * ow + oj[mj][None, :]  # (a, b)
            in_pos = ii[mi][:, None] * w + jj[mj][None, :]
            r = out_pos[:, :, None, None] * f.ch_out + co[None, None, None, :]
            c = in_pos[:, :, None, None] * f.ch_in + ci[None, None, :, None]
            r, c = np.broadcast_arrays(r, c)
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(np.broadcast_to(f.weights[u, v], r.shape).ravel())
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def _check_matrix_size(f: ConvFilter, h: int, w: int) -> None:
    if h % f.stride or w % f.stride:
        raise ShapeMismatch(f"spatial size {h}x{w} not divisible by stride {f.stride}")
    if h * w * f.ch_in > MATRIX_GUARD:
        raise TooLarge(
            f"{h}x{w}x{f.ch_in} exceeds the dense materialization guard ({MATRIX_GUARD})"
        )


def filter_as_matrix(f: ConvFilter, h: int, w: int) -> np.ndarray:
    """Dense matrix C with C @ vec(x) = vec(conv_forward(x, f)); test/diagnostic use."""
    _check_matrix_size(f, h, w)
    d_out = (h // f.stride) * (w // f.stride) * f.ch_out
    mat = np.zeros((d_out, h * w * f.ch_in), dtype=np.float64)
    rows, cols, vals = _matrix_coords(f, h, w)
    np.add.at(mat, (rows, cols), vals)
    return mat


def gram_residual(f: ConvFilter, h: int, w: int) -> float:
    """Orthonormality residual ||C^T C - I||_F / sqrt(D), D = h*w*ch_in.

    Zero exactly when the convolution matrix is orthonormal.  Uses a sparse
    Gram product so it stays cheap at the guard size.
    """
    _check_matrix_size(f, h, w)
    d_in = h * w * f.ch_in
    d_out = (h // f.stride) * (w // f.stride) * f.ch_out
    rows, cols, vals = _matrix_coords(f, h, w)
    mat = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(d_out, d_in)).tocsr()
    gram = (mat.T @ mat - scipy.sparse.eye(d_in, format="csr")).tocoo()
    return float(np.sqrt(np.sum(gram.data**2) / d_in))
