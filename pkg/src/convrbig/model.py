"""Layer stacks: block architectures, layer-wise training, inversion, container IO.

A layer applies the channel-wise marginal Gaussianization and then one
quasi-orthonormal convolution.  Blocks group one subsampling layer (stride > 1,
channel count grows by stride**2) with several stride-1 layers.  Training is
strictly layer by layer: each layer's marginal map and filter are fitted on the
representation produced by the frozen earlier layers, and the redundancy
removed by each convolution is recorded on the training set and, optionally, a
validation set.

The model container is a binary format: magic ``CRBG``, a little-endian uint32
format version, a length-prefixed UTF-8 JSON header, then raw little-endian
float64 blobs (per layer: per-channel CDF knots, then filter weights).
Loading a saved model reproduces forward outputs bit-identically.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .convops import ConvFilter, conv_forward, conv_transpose
from .errors import ArchMismatch, CorruptModel, ShapeMismatch
from .infometrics import MiReport, delta_mi_layer
from .marginal import (
    DEFAULT_BINS,
    MarginalMap,
    fit_marginal,
    marginal_forward,
    marginal_inverse,
)
from .ortho import TrainConfig, TrainReport, random_orthonormal_filter, train_filter

MAGIC = b"CRBG"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class BlockSpec:
    """One subsampling layer followed by ``layers - 1`` stride-1 layers.

    ``kernel`` is the side of the stride-1 kernels; the subsampling layer uses
    ``subsample_kernel`` (default ``2 * stride``) when stride > 1.
    """

    stride: int
    kernel: int
    layers: int
    subsample_kernel: int | None = None

    def __post_init__(self):
        if self.stride < 1 or self.kernel < 1 or self.layers < 1:
            raise ValueError("stride, kernel and layers must be positive")
        if self.subsample_kernel is not None and self.subsample_kernel < 1:
            raise ValueError("subsample_kernel must be positive")

    @property
    def first_kernel(self) -> int:
        if self.stride == 1:
            return self.subsample_kernel or self.kernel
        return self.subsample_kernel or 2 * self.stride


@dataclass(frozen=True)
class ArchitectureSpec:
    """Ordered blocks; channel counts follow ch_out = ch_in * stride**2."""

    blocks: tuple[BlockSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise ValueError("architecture needs at least one block")

    def layer_plan(self, input_shape: tuple[int, int, int]) -> list[tuple[int, int, int, int]]:
        """Per layer (stride, kernel, ch_in, ch_out); raises ArchMismatch if shapes do not tile."""
        h, w, ch = input_shape
        plan = []
        for b, block in enumerate(self.blocks):
            for i in range(block.layers):
                stride = block.stride if i == 0 else 1
                kernel = block.first_kernel if i == 0 else block.kernel
                if h % stride or w % stride:
                    raise ArchMismatch(
                        f"block {b}: spatial size {h}x{w} not divisible by stride {stride}"
                    )
                try:
                    ConvFilter(np.zeros((kernel, kernel, ch, ch * stride * stride)), stride)
                except ShapeMismatch as exc:
                    raise ArchMismatch(f"block {b}, layer {i}: {exc}") from exc
                plan.append((stride, kernel, ch, ch * stride * stride))
                h, w, ch = h // stride, w // stride, ch * stride * stride
        return plan

    def to_json(self) -> list[dict]:
        return [
            {
                "stride": b.stride,
                "kernel": b.kernel,
                "layers": b.layers,
                "subsample_kernel": b.subsample_kernel,
            }
            for b in self.blocks
        ]

    @staticmethod
    def from_json(blocks: list[dict]) -> "ArchitectureSpec":
        return ArchitectureSpec(
            tuple(
                BlockSpec(
                    stride=int(b["stride"]),
                    kernel=int(b["kernel"]),
                    layers=int(b["layers"]),
                    subsample_kernel=(
                        None if b.get("subsample_kernel") is None else int(b["subsample_kernel"])
                    ),
                )
                for b in blocks
            )
        )


def default_architecture(blocks: int = 5, layers: int = 5, stride: int = 2, kernel: int = 7) -> ArchitectureSpec:
    """The stock stacked-block layout: every block subsamples then refines."""
    return ArchitectureSpec(tuple(BlockSpec(stride, kernel, layers) for _ in range(blocks)))


@dataclass
class RbigLayer:
    """One marginal map plus one trained filter, with its training diagnostic."""

    marginal: MarginalMap
    filter: ConvFilter
    trained_residual: float = math.nan


@dataclass
class RbigModel:
    """Ordered layers implementing the full transform and its approximate inverse."""

    input_shape: tuple[int, int, int]
    layers: list[RbigLayer] = field(default_factory=list)
    arch: ArchitectureSpec | None = None
    training_meta: dict = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_blocks(self) -> int:
        return len(self.arch.blocks) if self.arch is not None else (1 if self.layers else 0)

    def _layers_of_blocks(self, n_blocks: int) -> list[RbigLayer]:
        if self.arch is None:
            return self.layers
        if not 0 <= n_blocks <= len(self.arch.blocks):
            raise ShapeMismatch(
                f"block index {n_blocks} out of range 0..{len(self.arch.blocks)}"
            )
        count = sum(b.layers for b in self.arch.blocks[:n_blocks])
        return self.layers[:count]

    def shape_after(self, n_layers: int) -> tuple[int, int, int]:
        h, w, ch = self.input_shape
        for layer in self.layers[:n_layers]:
            s = layer.filter.stride
            h, w, ch = h // s, w // s, layer.filter.ch_out
        return h, w, ch

    def shape_after_blocks(self, n_blocks: int | None = None) -> tuple[int, int, int]:
        layers = self.layers if n_blocks is None else self._layers_of_blocks(n_blocks)
        return self.shape_after(len(layers))

    @property
    def output_shape(self) -> tuple[int, int, int]:
        return self.shape_after(self.n_layers)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Apply every layer in order: marginal Gaussianization, then convolution."""
        x = np.asarray(x, dtype=np.float64)
        self._check_shape(x, self.input_shape, "input")
        for layer in self.layers:
            x = conv_forward(marginal_forward(layer.marginal, x), layer.filter)
        return x

    def inverse(self, z: np.ndarray, n_blocks: int | None = None) -> np.ndarray:
        """Invert layers in reverse: transposed convolution, then inverse marginal.

        With ``n_blocks`` set, only the first that many blocks are inverted,
        from a latent shaped like that block's output.
        """
        layers = self.layers if n_blocks is None else self._layers_of_blocks(n_blocks)
        z = np.asarray(z, dtype=np.float64)
        self._check_shape(z, self.shape_after(len(layers)), "latent")
        for layer in reversed(layers):
            z = marginal_inverse(layer.marginal, conv_transpose(z, layer.filter))
        return z

    @staticmethod
    def _check_shape(x: np.ndarray, expected: tuple[int, int, int], what: str) -> None:
        if x.ndim not in (3, 4) or tuple(x.shape[-3:]) != tuple(expected):
            raise ShapeMismatch(f"{what} shape {x.shape} does not match {expected}")


def _layer_seed(seed: int, layer_index: int) -> int:
    return int(np.random.SeedSequence([seed, layer_index]).generate_state(1)[0])


def train_model(
    data: np.ndarray,
    arch: ArchitectureSpec,
    cfg: TrainConfig,
    validation: np.ndarray | None = None,
    bins: int = DEFAULT_BINS,
) -> tuple[RbigModel, MiReport, list[TrainReport]]:
    """Fit marginal maps and filters layer by layer, freezing earlier layers.

    Per layer: fit the marginal map on the current training representation,
    Gaussianize, train the filter on the Gaussianized data, convolve, and
    record the redundancy removed, on the training set and (when given) on the
    validation set transformed through the same frozen maps.
    """
    x_t = np.asarray(data, dtype=np.float64)
    if x_t.ndim == 3:
        x_t = x_t[None]
    if x_t.ndim != 4:
        raise ShapeMismatch(f"training data must be (n, h, w, ch), got {x_t.shape}")
    input_shape = tuple(x_t.shape[1:])
    plan = arch.layer_plan(input_shape)

    x_v = None
    if validation is not None:
        x_v = np.asarray(validation, dtype=np.float64)
        if x_v.ndim == 3:
            x_v = x_v[None]
        if tuple(x_v.shape[1:]) != input_shape:
            raise ShapeMismatch(
                f"validation shape {x_v.shape[1:]} does not match training {input_shape}"
            )

    model = RbigModel(input_shape=input_shape, arch=arch)
    mi = MiReport(n_train=x_t[..., 0].size, n_valid=0 if x_v is None else x_v[..., 0].size)
    reports: list[TrainReport] = []

    for li, (stride, kernel, ch_in, _) in enumerate(plan):
        marg = fit_marginal(x_t, bins=bins)
        g_t = marginal_forward(marg, x_t)
        layer_cfg = replace(cfg, seed=_layer_seed(cfg.seed, li))
        init = random_orthonormal_filter(kernel, kernel, ch_in, stride, layer_cfg.seed)
        filt, rep = train_filter(init, g_t, layer_cfg)
        reports.append(rep)

        y_t = conv_forward(g_t, filt)
        mi.delta_mi_train.append(delta_mi_layer(g_t, y_t))
        if x_v is not None:
            g_v = marginal_forward(marg, x_v)
            y_v = conv_forward(g_v, filt)
            mi.delta_mi_valid.append(delta_mi_layer(g_v, y_v))
            x_v = y_v

        mi.ortho_residuals.append(rep.orthonormality_residual)
        model.layers.append(
            RbigLayer(marginal=marg, filter=filt, trained_residual=rep.orthonormality_residual)
        )
        x_t = y_t

    model.training_meta = {
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "lambda_act": cfg.lambda_act,
        "lambda_w": cfg.lambda_w,
        "target_residual": cfg.target_residual,
        "bins": bins,
        "n_train_images": int(mi.n_train // (input_shape[0] * input_shape[1])),
    }
    return model, mi, reports


# --- container format ------------------------------------------------------


def save_model(m: RbigModel, path) -> None:
    """Write the binary container; byte output is deterministic."""
    header = {
        "input_shape": list(m.input_shape),
        "arch": None if m.arch is None else m.arch.to_json(),
        "training_meta": m.training_meta,
        "layers": [
            {
                "knot_counts": [int(k.size) for k in layer.marginal.knots_x],
                "tail_extension": layer.marginal.tail_extension,
                "clamp_eps": layer.marginal.clamp_eps,
                "filter": {
                    "k_h": layer.filter.k_h,
                    "k_w": layer.filter.k_w,
                    "ch_in": layer.filter.ch_in,
                    "ch_out": layer.filter.ch_out,
                    "stride": layer.filter.stride,
                },
                "trained_residual": layer.trained_residual,
            }
            for layer in m.layers
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for layer in m.layers:
            for kx, ku in zip(layer.marginal.knots_x, layer.marginal.knots_u):
                fh.write(np.ascontiguousarray(kx, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(ku, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(layer.filter.weights, dtype="<f8").tobytes())


def _take(buf: memoryview, offset: int, count: int, what: str) -> tuple[np.ndarray, int]:
    nbytes = count * 8
    if offset + nbytes > len(buf):
        raise CorruptModel(f"truncated blob while reading {what}")
    arr = np.frombuffer(buf[offset : offset + nbytes], dtype="<f8").astype(np.float64)
    return arr, offset + nbytes


def load_model(path) -> RbigModel:
    """Read a container written by :func:`save_model`; validates before building."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CorruptModel("bad magic")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != FORMAT_VERSION:
        raise CorruptModel(f"unsupported container version {version}")
    hlen = struct.unpack("<I", raw[8:12])[0]
    if 12 + hlen > len(raw):
        raise CorruptModel("truncated header")
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptModel(f"unreadable header: {exc}") from exc

    try:
        input_shape = tuple(int(v) for v in header["input_shape"])
        layer_specs = header["layers"]
        arch = None if header.get("arch") is None else ArchitectureSpec.from_json(header["arch"])
        meta = header.get("training_meta", {})
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModel(f"malformed header: {exc}") from exc
    if len(input_shape) != 3:
        raise CorruptModel(f"bad input_shape {input_shape}")

    buf = memoryview(raw)
    offset = 12 + hlen
    layers: list[RbigLayer] = []
    for i, spec in enumerate(layer_specs):
        try:
            counts = [int(c) for c in spec["knot_counts"]]
            fs = spec["filter"]
            shape = (int(fs["k_h"]), int(fs["k_w"]), int(fs["ch_in"]), int(fs["ch_out"]))
            stride = int(fs["stride"])
            tail = float(spec["tail_extension"])
            eps = float(spec["clamp_eps"])
            residual = float(spec.get("trained_residual", math.nan))
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptModel(f"malformed layer {i} header: {exc}") from exc
        if len(counts) != shape[2]:
            raise CorruptModel(f"layer {i}: {len(counts)} knot vectors for {shape[2]} channels")
        knots_x, knots_u = [], []
        for c, count in enumerate(counts):
            if count < 2:
                raise CorruptModel(f"layer {i} channel {c}: knot count {count} < 2")
            kx, offset = _take(buf, offset, count, f"layer {i} channel {c} knots")
            ku, offset = _take(buf, offset, count, f"layer {i} channel {c} knots")
            if not (np.all(np.diff(kx) > 0) and np.all(np.diff(ku) > 0)):
                raise CorruptModel(f"layer {i} channel {c}: knots not strictly increasing")
            knots_x.append(kx)
            knots_u.append(ku)
        wflat, offset = _take(buf, offset, int(np.prod(shape)), f"layer {i} weights")
        try:
            filt = ConvFilter(wflat.reshape(shape), stride)
        except ShapeMismatch as exc:
            raise CorruptModel(f"layer {i}: {exc}") from exc
        layers.append(
            RbigLayer(
                marginal=MarginalMap(tuple(knots_x), tuple(knots_u), tail, eps),
                filter=filt,
                trained_residual=residual,
            )
        )
    if offset != len(raw):
        raise CorruptModel(f"{len(raw) - offset} trailing bytes after last blob")

    model = RbigModel(input_shape=input_shape, layers=layers, arch=arch, training_meta=meta)
    # header-declared shapes must chain: each layer's input channels must match
    shape = input_shape
    for i, layer in enumerate(model.layers):
        if layer.marginal.channels != shape[2] or layer.filter.ch_in != shape[2]:
            raise CorruptModel(f"layer {i} channel count does not chain with {shape}")
        s = layer.filter.stride
        if shape[0] % s or shape[1] % s:
            raise CorruptModel(f"layer {i} stride {s} does not tile {shape}")
        shape = (shape[0] // s, shape[1] // s, layer.filter.ch_out)
    return model
