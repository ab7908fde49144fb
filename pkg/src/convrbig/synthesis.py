"""Texture synthesis by inverting Gaussian noise, and latent-direction probes.

Sampling draws standard-normal latents shaped like the model output (or like
an intermediate block output) and runs the inverse transform.  Noise streams
are split per image index: image ``i`` uses ``PCG64(SeedSequence([seed, i]))``,
so any subset of a batch can be regenerated independently and deterministically.

The probe walks a ray in latent space: one white-noise field restricted to a
channel band, scaled by each amplitude, inverted to image space, and scored by
its RMS deviation from the zero-latent (flat) image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyBand
from .model import RbigModel


@dataclass(frozen=True)
class NoiseSpec:
    """How many latents to draw and from which seed."""

    count: int
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")


def _latent_noise(shape: tuple[int, int, int], seed: int, index: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    return rng.standard_normal(shape)


def synthesize(
    m: RbigModel, spec: NoiseSpec, after_block: int | None = None
) -> np.ndarray:
    """Invert ``spec.count`` standard-normal latents; returns (count, h, w, ch).

    With ``after_block`` set, noise is shaped like that block's output and only
    the first that many blocks are inverted; the full depth equals the
    untruncated path exactly.
    """
    shape = m.shape_after_blocks(after_block)
    latents = np.stack([_latent_noise(shape, spec.seed, i) for i in range(spec.count)])
    return m.inverse(latents, n_blocks=after_block)


def probe_direction(
    m: RbigModel,
    band: "list[int] | np.ndarray",
    amplitudes: "list[float] | np.ndarray",
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Scale one band-limited white-noise latent by each amplitude and invert.

    Returns the decoded images, stacked per amplitude, and the energy curve:
    RMS deviation of each image from the zero-latent image.
    """
    shape = m.output_shape
    band = np.atleast_1d(np.asarray(band, dtype=int))
    if band.size == 0:
        raise EmptyBand("channel band is empty")
    if band.min() < 0 or band.max() >= shape[2]:
        raise EmptyBand(f"band {band.tolist()} outside 0..{shape[2] - 1}")
    amplitudes = np.asarray(amplitudes, dtype=np.float64)
    if amplitudes.size == 0 or (amplitudes < 0).any():
        raise ValueError("amplitudes must be nonnegative")
    if (np.diff(amplitudes) < 0).any():
        raise ValueError("amplitudes must be nondecreasing")

    noise = np.zeros(shape)
    noise[..., band] = _latent_noise(shape, seed, 0)[..., band]
    zero_image = m.inverse(np.zeros(shape))

    images = m.inverse(np.stack([a * noise for a in amplitudes]))
    energies = np.sqrt(np.mean((images - zero_image) ** 2, axis=(1, 2, 3)))
    return images, energies
