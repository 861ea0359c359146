"""Training-time spectrogram augmentation.

All transforms act on a single example: a ``(frames, bands)`` spectrogram
array plus, for the time stretch, the aligned per-frame label and guide
vectors.  :func:`augment` applies the transforms in a fixed order, each
triggered independently with its configured probability, and finishes by
beat-masking the guide:

    frequency shift, frequency mask, time mask, high-frequency mask,
    frequency flip, white noise, time stretch, beat mask.

Masked regions are filled with the global mean of the transform's own
input.  Every random draw comes from the caller's generator, so one seed
reproduces one augmentation stream exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any

import numpy as np

from chartgen.beats import DEFAULT_BEAT_DROP, BeatGuide, apply_beat_mask
from chartgen.charts import ChartError


@dataclass(frozen=True)
class AugmentationConfig:
    """Trigger probabilities and strength parameters for :func:`augment`.

    The count and threshold defaults assume the standard 229-band,
    20-second (625 frame) training chunk: mask counts are 5% of the axis
    length, the high-frequency threshold is 75% of the band count, and
    the noise sigma assumes roughly unit-variance input.  Use
    :meth:`scaled` to derive them for other shapes.
    """

    freq_shift_prob: float = 0.5
    freq_mask_prob: float = 0.5
    time_mask_prob: float = 0.5
    high_freq_mask_prob: float = 0.5
    freq_flip_prob: float = 0.5
    noise_prob: float = 0.5
    stretch_prob: float = 0.5

    freq_shift_lambda: float = 0.1
    freq_mask_count: int = 11
    time_mask_count: int = 31
    high_freq_threshold: int = 172
    noise_sigma: float = 0.05
    stretch_bounds: tuple[float, float] = (0.9, 1.0)
    beat_drop_prob: float = DEFAULT_BEAT_DROP

    def __post_init__(self):
        for f in fields(self):
            if f.name.endswith("_prob"):
                p = getattr(self, f.name)
                if not 0.0 <= p <= 1.0:
                    raise ChartError(f"{f.name} must lie in [0, 1], got {p}")
        if self.freq_shift_lambda < 0:
            raise ChartError("freq_shift_lambda must be non-negative")
        if self.freq_mask_count < 0 or self.time_mask_count < 0:
            raise ChartError("mask counts must be non-negative")
        if self.high_freq_threshold < 1:
            raise ChartError("high_freq_threshold is a 1-based band index")
        if self.noise_sigma < 0:
            raise ChartError("noise_sigma must be non-negative")
        a, b = self.stretch_bounds
        if not (0.0 < a <= b <= 1.0):
            raise ChartError(f"stretch bounds need 0 < a <= b <= 1, got ({a}, {b})")

    @classmethod
    def scaled(
        cls, num_frames: int, num_bands: int, value_sd: float = 1.0, **overrides: Any
    ) -> "AugmentationConfig":
        """Defaults re-derived for a given chunk shape and input spread."""
        params = dict(
            freq_mask_count=max(1, round(0.05 * num_bands)),
            time_mask_count=max(1, round(0.05 * num_frames)),
            high_freq_threshold=max(1, round(0.75 * num_bands)),
            noise_sigma=0.05 * value_sd,
        )
        params.update(overrides)
        return cls(**params)


def frequency_shift(
    spec: np.ndarray, shift_lambda: float, rng: np.random.Generator
) -> np.ndarray:
    """Roll each frame along the band axis by an independent random amount.

    The shift for frame t is ``round(delta_t * F)`` bands with
    ``delta_t ~ U(-lambda, lambda)``; bands wrap around, so a +1 shift
    turns ``(a, b, c, d)`` into ``(d, a, b, c)``.
    """
    t, f = spec.shape
    delta = rng.uniform(-shift_lambda, shift_lambda, size=t)
    shifts = np.rint(delta * f).astype(np.int64)
    idx = (np.arange(f)[None, :] - shifts[:, None]) % f
    return np.take_along_axis(spec, idx, axis=1)


def frequency_mask(
    spec: np.ndarray, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Fill ``count`` random bands with the global mean of the input."""
    t, f = spec.shape
    if count > f:
        raise ChartError(f"cannot mask {count} of {f} bands")
    out = spec.copy()
    out[:, rng.choice(f, size=count, replace=False)] = spec.mean()
    return out


def time_mask(spec: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Fill ``count`` random frames with the global mean of the input."""
    t, f = spec.shape
    if count > t:
        raise ChartError(f"cannot mask {count} of {t} frames")
    out = spec.copy()
    out[rng.choice(t, size=count, replace=False), :] = spec.mean()
    return out


def high_frequency_mask(spec: np.ndarray, threshold: int) -> np.ndarray:
    """Fill every band at or above the 1-based ``threshold`` with the mean."""
    t, f = spec.shape
    if not 1 <= threshold <= f:
        raise ChartError(f"threshold must lie in [1, {f}], got {threshold}")
    out = spec.copy()
    out[:, threshold - 1 :] = spec.mean()
    return out


def frequency_flip(spec: np.ndarray) -> np.ndarray:
    """Reverse the band axis."""
    return spec[:, ::-1].copy()


def white_noise(
    spec: np.ndarray, sigma: float, rng: np.random.Generator
) -> np.ndarray:
    """Add independent Gaussian noise with standard deviation ``sigma``."""
    return spec + rng.normal(0.0, sigma, size=spec.shape)


def time_stretch(
    spec: np.ndarray,
    labels: np.ndarray,
    guide: np.ndarray,
    bounds: tuple[float, float],
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slow the example down by a random factor, keeping its length.

    With stretch factor ``c ~ U(a, b)`` (``0 < a <= b <= 1``), output
    frame t (1-based) reads input frame ``ceil(c * t)``; the tail of the
    input slides past the end and is dropped.  Nonzero label and guide
    entries move from frame u to ``floor(u / c + 0.5)`` (1-based, ties up)
    and collisions keep the maximum, so a stretch never stacks two onsets
    into more than one.

    Returns:
        ``(spec, labels, guide)`` stretched copies, same shapes as input.
    """
    a, b = bounds
    if not (0.0 < a <= b <= 1.0):
        raise ChartError(f"stretch bounds need 0 < a <= b <= 1, got ({a}, {b})")
    c = rng.uniform(a, b)
    t = spec.shape[0]
    if t == 0:
        return spec.copy(), labels.copy(), guide.copy()

    src = np.ceil(c * np.arange(1, t + 1)).astype(np.int64) - 1
    src = np.clip(src, 0, t - 1)
    out_spec = spec[src]

    def move(vec: np.ndarray) -> np.ndarray:
        out = np.zeros_like(vec)
        for u in np.flatnonzero(vec):
            v = int(np.floor((u + 1) / c + 0.5)) - 1
            if v < t:
                out[v] = max(out[v], vec[u])
        return out

    return out_spec, move(labels), move(guide)


def augment(
    spec: np.ndarray,
    labels: np.ndarray,
    guide: np.ndarray,
    config: AugmentationConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Apply the full augmentation chain to one training example.

    Args:
        spec: ``(frames, bands)`` log-Mel values.
        labels: Per-frame onset targets aligned with ``spec``.
        guide: Per-frame beat guide aligned with ``spec``.
        config: Trigger probabilities and strengths.
        rng: Source of all randomness.

    Returns:
        ``(spec, labels, guide)`` as new arrays; inputs are not modified.
    """
    if spec.ndim != 2:
        raise ChartError("spectrogram must be 2-D (frames, bands)")
    if len(labels) != spec.shape[0] or len(guide) != spec.shape[0]:
        raise ChartError("labels and guide must match the spectrogram frame count")
    spec = np.asarray(spec, dtype=np.float64).copy()
    labels = np.asarray(labels, dtype=np.float64).copy()
    guide = np.asarray(guide).copy()

    if rng.random() < config.freq_shift_prob:
        spec = frequency_shift(spec, config.freq_shift_lambda, rng)
    if rng.random() < config.freq_mask_prob:
        spec = frequency_mask(spec, min(config.freq_mask_count, spec.shape[1]), rng)
    if rng.random() < config.time_mask_prob:
        spec = time_mask(spec, min(config.time_mask_count, spec.shape[0]), rng)
    if rng.random() < config.high_freq_mask_prob:
        spec = high_frequency_mask(spec, min(config.high_freq_threshold, spec.shape[1]))
    if rng.random() < config.freq_flip_prob:
        spec = frequency_flip(spec)
    if rng.random() < config.noise_prob:
        spec = white_noise(spec, config.noise_sigma, rng)
    if rng.random() < config.stretch_prob:
        spec, labels, guide = time_stretch(
            spec, labels, guide, config.stretch_bounds, rng
        )

    masked = apply_beat_mask(
        BeatGuide(values=guide.astype(np.uint8)), config.beat_drop_prob, rng
    )
    return spec, labels, masked.values
