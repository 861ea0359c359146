"""Mel-spectrogram features on the 32 ms model grid.

The front end resamples audio to 32 kHz, cuts it into non-overlapping
1024-sample Hann-windowed frames (one frame per 32 ms, stride equal to the
window), and projects magnitude spectra onto 229 triangular Mel filters
spanning 0 to 16 kHz.  Output values are ``ln(mel + 1e-10)``.

The FFT length is 4096 (zero-padded frames): with 229 filters packed into
the 0..3575 Mel range, a 1024-point spectrum leaves several filters with
no bin near their center, and a 2048-point spectrum still lets spectral
leakage tip pure tones into a neighboring filter.  4096 bins give every
filter at least one bin and keep pure tones in the filter whose center is
nearest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window, resample_poly

SAMPLE_RATE = 32_000
FRAME_LEN = 1024
FRAME_MS = 32.0
N_FFT = 4096
MEL_BANDS = 229
F_MIN = 0.0
F_MAX = 16_000.0
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-Mel features, shape ``(frames, bands)`` with 229 bands."""

    values: np.ndarray
    frame_ms: float = FRAME_MS
    f_min: float = F_MIN
    f_max: float = F_MAX

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"expected a 2-D (frames, bands) array, got {v.ndim}-D")
        object.__setattr__(self, "values", v)

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_bands(self) -> int:
        return self.values.shape[1]


def hz_to_mel(f: float | np.ndarray) -> float | np.ndarray:
    """HTK-style Mel scale: ``2595 * log10(1 + f / 700)``."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m: float | np.ndarray) -> float | np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    num_bands: int = MEL_BANDS,
    n_fft: int = N_FFT,
    sample_rate: int = SAMPLE_RATE,
    f_min: float = F_MIN,
    f_max: float = F_MAX,
) -> np.ndarray:
    """Triangular Mel filter matrix of shape ``(num_bands, n_fft // 2 + 1)``.

    Filter edges are ``num_bands + 2`` points equally spaced in Mel between
    ``f_min`` and ``f_max``; each filter rises from edge i to i+1 and falls
    to i+2, with peak normalized to 1.
    """
    if f_max > sample_rate / 2:
        raise ValueError(f"f_max {f_max} exceeds Nyquist {sample_rate / 2}")
    edges_mel = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), num_bands + 2)
    edges_hz = mel_to_hz(edges_mel)
    bin_hz = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)

    fb = np.zeros((num_bands, len(bin_hz)), dtype=np.float64)
    for i in range(num_bands):
        lo, center, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        fb[i] = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb


def resample_to_32k(samples: np.ndarray, sample_rate: int) -> np.ndarray:
    """Resample mono audio to 32 kHz with a polyphase filter."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ValueError("expected mono audio as a 1-D array")
    if sample_rate == SAMPLE_RATE:
        return samples
    g = math.gcd(int(sample_rate), SAMPLE_RATE)
    return resample_poly(samples, SAMPLE_RATE // g, sample_rate // g)


def compute_mel_spectrogram(
    samples: np.ndarray,
    sample_rate: int = SAMPLE_RATE,
    num_bands: int = MEL_BANDS,
) -> MelSpectrogram:
    """Log-Mel spectrogram of a mono waveform.

    The waveform is resampled to 32 kHz and split into
    ``ceil(len / 1024)`` non-overlapping frames (the tail is zero-padded),
    so ``frame_count == ceil(seconds * 1000 / 32)``; 20 s of audio yields
    exactly 625 frames.

    Args:
        samples: Mono waveform.
        sample_rate: Sampling rate of ``samples`` in Hz.
        num_bands: Mel band count; the model expects the default 229.

    Returns:
        A :class:`MelSpectrogram` with values ``ln(mel_magnitude + 1e-10)``.

    Raises:
        ValueError: For empty or non-mono input.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ValueError("expected mono audio as a 1-D array")
    if samples.size == 0:
        raise ValueError("cannot compute features of empty audio")

    x = resample_to_32k(samples, sample_rate)
    num_frames = math.ceil(len(x) / FRAME_LEN)
    padded = np.zeros(num_frames * FRAME_LEN, dtype=np.float64)
    padded[: len(x)] = x

    frames = padded.reshape(num_frames, FRAME_LEN)
    window = get_window("hann", FRAME_LEN, fftbins=True)
    spectrum = np.abs(np.fft.rfft(frames * window, n=N_FFT, axis=1))

    fb = mel_filterbank(num_bands=num_bands)
    mel = spectrum @ fb.T
    return MelSpectrogram(values=np.log(mel + LOG_FLOOR))


def frame_count(duration_seconds: float, frame_ms: float = FRAME_MS) -> int:
    """Number of frames covering ``duration_seconds`` of audio."""
    return math.ceil(duration_seconds * 1000.0 / frame_ms - 1e-9)
