#!/usr/bin/env python3
"""Log-Mel features from audio, on the 32 ms frame grid the model uses."""

import numpy as np

from chartgen.audio import (
    MEL_BANDS,
    SAMPLE_RATE,
    compute_mel_spectrogram,
    hz_to_mel,
    mel_filterbank,
)
from chartgen.synth import click_waveform

# The Mel scale in use maps 16 kHz to roughly 3575 mel.
for hz in (0, 1000, 8000, 16000):
    print(f"{hz:6d} Hz -> {hz_to_mel(hz):9.4f} mel")

# One triangular filter per band, peak-normalized in continuous frequency,
# so the maxima sampled on the FFT grid sit in (0, 1].
filters = mel_filterbank()
print("filterbank:", filters.shape, "(bands x fft bins)")
peaks = filters.max(axis=1)
print("sampled peak range:", round(peaks.min(), 3), "to", round(peaks.max(), 3))

# Non-overlapping 1024-sample frames at 32 kHz: 31.25 frames per second,
# so 20 s of audio becomes exactly 625 frames.
samples = click_waveform(20.0, click_times=[1.0, 2.5, 10.0])
mel = compute_mel_spectrogram(samples, SAMPLE_RATE)
print("mel shape:", mel.values.shape, f"== (625, {MEL_BANDS})")
print("frame duration:", mel.frame_ms, "ms")

# Clicks stand out against silence; compare per-frame total energy around
# the click at t=1.0 s (frame 31) with a quiet region.
energy = mel.values.sum(axis=1)
lo, hi = energy.min(), energy.max()
print()
print("energy sparkline, frames 24..40 (click lands on frame 31):")
for f in range(24, 41):
    bar = "#" * int(1 + 30 * (energy[f] - lo) / (hi - lo))
    print(f"  frame {f:3d} {bar}")
