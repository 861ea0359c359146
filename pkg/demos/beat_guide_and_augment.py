#!/usr/bin/env python3
"""The beat guide channel and the training-time spectrogram augmentations."""

import numpy as np

from chartgen.augment import (
    AugmentationConfig,
    augment,
    frequency_flip,
    frequency_shift,
    time_stretch,
)
from chartgen.beats import apply_beat_mask, compute_beat_guide
from chartgen.charts import TempoSchedule

# A 150 BPM song in 4/4 that jumps to 100 BPM at beat 8, with a short
# stop at beat 4.  The guide marks every beat (1) and downbeats (2).
tempo = TempoSchedule(
    segments=((0.0, 150.0), (8.0, 100.0)),
    stops=((4.0, 0.4),),
    time_signature=(4, 4),
)
guide = compute_beat_guide(tempo, num_frames=220)
print("guide over 220 frames (. 0, + beat, D downbeat):")
print("".join(".+D"[v] for v in guide.values))

# Random masking hides a fraction of guide frames during training so the
# model cannot lean on the guide alone.
masked = apply_beat_mask(guide, 0.3, np.random.default_rng(4))
kept = int((masked.values != 0).sum())
print(f"after 30% masking: {kept}/{int((guide.values != 0).sum())} marks kept")

rng = np.random.default_rng(0)
spec = rng.standard_normal((12, 8))

# Band flip is an involution and only reorders values within each frame.
assert np.array_equal(frequency_flip(frequency_flip(spec)), spec)

# Band shift rolls each frame independently; the multiset per frame is
# unchanged.
shifted = frequency_shift(spec, 0.3, rng)
assert np.array_equal(np.sort(shifted, axis=1), np.sort(spec, axis=1))
print("flip involution and shift multiset checks pass")

# Slowing down by a factor c moves both the spectrogram and the labels;
# a label on frame 5 (1-based 6) moves to floor(6 / 0.8 + 0.5) - 1 = 7.
labels = np.zeros(12)
labels[5] = 1.0
_, moved, _ = time_stretch(spec, labels, np.zeros(12, np.uint8), (0.8, 0.8), rng)
print("label frame 5 @ c=0.8 ->", int(np.flatnonzero(moved)[0]))

# The full chain applies each transform with its trigger probability and
# masks the guide unconditionally at the end.
config = AugmentationConfig()
out_spec, out_labels, out_guide = augment(
    spec, labels, guide.values[:12].astype(np.uint8).copy(), config, rng
)
print("chained output shapes:", out_spec.shape, out_labels.shape, out_guide.shape)
