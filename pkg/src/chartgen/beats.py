"""Beat guide channel: where beats and downbeats fall on the frame grid.

The guide is a per-frame vector with 0 for "no beat", 1 for a beat, and 2
for a downbeat.  Beats are enumerated from the tempo schedule at the
spacing implied by the time signature denominator (a x/4 signature steps
by quarter notes, x/8 by eighths), and every ``numerator``-th beat counted
from a tempo segment's start is a downbeat.  Tempo changes restart the bar
phase, which keeps the guide well-defined when a segment's length is not a
whole number of bars.

During training a beat mask randomly zeroes guide frames so the model
cannot lean on the guide alone; the drop probability default follows the
tuned value 0.123.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from chartgen.charts import FRAME_MS, ChartError, TempoSchedule

DEFAULT_BEAT_DROP = 0.123


@dataclass(frozen=True)
class BeatGuide:
    """Per-frame beat marks; dtype uint8, values in {0, 1, 2}."""

    values: np.ndarray
    frame_ms: float = FRAME_MS

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 1:
            raise ChartError("beat guide must be one-dimensional")
        if v.size and not np.isin(v, (0, 1, 2)).all():
            raise ChartError("beat guide values must be 0, 1 or 2")
        object.__setattr__(self, "values", v.astype(np.uint8))

    def __len__(self) -> int:
        return len(self.values)


def enumerate_beats(
    tempo: TempoSchedule, max_time: float
) -> Iterator[tuple[float, bool]]:
    """Yield ``(time_seconds, is_downbeat)`` for beats up to ``max_time``.

    Beat spacing is ``4 / denominator`` quarter-note units.  Within each
    tempo segment, beat k (counted from the segment start) is a downbeat
    when ``k % numerator == 0``; a beat landing exactly on the next
    segment's start belongs to that segment instead.
    """
    num, den = tempo.time_signature
    step = 4.0 / den
    starts = [s for s, _ in tempo.segments]
    for i, seg_start in enumerate(starts):
        seg_end = starts[i + 1] if i + 1 < len(starts) else math.inf
        if tempo.beat_to_time(seg_start) > max_time:
            break
        k = 0
        while True:
            beat = seg_start + k * step
            if beat >= seg_end:
                break
            t = tempo.beat_to_time(beat)
            if t > max_time:
                break
            yield t, (k % num == 0)
            k += 1


def compute_beat_guide(
    tempo: TempoSchedule,
    num_frames: int,
    frame_ms: float = FRAME_MS,
    beat_zero: float = 0.0,
) -> BeatGuide:
    """Rasterize beats onto the frame grid.

    Frames use the same ``floor(t_ms / frame_ms + 0.5)`` rounding as onset
    labels, with ``beat_zero`` (audio time of beat 0) added first.  When a
    beat and a downbeat collide on one frame the downbeat wins; beats
    before audio start or rounding past the last frame are dropped.
    """
    if num_frames < 0:
        raise ChartError(f"num_frames must be non-negative, got {num_frames}")
    values = np.zeros(num_frames, dtype=np.uint8)
    max_time = num_frames * frame_ms / 1000.0 - beat_zero
    for t, is_down in enumerate_beats(tempo, max_time):
        t_audio = t + beat_zero
        if t_audio < 0:
            continue
        f = math.floor(t_audio * 1000.0 / frame_ms + 0.5)
        if f >= num_frames:
            continue
        values[f] = max(values[f], 2 if is_down else 1)
    return BeatGuide(values=values, frame_ms=frame_ms)


def apply_beat_mask(
    guide: BeatGuide, drop_probability: float, rng: np.random.Generator
) -> BeatGuide:
    """Zero each frame independently with ``drop_probability``.

    Masking is per frame, not per beat: a dropped frame is set to 0 and
    kept frames pass through untouched, so roughly ``1 - p`` of nonzero
    mass survives in expectation.
    """
    if not 0.0 <= drop_probability <= 1.0:
        raise ChartError(f"drop probability must lie in [0, 1], got {drop_probability}")
    keep = rng.random(len(guide.values)) >= drop_probability
    return BeatGuide(values=guide.values * keep, frame_ms=guide.frame_ms)
