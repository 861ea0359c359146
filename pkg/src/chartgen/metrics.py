"""Evaluation: peak picking, note matching, F1 scores, chart comparison.

Generated charts are compared with human charts at two granularities:

* As note time lists, matched one-to-one within a +-50 ms window and
  scored with micro or per-chart F1.
* As bit vectors on a beat-grid (eighth notes by default), scored with
  inclusion rates and a confusion matrix.  This is the right granularity
  for asking whether one difficulty's notes contain another's.

``match_notes`` walks both sorted lists with two cursors and pairs the
earliest compatible notes greedily; each note matches at most once.  The
tolerance window is closed, with a tiny relative slack so a distance that
equals the tolerance up to float rounding still counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from chartgen.charts import FRAME_MS, ChartDocument, ChartError, TempoSchedule
from chartgen.model import PredictionSeries

MATCH_TOLERANCE = 0.050

_GRID_CLASSES = (
    ("4th", 1.0),
    ("8th", 0.5),
    ("12th", 1.0 / 3.0),
    ("16th", 0.25),
)

HISTOGRAM_CLASSES = tuple(name for name, _ in _GRID_CLASSES) + ("other",)


def pick_peaks(
    pred: PredictionSeries | np.ndarray,
    threshold: float,
    frame_ms: float = FRAME_MS,
) -> np.ndarray:
    """Note times at strict local maxima of the probability curve.

    A frame becomes a note when its value is at least ``threshold`` and
    strictly greater than both neighbors; values beyond the ends count as
    minus infinity.  A plateau of equal values that stands above both
    sides yields one note at its earliest frame.  Times are
    ``frame * frame_ms / 1000``.

    Args:
        pred: Probability series (its own ``frame_ms`` wins) or raw array.
        threshold: Decision threshold, in (0, 1).
        frame_ms: Frame spacing when ``pred`` is a raw array.

    Returns:
        Sorted note times in seconds.
    """
    if not 0.0 < threshold < 1.0:
        raise ChartError(f"threshold must lie in (0, 1), got {threshold}")
    if isinstance(pred, PredictionSeries):
        values = pred.values
        frame_ms = pred.frame_ms
    else:
        values = np.asarray(pred, dtype=np.float64)
    n = len(values)
    times = []
    t = 0
    while t < n:
        if values[t] < threshold:
            t += 1
            continue
        end = t
        while end + 1 < n and values[end + 1] == values[t]:
            end += 1
        rises = t == 0 or values[t - 1] < values[t]
        falls = end == n - 1 or values[end + 1] < values[t]
        if rises and falls:
            times.append(t * frame_ms / 1000.0)
        t = end + 1
    return np.asarray(times, dtype=np.float64)


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching predicted against reference notes."""

    true_positives: int
    false_positives: int
    false_negatives: int
    pairs: tuple[tuple[int, int], ...] = ()

    @property
    def f1(self) -> float:
        denom = 2 * self.true_positives + self.false_positives + self.false_negatives
        if denom == 0:
            return 1.0
        return 2.0 * self.true_positives / denom


def _within(delta: float, tolerance: float) -> bool:
    delta = abs(delta)
    return delta <= tolerance or math.isclose(
        delta, tolerance, rel_tol=1e-9, abs_tol=1e-12
    )


def match_notes(
    predicted: Sequence[float] | np.ndarray,
    reference: Sequence[float] | np.ndarray,
    tolerance: float = MATCH_TOLERANCE,
) -> MatchResult:
    """Greedy one-to-one matching of two sorted note time lists.

    Both lists are walked front to back; the earliest still-unmatched
    pair within ``tolerance`` seconds (closed window) is taken and both
    cursors advance.  Leftover predictions are false positives, leftover
    references false negatives.

    Args:
        predicted: Predicted note times, seconds, non-decreasing.
        reference: Reference note times, seconds, non-decreasing.
        tolerance: Match window in seconds, must be positive.
    """
    if tolerance <= 0:
        raise ChartError(f"tolerance must be positive, got {tolerance}")
    pred = np.asarray(predicted, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    for arr, name in ((pred, "predicted"), (ref, "reference")):
        if arr.size > 1 and np.any(np.diff(arr) < 0):
            raise ChartError(f"{name} note times must be sorted")
    i = j = 0
    pairs = []
    while i < len(pred) and j < len(ref):
        delta = pred[i] - ref[j]
        if _within(delta, tolerance):
            pairs.append((i, j))
            i += 1
            j += 1
        elif delta < 0:
            i += 1
        else:
            j += 1
    tp = len(pairs)
    return MatchResult(
        true_positives=tp,
        false_positives=len(pred) - tp,
        false_negatives=len(ref) - tp,
        pairs=tuple(pairs),
    )


def f1_micro(results: Iterable[MatchResult]) -> float:
    """F1 over the pooled counts of every chart.

    Pools true/false positives and false negatives across charts before
    computing F1, so long charts weigh more.  An all-zero pool scores 1.
    """
    results = list(results)
    if not results:
        raise ChartError("f1_micro needs at least one match result")
    tp = sum(r.true_positives for r in results)
    fp = sum(r.false_positives for r in results)
    fn = sum(r.false_negatives for r in results)
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2.0 * tp / denom


def f1_per_chart(results: Iterable[MatchResult]) -> float:
    """Mean of per-chart F1 scores.

    Charts with neither reference notes nor predictions are skipped; it
    is an error when nothing scorable remains.
    """
    scorable = [
        r
        for r in results
        if r.true_positives + r.false_positives + r.false_negatives > 0
    ]
    if not scorable:
        raise ChartError("f1_per_chart needs at least one scorable chart")
    return float(np.mean([r.f1 for r in scorable]))


@dataclass(frozen=True)
class BitChart:
    """A chart quantized onto a uniform beat grid; one bit per slot."""

    bits: np.ndarray
    slots_per_beat: int = 2

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 1:
            raise ChartError("bit chart must be one-dimensional")
        if b.size and not np.isin(b, (0, 1)).all():
            raise ChartError("bit chart values must be 0 or 1")
        if self.slots_per_beat < 1:
            raise ChartError("slots_per_beat must be >= 1")
        object.__setattr__(self, "bits", b.astype(np.uint8))

    def __len__(self) -> int:
        return len(self.bits)

    @property
    def note_count(self) -> int:
        return int(self.bits.sum())


def bitchart_from_times(
    times: Sequence[float] | np.ndarray,
    tempo: TempoSchedule,
    duration: float,
    slots_per_beat: int = 2,
    beat_zero: float = 0.0,
) -> BitChart:
    """Quantize note times onto the beat grid.

    The grid has ``slots_per_beat`` slots per quarter-note beat (2 means
    eighth notes) and spans from beat 0 to the beat of ``duration``.
    Each note snaps to the nearest slot; ``beat_zero`` is the audio time
    of beat 0.
    """
    end_beat = tempo.time_to_beat(duration - beat_zero)
    num_slots = max(0, math.floor(end_beat * slots_per_beat)) + 1
    bits = np.zeros(num_slots, dtype=np.uint8)
    for t in times:
        beat = tempo.time_to_beat(t - beat_zero)
        slot = math.floor(beat * slots_per_beat + 0.5)
        if 0 <= slot < num_slots:
            bits[slot] = 1
    return BitChart(bits=bits, slots_per_beat=slots_per_beat)


def chart_to_bitchart(chart: ChartDocument, slots_per_beat: int = 2) -> BitChart:
    """Beat-grid bit vector of a chart document."""
    return bitchart_from_times(
        chart.notes,
        chart.tempo,
        chart.audio_duration,
        slots_per_beat=slots_per_beat,
        beat_zero=chart.beat_zero,
    )


def inclusion_rate(subset: BitChart, superset: BitChart) -> float:
    """Fraction of ``subset`` notes also present in ``superset``.

    Computes ``|subset AND superset| / |subset|`` over equal-length bit
    charts.  Raises when ``subset`` holds no notes (the rate is
    undefined) or the grids differ in length.
    """
    if len(subset) != len(superset):
        raise ChartError(
            f"bit charts differ in length ({len(subset)} vs {len(superset)})"
        )
    denom = subset.note_count
    if denom == 0:
        raise ChartError("inclusion rate is undefined for an empty subset chart")
    overlap = int((subset.bits & superset.bits).sum())
    return overlap / denom


@dataclass(frozen=True)
class ConfusionResult:
    """Slot-level confusion between a generated and a manual bit chart.

    ``recall_empty`` is the rate at which manually empty slots stay empty
    (true negatives over manual negatives); together with ``precision``
    it mirrors how chart comparison tables are usually reported.
    """

    true_positives: int
    false_positives: int
    false_negatives: int
    true_negatives: int

    @property
    def precision(self) -> float:
        denom = self.true_positives + self.false_positives
        return self.true_positives / denom if denom else 1.0

    @property
    def recall_empty(self) -> float:
        denom = self.true_negatives + self.false_negatives
        return self.true_negatives / denom if denom else 1.0

    @property
    def accuracy(self) -> float:
        total = (
            self.true_positives
            + self.false_positives
            + self.false_negatives
            + self.true_negatives
        )
        return (self.true_positives + self.true_negatives) / total if total else 1.0


def confusion_matrix(generated: BitChart, manual: BitChart) -> ConfusionResult:
    """Slot-by-slot confusion counts of two equal-length bit charts."""
    if len(generated) != len(manual):
        raise ChartError(
            f"bit charts differ in length ({len(generated)} vs {len(manual)})"
        )
    g = generated.bits.astype(bool)
    m = manual.bits.astype(bool)
    return ConfusionResult(
        true_positives=int((g & m).sum()),
        false_positives=int((g & ~m).sum()),
        false_negatives=int((~g & m).sum()),
        true_negatives=int((~g & ~m).sum()),
    )


def note_timing_histogram(
    chart: ChartDocument, snap_beats: float = 1.0 / 16.0
) -> dict[str, float]:
    """Fraction of notes on each rhythmic grid.

    Each note's beat position is tested against the quarter, eighth,
    twelfth and sixteenth grids in that order (coarsest first) and
    assigned to the first grid within ``snap_beats`` (closed window);
    notes matching none fall into ``"other"``.  Fractions sum to 1 for a
    chart with notes; an empty chart returns all zeros.
    """
    if snap_beats <= 0:
        raise ChartError(f"snap_beats must be positive, got {snap_beats}")
    counts = {name: 0 for name in HISTOGRAM_CLASSES}
    for t in chart.notes:
        beat = chart.tempo.time_to_beat(t - chart.beat_zero)
        for name, grid in _GRID_CLASSES:
            dist = abs(beat - round(beat / grid) * grid)
            if dist <= snap_beats:
                counts[name] += 1
                break
        else:
            counts["other"] += 1
    total = len(chart.notes)
    if total == 0:
        return {name: 0.0 for name in HISTOGRAM_CLASSES}
    return {name: counts[name] / total for name in HISTOGRAM_CLASSES}
