import numpy as np
import pytest

from chartgen.charts import ChartDocument, ChartError, Difficulty, TempoSchedule
from chartgen.metrics import (
    BitChart,
    ConfusionResult,
    MatchResult,
    bitchart_from_times,
    chart_to_bitchart,
    confusion_matrix,
    f1_micro,
    f1_per_chart,
    inclusion_rate,
    match_notes,
    note_timing_histogram,
    pick_peaks,
)


def _chart(notes, bpm=120.0, duration=8.0):
    return ChartDocument(
        song_id="t",
        difficulty=Difficulty.EXPERT,
        tempo=TempoSchedule(segments=((0.0, bpm),)),
        notes=tuple(notes),
        audio_duration=duration,
    )


def test_pick_peaks_basic():
    values = np.array([0.1, 0.8, 0.2, 0.1, 0.9, 0.3])
    times = pick_peaks(values, 0.5)
    assert times == pytest.approx([0.032, 0.128])


def test_pick_peaks_threshold_is_inclusive_boundary():
    values = np.array([0.0, 0.5, 0.0])
    assert pick_peaks(values, 0.5) == pytest.approx([0.032])
    assert len(pick_peaks(values, 0.50001)) == 0


def test_pick_peaks_plateau_takes_first_frame():
    values = np.array([0.0, 0.9, 0.9, 0.9, 0.0])
    assert pick_peaks(values, 0.5) == pytest.approx([0.032])


def test_pick_peaks_edges_can_peak():
    values = np.array([0.9, 0.1, 0.1, 0.8])
    assert pick_peaks(values, 0.5) == pytest.approx([0.0, 0.096])


def test_pick_peaks_rejects_bad_threshold():
    with pytest.raises(ChartError):
        pick_peaks(np.array([0.5]), 0.0)
    with pytest.raises(ChartError):
        pick_peaks(np.array([0.5]), 1.0)


def test_match_notes_worked_example():
    """Truth (1.0, 2.0) against picks (1.03, 2.06, 3.0) scores F1 = 0.4."""
    result = match_notes([1.03, 2.06, 3.0], [1.0, 2.0])
    assert result.true_positives == 1
    assert result.false_positives == 2
    assert result.false_negatives == 1
    assert result.f1 == pytest.approx(0.4)


def test_match_notes_tolerance_is_closed():
    result = match_notes([1.05], [1.0])
    assert result.true_positives == 1
    result = match_notes([1.0501], [1.0])
    assert result.true_positives == 0


def test_match_notes_one_to_one():
    # two picks cannot both claim the single reference note
    result = match_notes([1.0, 1.01], [1.0])
    assert result.true_positives == 1
    assert result.false_positives == 1


def test_match_notes_requires_sorted_input():
    with pytest.raises(ChartError):
        match_notes([2.0, 1.0], [1.0])


def test_match_notes_empty_sides():
    result = match_notes([], [])
    assert result.f1 == 1.0
    assert match_notes([], [1.0]).false_negatives == 1
    assert match_notes([1.0], []).false_positives == 1


def test_f1_micro_pools_counts():
    a = MatchResult(true_positives=3, false_positives=1, false_negatives=0, pairs=())
    b = MatchResult(true_positives=0, false_positives=0, false_negatives=4, pairs=())
    # pooled: tp=3, fp=1, fn=4 -> f1 = 2*3 / (2*3 + 1 + 4)
    assert f1_micro([a, b]) == pytest.approx(6 / 11)
    with pytest.raises(ChartError):
        f1_micro([])


def test_f1_per_chart_skips_unscoreable():
    scored = MatchResult(true_positives=1, false_positives=0, false_negatives=1, pairs=())
    empty = MatchResult(true_positives=0, false_positives=0, false_negatives=0, pairs=())
    assert f1_per_chart([scored, empty]) == pytest.approx(2 / 3)
    with pytest.raises(ChartError):
        f1_per_chart([empty])


def test_bitchart_from_times_snaps_to_slots():
    tempo = TempoSchedule(segments=((0.0, 120.0),))
    chart = bitchart_from_times([0.0, 0.25, 1.0], tempo, duration=2.0)
    # eighth-note grid at 120 BPM has slots every 0.25 s
    assert chart.bits.tolist()[:5] == [1, 1, 0, 0, 1]
    assert chart.note_count == 3


def test_chart_to_bitchart_uses_beat_zero():
    tempo = TempoSchedule(segments=((0.0, 120.0),))
    chart = ChartDocument(
        song_id="t",
        difficulty=Difficulty.EXPERT,
        tempo=tempo,
        notes=(0.1, 0.6),
        audio_duration=2.0,
        beat_zero=0.1,
    )
    bits = chart_to_bitchart(chart)
    assert bits.bits.tolist()[:3] == [1, 0, 1]


def test_inclusion_rate_counts():
    a = BitChart(bits=np.array([1, 0, 1, 1, 0], dtype=np.uint8))
    b = BitChart(bits=np.array([1, 1, 0, 1, 0], dtype=np.uint8))
    assert inclusion_rate(a, b) == pytest.approx(2 / 3)
    assert inclusion_rate(a, a) == 1.0
    with pytest.raises(ChartError):
        inclusion_rate(BitChart(bits=np.zeros(5, dtype=np.uint8)), b)
    with pytest.raises(ChartError):
        inclusion_rate(a, BitChart(bits=np.zeros(4, dtype=np.uint8)))


def test_confusion_matrix_counts_and_rates():
    a = BitChart(bits=np.array([1, 1, 0, 0], dtype=np.uint8))
    b = BitChart(bits=np.array([1, 0, 1, 0], dtype=np.uint8))
    conf = confusion_matrix(a, b)
    assert (conf.true_positives, conf.false_positives) == (1, 1)
    assert (conf.false_negatives, conf.true_negatives) == (1, 1)
    assert conf.precision == 0.5
    assert conf.recall_empty == 0.5
    assert conf.accuracy == 0.5


def test_confusion_rates_from_reported_counts():
    conf = ConfusionResult(
        true_positives=119, false_positives=47, false_negatives=28, true_negatives=294
    )
    assert conf.precision == pytest.approx(0.72, abs=0.005)
    assert conf.recall_empty == pytest.approx(0.91, abs=0.005)
    assert conf.accuracy == pytest.approx(0.85, abs=0.005)


def test_note_timing_histogram_fixture_mix():
    beats = [0, 2 / 3, 4 / 3, 2, 7 / 3, 3, 4, 4.5, 4.75, 6, 7.25, 8, 8.125]
    chart = _chart([b / 2 for b in beats])
    hist = note_timing_histogram(chart)
    assert hist == pytest.approx(
        {
            "4th": 6 / 13,
            "8th": 1 / 13,
            "12th": 3 / 13,
            "16th": 2 / 13,
            "other": 1 / 13,
        }
    )
    assert sum(hist.values()) == pytest.approx(1.0)


def test_note_timing_histogram_empty_chart():
    hist = note_timing_histogram(_chart([]))
    assert all(v == 0.0 for v in hist.values())


def test_note_timing_histogram_coarsest_class_wins():
    # beat 1 sits on every grid but counts as a quarter note
    chart = _chart([0.5])
    hist = note_timing_histogram(chart)
    assert hist["4th"] == 1.0
