import math

import numpy as np
import pytest

from chartgen.charts import (
    ChartDocument,
    ChartError,
    Difficulty,
    OnsetLabels,
    ParseError,
    TempoSchedule,
    apply_fuzzy_labels,
    parse_canonical,
    parse_stepmania,
    rasterize_labels,
    serialize_canonical,
)
from conftest import fixture_text


def test_beat_to_time_constant_bpm():
    tempo = TempoSchedule(segments=((0.0, 120.0),))
    assert tempo.beat_to_time(0.0) == 0.0
    assert tempo.beat_to_time(1.0) == 0.5
    assert tempo.beat_to_time(7.5) == 3.75


def test_beat_to_time_with_bpm_changes():
    tempo = TempoSchedule(segments=((0.0, 120.0), (8.0, 180.0), (16.0, 90.0)))
    assert tempo.beat_to_time(8.0) == pytest.approx(4.0, abs=1e-12)
    assert tempo.beat_to_time(16.0) == pytest.approx(4 + 8 / 3, abs=1e-12)
    assert tempo.beat_to_time(18.0) == pytest.approx(8.0, abs=1e-12)


def test_stop_applies_strictly_after_its_beat():
    """A note on the stop beat sounds when the stop begins, not after."""
    tempo = TempoSchedule(segments=((0.0, 120.0),), stops=((4.0, 1.5),))
    assert tempo.beat_to_time(4.0) == 2.0
    assert tempo.beat_to_time(5.0) == 4.0


def test_time_to_beat_round_trip():
    tempo = TempoSchedule(
        segments=((0.0, 150.0), (6.0, 90.0), (12.0, 200.0)),
        stops=((4.0, 0.5), (9.0, 0.25)),
    )
    rng = np.random.default_rng(11)
    for beat in rng.uniform(0.0, 30.0, size=300):
        t = tempo.beat_to_time(float(beat))
        assert tempo.time_to_beat(t) == pytest.approx(float(beat), abs=1e-9)


def test_time_to_beat_inside_stop_plateau():
    tempo = TempoSchedule(segments=((0.0, 120.0),), stops=((4.0, 1.0),))
    # the stop spans [2.0, 3.0) in time and every instant maps to beat 4
    for t in (2.0, 2.3, 2.999):
        assert tempo.time_to_beat(t) == pytest.approx(4.0, abs=1e-12)


def test_time_to_beat_before_zero_extrapolates():
    tempo = TempoSchedule(segments=((0.0, 120.0),))
    assert tempo.time_to_beat(-0.5) == pytest.approx(-1.0, abs=1e-12)


def test_bpm_at():
    tempo = TempoSchedule(segments=((0.0, 120.0), (8.0, 180.0)))
    assert tempo.bpm_at(0.0) == 120.0
    assert tempo.bpm_at(7.999) == 120.0
    assert tempo.bpm_at(8.0) == 180.0


def test_tempo_schedule_validation():
    with pytest.raises(ChartError):
        TempoSchedule(segments=((1.0, 120.0),))
    with pytest.raises(ChartError):
        TempoSchedule(segments=((0.0, 120.0), (4.0, -10.0)))
    with pytest.raises(ChartError):
        TempoSchedule(segments=((0.0, 120.0), (4.0, 150.0), (4.0, 160.0)))


def test_parse_constant_bpm_fixture():
    charts = parse_stepmania(fixture_text("constant_bpm.sm"))
    assert [c.difficulty for c in charts] == [Difficulty.ADVANCED, Difficulty.EXPERT]
    medium, hard = charts
    assert medium.notes == (0.5, 1.0, 1.5, 2.0, 3.0)
    assert medium.audio_duration == 4.0
    eighths = tuple(2.0 + 0.25 * i for i in range(8))
    assert hard.notes == (0.0, 0.5, 1.0, 1.5) + eighths


def test_parse_collapses_chords_to_one_onset():
    charts = parse_stepmania(fixture_text("constant_bpm.sm"))
    # the "1111" row at beat 3 contributes a single note
    assert charts[0].notes.count(1.5) == 1


def test_parse_stops_fixture():
    (chart,) = parse_stepmania(fixture_text("stops.sm"))
    assert np.allclose(chart.notes, [0.0, 1.6, 3.7, 4.35], atol=1e-12)


def test_parse_kitchen_sink_fixture():
    charts = parse_stepmania(fixture_text("kitchen_sink.sm"))
    # the Edit block is not part of the ladder and is dropped
    assert [c.difficulty for c in charts] == [Difficulty.BEGINNER, Difficulty.CHALLENGE]
    beginner, challenge = charts
    assert beginner.beat_zero == pytest.approx(0.12)
    assert np.allclose(beginner.notes, [0.12, 0.72], atol=1e-12)
    assert np.allclose(
        challenge.notes, [0.12, 0.42, 0.72, 1.32, 1.62, 2.22, 2.82], atol=1e-12
    )
    assert challenge.audio_duration == pytest.approx(3.42, abs=1e-12)


def test_parse_empty_difficulty_keeps_chart_with_no_notes():
    charts = parse_stepmania(fixture_text("empty_difficulty.sm"))
    assert charts[0].notes == ()
    assert np.allclose(charts[1].notes, [0.0, 1.2], atol=1e-12)


def test_parse_requires_bpms():
    with pytest.raises(ParseError):
        parse_stepmania("#TITLE:x;\n#OFFSET:0;\n")


def test_parse_rejects_bpm_not_at_beat_zero():
    with pytest.raises(ChartError):
        parse_stepmania("#TITLE:x;\n#BPMS:2.0=120.0;\n")


def test_parse_song_id_override():
    charts = parse_stepmania(fixture_text("stops.sm"), song_id="custom")
    assert charts[0].song_id == "custom"


def test_canonical_round_trip_exact():
    for name in ("constant_bpm.sm", "bpm_changes.sm", "stops.sm", "kitchen_sink.sm"):
        for chart in parse_stepmania(fixture_text(name)):
            again = parse_canonical(serialize_canonical(chart))
            assert again.notes == chart.notes
            assert again.tempo == chart.tempo
            assert again.beat_zero == chart.beat_zero
            assert again.audio_duration == chart.audio_duration
            assert again.difficulty == chart.difficulty
            assert again.song_id == chart.song_id


def test_parse_canonical_rejects_garbage():
    with pytest.raises(ParseError):
        parse_canonical("not json at all")
    with pytest.raises(ParseError):
        parse_canonical("{}")


def test_chart_document_validates_note_order():
    tempo = TempoSchedule(segments=((0.0, 120.0),))
    with pytest.raises(ChartError):
        ChartDocument(
            song_id="x",
            difficulty=Difficulty.EXPERT,
            tempo=tempo,
            notes=(1.0, 0.5),
            audio_duration=4.0,
        )
    with pytest.raises(ChartError):
        ChartDocument(
            song_id="x",
            difficulty=Difficulty.EXPERT,
            tempo=tempo,
            notes=(1.0, 5.0),
            audio_duration=4.0,
        )


def test_difficulty_flags():
    assert [d.flag for d in Difficulty] == [10, 20, 30, 40, 50]
    assert Difficulty.from_name("expert") is Difficulty.EXPERT
    with pytest.raises(ChartError):
        Difficulty.from_name("extreme")


def test_rasterize_labels_rounding():
    tempo = TempoSchedule(segments=((0.0, 120.0),))
    chart = ChartDocument(
        song_id="x",
        difficulty=Difficulty.EXPERT,
        tempo=tempo,
        notes=(0.0, 0.016, 0.048, 0.5),
        audio_duration=1.0,
    )
    labels = rasterize_labels(chart, num_frames=32)
    hot = np.flatnonzero(labels.values)
    # 16 ms sits exactly on the frame boundary and rounds up to frame 1
    assert hot.tolist() == [0, 1, 2, 16]
    assert labels.values.max() == 1.0


def test_rasterize_labels_clamps_last_frame():
    tempo = TempoSchedule(segments=((0.0, 120.0),))
    chart = ChartDocument(
        song_id="x",
        difficulty=Difficulty.EXPERT,
        tempo=tempo,
        notes=(0.999,),
        audio_duration=1.0,
    )
    labels = rasterize_labels(chart, num_frames=32)
    assert np.flatnonzero(labels.values).tolist() == [31]
    with pytest.raises(ChartError):
        rasterize_labels(chart, num_frames=10)


def test_fuzzy_labels_triangle():
    values = np.zeros(21)
    values[10] = 1.0
    fuzzy = apply_fuzzy_labels(OnsetLabels(values=values), width=5, scale=0.2)
    out = fuzzy.values
    assert out[10] == 1.0
    for k in range(1, 5):
        expect = 0.2 * (1 - k / 5)
        assert out[10 - k] == pytest.approx(expect, abs=1e-12)
        assert out[10 + k] == pytest.approx(expect, abs=1e-12)
    assert out[4] == 0.0 and out[16] == 0.0


def test_fuzzy_labels_overlap_takes_max():
    values = np.zeros(12)
    values[5] = 1.0
    values[7] = 1.0
    out = apply_fuzzy_labels(OnsetLabels(values=values), width=5, scale=0.5).values
    assert out[5] == 1.0 and out[7] == 1.0
    assert out[6] == pytest.approx(0.5 * (1 - 1 / 5), abs=1e-12)


def test_fuzzy_labels_idempotent():
    rng = np.random.default_rng(3)
    values = (rng.random(200) < 0.05).astype(float)
    once = apply_fuzzy_labels(OnsetLabels(values=values))
    twice = apply_fuzzy_labels(once)
    assert np.array_equal(once.values, twice.values)


def test_onset_labels_validation():
    with pytest.raises(ChartError):
        OnsetLabels(values=np.array([0.0, 1.5]))
    with pytest.raises(ChartError):
        OnsetLabels(values=np.zeros((2, 2)))
