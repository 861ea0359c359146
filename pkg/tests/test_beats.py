import numpy as np
import pytest

from chartgen.beats import (
    DEFAULT_BEAT_DROP,
    BeatGuide,
    apply_beat_mask,
    compute_beat_guide,
    enumerate_beats,
)
from chartgen.charts import ChartError, TempoSchedule


def test_enumerate_beats_four_four():
    tempo = TempoSchedule(segments=((0.0, 120.0),))
    beats = list(enumerate_beats(tempo, max_time=4.0))
    times = [t for t, _ in beats]
    downs = [d for _, d in beats]
    assert times == pytest.approx([0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0])
    assert downs == [True, False, False, False, True, False, False, False, True]


def test_enumerate_beats_six_eight():
    """6/8 steps in half-beat units with a downbeat every six steps."""
    tempo = TempoSchedule(segments=((0.0, 120.0),), time_signature=(6, 8))
    beats = list(enumerate_beats(tempo, max_time=3.0))
    times = [t for t, _ in beats]
    assert times == pytest.approx([0.25 * k for k in range(13)])
    downs = [d for _, d in beats]
    assert downs == [k % 6 == 0 for k in range(13)]


def test_enumerate_beats_resets_bar_at_tempo_change():
    # the 180 BPM segment starts at beat 6, mid-bar, and restarts the count
    tempo = TempoSchedule(segments=((0.0, 120.0), (6.0, 180.0)))
    beats = list(enumerate_beats(tempo, max_time=4.5))
    downbeat_times = [t for t, d in beats if d]
    assert downbeat_times == pytest.approx([0.0, 2.0, 3.0, 3.0 + 4 * (1 / 3)])


def test_compute_beat_guide_values():
    tempo = TempoSchedule(segments=((0.0, 120.0),))
    guide = compute_beat_guide(tempo, num_frames=128)
    assert guide.values.dtype == np.uint8
    assert set(np.unique(guide.values)) <= {0, 1, 2}
    # 120 BPM puts beats every 500 ms: frames 0, 16, 31, 47, 63, ...
    assert guide.values[0] == 2
    assert guide.values[16] == 1
    assert guide.values[63] == 2


def test_compute_beat_guide_beat_zero_shift():
    tempo = TempoSchedule(segments=((0.0, 120.0),))
    plain = compute_beat_guide(tempo, num_frames=64)
    shifted = compute_beat_guide(tempo, num_frames=64, beat_zero=0.512)
    assert shifted.values[16] == 2
    assert plain.values[0] == 2
    # beats before audio start are dropped, not wrapped
    early = compute_beat_guide(tempo, num_frames=64, beat_zero=-0.25)
    assert early.values[0] == 0


def test_compute_beat_guide_downbeat_wins_collision():
    # at 7500 BPM the beats at 0 ms and 8 ms share frame 0
    tempo = TempoSchedule(segments=((0.0, 7500.0),), time_signature=(4, 4))
    guide = compute_beat_guide(tempo, num_frames=4)
    assert guide.values[0] == 2


def test_apply_beat_mask_retention():
    tempo = TempoSchedule(segments=((0.0, 240.0),))
    guide = compute_beat_guide(tempo, num_frames=10000)
    nonzero = int((guide.values != 0).sum())
    rng = np.random.default_rng(5)
    masked = apply_beat_mask(guide, DEFAULT_BEAT_DROP, rng)
    kept = int((masked.values != 0).sum())
    assert kept < nonzero
    assert kept / nonzero == pytest.approx(1.0 - DEFAULT_BEAT_DROP, abs=0.03)
    # zero drop probability is the identity
    same = apply_beat_mask(guide, 0.0, np.random.default_rng(0))
    assert np.array_equal(same.values, guide.values)


def test_apply_beat_mask_validates_probability():
    guide = BeatGuide(values=np.zeros(4, dtype=np.uint8))
    with pytest.raises(ChartError):
        apply_beat_mask(guide, 1.5, np.random.default_rng(0))


def test_beat_guide_validation():
    with pytest.raises(ChartError):
        BeatGuide(values=np.array([0, 3], dtype=np.uint8))
