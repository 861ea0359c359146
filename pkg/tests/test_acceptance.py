"""Acceptance suite: eight numbered criteria, one test (and one pytest -v
pass/fail line) per criterion.

Each criterion pins the tolerance it is scored at.  The slow criteria
(6 and 7) train real models on synthetic click corpora and assert both
the quality bar and their wall-clock budget.
"""

import dataclasses
import math
import statistics
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from chartgen.audio import MEL_BANDS, SAMPLE_RATE, compute_mel_spectrogram, hz_to_mel
from chartgen.augment import (
    frequency_flip,
    frequency_mask,
    frequency_shift,
    high_frequency_mask,
    time_mask,
    time_stretch,
    white_noise,
)
from chartgen.beats import apply_beat_mask, compute_beat_guide
from chartgen.charts import (
    Difficulty,
    TempoSchedule,
    parse_canonical,
    parse_stepmania,
    serialize_canonical,
)
from chartgen.metrics import (
    BitChart,
    ConfusionResult,
    inclusion_rate,
    match_notes,
)
from chartgen.model import (
    BASELINE,
    MULTI_SCALE,
    ModelConfig,
    OnsetNet,
    baseline_spec,
    multi_scale_spec,
    receptive_scale,
)
from chartgen.pipeline import cmd_analyze, cmd_ingest
from chartgen.synth import (
    corpus_examples,
    make_click_corpus,
    toy_model_config,
    write_corpus,
)
from chartgen.training import SplitPlan, TrainConfig, split_from_examples, train
from conftest import FIXTURES


def _report(criterion: int, text: str) -> None:
    print(f"[criterion {criterion}] {text}")


def test_criterion_1_mel_scale_and_frame_grid():
    """mel(16000) within +-1 of 3575; 20.000 s of audio -> exactly 625 frames."""
    mel_top = hz_to_mel(16000.0)
    assert abs(mel_top - 3575.0) <= 1.0
    samples = np.zeros(20 * SAMPLE_RATE)
    mel = compute_mel_spectrogram(samples, SAMPLE_RATE)
    assert mel.values.shape == (625, MEL_BANDS)
    _report(1, f"mel(16000)={mel_top:.4f}, 20s -> {mel.values.shape[0]} frames: PASS")


class _FixedUniform:
    """Stands in for a Generator when a transform needs one fixed draw."""

    def __init__(self, value: float):
        self.value = value

    def uniform(self, low, high, size=None):
        if size is None:
            return self.value
        return np.full(size, self.value)


def test_criterion_2_augmentation_properties():
    """1000 randomized cases per transform; exact invariants, 2-minute budget."""
    started = time.time()
    rng = np.random.default_rng(20240901)
    cases = 1000

    for _ in range(cases):
        t = int(rng.integers(4, 24))
        f = int(rng.integers(4, 24))
        spec = rng.standard_normal((t, f))

        flipped = frequency_flip(spec)
        assert np.array_equal(frequency_flip(flipped), spec)
        assert np.array_equal(np.sort(flipped, axis=1), np.sort(spec, axis=1))

        shifted = frequency_shift(spec, 0.3, rng)
        assert np.array_equal(np.sort(shifted, axis=1), np.sort(spec, axis=1))

    for _ in range(cases):
        t = int(rng.integers(4, 24))
        f = int(rng.integers(4, 24))
        spec = rng.standard_normal((t, f))
        mean = spec.mean()

        n_bands = int(rng.integers(1, f + 1))
        fm = frequency_mask(spec, n_bands, rng)
        changed = [j for j in range(f) if not np.array_equal(fm[:, j], spec[:, j])]
        assert len(changed) <= n_bands
        for j in changed:
            assert np.all(np.abs(fm[:, j] - mean) <= 1e-12)

        n_frames = int(rng.integers(1, t + 1))
        tm = time_mask(spec, n_frames, rng)
        changed_rows = [i for i in range(t) if not np.array_equal(tm[i], spec[i])]
        assert len(changed_rows) <= n_frames
        for i in changed_rows:
            assert np.all(np.abs(tm[i] - mean) <= 1e-12)

        cut = int(rng.integers(1, f + 1))
        hf = high_frequency_mask(spec, cut)
        assert np.array_equal(hf[:, : cut - 1], spec[:, : cut - 1])
        assert np.all(np.abs(hf[:, cut - 1 :] - mean) <= 1e-12)

    noise = white_noise(np.zeros((400, 250)), 0.05, rng)
    sd = noise.std()
    assert abs(sd - 0.05) / 0.05 <= 0.02

    for _ in range(cases):
        t = int(rng.integers(4, 32))
        f = int(rng.integers(2, 8))
        spec = rng.standard_normal((t, f))
        labels = (rng.random(t) < 0.2).astype(float)
        guide = (rng.random(t) < 0.2).astype(np.uint8)
        c = float(rng.uniform(0.5, 1.0))
        out, lab, gd = time_stretch(spec, labels, guide, (c, c), _FixedUniform(c))
        assert out.shape == spec.shape
        src = np.clip(np.ceil(c * np.arange(1, t + 1)).astype(int) - 1, 0, t - 1)
        assert np.array_equal(out, spec[src])
        for moved, original in ((lab, labels), (gd, guide)):
            expect = np.zeros_like(original)
            for u in np.flatnonzero(original):
                v = int(math.floor((u + 1) / c + 0.5)) - 1
                if v < t:
                    expect[v] = max(expect[v], original[u])
            assert np.array_equal(moved, expect)

    elapsed = time.time() - started
    assert elapsed < 120.0
    _report(2, f"{cases} cases per transform, noise sd={sd:.5f}, {elapsed:.1f}s: PASS")


def _oracle_beat_time(segments, stops, beat):
    t = 0.0
    for i, (start, bpm) in enumerate(segments):
        end = segments[i + 1][0] if i + 1 < len(segments) else None
        if end is None or beat <= end:
            t += max(0.0, beat - start) * 60.0 / bpm
            break
        t += (end - start) * 60.0 / bpm
    for stop_beat, dur in stops:
        if beat > stop_beat:
            t += dur
    return t


def _oracle_guide(segments, stops, signature, num_frames, beat_zero):
    num, den = signature
    step = 4.0 / den
    span = num_frames * 0.032
    out = np.zeros(num_frames, dtype=np.uint8)
    for i, (seg_start, _) in enumerate(segments):
        seg_end = segments[i + 1][0] if i + 1 < len(segments) else math.inf
        k = 0
        while True:
            beat = seg_start + k * step
            if beat >= seg_end:
                break
            t = _oracle_beat_time(segments, stops, beat) + beat_zero
            if t > span + 1.0:
                break
            frame = math.floor(t * 1000.0 / 32.0 + 0.5)
            if t >= 0.0 and frame < num_frames:
                mark = 2 if k % num == 0 else 1
                out[frame] = max(out[frame], mark)
            k += 1
    return out


def test_criterion_3_beat_guide_oracle():
    """200 random schedules match a brute-force guide; masking keeps 87.7%+-1%."""
    rng = np.random.default_rng(31)
    signatures = [(3, 4), (4, 4), (6, 8)]
    for case in range(200):
        n_seg = int(rng.integers(1, 4))
        starts = [0.0] + sorted(float(b) for b in rng.uniform(1.0, 40.0, size=n_seg - 1))
        segments = tuple((s, float(rng.uniform(60.0, 240.0))) for s in starts)
        stops = ()
        if rng.random() < 0.5:
            stops = ((float(rng.uniform(0.5, 20.0)), float(rng.uniform(0.1, 2.0))),)
        signature = signatures[case % 3]
        duration = float(rng.uniform(5.0, 60.0))
        num_frames = int(math.ceil(duration * 1000.0 / 32.0))
        beat_zero = float(rng.uniform(-0.5, 0.5))
        tempo = TempoSchedule(
            segments=segments, stops=stops, time_signature=signature
        )
        guide = compute_beat_guide(tempo, num_frames, beat_zero=beat_zero)
        expect = _oracle_guide(segments, stops, signature, num_frames, beat_zero)
        assert np.array_equal(guide.values, expect), f"case {case}"

    tempo = TempoSchedule(segments=((0.0, 240.0),))
    frames = 10000 * 8  # 240 BPM -> one beat per 8 frames (not quantized exactly)
    guide = compute_beat_guide(tempo, num_frames=frames)
    nonzero = int((guide.values != 0).sum())
    assert nonzero >= 10000
    masked = apply_beat_mask(guide, 0.123, np.random.default_rng(123))
    retained = int((masked.values != 0).sum()) / nonzero
    assert abs(retained - 0.877) <= 0.01
    _report(3, f"200 schedules exact, mask retention {retained:.4f}: PASS")


def _optimal_match_count(predicted, reference, tol=0.050):
    def within(a, b):
        d = abs(a - b)
        return d <= tol or math.isclose(d, tol, rel_tol=1e-9, abs_tol=1e-12)

    compat = [
        [within(p, r) for r in reference] for p in predicted
    ]
    memo = {}

    def best(i, used):
        if i == len(predicted):
            return 0
        key = (i, used)
        if key in memo:
            return memo[key]
        score = best(i + 1, used)
        for j in range(len(reference)):
            if compat[i][j] and not used & (1 << j):
                score = max(score, 1 + best(i + 1, used | (1 << j)))
        memo[key] = score
        return score

    return best(0, 0)


def test_criterion_4_matching_and_agreement_metrics():
    """Greedy matching is optimal on 500 random instances; metric hand values."""
    rng = np.random.default_rng(44)
    for case in range(500):
        n_pred = int(rng.integers(0, 9))
        n_ref = int(rng.integers(0, 9))
        predicted = sorted(float(t) for t in rng.uniform(0.0, 1.5, size=n_pred))
        reference = sorted(float(t) for t in rng.uniform(0.0, 1.5, size=n_ref))
        result = match_notes(predicted, reference)
        optimal = _optimal_match_count(predicted, reference)
        assert result.true_positives == optimal, f"case {case}"
        assert result.false_positives == n_pred - optimal
        assert result.false_negatives == n_ref - optimal

    example = match_notes([1.03, 2.06, 3.0], [1.0, 2.0])
    assert example.f1 == pytest.approx(0.4, abs=1e-12)

    subset = BitChart(bits=np.array([1, 0, 1, 1, 0], dtype=np.uint8))
    superset = BitChart(bits=np.array([1, 1, 0, 1, 0], dtype=np.uint8))
    assert inclusion_rate(subset, superset) == pytest.approx(2 / 3, abs=1e-12)
    for _ in range(20):
        bits = (rng.random(40) < 0.3).astype(np.uint8)
        if bits.sum() == 0:
            bits[0] = 1
        chart = BitChart(bits=bits)
        assert inclusion_rate(chart, chart) == 1.0

    conf = ConfusionResult(
        true_positives=119, false_positives=47, false_negatives=28, true_negatives=294
    )
    assert conf.precision == pytest.approx(0.72, abs=0.005)
    assert conf.recall_empty == pytest.approx(0.91, abs=0.005)
    assert conf.accuracy == pytest.approx(0.85, abs=0.005)
    _report(
        4,
        f"500 matchings optimal, example F1=0.4, confusion "
        f"{conf.precision:.3f}/{conf.recall_empty:.3f}/{conf.accuracy:.3f}: PASS",
    )


def test_criterion_5_model_shapes_scales_and_gradients():
    """Output length equals input length; receptive scales; gradcheck <1e-3."""
    started = time.time()
    tiny = toy_model_config()
    configs = {
        "multi-scale": tiny,
        "baseline": ModelConfig(
            stacks=baseline_spec(base_channels=4),
            variant=BASELINE,
            recurrent_width=32,
            recurrent_layers=1,
            baseline_hidden=32,
        ),
    }
    for name, config in configs.items():
        model = OnsetNet(config)
        model.eval()
        for t in (64, 97, 129):
            with torch.no_grad():
                out = model(
                    torch.randn(1, t, MEL_BANDS), torch.zeros(1, t), torch.tensor([30.0])
                )
            assert out.shape == (1, t), (name, t)

    full = ModelConfig(stacks=multi_scale_spec(), variant=MULTI_SCALE)
    scales = [receptive_scale(i, full) for i in range(1, 5)]
    assert scales == [32.0, 512.0, 2048.0, 4096.0]

    model = OnsetNet(tiny).double()
    model.eval()
    torch.manual_seed(0)
    spec = torch.randn(1, 16, MEL_BANDS, dtype=torch.float64, requires_grad=True)
    guide = torch.zeros(1, 16, dtype=torch.float64)
    flags = torch.tensor([40.0], dtype=torch.float64)
    out = model(spec, guide, flags)
    out.sum().backward()
    grad = spec.grad.clone()

    rng = np.random.default_rng(5)
    h = 1e-5
    checked = 0
    for _ in range(20):
        t = int(rng.integers(0, 16))
        f = int(rng.integers(0, MEL_BANDS))
        if abs(float(grad[0, t, f])) < 1e-6:
            continue  # relative error is meaningless against roundoff
        base = spec.detach().clone()
        plus = base.clone()
        plus[0, t, f] += h
        minus = base.clone()
        minus[0, t, f] -= h
        with torch.no_grad():
            fd = (model(plus, guide, flags).sum() - model(minus, guide, flags).sum()) / (2 * h)
        rel = abs(float(fd) - float(grad[0, t, f])) / abs(float(grad[0, t, f]))
        assert rel < 1e-3, (t, f, rel)
        checked += 1
    assert checked >= 5
    elapsed = time.time() - started
    assert elapsed < 300.0
    _report(
        5,
        f"lengths ok, scales {scales}, {checked} gradient probes <1e-3, "
        f"{elapsed:.1f}s: PASS",
    )


def test_criterion_6_toy_corpus_overfit(tmp_path):
    """Toy model reaches train F1-micro >= 0.9 on 3 click songs in <10 min."""
    started = time.time()
    corpus = make_click_corpus(
        3,
        duration=8.0,
        difficulties=(Difficulty.BEGINNER, Difficulty.EXPERT),
        seed=7,
    )
    examples = corpus_examples(corpus)
    plan = SplitPlan(assignment={ex.song_id: "train" for ex in examples})
    config = TrainConfig(
        epochs=60,
        batch_size=2,
        chunk_seconds=8.0,
        learning_rate_start=2e-3,
        learning_rate_end=2e-3,
        eta_min=1e-5,
        bce_positive_weight=16.0,
        augmentation=None,
        seed=0,
    )
    result = train(
        examples, plan, toy_model_config(), config, val_examples=examples
    )
    elapsed = time.time() - started
    assert result.best_f1 >= 0.9
    assert elapsed < 600.0

    write_corpus(corpus, tmp_path)
    cmd_ingest(tmp_path, tmp_path / "manifest.json")
    report = cmd_analyze(tmp_path / "manifest.json", out_dir=tmp_path / "analysis")
    assert report["difficulties"] == ["Beginner", "Expert"]
    matrix = report["inclusion_matrix"]
    assert matrix[0][0] == 1.0 and matrix[1][1] == 1.0
    assert matrix[0][1] == 1.0  # the sparser chart nests in the denser one
    _report(
        6,
        f"train F1={result.best_f1:.4f} at theta={result.best_threshold:.2f} "
        f"in {elapsed:.0f}s, nesting inclusion 100%: PASS",
    )


def test_criterion_7_beat_guide_ablation():
    """Median val F1 over 5 seeds: with guide >= without; 1-hour budget."""
    started = time.time()
    corpus = make_click_corpus(
        12,
        duration=8.0,
        difficulties=(Difficulty.EXPERT,),
        audible_fraction=0.5,
        seed=11,
    )
    examples = corpus_examples(corpus)
    split = split_from_examples(examples, seed=0)
    base = TrainConfig(
        epochs=16,
        batch_size=2,
        chunk_seconds=8.0,
        learning_rate_start=2e-3,
        learning_rate_end=2e-3,
        eta_min=1e-5,
        bce_positive_weight=16.0,
        augmentation=None,
    )
    scores = {True: [], False: []}
    for seed in range(5):
        for use_guide in (True, False):
            config = dataclasses.replace(base, seed=seed, use_beat_guide=use_guide)
            result = train(examples, split, toy_model_config(), config)
            scores[use_guide].append(result.best_f1)
    with_guide = statistics.median(scores[True])
    without_guide = statistics.median(scores[False])
    elapsed = time.time() - started
    assert with_guide >= without_guide
    assert elapsed < 3600.0
    _report(
        7,
        f"median F1 with guide {with_guide:.4f} vs without {without_guide:.4f} "
        f"over 5 seeds in {elapsed:.0f}s: PASS",
    )


def test_criterion_8_simfile_round_trip():
    """parse -> canonical -> reparse is the identity on the bundled simfiles."""
    names = sorted(p.name for p in FIXTURES.glob("*.sm"))
    assert len(names) >= 5
    total = 0
    for name in names:
        charts = parse_stepmania((FIXTURES / name).read_text())
        assert charts, name
        for chart in charts:
            again = parse_canonical(serialize_canonical(chart))
            assert again.notes == chart.notes, name
            assert again.tempo.segments == chart.tempo.segments
            assert again.tempo.stops == chart.tempo.stops
            assert again.tempo.time_signature == chart.tempo.time_signature
            assert again.beat_zero == chart.beat_zero
            assert again.audio_duration == chart.audio_duration
            assert again.difficulty is chart.difficulty
            assert again.song_id == chart.song_id
            total += 1
    _report(8, f"{len(names)} simfiles, {total} charts, exact round trip: PASS")
