"""Training loop, loss, LR schedule, dataset splitting and grid search.

The loop follows the published recipe: weighted binary cross entropy on
fuzzy onset targets, Adam with a per-step learning rate that warms up
linearly over the first epoch and then anneals along a cosine to a floor,
on-the-fly augmentation of 20-second chunks, and checkpoint selection by
the best validation F1-micro found while sweeping the decision threshold
in 0.05 steps.

Splits are drawn per BPM stratum so slow and fast songs land in every
part: songs are bucketed by quantiles of their dominant BPM and each
bucket is shuffled and cut 8:1:1 (train:validation:test) by song, never
by chart, so no song leaks across parts.
"""

from __future__ import annotations

import copy
import itertools
import math
import statistics
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np
import torch

from chartgen.audio import FRAME_MS, MelSpectrogram
from chartgen.augment import AugmentationConfig, augment
from chartgen.beats import BeatGuide, compute_beat_guide
from chartgen.charts import (
    ChartDocument,
    ChartError,
    Difficulty,
    OnsetLabels,
    TempoSchedule,
    apply_fuzzy_labels,
    rasterize_labels,
)
from chartgen.metrics import MatchResult, f1_micro, match_notes, pick_peaks
from chartgen.model import (
    ModelConfig,
    OnsetNet,
    PredictionSeries,
    predict_series,
    set_training_progress,
)

EVAL_THRESHOLDS = tuple(np.round(np.arange(0.05, 0.951, 0.05), 2))

# Hyperparameter search axes with their published candidate values; the
# single-value optimum of each axis is the TrainConfig default.
GRID_CANDIDATES: dict[str, tuple] = {
    "learning_rate_start": (1e-6, 2e-6, 4e-6, 9e-4),
    "learning_rate_end": (9e-4, 1e-3, 2e-3, 4e-3),
    "eta_min": (1e-6, 2e-4),
    "fuzzy_scale": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7),
    "fuzzy_width": (2, 3, 4, 5, 6),
    "dropout_linear": (0.3, 0.4, 0.5),
    "dropout_recurrent": (0.0, 0.1, 0.2, 0.3),
    "bce_positive_weight": (48.0, 64.0, 96.0),
}


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries where and at what learning rate."""

    def __init__(self, epoch: int, step: int, loss: float, learning_rate: float):
        self.epoch = epoch
        self.step = step
        self.loss = loss
        self.learning_rate = learning_rate
        super().__init__(
            f"training diverged at epoch {epoch}, step {step}: "
            f"loss={loss}, lr={learning_rate:.3e}"
        )


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters; defaults are the tuned optimum.

    ``dropout_linear`` and ``dropout_recurrent`` override the model
    config when set (they are search axes); ``None`` keeps the model's
    own values.  ``augmentation=None`` disables input augmentation, and
    ``use_beat_guide=False`` feeds an all-zero guide everywhere, which is
    the ablation switch.
    """

    epochs: int = 10
    batch_size: int = 4
    chunk_seconds: float = 20.0
    learning_rate_start: float = 9e-4
    learning_rate_end: float = 9e-4
    eta_min: float = 1e-6
    bce_positive_weight: float = 64.0
    fuzzy_width: int = 5
    fuzzy_scale: float = 0.2
    dropout_linear: float | None = 0.3
    dropout_recurrent: float | None = 0.1
    use_beat_guide: bool = True
    augmentation: AugmentationConfig | None = AugmentationConfig()
    seed: int = 0
    eval_thresholds: tuple[float, ...] = EVAL_THRESHOLDS

    def __post_init__(self):
        if self.epochs < 1:
            raise ChartError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ChartError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.chunk_seconds <= 0:
            raise ChartError("chunk_seconds must be positive")
        for name in ("learning_rate_start", "learning_rate_end", "eta_min"):
            if getattr(self, name) <= 0:
                raise ChartError(f"{name} must be positive")
        if self.bce_positive_weight <= 0:
            raise ChartError("bce_positive_weight must be positive")
        if self.fuzzy_width < 1:
            raise ChartError("fuzzy_width must be >= 1")
        if not 0.0 <= self.fuzzy_scale <= 1.0:
            raise ChartError("fuzzy_scale must lie in [0, 1]")
        for name in ("dropout_linear", "dropout_recurrent"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v < 1.0:
                raise ChartError(f"{name} must lie in [0, 1)")
        if not self.eval_thresholds:
            raise ChartError("eval_thresholds must not be empty")

    def chunk_frames(self, frame_ms: float = FRAME_MS) -> int:
        frames = self.chunk_seconds * 1000.0 / frame_ms
        if abs(frames - round(frames)) > 1e-9:
            raise ChartError(
                f"chunk_seconds={self.chunk_seconds} is not a whole number of "
                f"{frame_ms} ms frames"
            )
        return int(round(frames))

    def resolve_model_config(self, model_config: ModelConfig) -> ModelConfig:
        """Model config with this config's dropout overrides applied."""
        updates: dict[str, float] = {}
        if self.dropout_linear is not None:
            updates["dropout_linear"] = self.dropout_linear
        if self.dropout_recurrent is not None:
            updates["dropout_recurrent"] = self.dropout_recurrent
        return replace(model_config, **updates) if updates else model_config


def weighted_bce(
    pred: Any, target: Any, positive_weight: float = 64.0, mask: Any = None
) -> torch.Tensor:
    """Binary cross entropy with up-weighted positive frames.

    Computes ``mean(-(w * y * log(p) + (1 - y) * log(1 - p)))`` with
    probabilities clamped to ``[1e-7, 1 - 1e-7]``.  Fractional targets
    (fuzzy labels) are fine.  With ``mask`` given, only frames where the
    mask is nonzero enter the mean, which is how padded chunk tails are
    excluded.

    Accepts tensors, arrays, :class:`PredictionSeries` and
    :class:`OnsetLabels`; returns a scalar tensor that is differentiable
    when ``pred`` is a tensor requiring grad.
    """
    if positive_weight <= 0:
        raise ChartError(f"positive_weight must be positive, got {positive_weight}")
    if isinstance(pred, PredictionSeries):
        pred = pred.values
    if isinstance(target, OnsetLabels):
        target = target.values
    p = torch.as_tensor(pred)
    if not p.is_floating_point():
        p = p.double()
    y = torch.as_tensor(target, dtype=p.dtype, device=p.device)
    if p.shape != y.shape:
        raise ChartError(f"shape mismatch: pred {tuple(p.shape)} vs target {tuple(y.shape)}")
    eps = 1e-7
    pc = p.clamp(eps, 1.0 - eps)
    loss = -(positive_weight * y * torch.log(pc) + (1.0 - y) * torch.log(1.0 - pc))
    if mask is None:
        return loss.mean()
    m = torch.as_tensor(mask, dtype=p.dtype, device=p.device)
    if m.shape != p.shape:
        raise ChartError(f"mask shape {tuple(m.shape)} does not match {tuple(p.shape)}")
    denom = m.sum().clamp(min=1.0)
    return (loss * m).sum() / denom


def learning_rate_at(
    step: int,
    total_steps: int,
    warmup_steps: int,
    start: float,
    end: float,
    eta_min: float,
) -> float:
    """Per-step learning rate: linear warmup, then cosine annealing.

    Steps ``0 .. warmup_steps`` ramp linearly from ``start`` to ``end``;
    steps up to ``total_steps`` follow a half cosine from ``end`` down to
    ``eta_min``, reaching exactly ``eta_min`` at ``total_steps``.
    """
    if total_steps < 1:
        raise ChartError("total_steps must be >= 1")
    if not 0 <= warmup_steps <= total_steps:
        raise ChartError("warmup_steps must lie in [0, total_steps]")
    if not 0 <= step <= total_steps:
        raise ChartError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return start + (end - start) * step / warmup_steps
    if total_steps == warmup_steps:
        return end
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return eta_min + (end - eta_min) * 0.5 * (1.0 + math.cos(math.pi * progress))


def dominant_bpm(
    tempo: TempoSchedule, duration: float, beat_zero: float = 0.0
) -> float:
    """The BPM active the longest within ``[0, duration]`` of audio."""
    weights: dict[float, float] = {}
    starts = [s for s, _ in tempo.segments]
    for i, (seg_start, bpm) in enumerate(tempo.segments):
        t0 = tempo.beat_to_time(seg_start) + beat_zero
        if i + 1 < len(tempo.segments):
            t1 = tempo.beat_to_time(starts[i + 1]) + beat_zero
        else:
            t1 = duration
        span = min(t1, duration) - max(t0, 0.0)
        if span > 0:
            weights[bpm] = weights.get(bpm, 0.0) + span
    if not weights:
        return tempo.segments[0][1]
    return max(weights.items(), key=lambda kv: kv[1])[0]


@dataclass(frozen=True)
class SongExample:
    """One (song, difficulty) with everything training needs."""

    song_id: str
    difficulty: Difficulty
    mel: MelSpectrogram
    guide: BeatGuide
    labels: OnsetLabels
    note_times: tuple[float, ...]
    bpm: float

    @classmethod
    def from_chart(cls, chart: ChartDocument, mel: MelSpectrogram) -> "SongExample":
        guide = compute_beat_guide(
            chart.tempo, mel.num_frames, mel.frame_ms, chart.beat_zero
        )
        labels = rasterize_labels(chart, mel.num_frames, mel.frame_ms)
        return cls(
            song_id=chart.song_id,
            difficulty=chart.difficulty,
            mel=mel,
            guide=guide,
            labels=labels,
            note_times=chart.notes,
            bpm=dominant_bpm(chart.tempo, chart.audio_duration, chart.beat_zero),
        )


@dataclass(frozen=True)
class SplitPlan:
    """Song-level split assignment; values are train, val or test."""

    assignment: Mapping[str, str]
    strata: tuple[tuple[float, float], ...] = ()

    def songs(self, part: str) -> tuple[str, ...]:
        return tuple(s for s, p in sorted(self.assignment.items()) if p == part)


def make_split(
    song_bpms: Mapping[str, float],
    seed: int = 0,
    num_strata: int = 3,
    ratios: tuple[int, int, int] = (8, 1, 1),
) -> SplitPlan:
    """Deterministic BPM-stratified 8:1:1 split by song.

    Songs are bucketed by quantiles of BPM into ``num_strata`` strata
    (one stratum when there are fewer songs than strata), each stratum is
    shuffled with the seeded generator, and cut according to ``ratios``
    with counts rounded half-up, remainder to train.

    Raises:
        ChartError: With fewer than 10 songs, where an 8:1:1 cut cannot
            leave every part meaningful.
    """
    if len(song_bpms) < 10:
        raise ChartError(f"need at least 10 songs to split, got {len(song_bpms)}")
    if num_strata < 1:
        raise ChartError("num_strata must be >= 1")
    if min(ratios) < 0 or sum(ratios) <= 0:
        raise ChartError(f"bad split ratios {ratios}")
    if len(song_bpms) < num_strata:
        num_strata = 1

    songs = sorted(song_bpms)
    bpms = np.array([song_bpms[s] for s in songs])
    edges = [
        float(np.quantile(bpms, k / num_strata)) for k in range(1, num_strata)
    ]
    strata: list[list[str]] = [[] for _ in range(num_strata)]
    for song, bpm in zip(songs, bpms):
        idx = sum(bpm > e for e in edges)
        strata[idx].append(song)

    rng = np.random.default_rng(seed)
    total = sum(ratios)
    assignment: dict[str, str] = {}
    bounds = []
    for bucket in strata:
        if bucket:
            lows = [song_bpms[s] for s in bucket]
            bounds.append((min(lows), max(lows)))
        order = list(bucket)
        rng.shuffle(order)
        n = len(order)
        n_val = math.floor(n * ratios[1] / total + 0.5)
        n_test = math.floor(n * ratios[2] / total + 0.5)
        n_train = n - n_val - n_test
        for song in order[:n_train]:
            assignment[song] = "train"
        for song in order[n_train : n_train + n_val]:
            assignment[song] = "val"
        for song in order[n_train + n_val :]:
            assignment[song] = "test"
    # Per-stratum rounding can starve a part on small corpora (e.g. four
    # strata of four songs each round 0.4 down to zero validation songs).
    # Backfill each empty nonzero-ratio part from the largest one.
    for idx, part in ((1, "val"), (2, "test")):
        if ratios[idx] == 0 or any(p == part for p in assignment.values()):
            continue
        counts = {p: sum(v == p for v in assignment.values()) for p in ("train", "val", "test")}
        donor = max(counts, key=lambda p: counts[p])
        mover = max(s for s, p in assignment.items() if p == donor)
        assignment[mover] = part
    return SplitPlan(assignment=assignment, strata=tuple(bounds))


def split_from_examples(
    examples: Sequence[SongExample], seed: int = 0, num_strata: int = 3
) -> SplitPlan:
    """Convenience wrapper collecting song BPMs from examples."""
    song_bpms: dict[str, float] = {}
    for ex in examples:
        song_bpms.setdefault(ex.song_id, ex.bpm)
    return make_split(song_bpms, seed=seed, num_strata=num_strata)


@dataclass(frozen=True)
class TrainingChunk:
    """A fixed-length training window with a validity mask for padding."""

    spec: np.ndarray
    labels: np.ndarray
    guide: np.ndarray
    mask: np.ndarray
    flag: int


def make_chunks(example: SongExample, chunk_frames: int) -> list[TrainingChunk]:
    """Cut one song into consecutive chunks, zero-padding the last."""
    if chunk_frames < 1:
        raise ChartError("chunk_frames must be >= 1")
    frames = example.mel.num_frames
    bands = example.mel.num_bands
    chunks = []
    for lo in range(0, max(frames, 1), chunk_frames):
        hi = min(frames, lo + chunk_frames)
        spec = np.zeros((chunk_frames, bands))
        labels = np.zeros(chunk_frames)
        guide = np.zeros(chunk_frames, dtype=np.uint8)
        mask = np.zeros(chunk_frames)
        spec[: hi - lo] = example.mel.values[lo:hi]
        labels[: hi - lo] = example.labels.values[lo:hi]
        guide[: hi - lo] = example.guide.values[lo:hi]
        mask[: hi - lo] = 1.0
        chunks.append(
            TrainingChunk(
                spec=spec,
                labels=labels,
                guide=guide,
                mask=mask,
                flag=example.difficulty.flag,
            )
        )
    return chunks


@dataclass(frozen=True)
class TraceRow:
    """One evaluation point of a training run."""

    epoch: int
    step: int
    learning_rate: float
    train_loss: float
    val_f1: float
    val_threshold: float
    best_f1: float


@dataclass
class TrainResult:
    """Trained model (best checkpoint loaded) plus run statistics."""

    model: OnsetNet
    best_f1: float
    best_threshold: float
    best_epoch: int
    trace: tuple[TraceRow, ...]


def evaluate_examples(
    model: OnsetNet,
    examples: Sequence[SongExample],
    thresholds: Sequence[float] = EVAL_THRESHOLDS,
    use_beat_guide: bool = True,
) -> tuple[float, float]:
    """Best pooled F1-micro over a threshold sweep.

    Runs the model once per example, picks peaks at every threshold, and
    returns ``(best_f1, best_threshold)``; ties keep the lower threshold.
    """
    if not examples:
        raise ChartError("cannot evaluate an empty example list")
    series = []
    for ex in examples:
        guide = ex.guide
        if not use_beat_guide:
            guide = BeatGuide(
                values=np.zeros(len(ex.guide), dtype=np.uint8), frame_ms=ex.guide.frame_ms
            )
        series.append(predict_series(model, ex.mel, guide, ex.difficulty))
    best = (-1.0, thresholds[0])
    for theta in thresholds:
        results = [
            match_notes(pick_peaks(s, theta), ex.note_times)
            for s, ex in zip(series, examples)
        ]
        score = f1_micro(results)
        if score > best[0]:
            best = (score, float(theta))
    return best


def _batch_tensors(
    chunks: Sequence[TrainingChunk],
    config: TrainConfig,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, ...]:
    specs, labels, guides, masks, flags = [], [], [], [], []
    for chunk in chunks:
        spec, lab, guide = chunk.spec, chunk.labels, chunk.guide
        if config.augmentation is not None:
            spec, lab, guide = augment(spec, lab, guide, config.augmentation, rng)
        lab = apply_fuzzy_labels(
            OnsetLabels(values=lab), config.fuzzy_width, config.fuzzy_scale
        ).values
        if not config.use_beat_guide:
            guide = np.zeros_like(guide)
        specs.append(spec)
        labels.append(lab)
        guides.append(guide)
        masks.append(chunk.mask)
        flags.append(chunk.flag)
    return (
        torch.from_numpy(np.stack(specs)).float(),
        torch.from_numpy(np.stack(labels)).float(),
        torch.from_numpy(np.stack(guides).astype(np.float32)),
        torch.from_numpy(np.stack(masks)).float(),
        torch.tensor([float(f) for f in flags]),
    )


def train(
    examples: Sequence[SongExample],
    split: SplitPlan,
    model_config: ModelConfig,
    config: TrainConfig,
    epoch_callback: Callable[[TraceRow, OnsetNet], None] | None = None,
    val_examples: Sequence[SongExample] | None = None,
) -> TrainResult:
    """Train an onset model and keep the best-validation checkpoint.

    The learning rate is set per optimizer step (linear warmup across the
    first epoch, cosine annealing to the floor after), training chunks
    are augmented and fuzzy-labeled on the fly, and after every epoch the
    validation songs are scored with a threshold sweep.  The model ends
    up loaded with the weights of the best epoch.

    Args:
        examples: All preprocessed (song, difficulty) examples.
        split: Song assignment; both train and val parts must be
            non-empty.  Examples assigned to test or absent are ignored.
        model_config: Architecture to train (dropout overrides from
            ``config`` apply).
        config: Optimization hyperparameters.
        epoch_callback: Called after each epoch's evaluation with the
            trace row and the live model, e.g. to write checkpoints.
        val_examples: Evaluation set override; when given, the split's
            val part is not consulted.  Useful for sanity runs that score
            the training songs themselves.

    Raises:
        TrainingDiverged: When the loss leaves the finite range.
        ChartError: For empty train or validation parts.
    """
    train_examples = [ex for ex in examples if split.assignment.get(ex.song_id) == "train"]
    if val_examples is None:
        val_examples = [ex for ex in examples if split.assignment.get(ex.song_id) == "val"]
    if not train_examples:
        raise ChartError("the split leaves no training songs")
    if not val_examples:
        raise ChartError("the split leaves no validation songs")

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    model = OnsetNet(config.resolve_model_config(model_config))
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate_start)

    chunk_frames = config.chunk_frames()
    chunks = [c for ex in train_examples for c in make_chunks(ex, chunk_frames)]
    steps_per_epoch = math.ceil(len(chunks) / config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    warmup_steps = steps_per_epoch

    best_f1 = -1.0
    best_threshold = config.eval_thresholds[0]
    best_epoch = -1
    best_state: dict[str, torch.Tensor] | None = None
    trace: list[TraceRow] = []
    step = 0

    for epoch in range(config.epochs):
        model.train()
        order = rng.permutation(len(chunks))
        losses = []
        last_lr = config.learning_rate_start
        for lo in range(0, len(order), config.batch_size):
            batch = [chunks[i] for i in order[lo : lo + config.batch_size]]
            last_lr = learning_rate_at(
                step,
                total_steps,
                warmup_steps,
                config.learning_rate_start,
                config.learning_rate_end,
                config.eta_min,
            )
            for group in optimizer.param_groups:
                group["lr"] = last_lr
            set_training_progress(model, step / total_steps)

            spec, labels, guide, mask, flags = _batch_tensors(batch, config, rng)
            probs = model(spec, guide, flags)
            loss = weighted_bce(probs, labels, config.bce_positive_weight, mask)
            loss_value = float(loss.detach())
            if not math.isfinite(loss_value):
                raise TrainingDiverged(epoch, step, loss_value, last_lr)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss_value)
            step += 1

        val_f1, val_threshold = evaluate_examples(
            model, val_examples, config.eval_thresholds, config.use_beat_guide
        )
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_threshold = val_threshold
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        row = TraceRow(
            epoch=epoch,
            step=step,
            learning_rate=last_lr,
            train_loss=float(np.mean(losses)) if losses else math.nan,
            val_f1=val_f1,
            val_threshold=val_threshold,
            best_f1=best_f1,
        )
        trace.append(row)
        if epoch_callback is not None:
            epoch_callback(row, model)

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(
        model=model,
        best_f1=best_f1,
        best_threshold=best_threshold,
        best_epoch=best_epoch,
        trace=tuple(trace),
    )


@dataclass(frozen=True)
class GridResult:
    """One grid point: parameter values and the score of each trial."""

    params: tuple[tuple[str, Any], ...]
    scores: tuple[float, ...]

    @property
    def median_f1(self) -> float:
        return statistics.median(self.scores)

    def as_dict(self) -> dict[str, Any]:
        return dict(self.params)


def grid_search(
    examples: Sequence[SongExample],
    split: SplitPlan,
    model_config: ModelConfig,
    base_config: TrainConfig,
    axes: Mapping[str, Sequence[Any]] | None = None,
    trials: int = 1,
    budget: int | None = None,
) -> list[GridResult]:
    """Exhaustive hyperparameter search ranked by median validation F1.

    Every combination of the axis values (the published candidate lists
    by default) is trained ``trials`` times with seeds
    ``base_config.seed + trial`` and scored by its best validation
    F1-micro; combinations come back sorted best first by the median of
    their trial scores.

    Args:
        axes: Axis name to candidate values; names must be TrainConfig
            fields (:data:`GRID_CANDIDATES` lists the standard eight).
        trials: Runs per combination.
        budget: Cap on the number of combinations, in enumeration order.
            Must be positive when given.
    """
    if axes is None:
        axes = GRID_CANDIDATES
    if not axes:
        raise ChartError("grid search needs at least one axis")
    if budget is not None and budget < 1:
        raise ChartError(f"budget must be positive, got {budget}")
    if trials < 1:
        raise ChartError(f"trials must be >= 1, got {trials}")
    valid_fields = {f.name for f in TrainConfig.__dataclass_fields__.values()}  # type: ignore[attr-defined]
    for name in axes:
        if name not in valid_fields:
            raise ChartError(f"unknown grid axis {name!r}")

    names = list(axes)
    combos = itertools.product(*(axes[n] for n in names))
    if budget is not None:
        combos = itertools.islice(combos, budget)

    results = []
    for values in combos:
        params = dict(zip(names, values))
        scores = []
        for trial in range(trials):
            cfg = replace(base_config, **params, seed=base_config.seed + trial)
            outcome = train(examples, split, model_config, cfg)
            scores.append(outcome.best_f1)
        results.append(
            GridResult(params=tuple(zip(names, values)), scores=tuple(scores))
        )
    results.sort(key=lambda r: r.median_f1, reverse=True)
    return results
