"""Dataset manifest, cached feature store, and the pipeline commands.

The on-disk pipeline is built from three pieces:

* A dataset manifest: one JSON file listing every song's audio and chart
  files together with their sha256 digests and an overall content digest,
  so downstream stages can tell when inputs changed.
* A feature store: a directory of content-addressed ``.npy`` arrays (the
  log-Mel matrix per audio file, the beat guide per chart) with JSON
  sidecars describing the grid.  Keys hash the input bytes plus the
  extraction parameters, so a parameter change never reuses stale
  features.
* Run directories: each training run owns a directory with
  ``manifest.json`` (configs, seed, split, dataset digest),
  ``trace.csv``, ``checkpoints/`` and ``reports/``.

The ``cmd_*`` functions implement the CLI subcommands and are plain
functions so they can be driven programmatically as well.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from chartgen.audio import (
    FRAME_MS,
    F_MAX,
    F_MIN,
    MEL_BANDS,
    MelSpectrogram,
    compute_mel_spectrogram,
)
from chartgen.augment import AugmentationConfig
from chartgen.beats import BeatGuide, compute_beat_guide
from chartgen.charts import (
    ChartDocument,
    ChartError,
    Difficulty,
    parse_canonical,
    parse_stepmania,
    serialize_canonical,
)
from chartgen.metrics import (
    HISTOGRAM_CLASSES,
    BitChart,
    chart_to_bitchart,
    f1_micro,
    f1_per_chart,
    inclusion_rate,
    match_notes,
    note_timing_histogram,
    pick_peaks,
)
from chartgen.model import (
    BASELINE,
    MULTI_SCALE,
    ModelConfig,
    OnsetNet,
    baseline_spec,
    load_checkpoint,
    model_config_from_dict,
    model_config_to_dict,
    predict_series,
    save_checkpoint,
)
from chartgen.training import (
    EVAL_THRESHOLDS,
    SongExample,
    SplitPlan,
    TraceRow,
    TrainConfig,
    make_split,
    train,
)

MANIFEST_SCHEMA = "dataset-manifest/1"
RUN_SCHEMA = "run-manifest/1"
SIDECAR_SCHEMA = "feature-sidecar/1"

AUDIO_SUFFIXES = (".wav",)
CHART_SUFFIX = ".chart.json"


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def read_audio(path: str | Path) -> tuple[np.ndarray, int]:
    """Load a mono waveform as float64 in [-1, 1] plus its sample rate.

    Multi-channel audio is averaged down to mono.
    """
    from scipy.io import wavfile

    rate, data = wavfile.read(str(path))
    data = np.asarray(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if np.issubdtype(data.dtype, np.integer):
        scale = float(np.iinfo(data.dtype).max)
        data = data.astype(np.float64) / scale
    else:
        data = data.astype(np.float64)
    return data, int(rate)


@dataclass(frozen=True)
class ManifestChart:
    difficulty: Difficulty
    path: str
    sha256: str


@dataclass(frozen=True)
class ManifestSong:
    song_id: str
    audio: str
    audio_sha256: str
    charts: tuple[ManifestChart, ...]


@dataclass(frozen=True)
class DatasetManifest:
    """Index of a dataset: songs, files, digests.

    ``digest`` covers every referenced file's hash and the layout, so
    two manifests with equal digests describe byte-identical datasets.
    Paths are relative to the manifest file's directory.
    """

    songs: tuple[ManifestSong, ...]
    digest: str
    root: Path

    def song(self, song_id: str) -> ManifestSong:
        for s in self.songs:
            if s.song_id == song_id:
                return s
        raise ChartError(f"song {song_id!r} not in manifest")


def _manifest_digest(songs: Sequence[ManifestSong]) -> str:
    payload = json.dumps(
        [
            {
                "song_id": s.song_id,
                "audio": s.audio,
                "audio_sha256": s.audio_sha256,
                "charts": [
                    {"difficulty": c.difficulty.name, "path": c.path, "sha256": c.sha256}
                    for c in s.charts
                ],
            }
            for s in songs
        ],
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def build_manifest(root: str | Path, song_dirs: Iterable[Path]) -> DatasetManifest:
    """Assemble a manifest over song directories.

    Each song directory must contain exactly one audio file and at least
    one ``*.chart.json``; paths in the manifest are stored relative to
    ``root``.
    """
    root = Path(root).resolve()
    songs = []
    for d in sorted(song_dirs):
        audio_files = sorted(
            p for p in d.iterdir() if p.suffix.lower() in AUDIO_SUFFIXES
        )
        chart_files = sorted(p for p in d.iterdir() if p.name.endswith(CHART_SUFFIX))
        if len(audio_files) != 1:
            raise ChartError(
                f"{d}: expected exactly one audio file, found {len(audio_files)}"
            )
        if not chart_files:
            raise ChartError(f"{d}: no {CHART_SUFFIX} files")
        charts = []
        song_id = None
        for cf in chart_files:
            chart = parse_canonical(cf.read_text())
            song_id = song_id or chart.song_id
            charts.append(
                ManifestChart(
                    difficulty=chart.difficulty,
                    path=str(cf.resolve().relative_to(root)),
                    sha256=_sha256_file(cf),
                )
            )
        songs.append(
            ManifestSong(
                song_id=song_id or d.name,
                audio=str(audio_files[0].resolve().relative_to(root)),
                audio_sha256=_sha256_file(audio_files[0]),
                charts=tuple(charts),
            )
        )
    ids = [s.song_id for s in songs]
    if len(set(ids)) != len(ids):
        raise ChartError("duplicate song ids in dataset")
    return DatasetManifest(songs=tuple(songs), digest=_manifest_digest(songs), root=root)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    doc = {
        "schema": MANIFEST_SCHEMA,
        "digest": manifest.digest,
        "songs": [
            {
                "song_id": s.song_id,
                "audio": s.audio,
                "audio_sha256": s.audio_sha256,
                "charts": [
                    {
                        "difficulty": c.difficulty.name.capitalize(),
                        "path": c.path,
                        "sha256": c.sha256,
                    }
                    for c in s.charts
                ],
            }
            for s in manifest.songs
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("schema") != MANIFEST_SCHEMA:
        raise ChartError(f"{path}: not a {MANIFEST_SCHEMA} file")
    songs = tuple(
        ManifestSong(
            song_id=s["song_id"],
            audio=s["audio"],
            audio_sha256=s["audio_sha256"],
            charts=tuple(
                ManifestChart(
                    difficulty=Difficulty.from_name(c["difficulty"]),
                    path=c["path"],
                    sha256=c["sha256"],
                )
                for c in s["charts"]
            ),
        )
        for s in doc["songs"]
    )
    manifest = DatasetManifest(
        songs=songs, digest=doc["digest"], root=path.resolve().parent
    )
    if _manifest_digest(songs) != manifest.digest:
        raise ChartError(f"{path}: digest does not match manifest contents")
    return manifest


class FeatureStore:
    """Content-addressed cache of Mel features and beat guides.

    A Mel entry is keyed by the audio file digest plus extraction
    parameters; a guide entry by the chart digest plus the frame grid.
    Entries are ``<key>.npy`` arrays with a ``<key>.json`` sidecar.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _mel_key(self, audio_sha: str) -> str:
        params = f"mel|{audio_sha}|{MEL_BANDS}|{FRAME_MS}|{F_MIN}|{F_MAX}"
        return hashlib.sha256(params.encode()).hexdigest()[:24]

    def _guide_key(self, chart_sha: str, num_frames: int) -> str:
        params = f"guide|{chart_sha}|{num_frames}|{FRAME_MS}"
        return hashlib.sha256(params.encode()).hexdigest()[:24]

    def mel_for(
        self, audio_path: str | Path, audio_sha: str | None = None
    ) -> MelSpectrogram:
        audio_path = Path(audio_path)
        audio_sha = audio_sha or _sha256_file(audio_path)
        key = self._mel_key(audio_sha)
        npy = self.root / f"{key}.npy"
        if npy.exists():
            values = np.load(npy)
            return MelSpectrogram(values=values.astype(np.float64))
        samples, rate = read_audio(audio_path)
        mel = compute_mel_spectrogram(samples, rate)
        np.save(npy, mel.values.astype(np.float32))
        sidecar = {
            "schema": SIDECAR_SCHEMA,
            "kind": "mel",
            "frames": mel.num_frames,
            "mel_bands": mel.num_bands,
            "frame_ms": FRAME_MS,
            "f_min": F_MIN,
            "f_max": F_MAX,
            "source_sha256": audio_sha,
        }
        (self.root / f"{key}.json").write_text(json.dumps(sidecar, indent=2) + "\n")
        return mel

    def guide_for(
        self, chart: ChartDocument, chart_sha: str, num_frames: int
    ) -> BeatGuide:
        key = self._guide_key(chart_sha, num_frames)
        npy = self.root / f"{key}.npy"
        if npy.exists():
            return BeatGuide(values=np.load(npy))
        guide = compute_beat_guide(chart.tempo, num_frames, FRAME_MS, chart.beat_zero)
        np.save(npy, guide.values)
        sidecar = {
            "schema": SIDECAR_SCHEMA,
            "kind": "guide",
            "frames": num_frames,
            "frame_ms": FRAME_MS,
            "source_sha256": chart_sha,
        }
        (self.root / f"{key}.json").write_text(json.dumps(sidecar, indent=2) + "\n")
        return guide


def load_examples(
    manifest: DatasetManifest, store: FeatureStore | None = None
) -> list[SongExample]:
    """Build training examples for every chart in the manifest."""
    examples = []
    for song in manifest.songs:
        audio_path = manifest.root / song.audio
        if store is not None:
            mel = store.mel_for(audio_path, song.audio_sha256)
        else:
            samples, rate = read_audio(audio_path)
            mel = compute_mel_spectrogram(samples, rate)
        for entry in song.charts:
            chart = parse_canonical((manifest.root / entry.path).read_text())
            examples.append(SongExample.from_chart(chart, mel))
    return examples


def model_config_for_variant(variant: str, mel_bands: int = MEL_BANDS) -> ModelConfig:
    if variant == MULTI_SCALE:
        return ModelConfig(mel_bands=mel_bands)
    if variant == BASELINE:
        return ModelConfig(stacks=baseline_spec(), variant=BASELINE, mel_bands=mel_bands)
    raise ChartError(f"unknown model variant {variant!r}")


def _coerce(raw: str) -> Any:
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    if "," in raw:
        return tuple(_coerce(part) for part in raw.split(","))
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def load_train_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    """Read ``key = value`` overrides into a TrainConfig.

    Keys are TrainConfig field names; ``augmentation.<field>`` reaches
    into the augmentation config (creating one if it was disabled).
    Lines starting with ``#`` and blank lines are ignored.
    """
    base = base or TrainConfig()
    updates: dict[str, Any] = {}
    aug_updates: dict[str, Any] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ChartError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        value = _coerce(raw)
        if key.startswith("augmentation."):
            aug_updates[key.split(".", 1)[1]] = value
        elif key == "augmentation" and value is None:
            updates["augmentation"] = None
        elif key in TrainConfig.__dataclass_fields__:
            updates[key] = value
        else:
            raise ChartError(f"{path}:{lineno}: unknown config key {key!r}")
    if aug_updates:
        current = updates.get("augmentation", base.augmentation) or AugmentationConfig()
        try:
            updates["augmentation"] = dataclasses.replace(current, **aug_updates)
        except TypeError as exc:
            raise ChartError(f"{path}: bad augmentation key ({exc})") from None
    try:
        return dataclasses.replace(base, **updates)
    except TypeError as exc:
        raise ChartError(f"{path}: bad config value ({exc})") from None


def _train_config_to_dict(config: TrainConfig) -> dict[str, Any]:
    d = dataclasses.asdict(config)
    d["eval_thresholds"] = list(config.eval_thresholds)
    return d


def write_trace(rows: Sequence[TraceRow], path: str | Path) -> None:
    fields = [f.name for f in dataclasses.fields(TraceRow)]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(dataclasses.asdict(row))


# ---------------------------------------------------------------------------
# Subcommand implementations.  Each returns the payload it printed, which
# keeps them easy to drive from tests.
# ---------------------------------------------------------------------------


def cmd_ingest(root: str | Path, manifest_path: str | Path | None = None) -> dict:
    """Scan a dataset tree, convert simfiles, and write the manifest.

    A song directory is any directory holding exactly one ``.wav`` file
    plus chart sources (``.sm`` or ``*.chart.json``).  Simfiles are
    converted to canonical chart JSON next to the audio, with the audio
    duration taken from the WAV header.  An empty tree yields an empty
    manifest; chart files without audio next to them are an error.
    """
    root = Path(root).resolve()
    song_dirs = sorted(
        {
            p.parent
            for p in root.rglob("*")
            if p.suffix.lower() in AUDIO_SUFFIXES and p.is_file()
        }
    )
    orphans = [
        p
        for p in root.rglob("*")
        if (p.name.endswith(CHART_SUFFIX) or p.suffix == ".sm")
        and p.parent not in song_dirs
    ]
    if orphans:
        raise ChartError(f"chart files without audio: {', '.join(map(str, orphans))}")
    converted = 0
    for d in song_dirs:
        wavs = [p for p in d.iterdir() if p.suffix.lower() in AUDIO_SUFFIXES]
        samples, rate = read_audio(wavs[0])
        duration = len(samples) / rate
        for sm in sorted(d.glob("*.sm")):
            for chart in parse_stepmania(sm.read_text(), song_id=None):
                chart = chart.with_audio_duration(duration)
                out = d / f"{chart.difficulty.name.capitalize()}{CHART_SUFFIX}"
                out.write_text(serialize_canonical(chart))
                converted += 1
    manifest = build_manifest(root, song_dirs)
    manifest_path = Path(manifest_path) if manifest_path else root / "manifest.json"
    write_manifest(manifest, manifest_path)
    return {
        "manifest": str(manifest_path),
        "songs": len(manifest.songs),
        "charts": sum(len(s.charts) for s in manifest.songs),
        "converted_simfiles": converted,
        "digest": manifest.digest,
    }


def cmd_preprocess(manifest_path: str | Path, store_dir: str | Path) -> dict:
    """Fill the feature store for every song and chart in the manifest."""
    manifest = load_manifest(manifest_path)
    store = FeatureStore(store_dir)
    frames = {}
    for song in manifest.songs:
        mel = store.mel_for(manifest.root / song.audio, song.audio_sha256)
        frames[song.song_id] = mel.num_frames
        for entry in song.charts:
            chart = parse_canonical((manifest.root / entry.path).read_text())
            store.guide_for(chart, entry.sha256, mel.num_frames)
    return {
        "store": str(Path(store_dir)),
        "songs": len(manifest.songs),
        "total_frames": int(sum(frames.values())),
    }


def _split_to_dict(split: SplitPlan) -> dict:
    return {
        "assignment": dict(sorted(split.assignment.items())),
        "strata": [list(b) for b in split.strata],
    }


def _split_from_dict(doc: dict) -> SplitPlan:
    return SplitPlan(
        assignment=dict(doc["assignment"]),
        strata=tuple(tuple(b) for b in doc.get("strata", [])),
    )


def cmd_train(
    manifest_path: str | Path,
    out_dir: str | Path,
    config_path: str | Path | None = None,
    variant: str = MULTI_SCALE,
    seed: int = 0,
    store_dir: str | Path | None = None,
    model_config: ModelConfig | None = None,
    train_config: TrainConfig | None = None,
) -> dict:
    """Train a model and populate a run directory.

    The run directory receives ``manifest.json`` (run metadata including
    the dataset digest and the split), ``trace.csv``, per-epoch and best
    checkpoints under ``checkpoints/``, and a validation report under
    ``reports/``.
    """
    manifest = load_manifest(manifest_path)
    store = FeatureStore(store_dir) if store_dir else None
    examples = load_examples(manifest, store)

    if train_config is None:
        train_config = load_train_config(config_path) if config_path else TrainConfig()
    train_config = dataclasses.replace(train_config, seed=seed)
    if model_config is None:
        model_config = model_config_for_variant(variant)

    song_bpms = {}
    for ex in examples:
        song_bpms.setdefault(ex.song_id, ex.bpm)
    split = make_split(song_bpms, seed=seed)

    out = Path(out_dir)
    checkpoints = out / "checkpoints"
    reports = out / "reports"
    checkpoints.mkdir(parents=True, exist_ok=True)
    reports.mkdir(parents=True, exist_ok=True)

    def on_epoch(row: TraceRow, model: OnsetNet) -> None:
        save_checkpoint(
            checkpoints / f"epoch_{row.epoch:03d}.pt",
            model,
            extra={"epoch": row.epoch, "val_f1": row.val_f1},
        )

    result = train(examples, split, model_config, train_config, epoch_callback=on_epoch)
    save_checkpoint(
        checkpoints / "best.pt",
        result.model,
        extra={
            "epoch": result.best_epoch,
            "val_f1": result.best_f1,
            "threshold": result.best_threshold,
        },
    )
    write_trace(result.trace, out / "trace.csv")

    run_doc = {
        "schema": RUN_SCHEMA,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "seed": seed,
        "variant": model_config.variant,
        "dataset_manifest": str(Path(manifest_path).resolve()),
        "dataset_digest": manifest.digest,
        "model_config": model_config_to_dict(model_config),
        "train_config": _train_config_to_dict(train_config),
        "split": _split_to_dict(split),
        "best": {
            "epoch": result.best_epoch,
            "val_f1": result.best_f1,
            "threshold": result.best_threshold,
            "checkpoint": "checkpoints/best.pt",
        },
    }
    (out / "manifest.json").write_text(json.dumps(run_doc, indent=2) + "\n")

    report = {
        "val_f1_micro": result.best_f1,
        "threshold": result.best_threshold,
        "epochs": len(result.trace),
        "best_epoch": result.best_epoch,
    }
    (reports / "validation.json").write_text(json.dumps(report, indent=2) + "\n")
    return {
        "run_dir": str(out),
        "best_epoch": result.best_epoch,
        "val_f1": result.best_f1,
        "threshold": result.best_threshold,
    }


def cmd_generate(
    checkpoint_path: str | Path,
    audio_path: str | Path,
    template_path: str | Path,
    difficulty: str,
    out_path: str | Path,
    threshold: float | None = None,
) -> dict:
    """Generate a chart for one audio file.

    The template chart supplies the tempo schedule (its notes are
    ignored), which drives the beat guide and the output's timing
    metadata.  The threshold defaults to the one stored with the
    checkpoint.
    """
    model, extra = load_checkpoint(checkpoint_path)
    if threshold is None:
        threshold = float(extra.get("threshold", 0.5))
    diff = Difficulty.from_name(difficulty)
    template = parse_canonical(Path(template_path).read_text())
    samples, rate = read_audio(audio_path)
    duration = len(samples) / rate
    mel = compute_mel_spectrogram(samples, rate)
    guide = compute_beat_guide(
        template.tempo, mel.num_frames, mel.frame_ms, template.beat_zero
    )
    series = predict_series(model, mel, guide, diff)
    times = [t for t in pick_peaks(series, threshold) if t <= duration]
    chart = ChartDocument(
        song_id=template.song_id,
        difficulty=diff,
        tempo=template.tempo,
        notes=tuple(times),
        audio_duration=duration,
        beat_zero=template.beat_zero,
        source="generated",
    )
    Path(out_path).write_text(serialize_canonical(chart))
    return {
        "out": str(out_path),
        "notes": len(times),
        "threshold": threshold,
        "difficulty": diff.name.capitalize(),
    }


def _metric_row(dataset: str, label: str, results: list) -> dict | None:
    """One metric-report row over a group of match results, or None.

    Returns None when the group is empty or no chart in it is scoreable
    (zero truth and zero predictions everywhere).
    """
    if not results:
        return None
    try:
        per_chart = f1_per_chart(results)
    except ChartError:
        return None
    return {
        "dataset": dataset,
        "difficulty": label,
        "f1_micro": f1_micro(results),
        "f1_per_chart": per_chart,
        "tp": sum(r.true_positives for r in results),
        "fp": sum(r.false_positives for r in results),
        "fn": sum(r.false_negatives for r in results),
    }


def cmd_evaluate(
    run_dir: str | Path,
    manifest_path: str | Path | None = None,
    part: str = "test",
    threshold: float | None = None,
    out_path: str | Path | None = None,
    store_dir: str | Path | None = None,
) -> dict:
    """Score a trained run's checkpoint on one split part.

    Reads the run manifest for the split and the best checkpoint, picks
    peaks at the stored threshold (unless overridden), and matches
    against the reference charts within +-50 ms.  The report holds one
    row per difficulty plus a pooled ``all`` row, each with micro F1,
    per-chart F1 and pooled match counts; difficulties with nothing to
    score in this part are omitted with a warning.  Rows are also
    written as CSV next to the JSON report.
    """
    run = Path(run_dir)
    run_doc = json.loads((run / "manifest.json").read_text())
    if run_doc.get("schema") != RUN_SCHEMA:
        raise ChartError(f"{run}: not a {RUN_SCHEMA} directory")
    split = _split_from_dict(run_doc["split"])
    if part not in ("train", "val", "test"):
        raise ChartError(f"unknown split part {part!r}")
    manifest = load_manifest(manifest_path or run_doc["dataset_manifest"])
    if manifest.digest != run_doc["dataset_digest"]:
        raise ChartError("dataset digest changed since training; refusing to evaluate")
    model, extra = load_checkpoint(run / run_doc["best"]["checkpoint"])
    if threshold is None:
        threshold = float(run_doc["best"]["threshold"])
    use_guide = bool(run_doc["train_config"].get("use_beat_guide", True))
    dataset = manifest.root.name

    store = FeatureStore(store_dir) if store_dir else None
    examples = [
        ex
        for ex in load_examples(manifest, store)
        if split.assignment.get(ex.song_id) == part
    ]
    if not examples:
        raise ChartError(f"no songs in split part {part!r}")

    per_chart = []
    by_difficulty: dict[Difficulty, list] = {}
    for ex in examples:
        guide = ex.guide
        if not use_guide:
            guide = BeatGuide(np.zeros(len(ex.guide), dtype=np.uint8), ex.guide.frame_ms)
        series = predict_series(model, ex.mel, guide, ex.difficulty)
        match = match_notes(pick_peaks(series, threshold), ex.note_times)
        by_difficulty.setdefault(ex.difficulty, []).append(match)
        per_chart.append(
            {
                "song_id": ex.song_id,
                "difficulty": ex.difficulty.name.capitalize(),
                "tp": match.true_positives,
                "fp": match.false_positives,
                "fn": match.false_negatives,
                "f1": match.f1,
            }
        )

    ladder = sorted(
        {c.difficulty for s in manifest.songs for c in s.charts},
        key=lambda d: d.value,
    )
    rows = []
    warnings = []
    for diff in ladder:
        row = _metric_row(dataset, diff.name.capitalize(), by_difficulty.get(diff, []))
        if row is None:
            warnings.append(
                f"no scoreable {diff.name.capitalize()} charts in part {part!r};"
                " row omitted"
            )
        else:
            rows.append(row)
    pooled = [m for group in by_difficulty.values() for m in group]
    all_row = _metric_row(dataset, "all", pooled)
    if all_row is not None:
        rows.append(all_row)

    report = {
        "part": part,
        "threshold": threshold,
        "rows": rows,
        "warnings": warnings,
        "charts": per_chart,
    }
    out_path = Path(out_path) if out_path else run / "reports" / f"{part}.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["dataset", "difficulty", "f1_micro", "f1_per_chart", "tp", "fp", "fn"]
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    out_path.with_suffix(".json").write_text(json.dumps(report, indent=2) + "\n")
    return report


def _padded_bits(a: BitChart, b: BitChart, slots_per_beat: int) -> tuple[BitChart, BitChart]:
    """Zero-pad the shorter of two bit charts so lengths agree."""
    n = max(len(a), len(b))
    if len(a) == len(b):
        return a, b
    a_bits = np.zeros(n, dtype=np.uint8)
    b_bits = np.zeros(n, dtype=np.uint8)
    a_bits[: len(a)] = a.bits
    b_bits[: len(b)] = b.bits
    return (
        BitChart(bits=a_bits, slots_per_beat=slots_per_beat),
        BitChart(bits=b_bits, slots_per_beat=slots_per_beat),
    )


def cmd_analyze(
    manifest_path: str | Path,
    out_dir: str | Path | None = None,
    slots_per_beat: int = 2,
) -> dict:
    """Describe a dataset: difficulty inclusion matrix and note rhythms.

    For every song with charts at difficulties A and B, the notes of
    both are quantized onto a shared beat grid and the fraction of A's
    slots also present in B is computed; the matrix entry (A, B)
    averages that fraction over all songs carrying both difficulties.
    The diagonal is 1 by construction.  Note-timing histograms pool all
    charts of a difficulty, weighted by note count.  Both tables are
    written as CSV with difficulty labels, plus a JSON report.
    """
    manifest = load_manifest(manifest_path)
    ladder = sorted(
        {c.difficulty for s in manifest.songs for c in s.charts},
        key=lambda d: d.value,
    )
    sums: dict[tuple[Difficulty, Difficulty], float] = {}
    counts: dict[tuple[Difficulty, Difficulty], int] = {}
    hist_weight: dict[Difficulty, dict[str, float]] = {}
    hist_notes: dict[Difficulty, int] = {}
    for song in manifest.songs:
        bitcharts = {}
        for entry in song.charts:
            chart = parse_canonical((manifest.root / entry.path).read_text())
            bitcharts[entry.difficulty] = chart_to_bitchart(chart, slots_per_beat)
            if chart.notes:
                acc = hist_weight.setdefault(
                    entry.difficulty, {name: 0.0 for name in HISTOGRAM_CLASSES}
                )
                for name, frac in note_timing_histogram(chart).items():
                    acc[name] += frac * len(chart.notes)
                hist_notes[entry.difficulty] = hist_notes.get(
                    entry.difficulty, 0
                ) + len(chart.notes)
        for a in bitcharts:
            for b in bitcharts:
                if bitcharts[a].note_count == 0:
                    continue
                sub, sup = _padded_bits(bitcharts[a], bitcharts[b], slots_per_beat)
                key = (a, b)
                sums[key] = sums.get(key, 0.0) + inclusion_rate(sub, sup)
                counts[key] = counts.get(key, 0) + 1

    labels = [d.name.capitalize() for d in ladder]
    matrix = [
        [
            (sums[(a, b)] / counts[(a, b)]) if (a, b) in counts else None
            for b in ladder
        ]
        for a in ladder
    ]
    histograms = {
        d.name.capitalize(): {
            name: hist_weight[d][name] / hist_notes[d] for name in HISTOGRAM_CLASSES
        }
        for d in ladder
        if hist_notes.get(d)
    }

    out_dir = Path(out_dir) if out_dir else manifest.root / "analysis"
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "inclusion.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["difficulty"] + labels)
        for label, row in zip(labels, matrix):
            writer.writerow([label] + ["" if v is None else f"{v:.6f}" for v in row])
    with open(out_dir / "histograms.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["difficulty"] + list(HISTOGRAM_CLASSES))
        for label, hist in histograms.items():
            writer.writerow([label] + [f"{hist[name]:.6f}" for name in HISTOGRAM_CLASSES])
    report = {
        "slots_per_beat": slots_per_beat,
        "difficulties": labels,
        "inclusion_matrix": matrix,
        "pair_song_counts": {
            f"{a.name.capitalize()}->{b.name.capitalize()}": counts[(a, b)]
            for (a, b) in sorted(counts, key=lambda p: (p[0].value, p[1].value))
        },
        "timing_histograms": histograms,
        "inclusion_csv": str(out_dir / "inclusion.csv"),
        "histograms_csv": str(out_dir / "histograms.csv"),
    }
    (out_dir / "analysis.json").write_text(json.dumps(report, indent=2) + "\n")
    return report
