#!/usr/bin/env python3
"""End-to-end pipeline on a synthetic dataset: ingest through generate.

Builds a 12-song click corpus on disk, then drives the same entry points
the CLI exposes: ingest, preprocess, analyze, train, evaluate, generate.
Takes around half a minute on a laptop CPU.
"""

import json
import tempfile
from pathlib import Path

from chartgen.pipeline import (
    cmd_analyze,
    cmd_evaluate,
    cmd_generate,
    cmd_ingest,
    cmd_preprocess,
    cmd_train,
)
from chartgen.synth import make_click_corpus, toy_model_config, write_corpus
from chartgen.training import TrainConfig

root = Path(tempfile.mkdtemp(prefix="chartgen_demo_"))
print("workspace:", root)

corpus = make_click_corpus(12, duration=8.0, seed=7)
write_corpus(corpus, root / "dataset")

manifest = root / "dataset" / "manifest.json"
out = cmd_ingest(root / "dataset", manifest)
print(f"ingest: {out['songs']} songs, {out['charts']} charts, digest {out['digest'][:12]}...")

out = cmd_preprocess(manifest, root / "features")
print(f"preprocess: {out['songs']} songs, {out['total_frames']} feature frames cached")

out = cmd_analyze(manifest, out_dir=root / "analysis")
print("difficulty ladder:", out["difficulties"])
for label, row in zip(out["difficulties"], out["inclusion_matrix"]):
    cells = "  ".join("  --" if v is None else f"{v:.2f}" for v in row)
    print(f"  {label:12s} {cells}")

config = TrainConfig(
    epochs=6,
    batch_size=2,
    chunk_seconds=8.0,
    learning_rate_start=2e-3,
    learning_rate_end=2e-3,
    eta_min=1e-5,
    bce_positive_weight=16.0,
    augmentation=None,
)
out = cmd_train(
    manifest,
    root / "run",
    model_config=toy_model_config(),
    train_config=config,
    seed=0,
    store_dir=root / "features",
)
print(f"train: val F1 {out['val_f1']:.4f} at threshold {out['threshold']:.2f}")

# Six epochs is enough for the dense Expert charts; the difficulty
# conditioning that separates Beginner needs a longer run.
out = cmd_evaluate(root / "run", part="test", store_dir=root / "features")
for row in out["rows"]:
    print(
        f"evaluate[{row['difficulty']:9s}] micro {row['f1_micro']:.4f} "
        f"per-chart {row['f1_per_chart']:.4f}"
    )

# Generate a chart for the first song, reusing its own chart as the
# tempo template, and show the first few predicted note times.
song_dir = root / "dataset" / "songs" / corpus[0].song_id
template = next(song_dir.glob("*.chart.json"))
out = cmd_generate(
    root / "run" / "checkpoints" / "best.pt",
    song_dir / "audio.wav",
    template,
    "Expert",
    root / "generated.chart.json",
)
chart = json.loads((root / "generated.chart.json").read_text())
times = [round(t, 3) for t in chart["notes_seconds"][:5]]
print(f"generate: {out['notes']} notes, first few: {times}")
