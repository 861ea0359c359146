"""Rhythm-game chart generation toolkit.

The package turns (audio, chart) pairs into training data for an onset
detection model, trains a multi-scale convolutional + BiLSTM network whose
temporal receptive fields span 32 ms to 4096 ms, and evaluates generated
charts against human-authored ones.

Subpackage map:

* :mod:`chartgen.charts`   simfile parsing, canonical chart JSON, onset labels
* :mod:`chartgen.audio`    Mel-spectrogram features (32 ms frames, 229 bands)
* :mod:`chartgen.beats`    beat/downbeat guide channel and beat masking
* :mod:`chartgen.augment`  spectrogram augmentation for training
* :mod:`chartgen.model`    the onset network and its single-scale baseline
* :mod:`chartgen.training` loss, LR schedule, splits, training loop, grid search
* :mod:`chartgen.metrics`  peak picking, note matching, F1, chart comparison
* :mod:`chartgen.pipeline` dataset manifest, feature store, run directories
* :mod:`chartgen.synth`    synthetic click-track corpora for tests and demos
"""

from chartgen.charts import (
    ChartDocument,
    ChartError,
    Difficulty,
    OnsetLabels,
    TempoSchedule,
    apply_fuzzy_labels,
    parse_canonical,
    parse_stepmania,
    rasterize_labels,
    serialize_canonical,
)
from chartgen.audio import MelSpectrogram, compute_mel_spectrogram, mel_filterbank
from chartgen.beats import BeatGuide, apply_beat_mask, compute_beat_guide
from chartgen.metrics import (
    BitChart,
    MatchResult,
    f1_micro,
    f1_per_chart,
    inclusion_rate,
    match_notes,
    pick_peaks,
)
from chartgen.model import ModelConfig, OnsetNet, PredictionSeries, receptive_scale

__all__ = [
    "ChartDocument",
    "ChartError",
    "Difficulty",
    "OnsetLabels",
    "TempoSchedule",
    "apply_fuzzy_labels",
    "parse_canonical",
    "parse_stepmania",
    "rasterize_labels",
    "serialize_canonical",
    "MelSpectrogram",
    "compute_mel_spectrogram",
    "mel_filterbank",
    "BeatGuide",
    "apply_beat_mask",
    "compute_beat_guide",
    "BitChart",
    "MatchResult",
    "f1_micro",
    "f1_per_chart",
    "inclusion_rate",
    "match_notes",
    "pick_peaks",
    "ModelConfig",
    "OnsetNet",
    "PredictionSeries",
    "receptive_scale",
]

__version__ = "0.1.0"
