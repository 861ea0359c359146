"""Synthetic click-track corpora for tests, demos and sanity runs.

A synthetic song is a constant-BPM click track: short sine bursts on
beats, silence elsewhere.  Charts are derived from the same beat grid,
so the ground truth is exact by construction:

* the Expert chart puts a note on every beat,
* the Beginner chart only on downbeats (a strict subset),
* optionally only a random fraction of beats is audible while every beat
  keeps its note, which makes the beat guide carry information the audio
  does not; that is the corpus for guide ablation experiments.

Everything is deterministic given the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from chartgen.audio import SAMPLE_RATE, compute_mel_spectrogram
from chartgen.charts import (
    ChartDocument,
    Difficulty,
    TempoSchedule,
    serialize_canonical,
)
from chartgen.model import ModelConfig, multi_scale_spec
from chartgen.training import SongExample


@dataclass(frozen=True)
class SyntheticSong:
    """Audio plus its charts; one entry of a synthetic corpus."""

    song_id: str
    samples: np.ndarray
    sample_rate: int
    charts: tuple[ChartDocument, ...]


def click_waveform(
    duration: float,
    click_times: np.ndarray | list[float],
    sample_rate: int = SAMPLE_RATE,
    click_hz: float = 1500.0,
    click_ms: float = 20.0,
    amplitude: float = 0.8,
) -> np.ndarray:
    """Silence with a Hann-windowed sine burst at each click time."""
    n = int(round(duration * sample_rate))
    x = np.zeros(n)
    burst_len = max(1, int(round(click_ms / 1000.0 * sample_rate)))
    tau = np.arange(burst_len) / sample_rate
    burst = amplitude * np.sin(2 * math.pi * click_hz * tau) * np.hanning(burst_len)
    for t in click_times:
        lo = int(round(t * sample_rate))
        hi = min(n, lo + burst_len)
        if 0 <= lo < n:
            x[lo:hi] += burst[: hi - lo]
    return np.clip(x, -1.0, 1.0)


def make_click_song(
    song_id: str,
    bpm: float,
    duration: float,
    difficulties: tuple[Difficulty, ...] = (Difficulty.BEGINNER, Difficulty.EXPERT),
    audible_fraction: float = 1.0,
    rng: np.random.Generator | None = None,
    sample_rate: int = SAMPLE_RATE,
) -> SyntheticSong:
    """One constant-BPM click song with nested difficulty charts.

    Notes sit on beats (Expert: every beat, Beginner: downbeats only,
    other difficulties: every beat).  With ``audible_fraction < 1`` a
    random subset of beats is silent in the audio but keeps its notes.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    tempo = TempoSchedule(segments=((0.0, bpm),))
    period = 60.0 / bpm
    margin = min(0.25, period / 2)
    beat_times = []
    k = 0
    while k * period <= duration - margin:
        beat_times.append(k * period)
        k += 1
    beat_times = np.asarray(beat_times)
    downbeats = beat_times[::4]

    charts = []
    for diff in difficulties:
        notes = downbeats if diff is Difficulty.BEGINNER else beat_times
        charts.append(
            ChartDocument(
                song_id=song_id,
                difficulty=diff,
                tempo=tempo,
                notes=tuple(notes),
                audio_duration=duration,
                source="synthetic",
            )
        )

    if audible_fraction >= 1.0:
        audible = beat_times
    else:
        keep = max(1, int(round(audible_fraction * len(beat_times))))
        idx = np.sort(rng.choice(len(beat_times), size=keep, replace=False))
        audible = beat_times[idx]
    samples = click_waveform(duration, audible, sample_rate=sample_rate)
    return SyntheticSong(
        song_id=song_id,
        samples=samples,
        sample_rate=sample_rate,
        charts=tuple(charts),
    )


def make_click_corpus(
    num_songs: int,
    duration: float = 8.0,
    bpm_range: tuple[float, float] = (90.0, 150.0),
    difficulties: tuple[Difficulty, ...] = (Difficulty.BEGINNER, Difficulty.EXPERT),
    audible_fraction: float = 1.0,
    seed: int = 0,
) -> list[SyntheticSong]:
    """Corpus of click songs with per-song random BPM (tempo jitter)."""
    rng = np.random.default_rng(seed)
    songs = []
    for i in range(num_songs):
        bpm = float(rng.uniform(*bpm_range))
        songs.append(
            make_click_song(
                song_id=f"click{i:03d}",
                bpm=round(bpm, 2),
                duration=duration,
                difficulties=difficulties,
                audible_fraction=audible_fraction,
                rng=rng,
            )
        )
    return songs


def corpus_examples(corpus: list[SyntheticSong]) -> list[SongExample]:
    """Preprocess a synthetic corpus into training examples."""
    examples = []
    for song in corpus:
        mel = compute_mel_spectrogram(song.samples, song.sample_rate)
        for chart in song.charts:
            examples.append(SongExample.from_chart(chart, mel))
    return examples


def write_corpus(corpus: list[SyntheticSong], root: str | Path) -> Path:
    """Write a corpus as WAV files plus canonical chart JSON.

    Layout: ``root/songs/<song_id>/audio.wav`` and one
    ``<Difficulty>.chart.json`` per chart, ready for the ingest command.

    Returns:
        The ``songs`` directory path.
    """
    from scipy.io import wavfile

    root = Path(root)
    songs_dir = root / "songs"
    for song in corpus:
        d = songs_dir / song.song_id
        d.mkdir(parents=True, exist_ok=True)
        pcm = np.clip(song.samples * 32767.0, -32768, 32767).astype(np.int16)
        wavfile.write(str(d / "audio.wav"), song.sample_rate, pcm)
        for chart in song.charts:
            name = f"{chart.difficulty.name.capitalize()}.chart.json"
            (d / name).write_text(serialize_canonical(chart))
    return songs_dir


def toy_model_config(
    upsample_factors: tuple[int, ...] = (1, 8), base_channels: int = 4
) -> ModelConfig:
    """A small but structurally faithful model for desk-scale runs."""
    return ModelConfig(
        stacks=multi_scale_spec(upsample_factors, base_channels=base_channels),
        recurrent_width=32,
        recurrent_layers=1,
        dropout_linear=0.1,
        dropout_recurrent=0.0,
    )
