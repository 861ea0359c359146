"""Chart documents, tempo timing, and onset label vectors.

Two chart formats are understood:

* Stepmania ``.sm`` simfiles.  Only the tags that affect note timing are
  read (``#TITLE``, ``#BPMS``, ``#STOPS``, ``#OFFSET``, ``#NOTES``).  A
  ``#NOTES`` block holds measures separated by commas; each measure spans
  four quarter-note beats regardless of time signature, subdivided evenly
  by its row count.  Any non-``0`` character in a row is a note, and
  simultaneous panels in one row collapse to a single onset.
* A canonical JSON format (one chart per file) used everywhere else in the
  pipeline; see :func:`serialize_canonical`.

Timing follows the simfile convention: BPM is quarter notes per minute,
``#BPMS`` entries take effect at their beat, and each ``#STOPS`` entry
freezes the clock for its duration at its beat (beats strictly after a
stop happen later by the stop's duration).  ``#OFFSET`` is subtracted
from every beat time, so positive offsets shift notes earlier.
"""

from __future__ import annotations

import bisect
import enum
import json
import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable

import numpy as np

FRAME_MS = 32.0
BEATS_PER_MEASURE = 4.0

_TAG_RE = re.compile(r"#([A-Za-z0-9_]+):", re.S)
_COMMENT_RE = re.compile(r"//[^\n]*")


class ChartError(ValueError):
    """Raised for malformed chart input or invariant violations."""


class ParseError(ChartError):
    """Raised when chart text cannot be parsed; carries a line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class Difficulty(enum.Enum):
    """Play-mode ladder with the numeric flags fed to the model."""

    BEGINNER = 10
    INTERMEDIATE = 20
    ADVANCED = 30
    EXPERT = 40
    CHALLENGE = 50

    @property
    def flag(self) -> int:
        return self.value

    @classmethod
    def from_name(cls, name: str) -> "Difficulty":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ChartError(f"unknown difficulty name: {name!r}") from None


# Simfile difficulty slots mapped onto the ladder above.  "Easy", "Medium"
# and "Hard" are the legacy names for the middle three slots.
_SM_DIFFICULTY = {
    "beginner": Difficulty.BEGINNER,
    "easy": Difficulty.INTERMEDIATE,
    "basic": Difficulty.INTERMEDIATE,
    "medium": Difficulty.ADVANCED,
    "another": Difficulty.ADVANCED,
    "hard": Difficulty.EXPERT,
    "maniac": Difficulty.EXPERT,
    "challenge": Difficulty.CHALLENGE,
}


@dataclass(frozen=True)
class TempoSchedule:
    """Piecewise-constant tempo map with optional stops.

    Attributes:
        segments: ``(start_beat, bpm)`` pairs, first at beat 0, strictly
            increasing in beat, every BPM positive.
        stops: ``(beat, duration_seconds)`` pauses, sorted by beat.
        time_signature: ``(numerator, denominator)`` used for downbeat
            bookkeeping; it never affects beat-to-time conversion.
    """

    segments: tuple[tuple[float, float], ...]
    stops: tuple[tuple[float, float], ...] = ()
    time_signature: tuple[int, int] = (4, 4)

    def __post_init__(self):
        if not self.segments:
            raise ChartError("tempo schedule needs at least one BPM segment")
        if self.segments[0][0] != 0.0:
            raise ChartError(
                f"first BPM segment must start at beat 0, got {self.segments[0][0]}"
            )
        prev = -math.inf
        for start, bpm in self.segments:
            if start <= prev:
                raise ChartError("BPM segment beats must be strictly increasing")
            if bpm <= 0:
                raise ChartError(f"BPM must be positive, got {bpm}")
            prev = start
        prev = -math.inf
        for beat, dur in self.stops:
            if beat < prev:
                raise ChartError("stop beats must be sorted")
            if beat < 0 or dur < 0:
                raise ChartError("stop beats and durations must be non-negative")
            prev = beat
        num, den = self.time_signature
        if num < 1 or den < 1:
            raise ChartError(f"invalid time signature {self.time_signature}")

    def beat_to_time(self, beat: float) -> float:
        """Seconds from beat 0 to ``beat``, including earlier stops.

        A stop at beat b delays beats strictly greater than b, so the
        returned time for beat b itself is the instant the stop begins.
        """
        if beat < 0:
            raise ChartError(f"beat must be non-negative, got {beat}")
        t = 0.0
        for i, (start, bpm) in enumerate(self.segments):
            end = self.segments[i + 1][0] if i + 1 < len(self.segments) else math.inf
            if beat <= start:
                break
            span = min(beat, end) - start
            t += span * 60.0 / bpm
        for stop_beat, dur in self.stops:
            if stop_beat < beat:
                t += dur
        return t

    @cached_property
    def _pieces(self) -> list[tuple[float, float, float, float]]:
        # (time_start, time_end, beat_at_start, seconds_per_beat); a stop is
        # a piece with zero slope encoded as spb=0.  Built once and reused by
        # time_to_beat.  cached_property writes via __dict__, which is fine
        # on a frozen dataclass.
        events: list[tuple[float, int, float]] = []
        for start, bpm in self.segments[1:]:
            events.append((start, 0, bpm))
        for beat, dur in self.stops:
            events.append((beat, 1, dur))
        events.sort(key=lambda e: (e[0], e[1]))

        pieces: list[tuple[float, float, float, float]] = []
        cur_beat = 0.0
        cur_time = 0.0
        spb = 60.0 / self.segments[0][1]
        for beat, kind, value in events:
            if beat > cur_beat:
                dt = (beat - cur_beat) * spb
                pieces.append((cur_time, cur_time + dt, cur_beat, spb))
                cur_time += dt
                cur_beat = beat
            if kind == 0:
                spb = 60.0 / value
            else:
                pieces.append((cur_time, cur_time + value, cur_beat, 0.0))
                cur_time += value
        pieces.append((cur_time, math.inf, cur_beat, spb))
        return pieces

    def time_to_beat(self, time: float) -> float:
        """Inverse of :meth:`beat_to_time`; times inside a stop map to the
        stop's beat, and negative times extrapolate the first segment."""
        pieces = self._pieces
        if time < 0:
            t0, _, b0, spb = pieces[0]
            spb = spb or 60.0 / self.segments[0][1]
            return b0 + (time - t0) / spb
        starts = [p[0] for p in pieces]
        i = bisect.bisect_right(starts, time) - 1
        t0, t1, b0, spb = pieces[max(i, 0)]
        if spb == 0.0:
            return b0
        return b0 + (time - t0) / spb

    def bpm_at(self, beat: float) -> float:
        """BPM in effect at ``beat``."""
        bpm = self.segments[0][1]
        for start, value in self.segments:
            if start <= beat:
                bpm = value
        return bpm


@dataclass(frozen=True)
class ChartDocument:
    """One difficulty's chart for one song, with absolute note times.

    ``notes`` are strictly increasing seconds from audio start, all within
    ``[0, audio_duration]``.  ``beat_zero`` is the audio time of beat 0,
    so time and beat coordinates convert via
    ``time = tempo.beat_to_time(beat) + beat_zero``; simfile offsets land
    here with their sign flipped.
    """

    song_id: str
    difficulty: Difficulty
    tempo: TempoSchedule
    notes: tuple[float, ...]
    audio_duration: float
    beat_zero: float = 0.0
    source: str = "memory"

    def __post_init__(self):
        if self.audio_duration < 0:
            raise ChartError(f"audio_duration must be non-negative, got {self.audio_duration}")
        prev = -math.inf
        for t in self.notes:
            if t <= prev:
                raise ChartError(f"note times must be strictly increasing (at {t})")
            prev = t
        if self.notes:
            if self.notes[0] < 0:
                raise ChartError(f"note at {self.notes[0]:.4f}s precedes audio start")
            if self.notes[-1] > self.audio_duration:
                raise ChartError(
                    f"note at {self.notes[-1]:.4f}s exceeds audio duration "
                    f"{self.audio_duration:.4f}s"
                )

    def with_audio_duration(self, duration: float) -> "ChartDocument":
        """Copy with the true audio duration (e.g. after decoding)."""
        return replace(self, audio_duration=duration)


@dataclass(frozen=True)
class OnsetLabels:
    """Per-frame onset targets on the 32 ms grid; values in [0, 1]."""

    values: np.ndarray
    frame_ms: float = FRAME_MS

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ChartError("label vector must be one-dimensional")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ChartError("labels must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)


def _strip_comments(text: str) -> str:
    return _COMMENT_RE.sub("", text)


def _tag_values(text: str) -> list[tuple[str, str, int]]:
    """All ``#TAG:value;`` occurrences as (tag, value, line_number)."""
    out = []
    for m in _TAG_RE.finditer(text):
        tag = m.group(1).upper()
        end = text.find(";", m.end())
        if end < 0:
            end = len(text)
        value = text[m.end():end]
        line = text.count("\n", 0, m.start()) + 1
        out.append((tag, value, line))
    return out


def _parse_beat_value_list(raw: str, what: str, line: int) -> list[tuple[float, float]]:
    pairs = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise ParseError(f"malformed {what} entry {item!r}", line)
        beat_s, value_s = item.split("=", 1)
        try:
            pairs.append((float(beat_s), float(value_s)))
        except ValueError:
            raise ParseError(f"non-numeric {what} entry {item!r}", line) from None
    pairs.sort(key=lambda p: p[0])
    return pairs


def parse_stepmania(text: str, song_id: str | None = None) -> list[ChartDocument]:
    """Parse a ``.sm`` simfile into one chart per recognized #NOTES block.

    Args:
        text: Full simfile contents.
        song_id: Overrides the ``#TITLE`` tag when given.

    Returns:
        Charts in file order.  Blocks whose difficulty slot is not part of
        the five-step ladder (e.g. ``Edit``) are skipped.

    Raises:
        ParseError: On malformed tags or note rows, with a line number.
        ChartError: When timing data violates basic invariants (no BPM at
            beat 0, non-positive BPM, notes before audio start).
    """
    text = _strip_comments(text)
    tags = _tag_values(text)

    title = song_id or "untitled"
    offset = 0.0
    bpms: list[tuple[float, float]] = []
    stops: list[tuple[float, float]] = []
    note_blocks: list[tuple[str, int]] = []

    for tag, value, line in tags:
        if tag == "TITLE" and song_id is None:
            title = value.strip() or title
        elif tag == "OFFSET":
            try:
                offset = float(value.strip() or 0.0)
            except ValueError:
                raise ParseError(f"non-numeric #OFFSET {value.strip()!r}", line) from None
        elif tag == "BPMS":
            bpms = _parse_beat_value_list(value, "#BPMS", line)
        elif tag == "STOPS":
            stops = _parse_beat_value_list(value, "#STOPS", line)
        elif tag == "NOTES":
            note_blocks.append((value, line))

    if not bpms:
        raise ParseError("simfile has no #BPMS tag")
    if bpms[0][0] != 0.0:
        raise ChartError(f"first BPM entry must sit at beat 0, got beat {bpms[0][0]}")
    tempo = TempoSchedule(segments=tuple(bpms), stops=tuple(stops))

    charts = []
    for value, line in note_blocks:
        fields = value.split(":")
        if len(fields) < 6:
            raise ParseError("#NOTES block needs 6 colon-separated fields", line)
        slot = fields[2].strip().lower()
        difficulty = _SM_DIFFICULTY.get(slot)
        if difficulty is None:
            continue
        body = ":".join(fields[5:])
        beats = _note_beats(body, line)
        times = sorted({tempo.beat_to_time(b) - offset for b in beats})
        measure_count = body.count(",") + 1 if body.strip() else 0
        end_time = tempo.beat_to_time(measure_count * BEATS_PER_MEASURE) - offset
        duration = max([end_time, 0.0] + ([times[-1]] if times else []))
        charts.append(
            ChartDocument(
                song_id=title,
                difficulty=difficulty,
                tempo=tempo,
                notes=tuple(times),
                audio_duration=duration,
                beat_zero=-offset,
                source="stepmania-sm",
            )
        )
    return charts


def _note_beats(body: str, block_line: int) -> list[float]:
    """Beats of all onsets in a #NOTES body (panels collapsed per row)."""
    beats = []
    for measure_idx, measure in enumerate(body.split(",")):
        rows = [r.strip() for r in measure.splitlines()]
        rows = [r for r in rows if r]
        if not rows:
            continue
        for row_idx, row in enumerate(rows):
            if any(ch != "0" for ch in row):
                beat = (measure_idx + row_idx / len(rows)) * BEATS_PER_MEASURE
                beats.append(beat)
    return beats


_CANONICAL_DIFFICULTY = {d.name.capitalize(): d for d in Difficulty}


def parse_canonical(text: str) -> ChartDocument:
    """Parse the canonical JSON chart format (inverse of
    :func:`serialize_canonical`)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}", exc.lineno) from None
    try:
        difficulty = _CANONICAL_DIFFICULTY[doc["difficulty"]]
        tempo = TempoSchedule(
            segments=tuple((float(b), float(v)) for b, v in doc["bpm_segments"]),
            stops=tuple((float(b), float(v)) for b, v in doc.get("stops", [])),
            time_signature=tuple(doc.get("time_signature", (4, 4))),
        )
        return ChartDocument(
            song_id=doc["song_id"],
            difficulty=difficulty,
            tempo=tempo,
            notes=tuple(float(t) for t in doc["notes_seconds"]),
            audio_duration=float(doc["audio_duration_seconds"]),
            beat_zero=float(doc.get("beat_zero_seconds", 0.0)),
            source="canonical-json",
        )
    except KeyError as exc:
        raise ParseError(f"canonical chart missing key {exc.args[0]!r}") from None


def serialize_canonical(chart: ChartDocument) -> str:
    """Serialize to canonical JSON.

    Floats survive a round trip exactly (json uses shortest-repr float
    encoding), so ``parse_canonical(serialize_canonical(c))`` equals ``c``
    up to the ``source`` field.
    """
    doc = {
        "song_id": chart.song_id,
        "difficulty": chart.difficulty.name.capitalize(),
        "bpm_segments": [[b, v] for b, v in chart.tempo.segments],
        "stops": [[b, v] for b, v in chart.tempo.stops],
        "time_signature": list(chart.tempo.time_signature),
        "beat_zero_seconds": chart.beat_zero,
        "notes_seconds": list(chart.notes),
        "audio_duration_seconds": chart.audio_duration,
    }
    return json.dumps(doc, indent=2) + "\n"


def rasterize_labels(
    chart: ChartDocument, num_frames: int, frame_ms: float = FRAME_MS
) -> OnsetLabels:
    """Binary onset targets on the frame grid.

    Each note lands on frame ``floor(t_ms / frame_ms + 0.5)`` (ties round
    up).  A note that rounds to ``num_frames`` but still lies within the
    covered span is clamped onto the last frame; notes beyond the covered
    span raise.  Colliding notes collapse, so the vector never has more
    ones than the chart has notes.
    """
    if num_frames < 0:
        raise ChartError(f"num_frames must be non-negative, got {num_frames}")
    span = num_frames * frame_ms / 1000.0
    values = np.zeros(num_frames, dtype=np.float64)
    for t in chart.notes:
        if t > span:
            raise ChartError(
                f"note at {t:.4f}s falls outside the {span:.4f}s label grid"
            )
        f = math.floor(t * 1000.0 / frame_ms + 0.5)
        values[min(f, num_frames - 1)] = 1.0
    return OnsetLabels(values=values, frame_ms=frame_ms)


def apply_fuzzy_labels(labels: OnsetLabels, width: int = 5, scale: float = 0.2) -> OnsetLabels:
    """Spread each exact onset into a triangular neighborhood.

    A frame at distance k (1 <= k < width) from an onset receives at least
    ``scale * (1 - k / width)``; overlaps keep the maximum, and exact
    onsets stay 1.0.  With ``width == 1`` the labels pass through
    unchanged.  Applying the transform twice is a no-op because every
    sidelobe is strictly below 1.0 and only frames equal to 1.0 seed
    neighborhoods.

    Args:
        labels: Rasterized onset labels.
        width: Neighborhood half-width in frames, at least 1.
        scale: Peak sidelobe height, in [0, 1].
    """
    if width < 1:
        raise ChartError(f"width must be >= 1, got {width}")
    if not 0.0 <= scale <= 1.0:
        raise ChartError(f"scale must lie in [0, 1], got {scale}")
    v = labels.values
    out = v.copy()
    n = len(v)
    onsets = np.flatnonzero(v == 1.0)
    for k in range(1, width):
        height = scale * (1.0 - k / width)
        for idx in (onsets - k, onsets + k):
            idx = idx[(idx >= 0) & (idx < n)]
            np.maximum.at(out, idx, height)
    return OnsetLabels(values=out, frame_ms=labels.frame_ms)
