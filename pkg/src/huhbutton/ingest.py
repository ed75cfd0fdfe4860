"""Subtitle/transcript ingestion.

Parses SRT, WebVTT and CueFile JSON into a normalized, validated
:class:`Transcript`. All three parsers share the same construction pipeline,
so identical cue content parses to equal transcripts regardless of the
source format.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, replace

__all__ = [
    "TranscriptCue",
    "Transcript",
    "TranscriptError",
    "EmptyFile",
    "MissingHeader",
    "MalformedTimestamp",
    "NonMonotonicCues",
    "SchemaViolation",
    "parse_srt",
    "parse_vtt",
    "parse_cue_json",
    "normalize",
    "export_cue_json",
]


class TranscriptError(ValueError):
    """Base class for transcript parsing and validation failures."""


class EmptyFile(TranscriptError):
    """The input contained no cues at all."""


class MissingHeader(TranscriptError):
    """A WebVTT input did not start with the WEBVTT signature."""


class MalformedTimestamp(TranscriptError):
    """A cue timing line could not be parsed."""


class NonMonotonicCues(TranscriptError):
    """Cue times go backwards: a cue starts before its predecessor, or ends
    at or before its own start."""


class SchemaViolation(TranscriptError):
    """A CueFile JSON document does not match the documented schema."""


@dataclass(frozen=True)
class TranscriptCue:
    """One caption cue. Times are milliseconds from video start."""

    index: int
    start_ms: int
    end_ms: int
    text: str


@dataclass(frozen=True)
class Transcript:
    """An ordered, non-overlapping sequence of cues for one video."""

    video_id: str
    language: str
    duration_ms: int
    cues: tuple[TranscriptCue, ...]


_TAG_RE = re.compile(r"<[^>]*>")
_WS_RE = re.compile(r"\s+")
# SRT uses a comma before the milliseconds; a period is tolerated because
# it is a common in-the-wild deviation.
_SRT_TIME_RE = re.compile(r"^(\d{1,2}):(\d{2}):(\d{2})[,.](\d{1,3})$")
# WebVTT allows the hours field to be omitted.
_VTT_TIME_RE = re.compile(r"^(?:(\d{1,2}):)?(\d{2}):(\d{2})[.,](\d{1,3})$")
_ARROW = "-->"
# Zero-width characters removed outright during normalization.
_ZERO_WIDTH = dict.fromkeys(map(ord, "​‌‍⁠﻿"))


def _decode(data: bytes) -> str:
    text = data.decode("utf-8")
    if text.startswith("﻿"):
        text = text[1:]
    return text


def _clean_cue_text(raw: str) -> str:
    """Strip markup tags and collapse whitespace to single spaces."""
    return _WS_RE.sub(" ", _TAG_RE.sub("", raw)).strip()


def _parse_time(field: str, pattern: re.Pattern[str]) -> int:
    m = pattern.match(field.strip())
    if m is None:
        raise MalformedTimestamp(f"bad timestamp field: {field!r}")
    h, mi, s, ms = m.groups()
    return (
        int(h or 0) * 3_600_000
        + int(mi) * 60_000
        + int(s) * 1000
        + int(ms.ljust(3, "0"))
    )


def _split_time_line(line: str, pattern: re.Pattern[str]) -> tuple[int, int]:
    if _ARROW not in line:
        raise MalformedTimestamp(f"missing '{_ARROW}' in timing line: {line!r}")
    left, right = line.split(_ARROW, 1)
    # WebVTT cue settings ("align:start" etc.) follow the end timestamp.
    right = right.strip().split(" ", 1)[0] if right.strip() else right
    return _parse_time(left, pattern), _parse_time(right, pattern)


def _build_transcript(
    raw_cues: list[tuple[int, int, str]],
    video_id: str,
    language: str,
    duration_ms: int | None,
    overlap_tolerance_ms: int,
) -> Transcript:
    """Validate ordering, repair overlaps, and assemble a Transcript.

    Overlaps larger than the tolerance are clipped at the midpoint of the
    overlapping region; a cue starting before its predecessor is an error.
    """
    timed = [[start, end, text] for start, end, text in raw_cues if text]
    if not timed:
        raise EmptyFile("no cues found")
    for start, end, _ in timed:
        if end <= start:
            raise NonMonotonicCues(f"cue ends at or before its start: {start}..{end}")
    for prev, cur in zip(timed, timed[1:]):
        if cur[0] < prev[0]:
            raise NonMonotonicCues(
                f"cue starting at {cur[0]} ms follows cue starting at {prev[0]} ms"
            )
        overlap = prev[1] - cur[0]
        if overlap > overlap_tolerance_ms:
            mid = (cur[0] + prev[1]) // 2
            prev[1] = mid
            cur[0] = mid
            if prev[1] <= prev[0] or cur[1] <= cur[0]:
                raise NonMonotonicCues(
                    f"overlap repair collapsed a cue near {mid} ms"
                )
    cues = tuple(
        TranscriptCue(index=i, start_ms=start, end_ms=end, text=text)
        for i, (start, end, text) in enumerate(timed)
    )
    last_end = cues[-1].end_ms
    if duration_ms is None:
        duration_ms = last_end
    return Transcript(
        video_id=video_id,
        language=language,
        duration_ms=duration_ms,
        cues=cues,
    )


def parse_srt(
    data: bytes,
    *,
    video_id: str = "",
    language: str = "und",
    overlap_tolerance_ms: int = 0,
) -> Transcript:
    """Parse a SubRip file.

    Blocks are separated by blank lines; the numeric counter line is
    optional and ignored (cues are re-indexed from zero). Multi-line cue
    text is joined with single spaces and markup tags are stripped.
    """
    text = _decode(data)
    if not text.strip():
        raise EmptyFile("empty SRT input")
    raw_cues: list[tuple[int, int, str]] = []
    for block in re.split(r"\n\s*\n", text.replace("\r\n", "\n").replace("\r", "\n")):
        lines = [line for line in block.split("\n") if line.strip()]
        if not lines:
            continue
        if _ARROW not in lines[0] and lines[0].strip().isdigit():
            lines = lines[1:]
        if not lines:
            continue
        start, end = _split_time_line(lines[0], _SRT_TIME_RE)
        body = _clean_cue_text(" ".join(lines[1:]))
        raw_cues.append((start, end, body))
    return _build_transcript(raw_cues, video_id, language, None, overlap_tolerance_ms)


def parse_vtt(
    data: bytes,
    *,
    video_id: str = "",
    language: str = "und",
    overlap_tolerance_ms: int = 0,
) -> Transcript:
    """Parse a WebVTT file.

    Cue identifiers, cue settings, NOTE/STYLE/REGION blocks and voice tags
    are tolerated and discarded. Timestamps may omit the hours field.
    """
    text = _decode(data)
    if not text.strip():
        raise EmptyFile("empty WebVTT input")
    if not text.startswith("WEBVTT"):
        raise MissingHeader("WebVTT input must start with 'WEBVTT'")
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    raw_cues: list[tuple[int, int, str]] = []
    i = 1  # skip the header line (may carry a trailing description)
    while i < len(lines):
        line = lines[i].strip()
        if not line:
            i += 1
            continue
        if line.startswith(("NOTE", "STYLE", "REGION")):
            while i < len(lines) and lines[i].strip():
                i += 1
            continue
        if _ARROW not in line:
            # cue identifier line; the timing line must follow
            i += 1
            if i >= len(lines) or _ARROW not in lines[i]:
                raise MalformedTimestamp(
                    f"expected timing line after cue identifier {line!r}"
                )
            line = lines[i].strip()
        start, end = _split_time_line(line, _VTT_TIME_RE)
        i += 1
        body_lines: list[str] = []
        while i < len(lines) and lines[i].strip():
            body_lines.append(lines[i])
            i += 1
        body = _clean_cue_text(" ".join(body_lines))
        raw_cues.append((start, end, body))
    return _build_transcript(raw_cues, video_id, language, None, overlap_tolerance_ms)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise SchemaViolation(message)


def _int_field(obj: dict, key: str, where: str) -> int:
    value = obj.get(key)
    _require(isinstance(value, int) and not isinstance(value, bool),
             f"{where}: {key!r} must be an integer")
    _require(value >= 0, f"{where}: {key!r} must be non-negative")
    return value


def parse_cue_json(data: bytes, *, overlap_tolerance_ms: int = 0) -> Transcript:
    """Parse a CueFile JSON document.

    Schema: ``{"video_id": str, "language": str, "duration_ms": int?,
    "cues": [{"start_ms": int, "end_ms": int, "text": str}, ...]}``.
    """
    try:
        doc = json.loads(_decode(data))
    except json.JSONDecodeError as err:
        raise SchemaViolation(f"not valid JSON: {err}") from err
    _require(isinstance(doc, dict), "top level must be an object")
    _require(isinstance(doc.get("video_id"), str), "'video_id' must be a string")
    _require(isinstance(doc.get("language"), str), "'language' must be a string")
    _require(isinstance(doc.get("cues"), list), "'cues' must be an array")
    duration_ms: int | None = None
    if doc.get("duration_ms") is not None:
        duration_ms = _int_field(doc, "duration_ms", "top level")
    raw_cues: list[tuple[int, int, str]] = []
    for pos, cue in enumerate(doc["cues"]):
        where = f"cues[{pos}]"
        _require(isinstance(cue, dict), f"{where}: must be an object")
        start = _int_field(cue, "start_ms", where)
        end = _int_field(cue, "end_ms", where)
        _require(end > start, f"{where}: end_ms must be greater than start_ms")
        _require(isinstance(cue.get("text"), str), f"{where}: 'text' must be a string")
        raw_cues.append((start, end, _clean_cue_text(cue["text"])))
    transcript = _build_transcript(
        raw_cues, doc["video_id"], doc["language"], duration_ms, overlap_tolerance_ms
    )
    if duration_ms is not None and duration_ms < transcript.cues[-1].end_ms:
        raise SchemaViolation("duration_ms is smaller than the last cue end")
    return transcript


def normalize(transcript: Transcript) -> Transcript:
    """Scrub cue text: drop zero-width and control characters, collapse
    whitespace, remove cues left empty, and re-assign indices."""
    kept: list[TranscriptCue] = []
    for cue in transcript.cues:
        text = cue.text.translate(_ZERO_WIDTH)
        text = "".join(
            " " if unicodedata.category(ch) == "Cc" else ch for ch in text
        )
        text = _WS_RE.sub(" ", text).strip()
        if text:
            kept.append(replace(cue, index=len(kept), text=text))
    return replace(transcript, cues=tuple(kept))


def export_cue_json(transcript: Transcript) -> bytes:
    """Serialize a Transcript as CueFile JSON (UTF-8)."""
    doc = {
        "video_id": transcript.video_id,
        "language": transcript.language,
        "duration_ms": transcript.duration_ms,
        "cues": [
            {"start_ms": cue.start_ms, "end_ms": cue.end_ms, "text": cue.text}
            for cue in transcript.cues
        ],
    }
    return (json.dumps(doc, ensure_ascii=False, indent=2) + "\n").encode("utf-8")
