"""Sentence segmentation and context windowing.

Takes a normalized transcript, restores punctuation (rule-based or via a
completion provider), splits the joined text into sentences whose start/end
times are interpolated from cue timings by proportional character offset,
and extracts the context window + target sentence(s) for a trigger time.
"""

from __future__ import annotations

import logging
import math
import re
from bisect import bisect_right
from dataclasses import dataclass, replace
from typing import Sequence

from .ingest import Transcript
from .prompts import TemplateSet, default_templates, render_prompt
from .provider import CompletionProvider, ProviderFailure, ProviderRequest

__all__ = [
    "Sentence",
    "ContextWindow",
    "NoTargetAvailable",
    "DEFAULT_ABBREVIATIONS",
    "DEFAULT_GAP_MS",
    "DEFAULT_MAX_CONTEXT_CHARS",
    "transcript_text",
    "restore_punctuation",
    "segment",
    "context_window",
]

logger = logging.getLogger(__name__)

# Trailing tokens that end with a period but do not end a sentence.
DEFAULT_ABBREVIATIONS = (
    "Dr.", "Mr.", "Mrs.", "Prof.", "z.B.", "bzw.", "etc.", "vs.", "Nr.",
)
DEFAULT_GAP_MS = 1200
DEFAULT_MAX_CONTEXT_CHARS = 12000

_TERMINAL_RUN_RE = re.compile(r"[.!?]+(?=\s|$)")
_TERMINAL_CHARS = (".", "!", "?")
# Capitalized mid-text, yet no evidence of a sentence start.
_ALWAYS_CAPITAL = {"I", "I'm", "I'd", "I'll", "I've"}


class NoTargetAvailable(LookupError):
    """No sentence has finished by the trigger time; nothing to explain."""


@dataclass(frozen=True)
class Sentence:
    """A terminal-punctuated unit of the joined transcript text.

    ``char_span`` is the half-open [start, end) range in the joined text;
    times come from proportional-offset interpolation within the owning
    cue(s).
    """

    index: int
    text: str
    start_ms: int
    end_ms: int
    char_span: tuple[int, int]


@dataclass(frozen=True)
class ContextWindow:
    """Transcript prefix ending at the target sentence(s) for one trigger."""

    context_text: str
    target_sentence_indices: tuple[int, ...]
    trigger_ms: int
    level: int


def transcript_text(transcript: Transcript) -> str:
    """Cue texts joined with single spaces; the string sentences index into."""
    return " ".join(cue.text for cue in transcript.cues)


# ---------------------------------------------------------------------------
# punctuation restoration

def restore_punctuation(
    transcript: Transcript,
    strategy: str = "rule",
    *,
    gap_ms: int = DEFAULT_GAP_MS,
    provider: CompletionProvider | None = None,
    templates: TemplateSet | None = None,
    ledger=None,
) -> Transcript:
    """Return a transcript with terminal punctuation restored.

    ``rule`` inserts a full stop at cue boundaries that look like sentence
    breaks: a pause of at least ``gap_ms``, or the next cue opening with a
    capitalized word. ``provider`` sends the whole text through the
    punctuation prompt and redistributes the reply over the original cues
    by word position; provider errors propagate. Cue timestamps are never
    touched. Usage is recorded on ``ledger`` when one is passed.
    """
    if strategy == "rule":
        return _rule_punctuate(transcript, gap_ms)
    if strategy == "provider":
        if provider is None:
            raise ValueError("strategy='provider' requires a provider")
        return _provider_punctuate(transcript, provider, templates, ledger)
    raise ValueError(f"unknown punctuation strategy: {strategy!r}")


def _ends_terminal(text: str) -> bool:
    return text.rstrip("\"')]}»").endswith(_TERMINAL_CHARS)


def _capitalize_first(text: str) -> str:
    for i, ch in enumerate(text):
        if ch.isalpha():
            return text[:i] + ch.upper() + text[i + 1 :]
        if not ch.isspace() and ch not in "\"'([{«":
            break
    return text


def _opens_new_sentence(text: str) -> bool:
    words = text.split()
    if not words:
        return False
    head = words[0].strip("\"'()[]{}«»")
    if not head[:1].isalpha() or not head[0].isupper():
        return False
    return head.rstrip(".,;:!?") not in _ALWAYS_CAPITAL


def _rule_punctuate(transcript: Transcript, gap_ms: int) -> Transcript:
    texts = [cue.text for cue in transcript.cues]
    capitalize = [False] * len(texts)
    if texts:
        capitalize[0] = True
    for i, cue in enumerate(transcript.cues):
        if _ends_terminal(texts[i]):
            continue
        if i + 1 == len(texts):
            texts[i] += "."
            continue
        gap = transcript.cues[i + 1].start_ms - cue.end_ms
        if gap >= gap_ms or _opens_new_sentence(texts[i + 1]):
            texts[i] += "."
            capitalize[i + 1] = True
    new_cues = tuple(
        replace(cue, text=_capitalize_first(t) if cap else t)
        for cue, t, cap in zip(transcript.cues, texts, capitalize)
    )
    return replace(transcript, cues=new_cues)


def _word_core(token: str) -> str:
    return re.sub(r"[\W_]+", "", token).casefold()


def _provider_punctuate(
    transcript: Transcript,
    provider: CompletionProvider,
    templates: TemplateSet | None,
    ledger,
) -> Transcript:
    full = transcript_text(transcript)
    prompt = render_prompt(
        "punctuation", full, templates if templates is not None else default_templates()
    )
    tag = f"{transcript.video_id}/full/punctuation"
    request = ProviderRequest(
        prompt=prompt,
        max_output_tokens=max(256, math.ceil(len(full) / 3)),
        request_tag=tag,
    )
    response = provider.complete(request)
    if ledger is not None:
        ledger.record(tag, response.usage)
    return replace(
        transcript,
        cues=tuple(
            replace(cue, text=text)
            for cue, text in zip(
                transcript.cues,
                _redistribute([c.text for c in transcript.cues], response.text),
            )
        ),
    )


def _redistribute(cue_texts: list[str], punctuated: str) -> list[str]:
    """Split the punctuated reply back over the original cues by word count.

    The punctuation contract forbids changing words, so per-cue word counts
    must survive the round trip; any drift is a provider contract breach.
    """
    counts = [len(t.split()) for t in cue_texts]
    replacement = punctuated.split()
    original = " ".join(cue_texts).split()
    if len(replacement) != len(original):
        raise ProviderFailure(
            f"punctuated reply has {len(replacement)} words, expected {len(original)}"
        )
    for before, after in zip(original, replacement):
        if _word_core(before) != _word_core(after):
            raise ProviderFailure(
                f"punctuated reply altered a word: {before!r} -> {after!r}"
            )
    out: list[str] = []
    pos = 0
    for n in counts:
        out.append(" ".join(replacement[pos : pos + n]))
        pos += n
    return out


# ---------------------------------------------------------------------------
# sentence segmentation

def _cue_char_starts(transcript: Transcript) -> list[int]:
    starts: list[int] = []
    offset = 0
    for cue in transcript.cues:
        starts.append(offset)
        offset += len(cue.text) + 1  # single joining space
    return starts


def _time_at(transcript: Transcript, starts: Sequence[int], offset: int) -> int:
    """Millisecond time of a character offset in the joined text, by linear
    interpolation inside the owning cue. An offset equal to a cue's end maps
    to the cue's end time."""
    k = bisect_right(starts, offset) - 1
    cue = transcript.cues[k]
    within = min(offset - starts[k], len(cue.text))
    fraction = within / len(cue.text)
    return round(cue.start_ms + fraction * (cue.end_ms - cue.start_ms))


def segment(
    transcript: Transcript,
    abbreviations: Sequence[str] = DEFAULT_ABBREVIATIONS,
) -> list[Sentence]:
    """Split a punctuated transcript into timestamped sentences.

    Boundaries sit after runs of ``. ! ?`` followed by whitespace or end of
    text, unless the trailing token is a guarded abbreviation. Trailing text
    with no terminal mark is not emitted as a sentence (it stays visible in
    the joined text for context purposes).
    """
    full = transcript_text(transcript)
    if not full:
        return []
    guard = {a.lower() for a in abbreviations}
    starts = _cue_char_starts(transcript)
    sentences: list[Sentence] = []
    sentence_start = 0
    prev_start_ms = 0
    prev_end_ms = 0
    for match in _TERMINAL_RUN_RE.finditer(full):
        end = match.end()
        token_start = full.rfind(" ", 0, match.start()) + 1
        token = full[token_start:end].lstrip("\"'([{«")
        if token.lower() in guard:
            continue
        while sentence_start < end and full[sentence_start].isspace():
            sentence_start += 1
        text = full[sentence_start:end]
        start_ms = max(_time_at(transcript, starts, sentence_start), prev_start_ms)
        end_ms = max(_time_at(transcript, starts, end), start_ms, prev_end_ms)
        sentences.append(
            Sentence(
                index=len(sentences),
                text=text,
                start_ms=start_ms,
                end_ms=end_ms,
                char_span=(sentence_start, end),
            )
        )
        prev_start_ms, prev_end_ms = start_ms, end_ms
        sentence_start = end
    return sentences


# ---------------------------------------------------------------------------
# context windowing

def context_window(
    sentences: Sequence[Sentence],
    full_text: str,
    trigger_ms: int,
    level: int,
    max_context_chars: int = DEFAULT_MAX_CONTEXT_CHARS,
) -> ContextWindow:
    """Target sentence(s) plus their prefix context for a trigger time.

    The target is the last sentence finished at or before ``trigger_ms``
    (level 1) or the last two (level 2; falls back to one when only one has
    finished). Context runs from the transcript start through the target's
    end and is truncated from the front, whole sentences at a time, to stay
    within ``max_context_chars`` — but a target sentence is never dropped,
    even if it alone exceeds the budget.
    """
    if level not in (1, 2):
        raise ValueError(f"level must be 1 or 2, got {level!r}")
    if trigger_ms < 0:
        raise ValueError("trigger_ms must be non-negative")
    ends = [s.end_ms for s in sentences]
    finished = bisect_right(ends, trigger_ms)
    if finished == 0:
        raise NoTargetAvailable(
            f"no sentence has finished by {trigger_ms} ms"
        )
    if level == 2 and finished >= 2:
        targets = (finished - 2, finished - 1)
    else:
        targets = (finished - 1,)
    target_end = sentences[finished - 1].char_span[1]
    first = 0
    while (
        first < targets[0]
        and target_end - sentences[first].char_span[0] > max_context_chars
    ):
        first += 1
    context = full_text[sentences[first].char_span[0] : target_end]
    return ContextWindow(
        context_text=context,
        target_sentence_indices=targets,
        trigger_ms=trigger_ms,
        level=level,
    )
