"""Shared test utilities: subtitle serializers and transcript strategies."""

from __future__ import annotations

import string

from hypothesis import strategies as st

from huhbutton.ingest import Transcript, TranscriptCue


def ms_to_srt(ms: int) -> str:
    h, rest = divmod(ms, 3_600_000)
    m, rest = divmod(rest, 60_000)
    s, frac = divmod(rest, 1000)
    return f"{h:02d}:{m:02d}:{s:02d},{frac:03d}"


def ms_to_vtt(ms: int) -> str:
    return ms_to_srt(ms).replace(",", ".")


def srt_of(cues: list[tuple[int, int, str]]) -> bytes:
    blocks = [
        f"{i + 1}\n{ms_to_srt(start)} --> {ms_to_srt(end)}\n{text}"
        for i, (start, end, text) in enumerate(cues)
    ]
    return ("\n\n".join(blocks) + "\n").encode("utf-8")


def vtt_of(cues: list[tuple[int, int, str]]) -> bytes:
    blocks = [
        f"{ms_to_vtt(start)} --> {ms_to_vtt(end)}\n{text}"
        for start, end, text in cues
    ]
    return ("WEBVTT\n\n" + "\n\n".join(blocks) + "\n").encode("utf-8")


def transcript_of(cues: list[tuple[int, int, str]], video_id="t", language="en") -> Transcript:
    built = tuple(
        TranscriptCue(index=i, start_ms=start, end_ms=end, text=text)
        for i, (start, end, text) in enumerate(cues)
    )
    return Transcript(video_id, language, built[-1].end_ms, built)


# Words whose lowercase form can never collide with the default
# abbreviation guard list, so sentence-splitting properties stay exact.
_WORD_ALPHABET = "qwx"

words = st.text(alphabet=_WORD_ALPHABET, min_size=1, max_size=6)

cue_texts = st.lists(words, min_size=1, max_size=8).map(" ".join)


@st.composite
def cue_lists(draw, min_cues=1, max_cues=12):
    """Clean, non-overlapping cue tuples suitable for any parser."""
    n = draw(st.integers(min_cues, max_cues))
    cues = []
    t = draw(st.integers(0, 5000))
    for _ in range(n):
        t += draw(st.integers(0, 3000))  # gap
        start = t
        t += draw(st.integers(500, 6000))  # duration
        cues.append((start, t, draw(cue_texts)))
    return cues


@st.composite
def terminated_cue_lists(draw, min_cues=1, max_cues=10):
    """Cue lists whose joined text is fully terminal-punctuated."""
    cues = draw(cue_lists(min_cues, max_cues))
    out = []
    for i, (start, end, text) in enumerate(cues):
        wordlist = text.split()
        # Sprinkle stops inside, always end the final cue with one.
        marked = [
            w + draw(st.sampled_from(["", "", ".", "!", "?"]))
            for w in wordlist
        ]
        if i == len(cues) - 1 and not marked[-1][-1] in ".!?":
            marked[-1] += "."
        out.append((start, end, " ".join(marked)))
    return out


# Sentences with known lengths drive brute-force windowing oracles.
@st.composite
def sentence_fixtures(draw):
    n = draw(st.integers(1, 12))
    cues = []
    t = 0
    for i in range(n):
        start = t
        t += draw(st.integers(800, 4000))
        n_words = draw(st.integers(1, 6))
        text = " ".join(draw(words) for _ in range(n_words)) + "."
        cues.append((start, t, text))
        t += draw(st.integers(0, 2000))
    return cues
