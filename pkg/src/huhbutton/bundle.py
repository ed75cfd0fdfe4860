"""Pre-generation, caching and lookup of explanations.

``plan_slots`` lays out evaluation times at a fixed interval across the
coverage range (boundaries inclusive), ``generate_bundle`` asks the provider
once per distinct (target sentences, level) pair and maps every slot onto
the shared answers, ``lookup`` resolves a playback timestamp to its cached
explanation, and ``export_static`` writes the bundle out as plain web
resources. After generation everything is read-only: serving never touches
a provider.
"""

from __future__ import annotations

import json
import logging
import time as time_module
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .emissions import RunLedger
from .ingest import Transcript
from .prompts import TemplateSet, default_templates, render_prompt, template_hashes
from .provider import (
    CompletionProvider,
    ProviderFailure,
    ProviderRequest,
    RetryPolicy,
    TokenUsage,
    complete_with_retry,
)
from .segmenter import (
    DEFAULT_ABBREVIATIONS,
    DEFAULT_MAX_CONTEXT_CHARS,
    ContextWindow,
    NoTargetAvailable,
    Sentence,
    context_window,
    segment,
    transcript_text,
)

__all__ = [
    "DEFAULT_INTERVAL_MS",
    "DEFAULT_ABORT_THRESHOLD",
    "ExplanationSlot",
    "ExplanationBundle",
    "Explanation",
    "LookupResult",
    "SlotPlan",
    "InvalidRange",
    "ProviderExhausted",
    "IoFailure",
    "plan_slots",
    "generate_bundle",
    "lookup",
    "export_static",
    "manifest_dict",
    "dump_json",
    "slot_file_dict",
    "bundle_to_dict",
    "bundle_from_dict",
    "save_bundle",
    "load_bundle",
]

logger = logging.getLogger(__name__)

DEFAULT_INTERVAL_MS = 5000
DEFAULT_ABORT_THRESHOLD = 0.2
LEVELS = (1, 2)

STATUS_GENERATED = "generated"
STATUS_UNAVAILABLE = "unavailable"


class InvalidRange(ValueError):
    """Coverage range empty, negative, or outside the transcript."""


class ProviderExhausted(RuntimeError):
    """Too many provider failures; the generation run was aborted."""


class IoFailure(RuntimeError):
    """Filesystem error while exporting or persisting a bundle."""


@dataclass(frozen=True)
class Explanation:
    text: str
    usage: TokenUsage


@dataclass(frozen=True)
class ExplanationSlot:
    slot_index: int
    slot_start_ms: int
    level: int
    target_sentence_indices: tuple[int, ...]
    explanation_ref: str
    status: str
    note: str | None = None


@dataclass(frozen=True)
class ExplanationBundle:
    video_id: str
    language: str
    interval_ms: int
    coverage_start_ms: int
    coverage_end_ms: int
    explanations: Mapping[str, Explanation]
    slots: tuple[ExplanationSlot, ...]
    generator_meta: Mapping[str, Any] = field(default_factory=dict)

    @property
    def slot_count_per_level(self) -> int:
        return sum(1 for slot in self.slots if slot.level == LEVELS[0])

    @property
    def levels(self) -> list[int]:
        present = sorted({slot.level for slot in self.slots})
        return present or list(LEVELS)


@dataclass(frozen=True)
class LookupResult:
    available: bool
    explanation_text: str
    level: int
    slot_start_ms: int | None
    target_sentence_indices: tuple[int, ...]


@dataclass(frozen=True)
class SlotPlan:
    slot_index: int
    eval_ms: int
    level: int
    window: ContextWindow | None  # None when no sentence has finished yet


def _explanation_key(targets: Sequence[int], level: int) -> str:
    return f"{level}:" + ",".join(str(i) for i in targets)


def plan_slots(
    transcript: Transcript,
    *,
    interval_ms: int = DEFAULT_INTERVAL_MS,
    coverage_start_ms: int = 0,
    coverage_end_ms: int | None = None,
    max_context_chars: int = DEFAULT_MAX_CONTEXT_CHARS,
    abbreviations: Sequence[str] = DEFAULT_ABBREVIATIONS,
    sentences: Sequence[Sentence] | None = None,
) -> list[SlotPlan]:
    """Evaluation times and context windows for every slot at both levels.

    Slot k evaluates at ``coverage_start_ms + k * interval_ms``; both range
    boundaries are included, so a range of N intervals yields N+1 slots per
    level. Pre-segmented sentences may be passed to avoid recomputation.
    """
    if coverage_end_ms is None:
        coverage_end_ms = transcript.duration_ms
    if interval_ms <= 0:
        raise InvalidRange(f"interval_ms must be positive, got {interval_ms}")
    if coverage_start_ms < 0 or coverage_end_ms < coverage_start_ms:
        raise InvalidRange(
            f"bad coverage range {coverage_start_ms}..{coverage_end_ms}"
        )
    if coverage_end_ms > transcript.duration_ms:
        raise InvalidRange(
            f"coverage end {coverage_end_ms} ms exceeds duration "
            f"{transcript.duration_ms} ms"
        )
    if sentences is None:
        sentences = segment(transcript, abbreviations)
    full_text = transcript_text(transcript)
    plans: list[SlotPlan] = []
    for level in LEVELS:
        slot_count = (coverage_end_ms - coverage_start_ms) // interval_ms + 1
        for k in range(slot_count):
            eval_ms = coverage_start_ms + k * interval_ms
            try:
                window = context_window(
                    sentences, full_text, eval_ms, level, max_context_chars
                )
            except NoTargetAvailable:
                window = None
            plans.append(SlotPlan(k, eval_ms, level, window))
    return plans


def generate_bundle(
    transcript: Transcript,
    provider: CompletionProvider,
    *,
    interval_ms: int = DEFAULT_INTERVAL_MS,
    coverage_start_ms: int = 0,
    coverage_end_ms: int | None = None,
    max_context_chars: int = DEFAULT_MAX_CONTEXT_CHARS,
    abbreviations: Sequence[str] = DEFAULT_ABBREVIATIONS,
    templates: TemplateSet | None = None,
    max_output_tokens: int = 512,
    temperature: float = 0.0,
    abort_threshold: float = DEFAULT_ABORT_THRESHOLD,
    max_workers: int = 4,
    retry_policy: RetryPolicy = RetryPolicy(),
    ledger: RunLedger | None = None,
    created_at: str | None = None,
    sleep: Callable[[float], None] = time_module.sleep,
) -> ExplanationBundle:
    """Pre-generate explanations for every slot in the coverage range.

    Exactly one provider call is made per distinct (target sentences, level)
    pair; slots sharing a target share the answer. Failed pairs are recorded
    on their slots without stopping the run, unless the failed fraction of
    distinct pairs exceeds ``abort_threshold``, which raises
    :class:`ProviderExhausted`. Token usage lands in ``ledger`` in plan
    order, and the hypothetical no-dedup totals are attached for comparison.
    """
    if templates is None:
        templates = default_templates()
    if ledger is None:
        ledger = RunLedger(transcript.video_id)
    if coverage_end_ms is None:
        coverage_end_ms = transcript.duration_ms
    plans = plan_slots(
        transcript,
        interval_ms=interval_ms,
        coverage_start_ms=coverage_start_ms,
        coverage_end_ms=coverage_end_ms,
        max_context_chars=max_context_chars,
        abbreviations=abbreviations,
    )

    # Distinct work items, keyed by (targets, level), in first-seen order.
    pending: dict[str, SlotPlan] = {}
    for plan in plans:
        if plan.window is None:
            continue
        key = _explanation_key(plan.window.target_sentence_indices, plan.level)
        pending.setdefault(key, plan)

    def run_one(key: str, plan: SlotPlan) -> tuple[str, Explanation | ProviderFailure]:
        assert plan.window is not None
        prompt = render_prompt(plan.level, plan.window.context_text, templates)
        request = ProviderRequest(
            prompt=prompt,
            max_output_tokens=max_output_tokens,
            temperature=temperature,
            request_tag=f"{transcript.video_id}/{plan.slot_index}/{plan.level}",
        )
        try:
            result = complete_with_retry(provider, request, retry_policy, sleep=sleep)
        except ProviderFailure as err:
            logger.warning("generation failed for %s: %s", key, err)
            return key, err
        return key, Explanation(text=result.response.text, usage=result.response.usage)

    outcomes: dict[str, Explanation | ProviderFailure] = {}
    if pending:
        workers = max(1, min(max_workers, len(pending)))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for key, outcome in pool.map(run_one, pending.keys(), pending.values()):
                outcomes[key] = outcome

    failures = sum(1 for o in outcomes.values() if isinstance(o, ProviderFailure))
    if pending and failures / len(pending) > abort_threshold:
        raise ProviderExhausted(
            f"{failures} of {len(pending)} provider calls failed "
            f"(abort threshold {abort_threshold:.0%})"
        )

    explanations: dict[str, Explanation] = {}
    for key, plan in pending.items():  # ledger entries in plan order
        outcome = outcomes[key]
        if isinstance(outcome, Explanation):
            explanations[key] = outcome
            ledger.record(
                f"{transcript.video_id}/{plan.slot_index}/{plan.level}", outcome.usage
            )

    slots: list[ExplanationSlot] = []
    no_dedup = TokenUsage(0, 0)
    for plan in plans:
        if plan.window is None:
            slots.append(
                ExplanationSlot(
                    slot_index=plan.slot_index,
                    slot_start_ms=plan.eval_ms,
                    level=plan.level,
                    target_sentence_indices=(),
                    explanation_ref="",
                    status=STATUS_UNAVAILABLE,
                    note="no finished sentence at this time",
                )
            )
            continue
        key = _explanation_key(plan.window.target_sentence_indices, plan.level)
        outcome = outcomes[key]
        if isinstance(outcome, ProviderFailure):
            slots.append(
                ExplanationSlot(
                    slot_index=plan.slot_index,
                    slot_start_ms=plan.eval_ms,
                    level=plan.level,
                    target_sentence_indices=plan.window.target_sentence_indices,
                    explanation_ref="",
                    status=STATUS_UNAVAILABLE,
                    note=f"provider error: {outcome}",
                )
            )
            continue
        no_dedup = no_dedup + outcome.usage
        slots.append(
            ExplanationSlot(
                slot_index=plan.slot_index,
                slot_start_ms=plan.eval_ms,
                level=plan.level,
                target_sentence_indices=plan.window.target_sentence_indices,
                explanation_ref=key,
                status=STATUS_GENERATED,
            )
        )
    ledger.no_dedup_totals = no_dedup

    if created_at is None:
        created_at = (
            datetime.now(timezone.utc).replace(microsecond=0).isoformat()
        )
    meta = {
        "model": getattr(provider, "model_name", type(provider).__name__),
        "template_hashes": template_hashes(templates),
        "created_at": created_at,
    }
    return ExplanationBundle(
        video_id=transcript.video_id,
        language=transcript.language,
        interval_ms=interval_ms,
        coverage_start_ms=coverage_start_ms,
        coverage_end_ms=coverage_end_ms,
        explanations=explanations,
        slots=tuple(slots),
        generator_meta=meta,
    )


def lookup(bundle: ExplanationBundle, t_ms: int, level: int) -> LookupResult:
    """Resolve a playback time to its cached explanation.

    Picks the slot with the largest start time at or before ``t_ms``.
    Out-of-coverage times and unavailable slots come back with
    ``available=False``; availability is data, not an error.
    """
    if (
        level not in bundle.levels
        or t_ms < bundle.coverage_start_ms
        or t_ms > bundle.coverage_end_ms
        or not bundle.slots
    ):
        return LookupResult(False, "", level, None, ())
    index = (t_ms - bundle.coverage_start_ms) // bundle.interval_ms
    slot = next(
        (
            s
            for s in bundle.slots
            if s.level == level and s.slot_index == index
        ),
        None,
    )
    if slot is None:
        return LookupResult(False, "", level, None, ())
    return _slot_result(bundle, slot)


def _slot_result(bundle: ExplanationBundle, slot: ExplanationSlot) -> LookupResult:
    if slot.status != STATUS_GENERATED:
        return LookupResult(
            False, "", slot.level, slot.slot_start_ms, slot.target_sentence_indices
        )
    return LookupResult(
        True,
        bundle.explanations[slot.explanation_ref].text,
        slot.level,
        slot.slot_start_ms,
        slot.target_sentence_indices,
    )


# ---------------------------------------------------------------------------
# serialization (bundle archive, manifest, slot files)

def dump_json(doc: Any) -> bytes:
    """Canonical JSON bytes; every artifact and HTTP body goes through this."""
    return (json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=2) + "\n").encode(
        "utf-8"
    )


def manifest_dict(bundle: ExplanationBundle) -> dict:
    return {
        "video_id": bundle.video_id,
        "language": bundle.language,
        "interval_ms": bundle.interval_ms,
        "coverage_start_ms": bundle.coverage_start_ms,
        "coverage_end_ms": bundle.coverage_end_ms,
        "levels": bundle.levels,
        "slot_count_per_level": bundle.slot_count_per_level,
        "generator_meta": dict(bundle.generator_meta),
    }


def slot_file_dict(bundle: ExplanationBundle, slot: ExplanationSlot) -> dict:
    result = _slot_result(bundle, slot)
    return {
        "slot_start_ms": slot.slot_start_ms,
        "available": result.available,
        "explanation": result.explanation_text,
        "target_sentence_indices": list(slot.target_sentence_indices),
    }


def export_static(bundle: ExplanationBundle, out_dir: str | Path) -> dict:
    """Write ``manifest.json`` plus ``{level}/{slot_index}.json`` files.

    Pure function of the bundle: re-exporting overwrites byte-identically.
    Returns the manifest dict.
    """
    out = Path(out_dir)
    manifest = manifest_dict(bundle)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_bytes(dump_json(manifest))
        for slot in bundle.slots:
            level_dir = out / str(slot.level)
            level_dir.mkdir(exist_ok=True)
            (level_dir / f"{slot.slot_index}.json").write_bytes(
                dump_json(slot_file_dict(bundle, slot))
            )
    except OSError as err:
        raise IoFailure(f"static export to {out} failed: {err}") from err
    return manifest


def bundle_to_dict(bundle: ExplanationBundle) -> dict:
    return {
        "video_id": bundle.video_id,
        "language": bundle.language,
        "interval_ms": bundle.interval_ms,
        "coverage_start_ms": bundle.coverage_start_ms,
        "coverage_end_ms": bundle.coverage_end_ms,
        "explanations": {
            key: {
                "text": exp.text,
                "usage": {
                    "prompt_tokens": exp.usage.prompt_tokens,
                    "completion_tokens": exp.usage.completion_tokens,
                },
            }
            for key, exp in bundle.explanations.items()
        },
        "slots": [
            {
                "slot_index": slot.slot_index,
                "slot_start_ms": slot.slot_start_ms,
                "level": slot.level,
                "target_sentence_indices": list(slot.target_sentence_indices),
                "explanation_ref": slot.explanation_ref,
                "status": slot.status,
                "note": slot.note,
            }
            for slot in bundle.slots
        ],
        "generator_meta": dict(bundle.generator_meta),
    }


def bundle_from_dict(doc: Mapping[str, Any]) -> ExplanationBundle:
    return ExplanationBundle(
        video_id=doc["video_id"],
        language=doc["language"],
        interval_ms=doc["interval_ms"],
        coverage_start_ms=doc["coverage_start_ms"],
        coverage_end_ms=doc["coverage_end_ms"],
        explanations={
            key: Explanation(
                text=entry["text"],
                usage=TokenUsage(
                    entry["usage"]["prompt_tokens"],
                    entry["usage"]["completion_tokens"],
                ),
            )
            for key, entry in doc["explanations"].items()
        },
        slots=tuple(
            ExplanationSlot(
                slot_index=slot["slot_index"],
                slot_start_ms=slot["slot_start_ms"],
                level=slot["level"],
                target_sentence_indices=tuple(slot["target_sentence_indices"]),
                explanation_ref=slot["explanation_ref"],
                status=slot["status"],
                note=slot.get("note"),
            )
            for slot in doc["slots"]
        ),
        generator_meta=dict(doc.get("generator_meta", {})),
    )


def save_bundle(bundle: ExplanationBundle, path: str | Path) -> None:
    try:
        Path(path).write_bytes(dump_json(bundle_to_dict(bundle)))
    except OSError as err:
        raise IoFailure(f"could not write bundle to {path}: {err}") from err


def load_bundle(path: str | Path) -> ExplanationBundle:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as err:
        raise IoFailure(f"could not read bundle from {path}: {err}") from err
    return bundle_from_dict(doc)
