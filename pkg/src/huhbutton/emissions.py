"""Token-based carbon accounting.

Every provider call lands in a :class:`RunLedger`; a single per-token factor
converts ledger totals to kg CO2e. The shipped default factor is the
least-squares fit (through the origin, over total tokens) to the two
published reference runs; both are reproduced to well under 0.01%.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .provider import TokenUsage

__all__ = [
    "DEFAULT_FACTOR_KG_PER_TOKEN",
    "EmissionEstimate",
    "LedgerEntry",
    "RunLedger",
    "NonPositiveFactor",
    "EmptyReference",
    "estimate",
    "derive_factor",
    "format_estimate",
]

# derive_factor over the reference runs (428,397 tokens -> 150.7 kg,
# 595,346 tokens -> 209.4 kg); pinned so shipped estimates never drift.
DEFAULT_FACTOR_KG_PER_TOKEN = 3.517447050978295e-04


class NonPositiveFactor(ValueError):
    """The per-token factor must be strictly positive."""


class EmptyReference(ValueError):
    """No reference pair with a positive token count to fit against."""


@dataclass(frozen=True)
class EmissionEstimate:
    kg_co2e: float
    factor_kg_per_token: float
    total_tokens: int


@dataclass(frozen=True)
class LedgerEntry:
    request_tag: str
    usage: TokenUsage


def estimate(
    usage: TokenUsage,
    factor_kg_per_token: float = DEFAULT_FACTOR_KG_PER_TOKEN,
) -> EmissionEstimate:
    """kg CO2e for a token usage: factor times total tokens, exactly."""
    if factor_kg_per_token <= 0:
        raise NonPositiveFactor(f"factor must be > 0, got {factor_kg_per_token}")
    total = usage.total_tokens
    return EmissionEstimate(
        kg_co2e=factor_kg_per_token * total,
        factor_kg_per_token=factor_kg_per_token,
        total_tokens=total,
    )


def derive_factor(reference: Sequence[tuple[TokenUsage, float]]) -> float:
    """Least-squares single factor through the origin over total tokens.

    With one reference pair this is the plain ratio kg/tokens; with more it
    weights larger runs more heavily, as ordinary least squares does.
    """
    points = [(u.total_tokens, kg) for u, kg in reference if u.total_tokens > 0]
    if not points:
        raise EmptyReference("need at least one reference pair with positive tokens")
    return sum(x * y for x, y in points) / sum(x * x for x, y in points)


def format_estimate(est: EmissionEstimate) -> str:
    """One-line human summary; kg to one decimal, factor at full precision."""
    return (
        f"{est.kg_co2e:.1f} kg CO2e "
        f"({est.total_tokens} tokens at {est.factor_kg_per_token:.6e} kg/token)"
    )


class RunLedger:
    """Per-run usage ledger. Appends are serialized behind a lock so
    concurrent generation workers can record safely; reads take snapshots.
    """

    def __init__(self, video_id: str, entries: Iterable[LedgerEntry] = ()):
        self.video_id = video_id
        self._entries: list[LedgerEntry] = list(entries)
        self._lock = threading.Lock()
        # Optional bookkeeping: what the run would have cost without
        # deduplicating identical (target, level) pairs.
        self.no_dedup_totals: TokenUsage | None = None

    def record(self, request_tag: str, usage: TokenUsage) -> None:
        with self._lock:
            self._entries.append(LedgerEntry(request_tag, usage))

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    @property
    def totals(self) -> TokenUsage:
        total = TokenUsage(0, 0)
        for entry in self.entries:
            total = total + entry.usage
        return total

    def merge(self, other: "RunLedger") -> "RunLedger":
        merged = RunLedger(self.video_id, self.entries + other.entries)
        if self.no_dedup_totals is not None or other.no_dedup_totals is not None:
            merged.no_dedup_totals = (self.no_dedup_totals or TokenUsage(0, 0)) + (
                other.no_dedup_totals or TokenUsage(0, 0)
            )
        return merged

    def to_dict(self, factor_kg_per_token: float = DEFAULT_FACTOR_KG_PER_TOKEN) -> dict:
        totals = self.totals
        est = estimate(totals, factor_kg_per_token)
        doc = {
            "video_id": self.video_id,
            "entries": [
                {
                    "request_tag": entry.request_tag,
                    "usage": {
                        "prompt_tokens": entry.usage.prompt_tokens,
                        "completion_tokens": entry.usage.completion_tokens,
                    },
                }
                for entry in self.entries
            ],
            "totals": {
                "prompt_tokens": totals.prompt_tokens,
                "completion_tokens": totals.completion_tokens,
            },
            "factor_kg_per_token": factor_kg_per_token,
            "kg_co2e": est.kg_co2e,
        }
        if self.no_dedup_totals is not None:
            doc["no_dedup_totals"] = {
                "prompt_tokens": self.no_dedup_totals.prompt_tokens,
                "completion_tokens": self.no_dedup_totals.completion_tokens,
            }
        return doc

    def write(
        self,
        path: str | Path,
        factor_kg_per_token: float = DEFAULT_FACTOR_KG_PER_TOKEN,
    ) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(factor_kg_per_token), ensure_ascii=False, indent=2)
            + "\n",
            encoding="utf-8",
        )

    @classmethod
    def read(cls, path: str | Path) -> "RunLedger":
        """Load a persisted ledger.

        A compact document may omit ``entries`` and carry only ``totals``;
        it is read as a single synthetic entry. When both are present they
        must agree.
        """
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        entries_doc = doc.get("entries")
        if entries_doc is None:
            totals_doc = doc.get("totals", {})
            usage = TokenUsage(
                totals_doc.get("prompt_tokens", 0),
                totals_doc.get("completion_tokens", 0),
            )
            entries = [LedgerEntry("totals", usage)] if usage.total_tokens else []
        else:
            entries = [
                LedgerEntry(
                    entry["request_tag"],
                    TokenUsage(
                        entry["usage"]["prompt_tokens"],
                        entry["usage"]["completion_tokens"],
                    ),
                )
                for entry in entries_doc
            ]
            if "totals" in doc:
                summed = TokenUsage(0, 0)
                for entry in entries:
                    summed = summed + entry.usage
                declared = TokenUsage(
                    doc["totals"]["prompt_tokens"], doc["totals"]["completion_tokens"]
                )
                if summed != declared:
                    raise ValueError("ledger totals do not match the entry sum")
        ledger = cls(doc["video_id"], entries=entries)
        nd = doc.get("no_dedup_totals")
        if nd is not None:
            ledger.no_dedup_totals = TokenUsage(
                nd["prompt_tokens"], nd["completion_tokens"]
            )
        return ledger
