"""Prompt templates for explanation and punctuation requests.

A template is an instruction string with exactly one ``{context}``
placeholder; rendering is a literal substitution with no other expansion,
so the rendered string is byte-for-byte what gets sent to the provider.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Union

__all__ = [
    "PromptTemplate",
    "TemplateSet",
    "MissingTemplate",
    "LEVEL1_TEMPLATE",
    "LEVEL2_TEMPLATE",
    "PUNCTUATION_TEMPLATE",
    "default_templates",
    "load_templates",
    "render_prompt",
    "build_prompt",
    "template_hashes",
]

PLACEHOLDER = "{context}"

# Level 1 explains the last finished sentence given everything said so far.
LEVEL1_TEMPLATE = (
    "Use a third person singular perspective, referring to the speaker. "
    "Take the last sentence of this text which ends with a full stop, "
    "and explain it in your own words: {context}"
)
# Level 2 widens the scope to the last two sentences and simplifies.
LEVEL2_TEMPLATE = (
    "Use a third person singular perspective, referring to the speaker. "
    "Consider the last two sentences of this text. Explain them in your "
    "own words, taking a broader perspective, and use simple language: "
    "{context}"
)
PUNCTUATION_TEMPLATE = (
    "Add missing punctuation and sentence casing to this transcript text. "
    "Do not change, add, or remove any words: {context}"
)

Level = Union[int, str]  # 1, 2, or "punctuation"


class MissingTemplate(KeyError):
    """No template for the requested level, or a template lacks the
    ``{context}`` placeholder."""


@dataclass(frozen=True)
class PromptTemplate:
    level: Level
    instruction_text: str

    def __post_init__(self) -> None:
        if self.instruction_text.count(PLACEHOLDER) != 1:
            raise MissingTemplate(
                f"template for level {self.level!r} must contain exactly one "
                f"{PLACEHOLDER} placeholder"
            )


TemplateSet = dict[Level, PromptTemplate]

_TEMPLATE_FILES: dict[Level, str] = {
    1: "level1.txt",
    2: "level2.txt",
    "punctuation": "punctuation.txt",
}


def default_templates() -> TemplateSet:
    return {
        1: PromptTemplate(1, LEVEL1_TEMPLATE),
        2: PromptTemplate(2, LEVEL2_TEMPLATE),
        "punctuation": PromptTemplate("punctuation", PUNCTUATION_TEMPLATE),
    }


def load_templates(config_dir: str | Path) -> TemplateSet:
    """Load template overrides from ``level1.txt``, ``level2.txt`` and
    ``punctuation.txt`` under ``config_dir``; defaults fill the gaps.

    A single trailing newline is stripped so editors that append one do not
    corrupt the prompt. Placeholder validation happens here, at load time.
    """
    templates = default_templates()
    directory = Path(config_dir)
    for level, filename in _TEMPLATE_FILES.items():
        path = directory / filename
        if path.is_file():
            text = path.read_text(encoding="utf-8")
            if text.endswith("\n"):
                text = text[:-1]
            templates[level] = PromptTemplate(level, text)
    return templates


def render_prompt(level: Level, context_text: str, templates: TemplateSet) -> str:
    if level not in templates:
        raise MissingTemplate(f"no template for level {level!r}")
    template = templates[level]
    return template.instruction_text.replace(PLACEHOLDER, context_text)


def build_prompt(window, templates: TemplateSet) -> str:
    """Render the provider prompt for a context window (see segmenter)."""
    return render_prompt(window.level, window.context_text, templates)


def template_hashes(templates: TemplateSet) -> dict[str, str]:
    """SHA-256 of each explanation template, recorded in bundle metadata so
    cached explanations can be traced to the prompts that produced them."""
    return {
        f"level{level}": hashlib.sha256(
            templates[level].instruction_text.encode("utf-8")
        ).hexdigest()
        for level in (1, 2)
        if level in templates
    }
