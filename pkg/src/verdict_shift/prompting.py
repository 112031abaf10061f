"""Evaluator prompts for the three verdict contexts.

FULL sees image, question and answer; PRIOR drops the question; TEXT_PRIOR
also drops the image (used only by the ablated scoring variant).
"""

from __future__ import annotations

import enum
import json
import os
import re
from dataclasses import dataclass

from .errors import ConfigError
from .manifest import SampleRecord


class ContextKind(str, enum.Enum):
    FULL = "full"
    PRIOR = "prior"
    TEXT_PRIOR = "text_prior"


class PriorVariant(str, enum.Enum):
    WITH_IMAGE = "with_image"
    TEXT_ONLY = "text_only"


# Paraphrased defaults; override with a template file to reproduce a specific wording.
DEFAULT_FULL_TEMPLATE = (
    "Given the image, is the following answer a valid response to the question?\n"
    "Question: {question}\n"
    "Answer: {answer}"
)
DEFAULT_PRIOR_TEMPLATE = (
    "Given the image, is the following answer a valid response?\n"
    "Answer: {answer}"
)
DEFAULT_TEXT_PRIOR_TEMPLATE = (
    "Is the following answer a valid response?\n"
    "Answer: {answer}"
)
DEFAULT_INSTRUCTION_SUFFIX = 'Respond with exactly one word, "Yes" or "No".'

_PLACEHOLDER = re.compile(r"\{(question|answer)\}")
TEMPLATE_KEYS = ("full_template", "prior_template", "text_prior_template", "instruction_suffix")


@dataclass(frozen=True)
class PromptTemplateSet:
    full_template: str = DEFAULT_FULL_TEMPLATE
    prior_template: str = DEFAULT_PRIOR_TEMPLATE
    text_prior_template: str = DEFAULT_TEXT_PRIOR_TEMPLATE
    instruction_suffix: str = DEFAULT_INSTRUCTION_SUFFIX

    def __post_init__(self) -> None:
        _require_count(self.full_template, "full_template", "{question}", 1)
        _require_count(self.full_template, "full_template", "{answer}", 1)
        for name in ("prior_template", "text_prior_template"):
            tmpl = getattr(self, name)
            _require_count(tmpl, name, "{answer}", 1)
            _require_count(tmpl, name, "{question}", 0)
        if not self.instruction_suffix.strip():
            raise ConfigError("instruction_suffix must be non-empty")


def _require_count(template: str, name: str, placeholder: str, expected: int) -> None:
    if not isinstance(template, str):
        raise ConfigError(f"{name} must be a string")
    found = template.count(placeholder)
    if found != expected:
        raise ConfigError(
            f"{name} must contain {placeholder} exactly {expected} time(s), found {found}"
        )


def load_templates(path: str | os.PathLike[str] | None) -> PromptTemplateSet:
    """Load a JSON template file; ``None`` gives the defaults.

    Keys that are absent fall back to their defaults; unknown keys are rejected
    so typos do not silently leave a default in place.
    """
    if path is None:
        return PromptTemplateSet()
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read template file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"template file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("template file must hold a JSON object")
    unknown = sorted(set(data) - set(TEMPLATE_KEYS))
    if unknown:
        raise ConfigError(f"unknown template key(s): {', '.join(unknown)}")
    return PromptTemplateSet(**data)


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    attach_image: bool
    context_kind: ContextKind


def _substitute(template: str, values: dict[str, str]) -> str:
    # one pass: text inserted for one placeholder is never rescanned
    return _PLACEHOLDER.sub(lambda m: values[m.group(1)], template)


def _finish(body: str, suffix: str) -> str:
    return f"{body}\n{suffix}"


def render_full(sample: SampleRecord, templates: PromptTemplateSet) -> RenderedPrompt:
    body = _substitute(
        templates.full_template, {"question": sample.question, "answer": sample.answer}
    )
    return RenderedPrompt(
        text=_finish(body, templates.instruction_suffix),
        attach_image=True,
        context_kind=ContextKind.FULL,
    )


def render_prior(
    sample: SampleRecord,
    templates: PromptTemplateSet,
    variant: PriorVariant = PriorVariant.WITH_IMAGE,
) -> RenderedPrompt:
    variant = PriorVariant(variant)
    if variant is PriorVariant.WITH_IMAGE:
        template, kind, attach = templates.prior_template, ContextKind.PRIOR, True
    else:
        template, kind, attach = templates.text_prior_template, ContextKind.TEXT_PRIOR, False
    body = _substitute(template, {"answer": sample.answer})
    return RenderedPrompt(
        text=_finish(body, templates.instruction_suffix),
        attach_image=attach,
        context_kind=kind,
    )
