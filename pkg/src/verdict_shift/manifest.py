"""JSONL manifests of (image, question, answer) samples.

One record per line::

    {"id": "s1", "image": "imgs/0001.jpg", "question": "...", "answer": "..."}

Unknown keys are carried along untouched so a round-trip through this module
never loses upstream metadata.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import ManifestError

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("id", "image", "question", "answer")


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image_path: str
    question: str
    answer: str
    extra: Mapping[str, Any] = field(default_factory=dict, compare=True)

    def to_json(self) -> dict[str, Any]:
        row: dict[str, Any] = {
            "id": self.id,
            "image": self.image_path,
            "question": self.question,
            "answer": self.answer,
        }
        for key, value in self.extra.items():
            row[key] = value
        return row


@dataclass(frozen=True)
class PoolStats:
    total_count: int
    distinct_image_count: int
    warnings: tuple[str, ...] = ()

    @property
    def empty_question_count(self) -> int:
        return sum(1 for w in self.warnings if w.startswith("empty question"))


def _parse_line(raw: str, lineno: int) -> SampleRecord:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"line {lineno}: malformed JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise ManifestError(f"line {lineno}: expected a JSON object")
    missing = [k for k in REQUIRED_FIELDS if k not in obj]
    if missing:
        raise ManifestError(f"line {lineno}: missing field(s) {', '.join(missing)}")
    for key in REQUIRED_FIELDS:
        if not isinstance(obj[key], str):
            raise ManifestError(f"line {lineno}: field {key!r} must be a string")
    if not obj["id"]:
        raise ManifestError(f"line {lineno}: empty id")
    if not obj["answer"].strip():
        raise ManifestError(f"line {lineno}: empty answer for id {obj['id']!r}")
    extra = {k: v for k, v in obj.items() if k not in REQUIRED_FIELDS}
    return SampleRecord(
        id=obj["id"],
        image_path=obj["image"],
        question=obj["question"],
        answer=obj["answer"],
        extra=extra,
    )


def load_manifest(
    path: str | os.PathLike[str],
    *,
    check_images: bool = False,
) -> tuple[list[SampleRecord], PoolStats]:
    """Read a manifest in file order.

    Blank lines are ignored. Image payloads are never decoded; with
    ``check_images`` only local-file existence is verified.

    Raises:
        ManifestError: on a malformed line, a duplicate id, an empty answer,
            or (with ``check_images``) a missing image file.
    """
    records: list[SampleRecord] = []
    first_seen: dict[str, int] = {}
    warnings: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            rec = _parse_line(raw, lineno)
            if rec.id in first_seen:
                raise ManifestError(
                    f"duplicate id {rec.id!r} on lines {first_seen[rec.id]} and {lineno}"
                )
            first_seen[rec.id] = lineno
            if not rec.question.strip():
                warnings.append(f"empty question for id {rec.id!r} (line {lineno})")
            if check_images and not _image_exists(rec.image_path):
                raise ManifestError(f"line {lineno}: image not found: {rec.image_path}")
            records.append(rec)

    if warnings:
        logger.warning("%d sample(s) have an empty question", len(warnings))
    stats = PoolStats(
        total_count=len(records),
        distinct_image_count=len({r.image_path for r in records}),
        warnings=tuple(warnings),
    )
    return records, stats


def _image_exists(ref: str) -> bool:
    if "://" in ref or ref.startswith("data:"):
        # remote or inline payloads are resolved at request time
        return True
    return Path(ref).is_file()


def write_manifest(records: Iterable[SampleRecord], path: str | os.PathLike[str]) -> None:
    """Write records as JSONL, one per line, preserving order and extra fields."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False))
            fh.write("\n")


def index_by_id(records: Sequence[SampleRecord]) -> dict[str, SampleRecord]:
    return {r.id: r for r in records}
