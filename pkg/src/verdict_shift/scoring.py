"""Conditional verdict shift scores.

For each sample the evaluator is asked twice whether the answer is valid:
once with the question (FULL) and once without (PRIOR, or TEXT_PRIOR for the
variant that also drops the image). The scores are natural-log ratios::

    cvs_yes = ln P(yes | full) - ln P(yes | prior)
    cvs_no  = ln P(no  | full) - ln P(no  | prior)

Pool scoring is resumable: every finished sample is appended to a JSONL cache
and skipped on the next run.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

from .errors import ConfigError, EvaluatorError, VerdictShiftError
from .evaluator import Evaluator
from .manifest import SampleRecord
from .prompting import PriorVariant, PromptTemplateSet, render_full, render_prior

logger = logging.getLogger(__name__)

# absolute+relative slack when re-deriving cached scores from cached probabilities
CACHE_TOLERANCE = 1e-9


class ScoringVariant(str, enum.Enum):
    STANDARD = "standard"
    NO_VISUAL_ANCHOR = "no-visual-anchor"

    @property
    def prior_variant(self) -> PriorVariant:
        if self is ScoringVariant.STANDARD:
            return PriorVariant.WITH_IMAGE
        return PriorVariant.TEXT_ONLY


class FailurePolicy(str, enum.Enum):
    SKIP = "skip"
    STRICT = "strict"


def cvs_shift(p_full: float, p_prior: float) -> float:
    """Natural log of ``p_full / p_prior``; positive when the question raises the probability."""
    for name, p in (("p_full", p_full), ("p_prior", p_prior)):
        if not 0.0 < p <= 1.0:
            raise ValueError(f"{name}={p!r} must lie in (0, 1]")
    return math.log(p_full) - math.log(p_prior)


@dataclass(frozen=True)
class CvsScore:
    sample_id: str
    p_yes_full: float
    p_no_full: float
    p_yes_prior: float
    p_no_prior: float
    cvs_yes: float
    cvs_no: float
    variant: ScoringVariant = ScoringVariant.STANDARD

    @classmethod
    def from_probs(
        cls,
        sample_id: str,
        p_yes_full: float,
        p_no_full: float,
        p_yes_prior: float,
        p_no_prior: float,
        variant: ScoringVariant = ScoringVariant.STANDARD,
    ) -> CvsScore:
        return cls(
            sample_id=sample_id,
            p_yes_full=p_yes_full,
            p_no_full=p_no_full,
            p_yes_prior=p_yes_prior,
            p_no_prior=p_no_prior,
            cvs_yes=cvs_shift(p_yes_full, p_yes_prior),
            cvs_no=cvs_shift(p_no_full, p_no_prior),
            variant=ScoringVariant(variant),
        )

    def is_consistent(self, tol: float = CACHE_TOLERANCE) -> bool:
        """Check that the stored scores follow from the stored probabilities."""
        try:
            yes = cvs_shift(self.p_yes_full, self.p_yes_prior)
            no = cvs_shift(self.p_no_full, self.p_no_prior)
        except (ValueError, TypeError):
            return False
        return math.isclose(yes, self.cvs_yes, rel_tol=tol, abs_tol=tol) and math.isclose(
            no, self.cvs_no, rel_tol=tol, abs_tol=tol
        )

    def to_json(self) -> dict:
        return {
            "id": self.sample_id,
            "variant": self.variant.value,
            "p_yes_full": self.p_yes_full,
            "p_no_full": self.p_no_full,
            "p_yes_prior": self.p_yes_prior,
            "p_no_prior": self.p_no_prior,
            "cvs_yes": self.cvs_yes,
            "cvs_no": self.cvs_no,
        }

    @classmethod
    def from_json(cls, row: dict) -> CvsScore:
        return cls(
            sample_id=str(row["id"]),
            p_yes_full=float(row["p_yes_full"]),
            p_no_full=float(row["p_no_full"]),
            p_yes_prior=float(row["p_yes_prior"]),
            p_no_prior=float(row["p_no_prior"]),
            cvs_yes=float(row["cvs_yes"]),
            cvs_no=float(row["cvs_no"]),
            variant=ScoringVariant(row["variant"]),
        )


def score_sample(
    sample: SampleRecord,
    evaluator: Evaluator,
    templates: PromptTemplateSet,
    variant: ScoringVariant = ScoringVariant.STANDARD,
) -> CvsScore:
    """Query the evaluator in the full and prior contexts and combine the verdicts."""
    variant = ScoringVariant(variant)
    prompts = (
        render_full(sample, templates),
        render_prior(sample, templates, variant.prior_variant),
    )
    verdicts = []
    for prompt in prompts:
        try:
            verdicts.append(evaluator.query(prompt, sample))
        except EvaluatorError as exc:
            if exc.sample_id is None:
                exc.sample_id = sample.id
            if exc.context_kind is None:
                exc.context_kind = prompt.context_kind.value
            raise
    full, prior = verdicts
    return CvsScore.from_probs(
        sample.id, full.p_yes, full.p_no, prior.p_yes, prior.p_no, variant
    )


class ScoreCache:
    """Append-only JSONL store of finished scores.

    Lines that fail to parse, or whose scores do not follow from their
    probabilities, are ignored on load so those samples get re-scored. When an
    id appears more than once the last valid line wins.
    """

    def __init__(self, path: str | os.PathLike[str]) -> None:
        self.path = Path(path)

    def load(self, variant: ScoringVariant | None = None) -> dict[str, CvsScore]:
        scores: dict[str, CvsScore] = {}
        if not self.path.exists():
            return scores
        corrupt = 0
        with open(self.path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    score = CvsScore.from_json(json.loads(raw))
                except (json.JSONDecodeError, KeyError, ValueError, TypeError):
                    corrupt += 1
                    logger.warning("cache %s line %d unreadable; will re-score", self.path, lineno)
                    continue
                if not score.is_consistent():
                    corrupt += 1
                    logger.warning(
                        "cache %s line %d (id %s) fails recomputation; will re-score",
                        self.path, lineno, score.sample_id,
                    )
                    if variant is None or score.variant == variant:
                        scores.pop(score.sample_id, None)
                    continue
                if variant is None or score.variant == variant:
                    scores[score.sample_id] = score
        if corrupt:
            logger.warning("%d corrupt cache line(s) in %s", corrupt, self.path)
        return scores

    @contextmanager
    def appender(self) -> Iterator[Callable[[CvsScore], None]]:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        needs_newline = False
        if self.path.exists() and self.path.stat().st_size > 0:
            with open(self.path, "rb") as fh:
                fh.seek(-1, os.SEEK_END)
                needs_newline = fh.read(1) != b"\n"
        with open(self.path, "a", encoding="utf-8") as fh:
            if needs_newline:
                # previous run died mid-line; isolate the fragment
                fh.write("\n")

            def append(score: CvsScore) -> None:
                fh.write(json.dumps(score.to_json(), ensure_ascii=False))
                fh.write("\n")
                fh.flush()

            yield append


@dataclass(frozen=True)
class ScoreFailure:
    sample_id: str
    error: str


@dataclass
class ScoringRun:
    scores: list[CvsScore]
    failures: list[ScoreFailure] = field(default_factory=list)
    n_cached: int = 0
    n_scored: int = 0

    @property
    def n_failed(self) -> int:
        return len(self.failures)


def score_pool(
    records: Sequence[SampleRecord],
    evaluator: Evaluator,
    templates: PromptTemplateSet,
    variant: ScoringVariant = ScoringVariant.STANDARD,
    cache_path: str | os.PathLike[str] = "scores.jsonl",
    *,
    failure_policy: FailurePolicy = FailurePolicy.SKIP,
    concurrency: int = 1,
    progress: Callable[[ScoringRun], None] | None = None,
) -> ScoringRun:
    """Score every record not already in the cache, appending results as they finish.

    Output order follows ``records``. With ``concurrency > 1`` samples are
    scored on a thread pool but written to the cache in input order, so the
    cache file does not depend on completion timing.

    Under ``FailurePolicy.STRICT`` the first evaluator error aborts the run;
    everything finished before it is already on disk.
    """
    variant = ScoringVariant(variant)
    failure_policy = FailurePolicy(failure_policy)
    if concurrency < 1:
        raise ConfigError("concurrency must be >= 1")

    cache = ScoreCache(cache_path)
    cached = cache.load(variant)
    slots: list[CvsScore | None] = [cached.get(r.id) for r in records]
    run = ScoringRun(scores=[], n_cached=sum(s is not None for s in slots))
    todo = [(i, r) for i, r in enumerate(records) if slots[i] is None]
    logger.info(
        "scoring %d sample(s), %d already cached", len(todo), run.n_cached
    )

    def handle(i: int, rec: SampleRecord, outcome: CvsScore | BaseException, append) -> None:
        if isinstance(outcome, CvsScore):
            append(outcome)
            slots[i] = outcome
            run.n_scored += 1
        elif isinstance(outcome, VerdictShiftError) and failure_policy is FailurePolicy.SKIP:
            logger.warning("skipping %s: %s", rec.id, outcome)
            run.failures.append(ScoreFailure(rec.id, str(outcome)))
        else:
            raise outcome
        if progress is not None:
            progress(run)

    def attempt(rec: SampleRecord) -> CvsScore | BaseException:
        try:
            return score_sample(rec, evaluator, templates, variant)
        except VerdictShiftError as exc:
            return exc

    with cache.appender() as append:
        if concurrency == 1:
            for i, rec in todo:
                handle(i, rec, attempt(rec), append)
        else:
            window = concurrency * 4
            queue = iter(todo)
            pending: deque = deque()
            pool = ThreadPoolExecutor(max_workers=concurrency)
            try:
                for i, rec in queue:
                    pending.append((i, rec, pool.submit(attempt, rec)))
                    if len(pending) >= window:
                        break
                while pending:
                    i, rec, fut = pending.popleft()
                    handle(i, rec, fut.result(), append)
                    nxt = next(queue, None)
                    if nxt is not None:
                        pending.append((nxt[0], nxt[1], pool.submit(attempt, nxt[1])))
            finally:
                pool.shutdown(wait=True, cancel_futures=True)

    run.scores = [s for s in slots if s is not None]
    return run
