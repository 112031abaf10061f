"""Alignment filtering and budgeted subset selection over scored samples."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .scoring import CvsScore

logger = logging.getLogger(__name__)


class Strategy(str, enum.Enum):
    LOW = "low"  # ascending cvs_yes among aligned samples
    HIGH = "high"  # descending cvs_yes among aligned samples
    NO = "no"  # descending cvs_no over the whole pool
    RANDOM = "random"  # seeded uniform draw over the whole pool


@dataclass(frozen=True)
class SelectionConfig:
    strategy: Strategy = Strategy.LOW
    budget_count: int | None = None
    budget_ratio: float | None = None
    yes_threshold: float = 0.0
    no_threshold: float = 0.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "strategy", Strategy(self.strategy))
        except ValueError:
            raise ConfigError(f"unknown strategy {self.strategy!r}") from None
        if (self.budget_count is None) == (self.budget_ratio is None):
            raise ConfigError("give exactly one of budget_count or budget_ratio")
        if self.budget_count is not None and self.budget_count <= 0:
            raise ConfigError(f"budget_count must be positive, got {self.budget_count}")
        if self.budget_ratio is not None and not 0.0 < self.budget_ratio <= 1.0:
            raise ConfigError(f"budget_ratio must lie in (0, 1], got {self.budget_ratio}")
        for name in ("yes_threshold", "no_threshold"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if not -(2**63) <= self.rng_seed < 2**64:
            raise ConfigError("rng_seed must fit in 64 bits")

    def resolve_budget(self, pool_size: int) -> int:
        """Absolute budget K for a pool of ``pool_size`` samples.

        Ratio budgets round down but never below 1 on a non-empty pool.
        """
        if self.budget_count is not None:
            return self.budget_count
        if pool_size == 0:
            return 0
        return max(1, math.floor(self.budget_ratio * pool_size))


@dataclass
class SelectionResult:
    selected_ids: list[str]
    mask: dict[str, int]
    filtered_pool_size: int
    strategy_used: Strategy
    scores_snapshot_ref: str | None = None
    pool_size: int = 0
    budget_requested: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def budget_effective(self) -> int:
        return len(self.selected_ids)

    @property
    def retention_fraction(self) -> float | None:
        if self.pool_size == 0:
            return None
        return self.filtered_pool_size / self.pool_size


def passes_alignment(score: CvsScore, yes_threshold: float = 0.0, no_threshold: float = 0.0) -> bool:
    return score.cvs_yes > yes_threshold and score.cvs_no < no_threshold


def filter_aligned(
    scores: Sequence[CvsScore],
    yes_threshold: float = 0.0,
    no_threshold: float = 0.0,
) -> list[CvsScore]:
    """Keep samples where the question raises P(yes) and lowers P(no).

    Both inequalities are strict, so a score sitting exactly on a threshold is
    dropped. Input order is preserved.
    """
    return [s for s in scores if passes_alignment(s, yes_threshold, no_threshold)]


def retention_fraction(
    scores: Sequence[CvsScore],
    yes_threshold: float = 0.0,
    no_threshold: float = 0.0,
) -> float:
    if not scores:
        raise DataError("retention_fraction of an empty score set is undefined")
    return len(filter_aligned(scores, yes_threshold, no_threshold)) / len(scores)


def _ranked(scores: Sequence[CvsScore], strategy: Strategy) -> list[CvsScore]:
    # the id is the final key so equal scores have one fixed order regardless of input order
    if strategy is Strategy.LOW:
        return sorted(scores, key=lambda s: (s.cvs_yes, s.sample_id))
    if strategy is Strategy.HIGH:
        return sorted(scores, key=lambda s: (-s.cvs_yes, s.sample_id))
    if strategy is Strategy.NO:
        return sorted(scores, key=lambda s: (-s.cvs_no, s.sample_id))
    raise ValueError(f"{strategy} has no deterministic ranking")


def select(
    scores: Sequence[CvsScore],
    config: SelectionConfig,
    *,
    scores_snapshot_ref: str | None = None,
) -> SelectionResult:
    """Pick up to K samples according to ``config.strategy``.

    LOW and HIGH rank only samples that pass the alignment filter; NO and
    RANDOM draw from the whole pool. When the eligible pool is smaller than
    K, all of it is returned.
    """
    ids = [s.sample_id for s in scores]
    if len(set(ids)) != len(ids):
        raise DataError("score set contains duplicate sample ids")
    pool_size = len(scores)
    budget = config.resolve_budget(pool_size)
    aligned = filter_aligned(scores, config.yes_threshold, config.no_threshold)
    warnings: list[str] = []

    if config.strategy in (Strategy.LOW, Strategy.HIGH):
        eligible = aligned
    else:
        eligible = list(scores)

    if config.strategy is Strategy.RANDOM:
        pool_ids = sorted(ids)
        rng = np.random.default_rng(config.rng_seed % 2**64)
        take = min(budget, len(pool_ids))
        picks = rng.choice(len(pool_ids), size=take, replace=False) if take else []
        selected = [pool_ids[int(j)] for j in picks]
    else:
        selected = [s.sample_id for s in _ranked(eligible, config.strategy)[:budget]]

    if not eligible and pool_size:
        warnings.append(f"no eligible samples for strategy {config.strategy.value}")
    elif len(eligible) < budget:
        warnings.append(
            f"budget {budget} exceeds eligible pool of {len(eligible)}; selecting all of it"
        )
    for w in warnings:
        logger.warning(w)

    chosen = set(selected)
    return SelectionResult(
        selected_ids=selected,
        mask={sid: int(sid in chosen) for sid in ids},
        filtered_pool_size=len(aligned),
        strategy_used=config.strategy,
        scores_snapshot_ref=scores_snapshot_ref,
        pool_size=pool_size,
        budget_requested=budget,
        warnings=warnings,
    )


def selection_report(result: SelectionResult, config: SelectionConfig, **extra) -> dict:
    """Sidecar metadata written next to a selected-subset manifest."""
    report = {
        "strategy": result.strategy_used.value,
        "budget_requested": result.budget_requested,
        "budget_effective": result.budget_effective,
        "pool_size": result.pool_size,
        "filtered_pool_size": result.filtered_pool_size,
        "retention_fraction": result.retention_fraction,
        "rng_seed": config.rng_seed if config.strategy is Strategy.RANDOM else None,
        "budget_count": config.budget_count,
        "budget_ratio": config.budget_ratio,
        "yes_threshold": config.yes_threshold,
        "no_threshold": config.no_threshold,
    }
    report.update(extra)
    return report
