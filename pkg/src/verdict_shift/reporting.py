"""Score summaries, histograms and Average Relative Performance (ARP)."""

from __future__ import annotations

import bisect
import enum
import json
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ConsistencyError, DataError
from .scoring import CvsScore
from .selection import SelectionResult, retention_fraction

QUANTILE_LEVELS = (0.0, 0.25, 0.5, 0.75, 1.0)
QUANTILE_NAMES = ("min", "q25", "median", "q75", "max")


class Metric(str, enum.Enum):
    CVS_YES = "cvs_yes"
    CVS_NO = "cvs_no"


@dataclass(frozen=True)
class BenchmarkEntry:
    benchmark_name: str
    subset_score: float
    full_score: float

    @property
    def relative(self) -> float:
        return self.subset_score / self.full_score * 100.0


@dataclass(frozen=True)
class BenchmarkReport:
    entries: tuple[BenchmarkEntry, ...]
    arp: float

    def to_json(self) -> dict:
        return {
            "arp": self.arp,
            "arp_weighting": "unweighted",
            "benchmarks": [
                {
                    "benchmark": e.benchmark_name,
                    "subset_score": e.subset_score,
                    "full_score": e.full_score,
                    "relative": e.relative,
                }
                for e in self.entries
            ],
        }


def compute_arp(entries: Sequence[BenchmarkEntry | tuple]) -> float:
    """Unweighted mean over benchmarks of ``subset / full * 100``.

    Accepts :class:`BenchmarkEntry` objects or ``(subset, full)`` /
    ``(name, subset, full)`` tuples.
    """
    entries = [_as_entry(e) for e in entries]
    if not entries:
        raise DataError("ARP needs at least one benchmark entry")
    for e in entries:
        if not e.full_score > 0:
            raise DataError(f"{e.benchmark_name}: full_score must be > 0, got {e.full_score}")
        if e.subset_score < 0:
            raise DataError(f"{e.benchmark_name}: subset_score must be >= 0")
    return math.fsum(e.relative for e in entries) / len(entries)


def _as_entry(e: BenchmarkEntry | tuple) -> BenchmarkEntry:
    if isinstance(e, BenchmarkEntry):
        return e
    if len(e) == 2:
        return BenchmarkEntry("", float(e[0]), float(e[1]))
    name, subset, full = e
    return BenchmarkEntry(str(name), float(subset), float(full))


def benchmark_report(entries: Sequence[BenchmarkEntry]) -> BenchmarkReport:
    return BenchmarkReport(tuple(entries), compute_arp(entries))


def load_benchmarks(path: str | os.PathLike[str]) -> list[BenchmarkEntry]:
    """Read ``{"benchmark", "subset_score", "full_score"}`` JSONL rows."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                row = json.loads(raw)
                entry = BenchmarkEntry(
                    str(row["benchmark"]), float(row["subset_score"]), float(row["full_score"])
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"benchmark file {path} line {lineno}: {exc!r}") from None
            if not (math.isfinite(entry.subset_score) and math.isfinite(entry.full_score)):
                raise DataError(f"benchmark file {path} line {lineno}: non-finite score")
            entries.append(entry)
    return entries


@dataclass(frozen=True)
class ScoreHistogram:
    metric: Metric
    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]
    underflow: int = 0
    overflow: int = 0

    def to_text(self) -> str:
        """Two whitespace-separated columns: bin lower edge, count."""
        lines = [f"# {self.metric.value} underflow={self.underflow} overflow={self.overflow}"]
        lines += [f"{lo!r}\t{c}" for lo, c in zip(self.bin_edges[:-1], self.counts)]
        return "\n".join(lines) + "\n"


def histogram(
    scores: Sequence[CvsScore],
    metric: Metric | str,
    bin_edges: Sequence[float],
) -> ScoreHistogram:
    """Count scores into half-open bins ``[e_i, e_{i+1})``.

    Values below the first edge or at/above the last go to ``underflow`` /
    ``overflow``; non-finite values are ignored.
    """
    metric = Metric(metric)
    edges = [float(e) for e in bin_edges]
    if len(edges) < 2:
        raise ConfigError("histogram needs at least two bin edges")
    if any(not math.isfinite(e) for e in edges):
        raise ConfigError("histogram edges must be finite")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ConfigError("histogram edges must be strictly increasing")
    counts = [0] * (len(edges) - 1)
    under = over = 0
    for s in scores:
        v = getattr(s, metric.value)
        if not math.isfinite(v):
            continue
        if v < edges[0]:
            under += 1
        elif v >= edges[-1]:
            over += 1
        else:
            counts[bisect.bisect_right(edges, v) - 1] += 1
    return ScoreHistogram(metric, tuple(edges), tuple(counts), under, over)


def default_edges(values: Sequence[float], bins: int = 20) -> list[float]:
    """Equal-width edges covering every value, the maximum included."""
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return [0.0, 1.0]
    lo, hi = min(finite), max(finite)
    if lo == hi:
        return [lo, lo + 1.0]
    edges = list(np.linspace(lo, hi, bins + 1))
    edges[-1] = float(np.nextafter(hi, math.inf))
    return [float(e) for e in edges]


def quantiles(values: Sequence[float]) -> dict[str, float] | None:
    if not values:
        return None
    qs = np.quantile(np.asarray(values, dtype=float), QUANTILE_LEVELS)
    return {name: float(q) for name, q in zip(QUANTILE_NAMES, qs)}


@dataclass
class RunSummary:
    pool_size: int
    retention_fraction: float | None
    quantiles: dict[str, dict[str, float] | None]
    selection: dict | None = None
    benchmarks: BenchmarkReport | None = None
    histograms: dict[str, ScoreHistogram] = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "pool_size": self.pool_size,
            "retention_fraction": self.retention_fraction,
            "quantiles": self.quantiles,
            "selection": self.selection,
        }
        if self.benchmarks is not None:
            out["benchmarks"] = self.benchmarks.to_json()
        return out

    def to_text(self) -> str:
        lines = [f"pool size:          {self.pool_size}"]
        if self.retention_fraction is not None:
            lines.append(f"retention fraction: {self.retention_fraction:.4f}")
        for metric, q in self.quantiles.items():
            if q is None:
                lines.append(f"{metric}: no scores")
            else:
                cells = "  ".join(f"{k}={v:.4f}" for k, v in q.items())
                lines.append(f"{metric}: {cells}")
        if self.selection is None or not self.selection.get("selected"):
            lines.append("selection: (empty)")
        else:
            sel = self.selection
            lines.append(
                f"selection: strategy={sel['strategy']} selected={sel['budget_effective']}"
                f"/{sel['budget_requested']} eligible={sel['eligible_pool_size']}"
            )
        if self.benchmarks is not None:
            lines.append(f"ARP (unweighted, {len(self.benchmarks.entries)} benchmarks): "
                         f"{self.benchmarks.arp:.2f}")
        return "\n".join(lines) + "\n"


def summarize_run(
    scores: Sequence[CvsScore],
    selection_result: SelectionResult | None = None,
    *,
    yes_threshold: float = 0.0,
    no_threshold: float = 0.0,
    benchmarks: Sequence[BenchmarkEntry] | None = None,
    bins: int = 20,
) -> RunSummary:
    """Collect pool size, retention, score quantiles and selection usage.

    Raises:
        ConsistencyError: if the selection names ids that were never scored.
    """
    scored = {s.sample_id for s in scores}
    selection = None
    if selection_result is not None:
        unknown = [sid for sid in selection_result.selected_ids if sid not in scored]
        unknown += [sid for sid in selection_result.mask if sid not in scored]
        if unknown:
            unknown = sorted(set(unknown))
            raise ConsistencyError(f"selected ids missing from scores: {', '.join(unknown)}", unknown)
        strat = selection_result.strategy_used.value
        eligible = (
            selection_result.filtered_pool_size if strat in ("low", "high") else selection_result.pool_size
        )
        selection = {
            "strategy": strat,
            "budget_requested": selection_result.budget_requested,
            "budget_effective": selection_result.budget_effective,
            "eligible_pool_size": eligible,
            "selected": list(selection_result.selected_ids),
        }
    summary = RunSummary(
        pool_size=len(scores),
        retention_fraction=retention_fraction(scores, yes_threshold, no_threshold) if scores else None,
        quantiles={
            m.value: quantiles([getattr(s, m.value) for s in scores]) for m in Metric
        },
        selection=selection,
        benchmarks=benchmark_report(benchmarks) if benchmarks else None,
    )
    for m in Metric:
        values = [getattr(s, m.value) for s in scores]
        summary.histograms[m.value] = histogram(scores, m, default_edges(values, bins))
    return summary
