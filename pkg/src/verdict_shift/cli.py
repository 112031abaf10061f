"""Command-line entry point: ``verdict-shift {score,select,stats,export}``.

Scoring is the only phase that talks to the evaluator; the other subcommands
work purely from the manifest and the score cache, so one scored pool can be
re-selected under many budgets and strategies.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 transport error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import ConfigError, ConsistencyError, DataError, VerdictShiftError
from .evaluator import EvaluatorConfig, HttpEvaluator, MockEvaluator, load_mock_table
from .manifest import SampleRecord, load_manifest, write_manifest
from .prompting import PromptTemplateSet, load_templates
from .reporting import load_benchmarks, summarize_run
from .scoring import CvsScore, FailurePolicy, ScoreCache, ScoringRun, ScoringVariant, score_pool
from .selection import SelectionConfig, Strategy, select, selection_report

logger = logging.getLogger("verdict_shift")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRANSPORT = 4


@dataclass(frozen=True)
class RunConfig:
    command: str
    manifest_path: Path | None
    cache_path: Path
    output_path: Path | None
    evaluator: EvaluatorConfig | None
    mock_table_path: Path | None
    templates: PromptTemplateSet
    variant: ScoringVariant
    selection: SelectionConfig | None
    concurrency_cap: int
    failure_policy: FailurePolicy
    benchmarks_path: Path | None = None
    check_images: bool = False
    hist_bins: int = 20


def _add_common(p: argparse.ArgumentParser, *, manifest_required: bool) -> None:
    p.add_argument("--manifest", type=Path, required=manifest_required, help="input JSONL manifest")
    p.add_argument("--cache", type=Path, required=True, help="score cache (JSONL)")
    p.add_argument(
        "--variant",
        choices=[v.value for v in ScoringVariant],
        default=ScoringVariant.STANDARD.value,
        help="prior context: image+answer (standard) or answer only (no-visual-anchor)",
    )
    p.add_argument(
        "--failure-policy",
        choices=[f.value for f in FailurePolicy],
        default=FailurePolicy.SKIP.value,
    )
    p.add_argument("-v", "--verbose", action="store_true")


def _add_selection(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("selection")
    g.add_argument("--strategy", default=Strategy.LOW.value, help="low, high, no or random")
    budget = g.add_mutually_exclusive_group()
    budget.add_argument("--budget-count", type=int, help="absolute budget K")
    budget.add_argument("--budget-ratio", type=float, help="budget as a fraction of the pool")
    g.add_argument("--yes-threshold", type=float, default=0.0)
    g.add_argument("--no-threshold", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0, help="RNG seed for the random strategy")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="verdict-shift",
        description="Score, filter and select visual-instruction samples by conditional verdict shift.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="query the evaluator and fill the score cache")
    _add_common(p, manifest_required=True)
    p.add_argument("--endpoint", help="chat-completions URL of the evaluator server")
    p.add_argument("--model", help="evaluator model name")
    p.add_argument("--mock-table", type=Path, help="use the deterministic mock evaluator with this table")
    p.add_argument("--templates", type=Path, help="JSON prompt template file")
    p.add_argument("--concurrency", type=int, default=4, help="max in-flight evaluator requests")
    p.add_argument("--top-logprobs", type=int, default=20)
    p.add_argument("--timeout", type=float, default=60.0, help="per-request timeout in seconds")
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--probability-floor", type=float, default=1e-10)
    p.add_argument("--check-images", action="store_true", help="verify local image files exist")

    p = sub.add_parser("select", help="filter and select a budgeted subset")
    _add_common(p, manifest_required=True)
    p.add_argument("--out", type=Path, required=True, help="output manifest of selected samples")
    _add_selection(p)

    p = sub.add_parser("stats", help="summarise scores, retention and benchmark ARP")
    _add_common(p, manifest_required=False)
    p.add_argument("--out", type=Path, required=True, help="summary JSON path")
    p.add_argument("--benchmarks", type=Path, help="benchmark results JSONL for ARP")
    p.add_argument("--hist-bins", type=int, default=20)
    _add_selection(p)

    p = sub.add_parser("export", help="write the per-sample selection mask with scores")
    _add_common(p, manifest_required=True)
    p.add_argument("--out", type=Path, required=True, help="mask JSONL path")
    _add_selection(p)
    return parser


def _selection_config(args: argparse.Namespace, required: bool) -> SelectionConfig | None:
    if args.budget_count is None and args.budget_ratio is None:
        if required:
            raise ConfigError("one of --budget-count or --budget-ratio is required")
        return None
    return SelectionConfig(
        strategy=args.strategy.lower(),
        budget_count=args.budget_count,
        budget_ratio=args.budget_ratio,
        yes_threshold=args.yes_threshold,
        no_threshold=args.no_threshold,
        rng_seed=args.seed,
    )


def _require_file(path: Path | None, flag: str) -> None:
    if path is not None and not path.is_file():
        raise ConfigError(f"{flag}: no such file {path}")


def build_config(args: argparse.Namespace) -> RunConfig:
    """Validate every flag up front; nothing is read from the network or written before this."""
    cmd = args.command
    _require_file(args.manifest, "--manifest")
    evaluator = None
    mock_table = None
    templates = PromptTemplateSet()
    concurrency = 1
    selection = None
    if cmd == "score":
        mock_table = args.mock_table
        if mock_table is not None:
            _require_file(mock_table, "--mock-table")
        else:
            if not args.endpoint or not args.model:
                raise ConfigError("score needs --endpoint and --model, or --mock-table")
            evaluator = EvaluatorConfig(
                endpoint=args.endpoint,
                model_name=args.model,
                top_logprobs_requested=args.top_logprobs,
                request_timeout=args.timeout,
                max_retries=args.max_retries,
                probability_floor=args.probability_floor,
                max_in_flight=max(1, args.concurrency),
            )
        templates = load_templates(args.templates)
        concurrency = args.concurrency
        if concurrency < 1:
            raise ConfigError("--concurrency must be >= 1")
    else:
        selection = _selection_config(args, required=cmd in ("select", "export"))
    if cmd in ("select", "export", "stats"):
        _require_file(args.cache, "--cache")
    benchmarks = getattr(args, "benchmarks", None)
    _require_file(benchmarks, "--benchmarks")
    out = getattr(args, "out", None)

    written = [p.resolve() for p in (args.cache if cmd == "score" else None, out) if p is not None]
    inputs = [p.resolve() for p in (args.manifest, args.cache if cmd != "score" else None) if p is not None]
    if len(set(written)) != len(written) or set(written) & set(inputs):
        raise ConfigError("output paths must differ from each other and from the inputs")
    hist_bins = getattr(args, "hist_bins", 20)
    if hist_bins < 1:
        raise ConfigError("--hist-bins must be >= 1")

    return RunConfig(
        command=cmd,
        manifest_path=args.manifest,
        cache_path=args.cache,
        output_path=out,
        evaluator=evaluator,
        mock_table_path=mock_table,
        templates=templates,
        variant=ScoringVariant(args.variant),
        selection=selection,
        concurrency_cap=concurrency,
        failure_policy=FailurePolicy(args.failure_policy),
        benchmarks_path=benchmarks,
        check_images=getattr(args, "check_images", False),
        hist_bins=hist_bins,
    )


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def _write_json(path: Path, obj: object) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def cmd_score(config: RunConfig) -> int:
    records, stats = load_manifest(config.manifest_path, check_images=config.check_images)
    if config.mock_table_path is not None:
        evaluator = MockEvaluator(table=load_mock_table(config.mock_table_path))
    else:
        evaluator = HttpEvaluator(config.evaluator)

    step = max(1, len(records) // 20)

    def progress(run: ScoringRun) -> None:
        done = run.n_scored + run.n_failed
        if done % step == 0:
            logger.info("progress: scored=%d cached=%d failed=%d", run.n_scored, run.n_cached, run.n_failed)

    try:
        run = score_pool(
            records,
            evaluator,
            config.templates,
            config.variant,
            config.cache_path,
            failure_policy=config.failure_policy,
            concurrency=config.concurrency_cap,
            progress=progress,
        )
    finally:
        if isinstance(evaluator, HttpEvaluator):
            evaluator.close()

    failures_path = _sidecar(config.cache_path, ".failures.jsonl")
    if run.failures:
        with open(failures_path, "w", encoding="utf-8") as fh:
            for f in run.failures:
                fh.write(json.dumps({"id": f.sample_id, "error": f.error}, ensure_ascii=False) + "\n")
    elif failures_path.exists():
        failures_path.unlink()
    print(
        f"pool={stats.total_count} scored={run.n_scored} cached={run.n_cached} failed={run.n_failed}",
        file=sys.stderr,
    )
    return EXIT_OK


def _scores_for_manifest(config: RunConfig, records: Sequence[SampleRecord]) -> list[CvsScore]:
    cached = ScoreCache(config.cache_path).load(config.variant)
    missing = [r.id for r in records if r.id not in cached]
    if missing:
        if config.failure_policy is FailurePolicy.STRICT:
            raise ConsistencyError(f"{len(missing)} sample(s) missing from cache: {', '.join(missing)}", missing)
        logger.warning("%d sample(s) missing from cache; excluded", len(missing))
    return [cached[r.id] for r in records if r.id in cached]


def cmd_select(config: RunConfig) -> int:
    records, _ = load_manifest(config.manifest_path)
    scores = _scores_for_manifest(config, records)
    if not scores:
        raise DataError("no scored samples to select from")
    result = select(scores, config.selection, scores_snapshot_ref=str(config.cache_path))
    by_id = {r.id: r for r in records}
    write_manifest((by_id[sid] for sid in result.selected_ids), config.output_path)
    report = selection_report(result, config.selection, variant=config.variant.value)
    _write_json(_sidecar(config.output_path, ".report.json"), report)
    print(
        f"selected {result.budget_effective} of {result.pool_size} "
        f"(strategy={result.strategy_used.value}, aligned={result.filtered_pool_size})",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_stats(config: RunConfig) -> int:
    if config.manifest_path is not None:
        records, _ = load_manifest(config.manifest_path)
        scores = _scores_for_manifest(config, records)
    else:
        scores = list(ScoreCache(config.cache_path).load(config.variant).values())
    if not scores:
        raise DataError(f"score cache {config.cache_path} has no {config.variant.value} scores")
    benchmarks = load_benchmarks(config.benchmarks_path) if config.benchmarks_path else None
    sel_cfg = config.selection
    result = select(scores, sel_cfg, scores_snapshot_ref=str(config.cache_path)) if sel_cfg else None
    summary = summarize_run(
        scores,
        result,
        yes_threshold=sel_cfg.yes_threshold if sel_cfg else 0.0,
        no_threshold=sel_cfg.no_threshold if sel_cfg else 0.0,
        benchmarks=benchmarks,
        bins=config.hist_bins,
    )
    out = config.output_path
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, summary.to_json())
    text = summary.to_text()
    _sidecar(out, ".txt").write_text(text, encoding="utf-8")
    for metric, hist in summary.histograms.items():
        _sidecar(out, f".hist_{metric}.txt").write_text(hist.to_text(), encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_export(config: RunConfig) -> int:
    records, _ = load_manifest(config.manifest_path)
    scores = _scores_for_manifest(config, records)
    if not scores:
        raise DataError("no scored samples to export")
    result = select(scores, config.selection)
    with open(config.output_path, "w", encoding="utf-8") as fh:
        for s in scores:
            row = {"id": s.sample_id, "selected": result.mask[s.sample_id],
                   "cvs_yes": s.cvs_yes, "cvs_no": s.cvs_no}
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return EXIT_OK


COMMANDS = {"score": cmd_score, "select": cmd_select, "stats": cmd_stats, "export": cmd_export}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = build_config(args)
        return COMMANDS[config.command](config)
    except VerdictShiftError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
