"""Training-free selection of visual-instruction samples by conditional verdict shift."""

from .errors import (
    ConfigError,
    ConsistencyError,
    DataError,
    EvaluatorError,
    ManifestError,
    ProtocolError,
    TransportError,
    VerdictShiftError,
)
from .evaluator import (
    EvaluatorConfig,
    HttpEvaluator,
    MockEvaluator,
    VerdictProbs,
    extract_yes_no_probs,
    mock_verdict,
    query_verdict,
)
from .manifest import PoolStats, SampleRecord, load_manifest, write_manifest
from .prompting import (
    ContextKind,
    PriorVariant,
    PromptTemplateSet,
    RenderedPrompt,
    load_templates,
    render_full,
    render_prior,
)
from .reporting import BenchmarkEntry, BenchmarkReport, ScoreHistogram, compute_arp, histogram, summarize_run
from .scoring import CvsScore, FailurePolicy, ScoringVariant, cvs_shift, score_pool, score_sample
from .selection import SelectionConfig, SelectionResult, Strategy, filter_aligned, retention_fraction, select

__version__ = "0.1.0"
