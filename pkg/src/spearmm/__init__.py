"""spearmm: spectral importance scoring and selective spherical-interpolation
merging for domain-adapted model checkpoints."""

from .archmap import ArchProfile, ComponentKind, MacroGroup, ParamLocator, classify, group_by_component
from .checkpoint_io import (
    Alignment,
    Checkpoint,
    TensorRecord,
    aligned_pairs,
    load_checkpoint,
    save_checkpoint,
)
from .errors import (
    AlignmentError,
    AntipodalError,
    CheckpointFormatError,
    EvaluatorError,
    SpearmmError,
    ValidationError,
)
from .estimator import SelectiveRestorer
from .merger import SlerpParams, apply_plan, slerp
from .metrics import MetricConfig, RawMetrics, ScoredRow, compute_metrics, compute_svdr, compute_swci, fuse_scores
from .planner import MergePlan, Policy, build_plan, plan_digest, rank_group, read_plan, write_plan
from .reports import AnalysisReport, HeatmapTable, analyze_checkpoints, frontier_sweep, heatmap_table, score_pairs
from .search import (
    GpSurrogate,
    SearchDim,
    SearchSpace,
    SearchTrial,
    expected_improvement,
    make_proxy_evaluator,
    propose_next,
    run_search,
)
from .spectral import EPSILON, SnrEstimate, Spectrum, estimate_snr, singular_values
from .synth import SynthSpec, generate_files, generate_pair

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "Alignment",
    "AnalysisReport",
    "AntipodalError",
    "ArchProfile",
    "Checkpoint",
    "CheckpointFormatError",
    "ComponentKind",
    "EPSILON",
    "EvaluatorError",
    "GpSurrogate",
    "HeatmapTable",
    "MacroGroup",
    "MergePlan",
    "MetricConfig",
    "ParamLocator",
    "Policy",
    "RawMetrics",
    "ScoredRow",
    "SearchDim",
    "SearchSpace",
    "SearchTrial",
    "SelectiveRestorer",
    "SlerpParams",
    "SnrEstimate",
    "SpearmmError",
    "Spectrum",
    "SynthSpec",
    "TensorRecord",
    "ValidationError",
    "aligned_pairs",
    "analyze_checkpoints",
    "apply_plan",
    "build_plan",
    "classify",
    "compute_metrics",
    "compute_svdr",
    "compute_swci",
    "estimate_snr",
    "expected_improvement",
    "frontier_sweep",
    "fuse_scores",
    "generate_files",
    "generate_pair",
    "group_by_component",
    "heatmap_table",
    "load_checkpoint",
    "make_proxy_evaluator",
    "plan_digest",
    "propose_next",
    "rank_group",
    "read_plan",
    "run_search",
    "save_checkpoint",
    "score_pairs",
    "singular_values",
    "slerp",
    "write_plan",
]
