from .aggregate import AVERAGE_KEY, METRIC_NAMES, aggregate_group, case_values, format_cell, summarize
from .metrics import boundary_mask, challenge_score, dice_score, evaluate_pair, hausdorff_mm, phase_view_average
from .models import CaseMetrics, GroupSummary, MetricSummary, Pathology, Phase, PhaseViewMetrics, View
from .stats import WilcoxonResult, wilcoxon_signed_rank

__all__ = [
    "AVERAGE_KEY",
    "METRIC_NAMES",
    "CaseMetrics",
    "GroupSummary",
    "MetricSummary",
    "Pathology",
    "Phase",
    "PhaseViewMetrics",
    "View",
    "WilcoxonResult",
    "aggregate_group",
    "boundary_mask",
    "case_values",
    "challenge_score",
    "dice_score",
    "evaluate_pair",
    "format_cell",
    "hausdorff_mm",
    "phase_view_average",
    "summarize",
    "wilcoxon_signed_rank",
]
