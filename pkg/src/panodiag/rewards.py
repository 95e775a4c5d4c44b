"""Reward components for report scoring and tool-use shaping.

Three ingredients: a banded rubric score computed from finding-level
matching, a strict response-format check, and a gated diagnostic bonus
that pays out only while a query's recent tool usage sits below a
saturation ceiling.  A weighted sum combines them.
"""

from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

from .findings import Finding, MatchReport, categories_equivalent, match_findings

__all__ = [
    "snap_to_grid",
    "rubric_score",
    "score_band",
    "format_score",
    "GateParams",
    "ExplorationTracker",
    "diag_reward",
    "RewardWeights",
    "RewardBreakdown",
    "hybrid_reward",
    "sft_nll",
]

_SPURIOUS_CAP = 3
_SPURIOUS_PENALTY = 0.1
_MAJOR_PENALTY = 0.2


def snap_to_grid(value: float) -> float:
    """Round to the nearest 0.1, halves rounding up."""
    return math.floor(value * 10.0 + 0.5) / 10.0


def _category_overlap(predicted: Sequence[Finding], truth: Sequence[Finding]) -> bool:
    return any(
        categories_equivalent(p.category, t.category) for p in predicted for t in truth
    )


def score_band(report: MatchReport, recall: float, overlap: bool) -> tuple[float, float]:
    """Admissible score interval for a match outcome.

    A fully clean report pins to 1.0.  With nothing matched the score
    collapses to near zero, salvaging 0.1-0.2 only when at least the
    category vocabulary overlapped.  In between, high recall without
    major errors lands in 0.7-0.9 and partial credit in 0.3-0.6.
    """
    if not report.missing and not report.spurious and report.major_errors == 0:
        return (1.0, 1.0)
    if not report.matched:
        return (0.1, 0.2) if overlap else (0.0, 0.0)
    if recall >= 0.75 and report.major_errors == 0:
        return (0.7, 0.9)
    if recall >= 0.3 or report.major_errors > 0:
        return (0.3, 0.6)
    return (0.1, 0.2)


def rubric_score(predicted: Sequence[Finding], truth: Sequence[Finding]) -> float:
    """Score a predicted finding list against ground truth on a 0..1 grid.

    Recall drives the raw value; spurious findings dock 0.1 each (capped
    at three) and category-conflicting assertions on known teeth dock 0.2
    each.  The snapped value is then clamped into the band the match
    outcome permits, so e.g. a report that matched nothing cannot ride a
    lucky arithmetic outcome above 0.2.
    """
    report = match_findings(list(predicted), list(truth))
    if not truth:
        if not predicted:
            return 1.0
        penalty = _SPURIOUS_PENALTY * min(len(report.spurious), _SPURIOUS_CAP)
        return snap_to_grid(max(0.0, 1.0 - penalty))
    recall = len(report.matched) / len(truth)
    raw = (
        recall
        - _SPURIOUS_PENALTY * min(len(report.spurious), _SPURIOUS_CAP)
        - _MAJOR_PENALTY * report.major_errors
    )
    snapped = snap_to_grid(min(1.0, max(0.0, raw)))
    lo, hi = score_band(report, recall, _category_overlap(predicted, truth))
    return min(max(snapped, lo), hi)


_FORMAT_RE = re.compile(
    r"\s*<Think>.+?</Think>\s*(?:TOOL [^\n]+|FINAL [^\n]+)\s*",
    re.DOTALL,
)


def format_score(response: str) -> float:
    """1.0 when the response is one think block plus one action line."""
    return 1.0 if _FORMAT_RE.fullmatch(response) else 0.0


@dataclass(frozen=True)
class GateParams:
    """Knobs for the gated diagnostic bonus.

    ``threshold`` is the rubric floor below which no bonus is paid,
    ``scale`` multiplies the headroom, ``ceiling`` is the saturation
    level at which the bonus dries up, and ``window`` bounds the
    per-query history used to estimate saturation.
    """

    threshold: float = 0.5
    scale: float = 0.3
    ceiling: float = 2.0
    window: int = 32

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError("window must be at least 1")
        if self.ceiling < 0.0 or self.scale < 0.0:
            raise ValueError("scale and ceiling must be non-negative")


class ExplorationTracker:
    """Per-query running estimate of recent tool-call counts.

    Each query id keeps a bounded window of observed tool counts; the
    saturation estimate is their mean.  An empty window reports the
    ceiling itself, so a bonus gated on headroom pays nothing until the
    first observation lands and all runs start from identical state.
    """

    def __init__(self, window: int = 32, ceiling: float = 2.0) -> None:
        if window < 1:
            raise ValueError("window must be at least 1")
        self._window = window
        self._ceiling = float(ceiling)
        self._history: dict[str, deque[int]] = {}

    @property
    def window(self) -> int:
        return self._window

    @property
    def ceiling(self) -> float:
        return self._ceiling

    def observe(self, query_id: str, n_tool: int) -> None:
        if n_tool < 0:
            raise ValueError("tool count cannot be negative")
        self._history.setdefault(query_id, deque(maxlen=self._window)).append(n_tool)

    def estimate(self, query_id: str) -> float:
        values = self._history.get(query_id)
        if not values:
            return self._ceiling
        return math.fsum(values) / len(values)

    def window_values(self, query_id: str) -> tuple[int, ...]:
        return tuple(self._history.get(query_id, ()))

    def tracked_queries(self) -> tuple[str, ...]:
        return tuple(self._history)


def diag_reward(
    rubric_value: float,
    n_tool: int,
    saturation: float,
    params: GateParams = GateParams(),
) -> float:
    """Bonus for tool-assisted answers that are also correct enough.

    Pays ``scale * (ceiling - saturation)`` when the rubric clears the
    threshold and at least one tool call happened; otherwise zero.  The
    headroom term is floored at zero so an over-saturated query can never
    be penalized, only ignored.
    """
    if rubric_value <= params.threshold or n_tool <= 0:
        return 0.0
    headroom = max(0.0, params.ceiling - saturation)
    return params.scale * headroom


@dataclass(frozen=True)
class RewardWeights:
    rubric: float = 1.0
    format: float = 0.0
    diagnostic: float = 1.0


@dataclass(frozen=True)
class RewardBreakdown:
    rubric: float
    format: float
    diagnostic: float
    total: float


def hybrid_reward(
    rubric_value: float,
    format_value: float,
    diag_value: float,
    weights: RewardWeights = RewardWeights(),
) -> RewardBreakdown:
    """Weighted combination of the three reward components."""
    total = math.fsum(
        (
            weights.rubric * rubric_value,
            weights.format * format_value,
            weights.diagnostic * diag_value,
        )
    )
    return RewardBreakdown(rubric_value, format_value, diag_value, total)


def sft_nll(token_logprobs: Iterable[float]) -> float:
    """Mean negative log-likelihood over a token sequence."""
    values = list(token_logprobs)
    if not values:
        raise ValueError("cannot average over zero tokens")
    return -math.fsum(values) / len(values)
