"""Benchmark evaluation: judges, Avg@k / pass@1 reports, stability stats.

Two judge backends score a prediction against an item's ground truth on
the 0.1 grid: a deterministic local rule judge (findings extraction plus
the scoring rubric) and a remote chat-completion judge driven by shipped
prompt templates.  ``evaluate`` runs a policy over a benchmark k times
and aggregates; ``stability_stats`` and ``dynamics_report`` cover the
run-to-run and training-time views.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import statistics
import time
import urllib.error
import urllib.request
import warnings
from collections import defaultdict
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Callable, Mapping, Protocol, Sequence

from .findings import Finding, findings_from_text
from .imaging import RasterImage, Region
from .rewards import rubric_score
from .trajectory import EmptyInput, Policy, TrajectorySummary, run_episode, trajectory_stats

__all__ = [
    "DIFFICULTIES",
    "BenchmarkFormatError",
    "JudgeFailure",
    "TransportError",
    "UnparsableScore",
    "ZeroMean",
    "BenchmarkItem",
    "read_benchmark",
    "write_benchmark",
    "Judge",
    "LocalRuleJudge",
    "RemoteJudgeConfig",
    "RemoteJudge",
    "load_judge_prompts",
    "render_judge_prompt",
    "parse_judge_score",
    "StabilityStats",
    "stability_stats",
    "CheckpointStats",
    "dynamics_report",
    "EvalReport",
    "evaluate",
]

DIFFICULTIES = ("Simple", "Moderate", "Complex")


class BenchmarkFormatError(ValueError):
    """A benchmark file or item violates the schema."""


class JudgeFailure(RuntimeError):
    """A judge could not score an item; recorded per item, never fatal."""


class TransportError(JudgeFailure):
    """The remote judge endpoint could not be reached or answered garbage."""


class UnparsableScore(JudgeFailure):
    """The judge replied with something other than a bare grid score."""


class ZeroMean(ValueError):
    """CV is undefined when the mean of the run means is not positive."""


@dataclass(frozen=True)
class BenchmarkItem:
    """One open-ended question over one radiograph."""

    item_id: str
    image_ref: str
    question: str
    gt_answer: str
    gt_findings: tuple[Finding, ...] = ()
    difficulty: str = "Simple"

    def __post_init__(self) -> None:
        object.__setattr__(self, "gt_findings", tuple(self.gt_findings))
        if not self.item_id:
            raise BenchmarkFormatError("item id must be non-empty")
        if not self.question.strip():
            raise BenchmarkFormatError(f"item {self.item_id!r}: question must be non-empty")
        if not self.gt_answer.strip():
            raise BenchmarkFormatError(f"item {self.item_id!r}: ground truth must be non-empty")
        if self.difficulty not in DIFFICULTIES:
            raise BenchmarkFormatError(
                f"item {self.item_id!r}: difficulty must be one of {DIFFICULTIES}, "
                f"got {self.difficulty!r}"
            )


def _item_to_json(item: BenchmarkItem) -> dict:
    findings = []
    for f in item.gt_findings:
        entry: dict = {"category": f.category, "teeth": list(f.tooth_ids)}
        if f.region is not None:
            entry["bbox"] = list(f.region.as_tuple())
        findings.append(entry)
    return {
        "id": item.item_id,
        "image": item.image_ref,
        "question": item.question,
        "gt_answer": item.gt_answer,
        "gt_findings": findings,
        "difficulty": item.difficulty,
    }


def _item_from_json(payload: Mapping) -> BenchmarkItem:
    try:
        findings = tuple(
            Finding(
                category=str(f["category"]),
                tooth_ids=tuple(str(t) for t in f.get("teeth", [])),
                region=Region(*f["bbox"]) if f.get("bbox") else None,
            )
            for f in payload.get("gt_findings", [])
        )
        return BenchmarkItem(
            item_id=str(payload["id"]),
            image_ref=str(payload["image"]),
            question=str(payload["question"]),
            gt_answer=str(payload["gt_answer"]),
            gt_findings=findings,
            difficulty=str(payload["difficulty"]),
        )
    except (KeyError, TypeError) as exc:
        raise BenchmarkFormatError(f"malformed benchmark item: {exc}") from exc


def write_benchmark(items: Sequence[BenchmarkItem], path) -> int:
    with open(path, "w", encoding="utf-8") as handle:
        for item in items:
            handle.write(json.dumps(_item_to_json(item), sort_keys=True, separators=(",", ":")))
            handle.write("\n")
    return len(items)


def read_benchmark(path) -> list[BenchmarkItem]:
    items = []
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise BenchmarkFormatError(f"{path}:{number}: not valid JSON: {exc}") from exc
            items.append(_item_from_json(payload))
    return items


# --- judges -----------------------------------------------------------------


class Judge(Protocol):
    def score(self, item: BenchmarkItem, prediction: str) -> float: ...


class LocalRuleJudge:
    """Deterministic judge: extract findings from both texts, apply the rubric.

    Uses the item's structured ground-truth findings when present and
    falls back to parsing the ground-truth answer text.
    """

    def score(self, item: BenchmarkItem, prediction: str) -> float:
        truth = list(item.gt_findings) or findings_from_text(item.gt_answer)
        return rubric_score(findings_from_text(prediction), truth)


@lru_cache(maxsize=1)
def load_judge_prompts() -> tuple[str, str]:
    """(system, query) prompt templates from the shipped files, verbatim."""
    data = resources.files("panodiag.data")
    system = data.joinpath("judge_system_prompt.txt").read_text("utf-8")
    query = data.joinpath("judge_query_prompt.txt").read_text("utf-8")
    return system, query


def render_judge_prompt(template: str, item: BenchmarkItem, prediction: str) -> str:
    """Fill {question}/{ground_truth}/{prediction} slots by literal substitution.

    Plain replace, not str.format: the template body legitimately contains
    braces of its own (the score set).
    """
    return (
        template.replace("{question}", item.question)
        .replace("{ground_truth}", item.gt_answer)
        .replace("{prediction}", prediction)
    )


_SCORE_RE = re.compile(r"0(?:\.\d+)?|1(?:\.0+)?")


def parse_judge_score(text: str) -> float:
    """Strict parse of a bare decimal on the 0.1 grid; anything else fails."""
    body = text.strip()
    if not _SCORE_RE.fullmatch(body):
        raise UnparsableScore(f"expected a bare score in [0, 1], got {text!r}")
    value = float(body)
    tenths = round(value * 10)
    if abs(value * 10 - tenths) > 1e-9:
        raise UnparsableScore(f"score {body} is not on the 0.1 grid")
    return tenths / 10.0


@dataclass(frozen=True)
class RemoteJudgeConfig:
    """Connection settings for the chat-completion judge endpoint.

    The API key is read from the environment variable named by
    ``api_key_env`` at request time, never stored.  ``max_in_flight``
    bounds concurrent requests when a caller fans out item evaluations.
    """

    endpoint: str
    model: str = "judge-model"
    api_key_env: str = "PANODIAG_JUDGE_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 0.5
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.max_retries < 1:
            raise ValueError("max_retries must be at least 1")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


def _http_transport(config: RemoteJudgeConfig, payload: dict) -> str:
    key = os.environ.get(config.api_key_env, "")
    if not key:
        raise TransportError(f"environment variable {config.api_key_env} is not set")
    request = urllib.request.Request(
        config.endpoint,
        data=json.dumps(payload).encode("utf-8"),
        headers={"Content-Type": "application/json", "Authorization": f"Bearer {key}"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(request, timeout=config.timeout) as response:
            body = json.loads(response.read().decode("utf-8"))
    except (urllib.error.URLError, TimeoutError, OSError, json.JSONDecodeError) as exc:
        raise TransportError(f"judge request failed: {exc}") from exc
    try:
        return str(body["choices"][0]["message"]["content"])
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"judge response shape unexpected: {exc}") from exc


class RemoteJudge:
    """LLM-as-judge over a chat-completion endpoint.

    One request per score at temperature 0; transport failures and
    off-grid replies are retried with exponential backoff (sleep
    backoff * 2^(attempt-1) before attempt 1, 2, ...), then surfaced as
    JudgeFailure.  ``transport`` and ``sleeper`` are injectable for
    offline use.
    """

    def __init__(
        self,
        config: RemoteJudgeConfig,
        transport: Callable[[dict], str] | None = None,
        sleeper: Callable[[float], None] | None = None,
    ) -> None:
        self._config = config
        self._transport = transport or (lambda payload: _http_transport(config, payload))
        self._sleep = sleeper if sleeper is not None else time.sleep

    def score(self, item: BenchmarkItem, prediction: str) -> float:
        system, query = load_judge_prompts()
        payload = {
            "model": self._config.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": render_judge_prompt(query, item, prediction)},
            ],
        }
        failure: JudgeFailure | None = None
        for attempt in range(self._config.max_retries):
            if attempt:
                self._sleep(self._config.backoff * (2 ** (attempt - 1)))
            try:
                return parse_judge_score(self._transport(payload))
            except JudgeFailure as exc:
                failure = exc
        assert failure is not None
        raise failure


# --- aggregate statistics ----------------------------------------------------


@dataclass(frozen=True)
class StabilityStats:
    mean: float
    stddev: float
    cv_percent: float


def stability_stats(run_means: Sequence[float]) -> StabilityStats:
    """Mean, sample standard deviation, and CV% of per-run means."""
    values = [float(v) for v in run_means]
    if len(values) < 2:
        raise ValueError(f"need at least two run means, got {len(values)}")
    mean = math.fsum(values) / len(values)
    stddev = statistics.stdev(values)
    if mean <= 0.0:
        raise ZeroMean(f"cv is undefined for mean {mean}")
    return StabilityStats(mean=mean, stddev=stddev, cv_percent=100.0 * stddev / mean)


@dataclass(frozen=True)
class CheckpointStats:
    """The four tracked series at one training checkpoint."""

    single_round_proportion: float
    mean_tool_calls: float
    frac_mixed: float
    frac_fully_correct: float


def dynamics_report(checkpoints: Mapping[str, Sequence]) -> dict[str, CheckpointStats]:
    """Per-checkpoint behavior series from scored trajectory logs.

    Accepts anything with query_id / rounds / n_tool / score attributes
    (log entries or live trajectories).  Mixed correctness is computed
    over per-query groups that use tools at least once.
    """
    if not checkpoints:
        raise EmptyInput("no checkpoints to report on")
    report: dict[str, CheckpointStats] = {}
    for label, entries in checkpoints.items():
        entries = list(entries)
        if not entries:
            raise EmptyInput(f"checkpoint {label!r} has no trajectories")
        for entry in entries:
            if entry.score is None:
                raise ValueError(
                    f"trajectory {entry.query_id!r} in checkpoint {label!r} carries no score"
                )
        total = len(entries)
        single = sum(1 for e in entries if e.rounds == 1) / total
        mean_tools = math.fsum(e.n_tool for e in entries) / total
        tool_using = [e for e in entries if e.n_tool > 0]
        if tool_using:
            frac_full = sum(1 for e in tool_using if e.score >= 1.0) / len(tool_using)
        else:
            frac_full = 0.0
        groups = defaultdict(list)
        for e in entries:
            groups[e.query_id].append(e)
        tool_groups = [g for g in groups.values() if any(e.n_tool > 0 for e in g)]
        if tool_groups:
            mixed = sum(
                1
                for g in tool_groups
                if any(e.score >= 1.0 for e in g) and any(e.score < 1.0 for e in g)
            )
            frac_mixed = mixed / len(tool_groups)
        else:
            frac_mixed = 0.0
        report[label] = CheckpointStats(
            single_round_proportion=single,
            mean_tool_calls=mean_tools,
            frac_mixed=frac_mixed,
            frac_fully_correct=frac_full,
        )
    return report


# --- the harness -------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    """Everything a benchmark run produced, scores scaled to [0, 100]."""

    items: int
    runs: int
    scores: Mapping[str, tuple[float | None, ...]]
    run_means: tuple[float, ...]
    difficulty_means: Mapping[str, float]
    overall_mean: float
    avg_at_k: float
    pass_at_1: float
    stability: StabilityStats | None
    judge_failures: int
    scored: int
    trajectories: TrajectorySummary

    def to_json(self) -> dict:
        return {
            "items": self.items,
            "runs": self.runs,
            "scores": {k: list(v) for k, v in self.scores.items()},
            "run_means": list(self.run_means),
            "difficulty_means": dict(self.difficulty_means),
            "overall_mean": self.overall_mean,
            "avg_at_k": self.avg_at_k,
            "pass_at_1": self.pass_at_1,
            "stability": (
                None
                if self.stability is None
                else {
                    "mean": self.stability.mean,
                    "stddev": self.stability.stddev,
                    "cv_percent": self.stability.cv_percent,
                }
            ),
            "judge_failures": self.judge_failures,
            "scored": self.scored,
            "trajectory_stats": {
                "count": self.trajectories.count,
                "rounds_histogram": {
                    str(k): v for k, v in sorted(self.trajectories.rounds_histogram.items())
                },
                "mean_n_tool": self.trajectories.mean_n_tool,
                "single_round_proportion": self.trajectories.single_round_proportion,
            },
        }

    def summary_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["metric", "value"])
        writer.writerow(["items", self.items])
        writer.writerow(["runs", self.runs])
        writer.writerow(["overall_mean", repr(self.overall_mean)])
        writer.writerow(["avg_at_k", repr(self.avg_at_k)])
        writer.writerow(["pass_at_1", repr(self.pass_at_1)])
        for difficulty in DIFFICULTIES:
            if difficulty in self.difficulty_means:
                writer.writerow(
                    [f"mean_{difficulty.lower()}", repr(self.difficulty_means[difficulty])]
                )
        if self.stability is not None:
            writer.writerow(["stability_mean", repr(self.stability.mean)])
            writer.writerow(["stability_stddev", repr(self.stability.stddev)])
            writer.writerow(["stability_cv_percent", repr(self.stability.cv_percent)])
        writer.writerow(["scored", self.scored])
        writer.writerow(["judge_failures", self.judge_failures])
        writer.writerow(["mean_n_tool", repr(self.trajectories.mean_n_tool)])
        writer.writerow(
            ["single_round_proportion", repr(self.trajectories.single_round_proportion)]
        )
        return buffer.getvalue()


def evaluate(
    policy: Policy,
    items: Sequence[BenchmarkItem],
    judge: Judge,
    runs: int = 1,
    seed: int = 0,
    *,
    image_loader: Callable[[str], RasterImage],
    max_steps: int = 6,
    pad_factor: float = 1.5,
    zoom_min_side: int = 0,
) -> EvalReport:
    """Run every item ``runs`` times through the episode engine and score.

    Judge failures exclude the (item, run) sample from means and are
    counted; everything else is aggregated per run (Avg@k = mean of run
    means, pass@1 = run 1).  ``seed`` is recorded for caller bookkeeping;
    determinism comes from the policy and judge themselves.
    """
    del seed  # kept in the signature for callers that key their runs on it
    if runs < 1:
        raise ValueError(f"runs must be at least 1, got {runs}")
    if not items:
        raise EmptyInput("benchmark has no items")
    ids = [item.item_id for item in items]
    if len(set(ids)) != len(ids):
        raise BenchmarkFormatError("benchmark item ids must be unique")

    scores: dict[str, list[float | None]] = {item.item_id: [] for item in items}
    all_trajectories = []
    failures = 0
    for run in range(runs):
        for item in items:
            image = image_loader(item.image_ref)
            trajectory = run_episode(
                policy,
                item.question,
                image,
                max_steps=max_steps,
                query_id=item.item_id,
                image_ref=item.image_ref,
                pad_factor=pad_factor,
                zoom_min_side=zoom_min_side,
            )
            all_trajectories.append(trajectory)
            prediction = trajectory.final_answer or ""
            try:
                value = float(judge.score(item, prediction))
            except JudgeFailure as exc:
                warnings.warn(
                    f"judge failed on item {item.item_id!r} run {run + 1}: {exc}",
                    stacklevel=2,
                )
                failures += 1
                scores[item.item_id].append(None)
                continue
            scores[item.item_id].append(value)

    run_means = []
    for run in range(runs):
        valid = [scores[i][run] for i in ids if scores[i][run] is not None]
        if not valid:
            raise JudgeFailure(f"every item failed judging in run {run + 1}")
        run_means.append(100.0 * math.fsum(valid) / len(valid))

    by_difficulty: dict[str, list[float]] = defaultdict(list)
    all_scored: list[float] = []
    for item in items:
        for value in scores[item.item_id]:
            if value is not None:
                by_difficulty[item.difficulty].append(value)
                all_scored.append(value)
    difficulty_means = {
        d: 100.0 * math.fsum(vals) / len(vals) for d, vals in by_difficulty.items() if vals
    }

    stability = None
    if runs >= 2:
        try:
            stability = stability_stats(run_means)
        except ZeroMean:
            stability = None  # an all-zero policy has no meaningful CV

    return EvalReport(
        items=len(items),
        runs=runs,
        scores={k: tuple(v) for k, v in scores.items()},
        run_means=tuple(run_means),
        difficulty_means=difficulty_means,
        overall_mean=100.0 * math.fsum(all_scored) / len(all_scored),
        avg_at_k=math.fsum(run_means) / len(run_means),
        pass_at_1=run_means[0],
        stability=stability,
        judge_failures=failures,
        scored=len(all_scored),
        trajectories=trajectory_stats(all_trajectories),
    )
