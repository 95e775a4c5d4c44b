"""Procedural symmetric radiographs with planted findings, plus oracles.

This is the verification backbone of the package.  Images are built by
painting the left half (teeth, noise and all) and mirroring it, so a
case with no plants is left-right symmetric to the pixel.  Plants shift
one tooth cell by a signed intensity delta; the signed offsets in
``CATEGORY_OFFSETS`` are chosen so that a contralateral comparison can
decode the planted category exactly.  On top of the generator sit three
scripted policies of increasing capability and a small group-relative
training loop over them.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .evaluation import BenchmarkItem
from .findings import Finding, findings_from_text, render_report
from .imaging import RasterImage, Region, mirror_region
from .rewards import (
    ExplorationTracker,
    GateParams,
    RewardWeights,
    diag_reward,
    hybrid_reward,
    rubric_score,
)
from .grpo import group_advantages
from .teeth import contralateral, is_valid_fdi
from .trajectory import Policy, Turn, run_episode

__all__ = [
    "InvalidSpec",
    "InvalidConfig",
    "CATEGORY_OFFSETS",
    "Plant",
    "SyntheticSpec",
    "AnnotatedCase",
    "tooth_cells",
    "generate_case",
    "case_to_json",
    "case_from_json",
    "write_cases",
    "read_cases",
    "scripted_policy",
    "SURVEY_QUESTION",
    "ToyConfig",
    "DynamicsRow",
    "DynamicsLog",
    "run_toy_grpo",
    "make_benchmark",
]


class InvalidSpec(ValueError):
    pass


class InvalidConfig(ValueError):
    pass


# Signed intensity offset per plantable category.  Spacing of at least
# 10 between neighbors keeps nearest-offset decoding unambiguous, and
# the magnitudes never push a painted cell outside 0..255.
CATEGORY_OFFSETS: dict[str, int] = {
    "impacted tooth": -16,
    "carious lesion": -24,
    "apical periodontitis": -32,
    "furcation lesion": -40,
    "root resorption": -48,
    "bone resorption": -56,
    "root fragment": 30,
    "surgical device": 40,
    "prosthetic restoration": 50,
    "implant": 60,
    "orthodontic device": 70,
}

_BASE_W, _BASE_H = 1024, 512
_CELL_W, _CELL_H = 50, 70
_GAP0, _GAP_STEP = 12, 58
_UPPER_Y0, _LOWER_Y0, _Y_STEP = 140, 300, 3
_BACKGROUND, _TOOTH_BASE = 64, 170

SURVEY_QUESTION = (
    "Inspect the panoramic radiograph and report every abnormal finding "
    "with its tooth number."
)


def tooth_cells(width: int = _BASE_W, height: int = _BASE_H) -> dict[str, Region]:
    """Exact cell rectangle for each of the 32 permanent teeth.

    Cells for the image-left quadrants (FDI 1 and 4) are computed from
    the scaled layout; the right-side quadrants are their exact mirror
    images, which is what makes the generator's symmetry guarantee hold
    for any even canvas width.
    """
    if width < 2 or height < 2:
        raise InvalidSpec("canvas must be at least 2x2")
    if width % 2 != 0:
        raise InvalidSpec("canvas width must be even for exact mirror symmetry")
    sx, sy = width / _BASE_W, height / _BASE_H
    center = width // 2
    cell_w = max(1, round(_CELL_W * sx))
    cell_h = max(1, round(_CELL_H * sy))
    cells: dict[str, Region] = {}
    for position in range(1, 9):
        gap = round((_GAP0 + _GAP_STEP * (position - 1)) * sx)
        x2 = center - gap
        x1 = x2 - cell_w
        upper_y = round((_UPPER_Y0 + _Y_STEP * (position - 1)) * sy)
        lower_y = round((_LOWER_Y0 - _Y_STEP * (position - 1)) * sy)
        if x1 < 0 or upper_y < 0:
            raise InvalidSpec(f"canvas {width}x{height} too small for the arch layout")
        try:
            q1 = Region(x1, upper_y, x2, upper_y + cell_h)
            q4 = Region(x1, lower_y, x2, lower_y + cell_h)
        except ValueError as exc:
            raise InvalidSpec(str(exc)) from exc
        cells[f"1{position}"] = q1
        cells[f"2{position}"] = mirror_region(q1, width)
        cells[f"4{position}"] = q4
        cells[f"3{position}"] = mirror_region(q4, width)
    boxes = list(cells.values())
    for box in boxes:
        if box.y2 > height or box.x2 > width:
            raise InvalidSpec(f"canvas {width}x{height} too small for the arch layout")
    for i, a in enumerate(boxes):
        for b in boxes[i + 1:]:
            if a.x1 < b.x2 and b.x1 < a.x2 and a.y1 < b.y2 and b.y1 < a.y2:
                raise InvalidSpec(f"canvas {width}x{height} makes tooth cells overlap")
    return cells


@dataclass(frozen=True)
class Plant:
    """One planted finding: tooth, category, signed intensity shift."""

    tooth: str
    category: str
    delta: int
    symmetric: bool = False

    def __post_init__(self) -> None:
        if not is_valid_fdi(self.tooth) or not self.tooth.startswith(("1", "2", "3", "4")):
            raise InvalidSpec(f"plant tooth {self.tooth!r} is not a permanent FDI code")
        if not self.category or not self.category.strip():
            raise InvalidSpec("plant category must be non-empty")
        if not 1 <= abs(int(self.delta)) <= 255:
            raise InvalidSpec("plant delta magnitude must be in 1..255")


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int
    width: int = _BASE_W
    height: int = _BASE_H
    plants: tuple[Plant, ...] = ()
    noise_amplitude: int = 6

    def __post_init__(self) -> None:
        object.__setattr__(self, "plants", tuple(self.plants))
        if self.noise_amplitude < 0 or self.noise_amplitude > 60:
            raise InvalidSpec("noise amplitude must be in 0..60")
        painted: set[str] = set()
        for plant in self.plants:
            targets = {plant.tooth}
            if plant.symmetric:
                targets.add(contralateral(plant.tooth))
            if painted & targets:
                raise InvalidSpec("at most one plant per tooth cell")
            painted |= targets


@dataclass(frozen=True)
class AnnotatedCase:
    """Ground truth for one generated image."""

    case_id: str
    width: int
    height: int
    findings: tuple[Finding, ...]
    tooth_boxes: dict[str, Region] = field(compare=False)
    image_ref: str = ""
    provenance: str = ""


def generate_case(spec: SyntheticSpec, case_id: str = "case0") -> tuple[RasterImage, AnnotatedCase]:
    """Render a spec to pixels plus its exact annotation.

    The unplanted canvas (teeth and noise included) is symmetric by
    construction.  Each plant shifts its cell by the signed delta; a
    symmetric plant shifts the contralateral cell identically and is
    recorded as a finding on both teeth, an asymmetric one only on the
    named tooth.
    """
    cells = tooth_cells(spec.width, spec.height)
    half = spec.width // 2
    rng = np.random.default_rng(spec.seed)
    left = np.full((spec.height, half), _BACKGROUND, dtype=np.int32)
    for box in cells.values():
        if box.x2 <= half:
            left[box.y1:box.y2, box.x1:box.x2] = _TOOTH_BASE
    if spec.noise_amplitude:
        left += rng.integers(
            -spec.noise_amplitude, spec.noise_amplitude + 1, size=left.shape, dtype=np.int32
        )
    canvas = np.concatenate([left, left[:, ::-1]], axis=1)
    findings: list[Finding] = []
    for plant in spec.plants:
        targets = [plant.tooth]
        if plant.symmetric:
            targets.append(contralateral(plant.tooth))
        for code in targets:
            box = cells[code]
            canvas[box.y1:box.y2, box.x1:box.x2] += plant.delta
            findings.append(Finding(plant.category, (code,), region=box))
    image = RasterImage(np.clip(canvas, 0, 255).astype(np.uint8))
    case = AnnotatedCase(
        case_id=case_id,
        width=spec.width,
        height=spec.height,
        findings=tuple(findings),
        tooth_boxes=cells,
    )
    return image, case


# --- case serialization ----------------------------------------------------


def case_to_json(case: AnnotatedCase) -> dict:
    return {
        "case_id": case.case_id,
        "width": case.width,
        "height": case.height,
        "image_ref": case.image_ref,
        "provenance": case.provenance,
        "findings": [
            {
                "category": f.category,
                "tooth_ids": list(f.tooth_ids),
                "region": list(f.region.as_tuple()) if f.region is not None else None,
                "qualifier": f.qualifier,
            }
            for f in case.findings
        ],
    }


def case_from_json(payload: dict) -> AnnotatedCase:
    try:
        width, height = int(payload["width"]), int(payload["height"])
        findings = tuple(
            Finding(
                category=entry["category"],
                tooth_ids=tuple(entry.get("tooth_ids", ())),
                region=Region(*entry["region"]) if entry.get("region") else None,
                qualifier=entry.get("qualifier", ""),
            )
            for entry in payload["findings"]
        )
        return AnnotatedCase(
            case_id=str(payload["case_id"]),
            width=width,
            height=height,
            findings=findings,
            tooth_boxes=tooth_cells(width, height),
            image_ref=str(payload.get("image_ref", "")),
            provenance=str(payload.get("provenance", "")),
        )
    except (KeyError, TypeError) as exc:
        raise InvalidSpec(f"malformed case record: {exc}") from exc


def write_cases(path: str | Path, cases: Iterable[AnnotatedCase]) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as handle:
        for case in cases:
            handle.write(json.dumps(case_to_json(case), sort_keys=True, separators=(",", ":")) + "\n")
            count += 1
    return count


def read_cases(path: str | Path) -> list[AnnotatedCase]:
    cases = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                cases.append(case_from_json(json.loads(line)))
    return cases


# --- scripted policies -----------------------------------------------------

_LEFT_CODES = tuple(f"1{p}" for p in range(1, 9)) + tuple(f"4{p}" for p in range(1, 9))


def _decode_offset(delta: float, slack: float) -> str:
    """Nearest-offset category lookup with a sign-based fallback."""
    best = min(CATEGORY_OFFSETS.items(), key=lambda item: (abs(item[1] - delta), item[0]))
    if abs(best[1] - delta) <= slack:
        return best[0]
    return "carious lesion" if delta < 0 else "root fragment"


def _cell_stats(image: RasterImage) -> tuple[dict[str, Region], dict[str, float], float]:
    cells = tooth_cells(image.width, image.height)
    pixels = image.pixels
    means = {
        code: float(pixels[box.y1:box.y2, box.x1:box.x2].mean())
        for code, box in cells.items()
    }
    median = float(np.median(list(means.values())))
    return cells, means, median


def _arch_box(cells: dict[str, Region]) -> Region:
    return Region(
        min(box.x1 for box in cells.values()),
        min(box.y1 for box in cells.values()),
        max(box.x2 for box in cells.values()),
        max(box.y2 for box in cells.values()),
    )


def _zoom_findings(means, median, threshold, slack, exclude=()):
    out = []
    for code in sorted(means):
        if code in exclude:
            continue
        deviation = means[code] - median
        if abs(deviation) > threshold:
            out.append(Finding(_decode_offset(deviation, slack), (code,)))
    return out


def _asym_pairs(means, mirror_threshold):
    """Left-right mean differences, largest magnitude first."""
    pairs = []
    for code in _LEFT_CODES:
        partner = contralateral(code)
        diff = means[code] - means[partner]
        if abs(diff) >= mirror_threshold:
            pairs.append((code, partner, diff))
    pairs.sort(key=lambda item: (-abs(item[2]), item[0]))
    return pairs


def _plan(
    kind: str,
    image: RasterImage,
    detection_threshold: float,
    mirror_threshold: float,
    max_mirrors: int,
    decode_slack: float,
) -> list[tuple[str, str]]:
    """Full (thought, raw response) script for one image, computed up front."""
    if kind == "finalize_now":
        return [("no tools needed for a global pass", "FINAL no abnormalities detected")]
    cells, means, median = _cell_stats(image)
    arch = _arch_box(cells)
    steps: list[tuple[str, str]] = [
        (
            "surveying both dental arches for intensity outliers",
            f"TOOL zoom_in {arch.x1} {arch.y1} {arch.x2} {arch.y2}",
        )
    ]
    if kind == "zoom_only":
        found = _zoom_findings(means, median, detection_threshold, decode_slack)
        steps.append(("compiling the survey report", f"FINAL {render_report(found)}"))
        return steps
    if kind != "zoom_mirror":
        raise ValueError(f"unknown scripted policy kind {kind!r}")
    pairs = _asym_pairs(means, mirror_threshold)
    reported: list[Finding] = []
    claimed: set[str] = set()
    for code, partner, diff in pairs:
        if abs(diff) <= mirror_threshold:
            continue  # mirrored for confirmation only, no reportable signal
        planted = code if abs(means[code] - median) >= abs(means[partner] - median) else partner
        other = contralateral(planted)
        reported.append(
            Finding(_decode_offset(means[planted] - means[other], decode_slack), (planted,))
        )
        claimed |= {planted, other}
    for code, partner, _ in pairs[:max_mirrors]:
        box = cells[code]
        steps.append(
            (
                f"comparing tooth {code} against tooth {partner}",
                f"TOOL mirror_in {box.x1} {box.y1} {box.x2} {box.y2}",
            )
        )
    symmetric = _zoom_findings(means, median, detection_threshold, decode_slack, exclude=claimed)
    found = sorted(reported + symmetric, key=lambda f: (f.tooth_ids, f.category))
    steps.append(("merging mirror evidence into the report", f"FINAL {render_report(found)}"))
    return steps


def scripted_policy(
    kind: str,
    detection_threshold: float = 15.0,
    *,
    mirror_threshold: float = 5.0,
    max_mirrors: int = 3,
    decode_slack: float = 3.0,
) -> Policy:
    """Deterministic reference policies of increasing diligence.

    ``finalize_now`` answers immediately.  ``zoom_only`` zooms over the
    arches once and reports every cell whose mean deviates from the
    median cell mean by more than ``detection_threshold``.
    ``zoom_mirror`` additionally runs the contralateral comparison:
    left-right pairs whose means differ by at least ``mirror_threshold``
    get a mirror tool call (capped at ``max_mirrors``), and pairs above
    the threshold are reported on the deviating side, which catches
    asymmetric plants far too subtle for the zoom scan.
    """
    if kind not in ("finalize_now", "zoom_only", "zoom_mirror"):
        raise ValueError(f"unknown scripted policy kind {kind!r}")

    def policy(query: str, image: RasterImage, history: tuple[Turn, ...]) -> tuple[str, str]:
        steps = _plan(kind, image, detection_threshold, mirror_threshold, max_mirrors, decode_slack)
        return steps[min(len(history), len(steps) - 1)]

    return policy


# --- toy group-relative training loop ---------------------------------------


@dataclass(frozen=True)
class ToyConfig:
    """Configuration for the miniature training dynamics experiment."""

    iterations: int = 500
    group_size: int = 8
    with_diag_reward: bool = True
    seed: int = 0
    step_size: float = 0.1
    healthy_cases: int = 6
    planted_cases: int = 2
    width: int = 256
    height: int = 128
    noise_amplitude: int = 6
    gate: GateParams = GateParams(threshold=0.5, scale=0.3, ceiling=1.6, window=16)
    weights: RewardWeights = RewardWeights()

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise InvalidConfig("group_size must be at least 2")
        if self.iterations < 1:
            raise InvalidConfig("iterations must be at least 1")
        if self.healthy_cases < 0 or self.planted_cases < 0 or not (
            self.healthy_cases + self.planted_cases
        ):
            raise InvalidConfig("need at least one case")
        if self.step_size <= 0:
            raise InvalidConfig("step_size must be positive")


@dataclass(frozen=True)
class DynamicsRow:
    iteration: int
    mean_score: float
    mean_n_tool: float
    tool_rate: float
    frac_fully_correct: float
    frac_mixed: float


_CSV_HEADER = ("iteration", "mean_score", "mean_n_tool", "tool_rate", "frac_fully_correct", "frac_mixed")


@dataclass
class DynamicsLog:
    rows: list[DynamicsRow] = field(default_factory=list)

    @property
    def final(self) -> DynamicsRow:
        if not self.rows:
            raise ValueError("empty dynamics log")
        return self.rows[-1]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(_CSV_HEADER)
            for row in self.rows:
                writer.writerow(
                    [
                        row.iteration,
                        repr(row.mean_score),
                        repr(row.mean_n_tool),
                        repr(row.tool_rate),
                        repr(row.frac_fully_correct),
                        repr(row.frac_mixed),
                    ]
                )

    @classmethod
    def from_csv(cls, path: str | Path) -> "DynamicsLog":
        log = cls()
        with open(path, "r", encoding="utf-8", newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if tuple(header or ()) != _CSV_HEADER:
                raise InvalidSpec("unexpected dynamics CSV header")
            for record in reader:
                log.rows.append(
                    DynamicsRow(
                        iteration=int(record[0]),
                        mean_score=float(record[1]),
                        mean_n_tool=float(record[2]),
                        tool_rate=float(record[3]),
                        frac_fully_correct=float(record[4]),
                        frac_mixed=float(record[5]),
                    )
                )
        return log


_TOY_PLANT_TEETH = ("36", "25")


def _toy_outcomes(config: ToyConfig) -> list[tuple[str, list[tuple[float, int]]]]:
    """Per (case, arm) rubric score and tool count, via real episode runs.

    The three arms are the scripted policies with thresholds pushed to
    their permissive extreme, so the two tool arms flag every cell (a
    reliable 0.7 under the spurious-finding cap) while still catching
    the planted lesion; the finalize arm is perfect on healthy cases and
    worthless on planted ones.
    """
    arms = (
        scripted_policy("finalize_now"),
        scripted_policy("zoom_only", detection_threshold=0.0),
        scripted_policy(
            "zoom_mirror", detection_threshold=0.0, mirror_threshold=0.0, max_mirrors=1
        ),
    )
    outcomes = []
    total = config.healthy_cases + config.planted_cases
    for index in range(total):
        plants: tuple[Plant, ...] = ()
        if index >= config.healthy_cases:
            tooth = _TOY_PLANT_TEETH[(index - config.healthy_cases) % len(_TOY_PLANT_TEETH)]
            plants = (Plant(tooth, "carious lesion", -10),)
        spec = SyntheticSpec(
            seed=config.seed * 1000 + index,
            width=config.width,
            height=config.height,
            plants=plants,
            noise_amplitude=config.noise_amplitude,
        )
        image, case = generate_case(spec, case_id=f"toy{index}")
        per_arm = []
        for arm in arms:
            trajectory = run_episode(arm, SURVEY_QUESTION, image, query_id=case.case_id)
            predicted = findings_from_text(trajectory.final_answer)
            per_arm.append((rubric_score(predicted, list(case.findings)), trajectory.n_tool))
        outcomes.append((case.case_id, per_arm))
    return outcomes


def run_toy_grpo(config: ToyConfig) -> DynamicsLog:
    """Advantage-driven propensity ascent over the three scripted arms.

    Each iteration samples ``group_size`` rollouts per case from a
    softmax over three shared propensities, scores them with the hybrid
    reward (the saturation tracker is snapshotted at iteration start and
    fed after scoring, so iteration 0 is bonus-free by construction),
    standardizes within each group, and nudges each arm's propensity by
    its summed advantages.  Fully deterministic for a given seed.
    """
    outcomes = _toy_outcomes(config)
    rng = np.random.default_rng(config.seed + 1)
    tracker = ExplorationTracker(window=config.gate.window, ceiling=config.gate.ceiling)
    propensities = np.zeros(3)
    rollouts_per_iter = len(outcomes) * config.group_size
    log = DynamicsLog()
    for iteration in range(config.iterations):
        estimates = {case_id: tracker.estimate(case_id) for case_id, _ in outcomes}
        shifted = propensities - propensities.max()
        probs = np.exp(shifted)
        probs /= probs.sum()
        arm_delta = np.zeros(3)
        totals: list[float] = []
        tool_counts: list[int] = []
        tool_rollouts = 0
        correct_tool_rollouts = 0
        mixed_groups = 0
        for case_id, per_arm in outcomes:
            choices = rng.choice(3, size=config.group_size, p=probs)
            rewards = []
            rubrics = []
            for arm in choices:
                rubric, n_tool = per_arm[arm]
                bonus = (
                    diag_reward(rubric, n_tool, estimates[case_id], config.gate)
                    if config.with_diag_reward
                    else 0.0
                )
                total = hybrid_reward(rubric, 0.0, bonus, config.weights).total
                rewards.append(total)
                rubrics.append(rubric)
                totals.append(total)
                tool_counts.append(n_tool)
                if n_tool > 0:
                    tool_rollouts += 1
                    if rubric == 1.0:
                        correct_tool_rollouts += 1
            if any(r == 1.0 for r in rubrics) and any(r < 1.0 for r in rubrics):
                mixed_groups += 1
            for arm, advantage in zip(choices, group_advantages(rewards)):
                arm_delta[arm] += advantage
            for arm in choices:
                tracker.observe(case_id, per_arm[arm][1])
        propensities = propensities + config.step_size * arm_delta / rollouts_per_iter
        log.rows.append(
            DynamicsRow(
                iteration=iteration,
                mean_score=math.fsum(totals) / rollouts_per_iter,
                mean_n_tool=math.fsum(tool_counts) / rollouts_per_iter,
                tool_rate=sum(1 for n in tool_counts if n > 0) / rollouts_per_iter,
                frac_fully_correct=(
                    correct_tool_rollouts / tool_rollouts if tool_rollouts else 0.0
                ),
                frac_mixed=mixed_groups / len(outcomes),
            )
        )
    return log


# --- benchmark construction --------------------------------------------------


def make_benchmark(
    n_items: int,
    seed: int,
    *,
    width: int = _BASE_W,
    height: int = _BASE_H,
    noise_amplitude: int = 6,
) -> tuple[list[BenchmarkItem], dict[str, RasterImage], list[AnnotatedCase]]:
    """Deterministic, fully solvable benchmark over generated cases.

    Plant counts cycle 1/2/3 and map to Simple/Moderate/Complex.  Plants
    are asymmetric, never share a mirror pair within a case, and use the
    exact offset table, so the contralateral-comparison policy can reach
    a perfect score on every item.  Returns the items, an
    image_ref -> raster map for in-memory evaluation, and the full case
    annotations for trajectory building.
    """
    if n_items < 1:
        raise InvalidSpec(f"need at least one benchmark item, got {n_items}")
    cells = tooth_cells(width, height)
    pairs = sorted({tuple(sorted((code, contralateral(code)))) for code in cells})
    categories = sorted(CATEGORY_OFFSETS)
    rng = np.random.default_rng(seed)
    difficulty_by_count = {1: "Simple", 2: "Moderate", 3: "Complex"}
    items: list[BenchmarkItem] = []
    images: dict[str, RasterImage] = {}
    cases: list[AnnotatedCase] = []
    for index in range(n_items):
        count = 1 + index % 3
        chosen = rng.choice(len(pairs), size=count, replace=False)
        plants = []
        for pair_index in sorted(int(i) for i in chosen):
            pair = pairs[pair_index]
            tooth = pair[int(rng.integers(2))]
            category = categories[int(rng.integers(len(categories)))]
            plants.append(Plant(tooth, category, CATEGORY_OFFSETS[category]))
        spec = SyntheticSpec(
            seed=seed * 100_000 + index,
            width=width,
            height=height,
            plants=tuple(plants),
            noise_amplitude=noise_amplitude,
        )
        case_id = f"case_{index:03d}"
        image, case = generate_case(spec, case_id)
        ref = f"{case_id}.png"
        case = replace(case, image_ref=ref)
        items.append(
            BenchmarkItem(
                item_id=case_id,
                image_ref=ref,
                question=SURVEY_QUESTION,
                gt_answer=render_report(list(case.findings)),
                gt_findings=case.findings,
                difficulty=difficulty_by_count[count],
            )
        )
        images[ref] = image
        cases.append(case)
    return items, images, cases
