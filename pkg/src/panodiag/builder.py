"""Multi-turn training-trajectory construction.

Turns an annotated case into an instruction-ready record: findings are
split into obvious / subtle / bone-based classes, subtle and bone-based
teeth are clustered into region proposals, each proposal gets an
inspection tool chosen by an answerability judge, and the whole thing is
rendered as query/answer/action rounds with real observation refs.

Round placement is the load-bearing invariant: obvious findings are
mentioned in round 1 only, subtle and bone-based findings in rounds 2+.
``validate_record`` checks it structurally and the exporter refuses
records that fail.
"""

from __future__ import annotations

import json
import math
import warnings
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .findings import Finding, canonical_category, findings_from_text, render_report
from .imaging import Bounds, Region, RasterImage, mirror_in, pad_region
from .synthetic import AnnotatedCase
from .teeth import InvalidCode, contralateral
from .trajectory import (
    Action,
    ActionError,
    Finalize,
    MirrorIn,
    ZoomIn,
    new_episode,
    parse_action,
    serialize_action,
    step,
)

__all__ = [
    "BuilderError",
    "KTooLarge",
    "SchemaViolation",
    "JudgeUnavailable",
    "IoFailure",
    "AnnotatedCase",
    "FindingPartition",
    "Proposal",
    "RecordTurn",
    "PlacedFinding",
    "TrainingRecord",
    "AnswerabilityVerdict",
    "AnswerabilityJudge",
    "DefaultAnswerability",
    "OBVIOUS_CATEGORIES",
    "SUBTLE_CATEGORIES",
    "BONE_BASED_CATEGORIES",
    "ROUND_ONE_QUERY",
    "categorize_findings",
    "kmeans_proposals",
    "decide_tool",
    "load_descriptions",
    "description_for",
    "synthesize_trajectory",
    "build_training_record",
    "validate_record",
    "record_to_json",
    "record_from_json",
    "export_records",
    "import_records",
    "rewrite_records",
]


class BuilderError(ValueError):
    """Base class for trajectory-construction failures."""


class KTooLarge(BuilderError):
    """Requested more clusters than there are boxes."""


class SchemaViolation(BuilderError):
    """A record breaks the round-placement or serialization contract."""


class JudgeUnavailable(RuntimeError):
    """An answerability judge could not produce a verdict."""


class IoFailure(OSError):
    """Reading or writing a record file failed."""


# Which finding categories are visible at a glance on the full image
# (round 1) versus needing a targeted look (round 2 and later).
OBVIOUS_CATEGORIES = frozenset(
    ["prosthetic restoration", "orthodontic device", "surgical device", "implant", "impacted tooth"]
)
BONE_BASED_CATEGORIES = frozenset(["bone resorption"])
SUBTLE_CATEGORIES = frozenset(
    ["carious lesion", "apical periodontitis", "furcation lesion", "root resorption", "root fragment"]
)

ROUND_ONE_QUERY = (
    "Inspect the full panoramic radiograph. Describe the overall dentition "
    "and report any immediately visible abnormalities."
)
_CONTEXT_QUERY = (
    "After the above Action {n}, examine the returned view of the highlighted "
    "region and report what it shows."
)
_NO_OBVIOUS_TEXT = (
    "No obvious abnormalities on the global view. Proceeding to targeted inspection."
)


@dataclass(frozen=True)
class FindingPartition:
    """Findings split by how they are surfaced across rounds."""

    obvious: tuple[Finding, ...] = ()
    subtle: tuple[Finding, ...] = ()
    bone_based: tuple[Finding, ...] = ()


@dataclass(frozen=True)
class Proposal:
    """One clustered inspection region.

    ``region`` is the padded union of the member tooth boxes; cluster ids
    are sequential within a finding class, ordered by lowest member code.
    """

    region: Region
    member_teeth: tuple[str, ...]
    finding_class: str
    cluster_id: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "member_teeth", tuple(self.member_teeth))
        if not self.member_teeth:
            raise BuilderError("proposal needs at least one member tooth")
        if self.finding_class not in ("subtle", "bone_based"):
            raise BuilderError(f"unknown finding class {self.finding_class!r}")


@dataclass(frozen=True)
class RecordTurn:
    """One round: what was asked, what was answered, what was done."""

    query: str
    answer: str
    action: str
    obs_refs: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "obs_refs", tuple(self.obs_refs))


@dataclass(frozen=True)
class PlacedFinding:
    finding: Finding
    round_no: int
    finding_class: str


@dataclass(frozen=True)
class TrainingRecord:
    case_id: str
    image_ref: str
    turns: tuple[RecordTurn, ...]
    placements: tuple[PlacedFinding, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        object.__setattr__(self, "placements", tuple(self.placements))

    @property
    def rounds(self) -> int:
        return len(self.turns)


def categorize_findings(findings: Iterable[Finding]) -> FindingPartition:
    """Partition findings into obvious / subtle / bone-based classes.

    Unknown categories land in subtle (the conservative class: they get a
    dedicated look instead of a passing mention) with a warning.
    """
    obvious: list[Finding] = []
    subtle: list[Finding] = []
    bone: list[Finding] = []
    for finding in findings:
        canon = canonical_category(finding.category)
        if canon in OBVIOUS_CATEGORIES:
            obvious.append(finding)
        elif canon in BONE_BASED_CATEGORIES:
            bone.append(finding)
        else:
            if canon not in SUBTLE_CATEGORIES:
                warnings.warn(
                    f"unknown finding category {finding.category!r}; treating as subtle",
                    stacklevel=2,
                )
            subtle.append(finding)
    return FindingPartition(obvious=tuple(obvious), subtle=tuple(subtle), bone_based=tuple(bone))


# --- region proposals -------------------------------------------------------


def _union_region(regions: Sequence[Region]) -> Region:
    return Region(
        min(r.x1 for r in regions),
        min(r.y1 for r in regions),
        max(r.x2 for r in regions),
        max(r.y2 for r in regions),
    )


def _kmeans_once(points: np.ndarray, k: int, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Seeded k-means++ init plus Lloyd iterations; returns (labels, sse)."""
    n = points.shape[0]
    centroids = [points[int(rng.integers(n))]]
    while len(centroids) < k:
        d2 = np.min(
            ((points[:, None, :] - np.asarray(centroids)[None, :, :]) ** 2).sum(axis=2), axis=1
        )
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids.append(points[idx])
    centers = np.asarray(centroids, dtype=np.float64)
    for _ in range(100):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        moved = centers.copy()
        for j in range(k):
            members = points[labels == j]
            if members.shape[0] == 0:
                # re-seed a starved cluster at the worst-served point
                moved[j] = points[int(np.argmax(np.min(d2, axis=1)))]
            else:
                moved[j] = members.mean(axis=0)
        shift = float(np.max(np.sqrt(((moved - centers) ** 2).sum(axis=1))))
        centers = moved
        if shift < 1e-6:
            break
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    sse = float(d2[np.arange(n), labels].sum())
    return labels, sse


def kmeans_proposals(
    boxes: Sequence[tuple[str, Region]],
    k: int,
    seed: int,
    *,
    bounds: Bounds,
    finding_class: str = "subtle",
    pad_factor: float = 1.5,
    n_init: int = 8,
) -> list[Proposal]:
    """Cluster tooth boxes by center into up to ``k`` padded region proposals.

    Runs ``n_init`` restarts of k-means++ and keeps the lowest-SSE
    clustering, so small instances come out at the global optimum.
    Deterministic given (boxes, k, seed).  Clusters that end up empty
    (possible only with coincident centers) are dropped, so fewer than
    ``k`` proposals may come back.
    """
    if not boxes:
        raise BuilderError("need at least one box to cluster")
    codes = [code for code, _ in boxes]
    if len(set(codes)) != len(codes):
        raise BuilderError("duplicate tooth codes in box list")
    if k < 1:
        raise BuilderError(f"k must be positive, got {k}")
    if k > len(boxes):
        raise KTooLarge(f"k={k} exceeds the {len(boxes)} available boxes")

    points = np.asarray([list(region.center()) for _, region in boxes], dtype=np.float64)
    best_labels: np.ndarray | None = None
    best_sse = math.inf
    for child in np.random.SeedSequence(int(seed)).spawn(max(1, int(n_init))):
        labels, sse = _kmeans_once(points, k, np.random.default_rng(child))
        if sse < best_sse - 1e-12:
            best_sse = sse
            best_labels = labels
    assert best_labels is not None

    grouped: dict[int, list[tuple[str, Region]]] = defaultdict(list)
    for (code, region), label in zip(boxes, best_labels):
        grouped[int(label)].append((code, region))
    ordered = sorted(grouped.values(), key=lambda members: min(code for code, _ in members))
    proposals = []
    for cluster_id, members in enumerate(ordered):
        union = _union_region([region for _, region in members])
        proposals.append(
            Proposal(
                region=pad_region(union, pad_factor, bounds),
                member_teeth=tuple(sorted(code for code, _ in members)),
                finding_class=finding_class,
                cluster_id=cluster_id,
            )
        )
    return proposals


# --- tool decision ----------------------------------------------------------


@dataclass(frozen=True)
class AnswerabilityVerdict:
    """What the judge thinks of a proposed zoom: is it enough, and how
    trustworthy would a symmetry comparison be (0 = unusable)."""

    zoom_sufficient: bool
    mirror_quality: float = 1.0


class AnswerabilityJudge(Protocol):
    def assess(self, proposal: Proposal) -> AnswerabilityVerdict: ...


@dataclass(frozen=True)
class DefaultAnswerability:
    """Deterministic stand-in for an external answerability judge.

    Votes for the symmetry comparison when every contralateral tooth of
    the proposal exists in the case and the dual view differs by more
    than ``mirror_diff_threshold`` gray levels on average; otherwise the
    plain zoom is deemed sufficient.
    """

    image: RasterImage
    tooth_boxes: Mapping[str, Region] | None = None
    mirror_diff_threshold: float = 4.0

    def assess(self, proposal: Proposal) -> AnswerabilityVerdict:
        if self.tooth_boxes:
            try:
                contra = [contralateral(code) for code in proposal.member_teeth]
            except InvalidCode:
                contra = []
            if contra and all(code in self.tooth_boxes for code in contra):
                dual = mirror_in(self.image, proposal.region, factor=1.0)
                mean_diff = float(np.abs(dual.difference()).mean())
                if mean_diff > self.mirror_diff_threshold:
                    return AnswerabilityVerdict(zoom_sufficient=False, mirror_quality=1.0)
        return AnswerabilityVerdict(zoom_sufficient=True, mirror_quality=0.0)


def decide_tool(
    proposal: Proposal,
    answerability: AnswerabilityJudge,
    *,
    mirror_quality_threshold: float = 0.5,
    fallback: AnswerabilityJudge | None = None,
) -> Action:
    """Pick the inspection tool for a proposal.

    Zoom when the judge finds it sufficient; otherwise the symmetry
    comparison, unless the judge rates mirror quality below threshold, in
    which case zoom is retained.  If the judge raises JudgeUnavailable
    the ``fallback`` judge (normally DefaultAnswerability) is consulted;
    without one the error propagates.
    """
    try:
        verdict = answerability.assess(proposal)
    except JudgeUnavailable:
        if fallback is None:
            raise
        verdict = fallback.assess(proposal)
    if verdict.zoom_sufficient:
        return ZoomIn(proposal.region)
    if verdict.mirror_quality < mirror_quality_threshold:
        return ZoomIn(proposal.region)
    return MirrorIn(proposal.region)


# --- descriptions -----------------------------------------------------------


@lru_cache(maxsize=1)
def load_descriptions() -> dict[str, str]:
    """Category -> radiographic description sentences, from the shipped table."""
    raw = resources.files("panodiag.data").joinpath("descriptions.json").read_text("utf-8")
    table = json.loads(raw)
    return {str(k).lower(): str(v) for k, v in table.items()}


def description_for(category: str, table: Mapping[str, str] | None = None) -> str:
    """Look up the description for a category, falling back gracefully.

    Resolution order: exact key, then any key with the same canonical
    category, then the periapical entry for periodontal-sounding names,
    then the generic caries entry.
    """
    if table is None:
        table = load_descriptions()
    norm = " ".join(category.lower().split())
    if norm in table:
        return table[norm]
    canon = canonical_category(category)
    for key, value in table.items():
        if canonical_category(key) == canon:
            return value
    if any(hint in canon for hint in ("periapical", "periodont", "apical")):
        return table["periapical periodontitis"]
    return table["caries"]


# --- trajectory synthesis ---------------------------------------------------


def _finding_block(finding: Finding, table: Mapping[str, str]) -> str:
    """Render one finding as 'head. description'.

    The head sentence carries the category and tooth codes and is kept in
    a clause of its own, so alias words inside the description text (which
    never contains tooth codes) cannot attach spurious teeth.
    """
    if not finding.tooth_ids:
        head = finding.category
    elif len(finding.tooth_ids) == 1:
        head = f"{finding.category} on tooth {finding.tooth_ids[0]}"
    else:
        head = f"{finding.category} on teeth {' '.join(finding.tooth_ids)}"
    description = description_for(finding.category, table)
    return f"{head}. {description}"


def _answer_text(findings: Sequence[Finding], table: Mapping[str, str]) -> str:
    return "\n".join(_finding_block(f, table) for f in findings)


def _bucket_findings(
    partition: FindingPartition, proposals: Sequence[Proposal]
) -> list[list[Finding]]:
    """Assign each subtle/bone-based finding to the proposal covering it."""
    buckets: list[list[Finding]] = [[] for _ in proposals]
    teethless: list[Finding] = []
    for cls, class_findings in (("subtle", partition.subtle), ("bone_based", partition.bone_based)):
        indexed = [(i, p) for i, p in enumerate(proposals) if p.finding_class == cls]
        for finding in class_findings:
            if not finding.tooth_ids:
                teethless.append(finding)
                continue
            teeth = set(finding.tooth_ids)
            hits = [i for i, p in indexed if teeth <= set(p.member_teeth)]
            if not hits:
                raise SchemaViolation(
                    f"finding {finding.category!r} on teeth {finding.tooth_ids} is not "
                    f"covered by any {cls} proposal"
                )
            buckets[min(hits)].append(finding)
    if teethless:
        if not proposals:
            raise SchemaViolation(
                "case has subtle or bone-based findings without teeth and no proposals to carry them"
            )
        buckets[-1].extend(teethless)
    return buckets


def synthesize_trajectory(
    case: AnnotatedCase,
    proposals: Sequence[Proposal],
    descriptions: Mapping[str, str] | None = None,
    *,
    image: RasterImage,
    judge: AnswerabilityJudge | None = None,
    mirror_quality_threshold: float = 0.5,
) -> TrainingRecord:
    """Render proposals into a validated multi-round training record.

    Round 1 asks the global question, answers with the obvious findings
    and fires the first tool; each later round carries a contextual query,
    the previous proposal's findings with their radiographic descriptions,
    and the next tool; the last round finalizes with the complete report.
    Observation refs come from actually stepping the actions on ``image``.
    """
    table = descriptions if descriptions is not None else load_descriptions()
    partition = categorize_findings(case.findings)
    buckets = _bucket_findings(partition, proposals)

    default = DefaultAnswerability(image, case.tooth_boxes)
    active = judge if judge is not None else default
    actions: list[Action] = [
        decide_tool(p, active, mirror_quality_threshold=mirror_quality_threshold, fallback=default)
        for p in proposals
    ]
    complete_report = render_report(list(case.findings))
    actions.append(Finalize(complete_report))

    state = new_episode(ROUND_ONE_QUERY, max_steps=len(proposals) + 1)
    turns: list[RecordTurn] = []
    for index, action in enumerate(actions):
        if index == 0:
            query = ROUND_ONE_QUERY
            answer = _answer_text(partition.obvious, table) if partition.obvious else _NO_OBVIOUS_TEXT
        else:
            query = _CONTEXT_QUERY.format(n=index)
            answer = _answer_text(buckets[index - 1], table)
        observation, state = step(state, action, image, pad_factor=1.0)
        turns.append(
            RecordTurn(
                query=query,
                answer=answer,
                action=serialize_action(action),
                obs_refs=observation.refs,
            )
        )

    placements = [PlacedFinding(f, 1, "obvious") for f in partition.obvious]
    classes = {id(f): "subtle" for f in partition.subtle}
    classes.update({id(f): "bone_based" for f in partition.bone_based})
    for bucket_index, bucket in enumerate(buckets):
        for finding in bucket:
            placements.append(
                PlacedFinding(finding, bucket_index + 2, classes.get(id(finding), "subtle"))
            )

    record = TrainingRecord(
        case_id=case.case_id,
        image_ref=case.image_ref,
        turns=tuple(turns),
        placements=tuple(placements),
    )
    validate_record(record)
    return record


def _regrouped(
    proposals: list[Proposal],
    class_findings: Sequence[Finding],
    tooth_boxes: Mapping[str, Region],
    bounds: Bounds,
    pad_factor: float,
    finding_class: str,
) -> list[Proposal]:
    """Rebuild proposals so every finding's teeth sit in one cluster.

    A finding spanning clusters moves whole to its majority cluster (ties
    to the lowest id); clusters left sharing a tooth are merged.  Emptied
    clusters vanish and the survivors are renumbered.
    """
    tooth_to_cluster = {t: p.cluster_id for p in proposals for t in p.member_teeth}
    toothed = [f for f in class_findings if f.tooth_ids]
    cluster_teeth: dict[int, set[str]] = defaultdict(set)
    for finding in toothed:
        votes = Counter(tooth_to_cluster[t] for t in finding.tooth_ids)
        home = min(votes.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        cluster_teeth[home].update(finding.tooth_ids)

    roots = {c: c for c in cluster_teeth}

    def find(c: int) -> int:
        while roots[c] != c:
            roots[c] = roots[roots[c]]
            c = roots[c]
        return c

    owner: dict[str, int] = {}
    for cluster in sorted(cluster_teeth):
        for tooth in sorted(cluster_teeth[cluster]):
            if tooth in owner:
                a, b = find(cluster), find(owner[tooth])
                if a != b:
                    roots[max(a, b)] = min(a, b)
            else:
                owner[tooth] = cluster

    merged: dict[int, set[str]] = defaultdict(set)
    for cluster, teeth in cluster_teeth.items():
        merged[find(cluster)].update(teeth)

    rebuilt = []
    for cluster_id, teeth in enumerate(sorted(merged.values(), key=min)):
        union = _union_region([tooth_boxes[t] for t in sorted(teeth)])
        rebuilt.append(
            Proposal(
                region=pad_region(union, pad_factor, bounds),
                member_teeth=tuple(sorted(teeth)),
                finding_class=finding_class,
                cluster_id=cluster_id,
            )
        )
    return rebuilt


def build_training_record(
    image: RasterImage,
    case: AnnotatedCase,
    *,
    seed: int = 0,
    k: int | None = None,
    pad_factor: float = 1.5,
    n_init: int = 8,
    judge: AnswerabilityJudge | None = None,
    mirror_quality_threshold: float = 0.5,
    descriptions: Mapping[str, str] | None = None,
) -> TrainingRecord:
    """Full pipeline: categorize, cluster, decide tools, synthesize.

    ``k`` defaults per class to min(3, ceil(teeth/4)); an explicit value
    applies to both classes and may raise KTooLarge.  Pure function of
    (image, case, seed, config).
    """
    partition = categorize_findings(case.findings)
    bounds = Bounds(case.width, case.height)
    proposals: list[Proposal] = []
    for cls, class_findings in (("subtle", partition.subtle), ("bone_based", partition.bone_based)):
        teeth = sorted({t for f in class_findings for t in f.tooth_ids})
        if not teeth:
            continue
        missing = [t for t in teeth if t not in case.tooth_boxes]
        if missing:
            raise SchemaViolation(f"case {case.case_id!r} lacks tooth boxes for {missing}")
        boxes = [(t, case.tooth_boxes[t]) for t in teeth]
        class_k = k if k is not None else min(3, math.ceil(len(boxes) / 4))
        clustered = kmeans_proposals(
            boxes,
            class_k,
            seed,
            bounds=bounds,
            finding_class=cls,
            pad_factor=pad_factor,
            n_init=n_init,
        )
        proposals.extend(
            _regrouped(clustered, class_findings, case.tooth_boxes, bounds, pad_factor, cls)
        )
    return synthesize_trajectory(
        case,
        proposals,
        descriptions,
        image=image,
        judge=judge,
        mirror_quality_threshold=mirror_quality_threshold,
    )


# --- validation and serialization -------------------------------------------

_CLASSES = ("obvious", "subtle", "bone_based")


def validate_record(record: TrainingRecord) -> None:
    """Structural checks; raises SchemaViolation on the first failure.

    Verifies the action grammar (tools in every round but the last, a
    final answer last), placement classes and bounds, and that each
    answer names exactly the tooth-bearing findings placed in its round.
    """
    if not record.turns:
        raise SchemaViolation("record needs at least one turn")
    for index, turn in enumerate(record.turns):
        try:
            action = parse_action(turn.action)
        except ActionError as exc:
            raise SchemaViolation(f"round {index + 1} action does not parse: {exc}") from exc
        is_last = index == len(record.turns) - 1
        if is_last and not isinstance(action, Finalize):
            raise SchemaViolation("last round must finalize the report")
        if not is_last and isinstance(action, Finalize):
            raise SchemaViolation("only the last round may finalize")

    rounds = len(record.turns)
    expected: dict[int, set[tuple[str, str]]] = {r: set() for r in range(1, rounds + 1)}
    for placed in record.placements:
        if placed.finding_class not in _CLASSES:
            raise SchemaViolation(f"unknown finding class {placed.finding_class!r}")
        if not 1 <= placed.round_no <= rounds:
            raise SchemaViolation(
                f"placement round {placed.round_no} outside 1..{rounds}"
            )
        if placed.finding_class == "obvious" and placed.round_no != 1:
            raise SchemaViolation("obvious findings may appear only in round 1")
        if placed.finding_class != "obvious" and placed.round_no < 2:
            raise SchemaViolation(
                f"{placed.finding_class} findings may appear only in round 2 or later"
            )
        canon = canonical_category(placed.finding.category)
        for tooth in placed.finding.tooth_ids:
            expected[placed.round_no].add((canon, tooth))

    for round_no, turn in enumerate(record.turns, start=1):
        mentioned = {
            (f.category, f.tooth_ids[0])
            for f in findings_from_text(turn.answer)
            if f.tooth_ids
        }
        if mentioned != expected[round_no]:
            raise SchemaViolation(
                f"round {round_no} answer names {sorted(mentioned)} but placements "
                f"require {sorted(expected[round_no])}"
            )


def record_to_json(record: TrainingRecord) -> dict:
    return {
        "case_id": record.case_id,
        "image_ref": record.image_ref,
        "turns": [
            {
                "query": t.query,
                "answer": t.answer,
                "action": t.action,
                "obs_refs": list(t.obs_refs),
            }
            for t in record.turns
        ],
        "placements": [
            {
                "category": p.finding.category,
                "tooth_ids": list(p.finding.tooth_ids),
                "region": list(p.finding.region.as_tuple()) if p.finding.region else None,
                "qualifier": p.finding.qualifier,
                "round": p.round_no,
                "finding_class": p.finding_class,
            }
            for p in record.placements
        ],
    }


def record_from_json(payload: Mapping) -> TrainingRecord:
    try:
        turns = tuple(
            RecordTurn(
                query=str(t["query"]),
                answer=str(t["answer"]),
                action=str(t["action"]),
                obs_refs=tuple(str(r) for r in t.get("obs_refs", [])),
            )
            for t in payload["turns"]
        )
        placements = []
        for p in payload["placements"]:
            region = Region(*p["region"]) if p.get("region") else None
            finding = Finding(
                category=str(p["category"]),
                tooth_ids=tuple(str(t) for t in p.get("tooth_ids", [])),
                region=region,
                qualifier=str(p.get("qualifier", "")),
            )
            placements.append(PlacedFinding(finding, int(p["round"]), str(p["finding_class"])))
        record = TrainingRecord(
            case_id=str(payload["case_id"]),
            image_ref=str(payload.get("image_ref", "")),
            turns=turns,
            placements=tuple(placements),
        )
    except (KeyError, TypeError, InvalidCode) as exc:
        raise SchemaViolation(f"malformed training record: {exc}") from exc
    validate_record(record)
    return record


def export_records(records: Sequence[TrainingRecord], path) -> int:
    """Write records as one canonical JSON object per line; returns count.

    Every record is validated first, so a single bad record refuses the
    whole export rather than leaving a half-written file behind.
    """
    for record in records:
        validate_record(record)
    try:
        with open(path, "w", encoding="utf-8") as handle:
            for record in records:
                handle.write(
                    json.dumps(record_to_json(record), sort_keys=True, separators=(",", ":"))
                )
                handle.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return len(records)


def import_records(path) -> list[TrainingRecord]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.readlines()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    records = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"{path}:{number}: not valid JSON: {exc}") from exc
        records.append(record_from_json(payload))
    return records


def rewrite_records(
    records: Sequence[TrainingRecord],
    rewriter: Callable[[str, str], str],
) -> list[TrainingRecord]:
    """Optional stylistic-rewrite hook over query and answer texts.

    ``rewriter(role, text)`` gets role "query" or "answer" and returns the
    replacement text.  Actions and refs are never touched, and each
    rewritten record is re-validated, so a rewrite that loses or invents
    findings is refused.  Not part of the deterministic pipeline.
    """
    rewritten = []
    for record in records:
        turns = tuple(
            replace(
                turn,
                query=str(rewriter("query", turn.query)),
                answer=str(rewriter("answer", turn.answer)),
            )
            for turn in record.turns
        )
        candidate = replace(record, turns=turns)
        validate_record(candidate)
        rewritten.append(candidate)
    return rewritten
