"""Finding records, category synonym handling, and report matching.

A finding is a category plus the FDI codes of the teeth it is asserted on
(possibly none, for arch-level observations like generalized bone loss).
Matching a predicted report against ground truth is deterministic and
greedy: categories must be synonym-equivalent and tooth sets must
intersect, except that two teeth-less findings match on category alone.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Sequence

from .imaging import Region
from .teeth import InvalidCode, arch_walk, is_valid_fdi

__all__ = [
    "Finding",
    "MatchReport",
    "load_synonyms",
    "canonical_category",
    "categories_equivalent",
    "match_findings",
    "findings_from_text",
    "render_report",
]


@dataclass(frozen=True)
class Finding:
    """One radiographic assertion: a category, optionally pinned to teeth."""

    category: str
    tooth_ids: tuple[str, ...] = ()
    region: Region | None = None
    qualifier: str = ""

    def __post_init__(self) -> None:
        if not self.category or not self.category.strip():
            raise ValueError("finding category must be non-empty")
        object.__setattr__(self, "tooth_ids", tuple(str(t).strip() for t in self.tooth_ids))
        for code in self.tooth_ids:
            if not is_valid_fdi(code):
                raise InvalidCode(f"finding lists invalid FDI code {code!r}")


@dataclass
class MatchReport:
    """Outcome of aligning a predicted finding list against ground truth.

    ``matched`` holds (predicted, truth) pairs, each truth finding used at
    most once.  ``major_errors`` counts spurious predictions that assert a
    different category on a tooth the ground truth covers.
    """

    matched: list[tuple[Finding, Finding]] = field(default_factory=list)
    missing: list[Finding] = field(default_factory=list)
    spurious: list[Finding] = field(default_factory=list)
    major_errors: int = 0

    @property
    def truth_count(self) -> int:
        return len(self.matched) + len(self.missing)

    @property
    def predicted_count(self) -> int:
        return len(self.matched) + len(self.spurious)


@lru_cache(maxsize=1)
def load_synonyms() -> dict[str, str]:
    """Alias -> canonical category map from the shipped synonym table."""
    raw = resources.files("panodiag.data").joinpath("synonyms.json").read_text("utf-8")
    groups = json.loads(raw)
    table: dict[str, str] = {}
    for canonical, aliases in groups.items():
        key = canonical.strip().lower()
        table[key] = key
        for alias in aliases:
            table[alias.strip().lower()] = key
    return table


def canonical_category(text: str) -> str:
    """Normalize a category label through the synonym table."""
    key = " ".join(text.strip().lower().split())
    return load_synonyms().get(key, key)


def categories_equivalent(a: str, b: str) -> bool:
    return canonical_category(a) == canonical_category(b)


def _pair_matches(predicted: Finding, truth: Finding) -> bool:
    if not categories_equivalent(predicted.category, truth.category):
        return False
    if predicted.tooth_ids and truth.tooth_ids:
        return bool(set(predicted.tooth_ids) & set(truth.tooth_ids))
    return not predicted.tooth_ids and not truth.tooth_ids


def match_findings(predicted: list[Finding], truth: list[Finding]) -> MatchReport:
    """Greedy one-to-one alignment of predicted findings to ground truth.

    Predictions are scanned in order; each takes the first still-unmatched
    compatible truth finding.  Leftover predictions are spurious, leftover
    truths are missing.
    """
    report = MatchReport()
    used = [False] * len(truth)
    for pred in predicted:
        hit = None
        for idx, ref in enumerate(truth):
            if not used[idx] and _pair_matches(pred, ref):
                hit = idx
                break
        if hit is None:
            report.spurious.append(pred)
        else:
            used[hit] = True
            report.matched.append((pred, truth[hit]))
    report.missing = [ref for idx, ref in enumerate(truth) if not used[idx]]
    for pred in report.spurious:
        pred_teeth = set(pred.tooth_ids)
        if not pred_teeth:
            continue
        conflict = any(
            pred_teeth & set(ref.tooth_ids)
            and not categories_equivalent(pred.category, ref.category)
            for ref in truth
        )
        if conflict:
            report.major_errors += 1
    return report


# --- free-text extraction -------------------------------------------------

_NO_FINDING_RE = re.compile(
    r"\bno (?:significant |notable |obvious )?(?:abnormalit|finding|pathology|lesion)",
    re.IGNORECASE,
)
_NEGATED_PAREN_RE = re.compile(
    r"\([^)]*\b(?:missed|missing|not|without|except|absent|no)\b[^)]*\)",
    re.IGNORECASE,
)
_RANGE_RE = re.compile(r"\b([1-8][1-8])\s*[-–—]\s*([1-8][1-8])\b")
_TOOTH_RE = re.compile(r"\b([1-8][1-8])\b")


@lru_cache(maxsize=1)
def _alias_patterns() -> list[tuple[re.Pattern, str]]:
    table = load_synonyms()
    ordered = sorted(table, key=len, reverse=True)
    return [
        (re.compile(r"\b" + re.escape(alias).replace(r"\ ", r"\s+") + r"\b"), table[alias])
        for alias in ordered
    ]


def _clause_teeth(clause: str) -> list[str]:
    teeth: list[str] = []
    rest = clause
    for match in _RANGE_RE.finditer(clause):
        for code in arch_walk(match.group(1), match.group(2)):
            if code not in teeth:
                teeth.append(code)
        rest = rest.replace(match.group(0), " ")
    for match in _TOOTH_RE.finditer(rest):
        if match.group(1) not in teeth:
            teeth.append(match.group(1))
    return teeth


def _clause_categories(clause: str) -> list[str]:
    found: list[tuple[int, str]] = []
    taken: set[str] = set()
    shadow = clause
    for pattern, canonical in _alias_patterns():
        match = pattern.search(shadow)
        if match and canonical not in taken:
            found.append((match.start(), canonical))
            taken.add(canonical)
            # blank out the matched span so shorter aliases nested inside
            # an already-claimed phrase do not fire again
            shadow = shadow[: match.start()] + " " * len(match.group(0)) + shadow[match.end():]
    return [canonical for _, canonical in sorted(found)]


def findings_from_text(text: str) -> list[Finding]:
    """Pull structured findings out of a free-text report.

    Clauses are split on sentence punctuation; each recognized category in
    a clause claims every tooth code mentioned there, one finding per
    tooth (or a single teeth-less finding when none appear).  Tooth ranges
    like "31-43" expand along the dental arch.  Parenthesized negations
    ("(missed 45)") are dropped before extraction, and unrecognized
    phrasings are skipped rather than guessed at.
    """
    lowered = text.strip().lower()
    if not lowered or _NO_FINDING_RE.search(lowered):
        return []
    cleaned = _NEGATED_PAREN_RE.sub(" ", lowered)
    results: list[Finding] = []
    seen: set[tuple[str, str]] = set()
    for clause in re.split(r"[;.\n]+", cleaned):
        if not clause.strip():
            continue
        categories = _clause_categories(clause)
        if not categories:
            continue
        teeth = _clause_teeth(clause)
        for category in categories:
            if teeth:
                for tooth in teeth:
                    key = (category, tooth)
                    if key not in seen:
                        seen.add(key)
                        results.append(Finding(category, (tooth,)))
            else:
                key = (category, "")
                if key not in seen:
                    seen.add(key)
                    results.append(Finding(category))
    return results


def render_report(findings: Sequence[Finding]) -> str:
    """Plain-text report that ``findings_from_text`` parses back exactly.

    One clause per finding, teeth spelled out individually; an empty
    list renders the standard all-clear phrase.  Note the per-tooth
    convention: a finding listing several teeth comes back from the
    parser as one finding per tooth, so callers that need a lossless
    round trip should pass findings already split that way.
    """
    if not findings:
        return "no abnormalities detected."
    clauses = []
    for finding in findings:
        if not finding.tooth_ids:
            clauses.append(finding.category)
        elif len(finding.tooth_ids) == 1:
            clauses.append(f"{finding.category} on tooth {finding.tooth_ids[0]}")
        else:
            clauses.append(f"{finding.category} on teeth {' '.join(finding.tooth_ids)}")
    return "; ".join(clauses) + "."
