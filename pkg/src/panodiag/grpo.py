"""Group-relative policy optimization arithmetic.

Pure functions over reward groups: standardized advantages, the clipped
surrogate term, and the group-mean objective.  Summation uses
``math.fsum`` throughout so results are stable to reordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

__all__ = [
    "GroupError",
    "GroupTooSmall",
    "ClipRange",
    "GroupRollout",
    "group_advantages",
    "clipped_term",
    "grpo_objective",
]

ADVANTAGE_EPS = 1e-8


class GroupError(ValueError):
    """Invalid rollout group."""


class GroupTooSmall(GroupError):
    """A group needs at least two rollouts to standardize against."""


@dataclass(frozen=True)
class ClipRange:
    """Asymmetric ratio clip bounds: ratios clamp to [1-low, 1+high]."""

    low: float = 0.2
    high: float = 0.3

    def __post_init__(self) -> None:
        if not 0.0 < self.low < 1.0:
            raise ValueError("low clip must sit in (0, 1)")
        if self.high <= 0.0:
            raise ValueError("high clip must be positive")


@dataclass(frozen=True)
class GroupRollout:
    """Rewards gathered for one query from a group of sampled rollouts."""

    query_id: str
    rewards: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "rewards", tuple(float(r) for r in self.rewards))
        if len(self.rewards) < 2:
            raise GroupTooSmall(
                f"group for {self.query_id!r} has {len(self.rewards)} rollout(s); need >= 2"
            )

    def advantages(self, eps: float = ADVANTAGE_EPS) -> list[float]:
        return group_advantages(self.rewards, eps=eps)


def group_advantages(rewards: Sequence[float], eps: float = ADVANTAGE_EPS) -> list[float]:
    """Standardize rewards within a group: subtract mean, divide by std.

    Uses the population standard deviation (divide by the group size).
    When the spread is at or below ``eps`` every advantage is exactly
    zero, so constant-reward groups produce no gradient signal instead of
    amplified noise.
    """
    size = len(rewards)
    if size < 2:
        raise GroupTooSmall(f"got {size} reward(s); need >= 2")
    values = [float(r) for r in rewards]
    mean = math.fsum(values) / size
    variance = math.fsum((v - mean) ** 2 for v in values) / size
    std = math.sqrt(variance)
    if std <= eps:
        return [0.0] * size
    return [(v - mean) / std for v in values]


def clipped_term(ratio: float, advantage: float, clip: ClipRange = ClipRange()) -> float:
    """Pessimistic clipped surrogate for one rollout.

    Takes the smaller of the raw importance-weighted advantage and the
    same product with the ratio clamped into the clip interval, which
    caps how much any single rollout can pull the objective in its own
    favor.
    """
    clamped = min(max(ratio, 1.0 - clip.low), 1.0 + clip.high)
    return min(ratio * advantage, clamped * advantage)


def grpo_objective(
    ratios: Sequence[float],
    advantages: Sequence[float],
    clip: ClipRange = ClipRange(),
    kl_penalties: Sequence[float] | None = None,
    kl_coef: float = 0.001,
) -> float:
    """Mean clipped surrogate over a rollout group.

    ``kl_penalties`` is an optional per-rollout divergence estimate; when
    provided its mean is subtracted with weight ``kl_coef``.  Leaving it
    ``None`` (the default) runs the objective purely on the clipped
    terms.
    """
    if len(ratios) != len(advantages):
        raise GroupError(
            f"{len(ratios)} ratio(s) vs {len(advantages)} advantage(s); lengths must agree"
        )
    size = len(ratios)
    if size < 2:
        raise GroupTooSmall(f"got {size} rollout(s); need >= 2")
    objective = math.fsum(
        clipped_term(r, a, clip) for r, a in zip(ratios, advantages)
    ) / size
    if kl_penalties is not None:
        if len(kl_penalties) != size:
            raise GroupError("KL penalty count must match the group size")
        objective -= kl_coef * (math.fsum(kl_penalties) / size)
    return objective
