"""Multi-turn episode engine: action grammar, stepping, and trajectories.

An episode alternates policy output with environment observations.  The
policy emits free text containing exactly one action line, either

    TOOL zoom_in x1 y1 x2 y2
    TOOL mirror_in x1 y1 x2 y2
    FINAL <answer text>

optionally wrapped in <Think>/<Answer> scaffolding, which is stripped
before scanning.  Tool actions produce image observations; FINAL ends
the episode.  A policy that burns the whole step budget gets one extra
answer-only call, and the result is flagged truncated.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from math import fsum
from pathlib import Path
from typing import Callable, Iterable, Sequence, Union

from .imaging import ImagingError, RasterImage, Region, mirror_in, pad_region, zoom_in

__all__ = [
    "ActionError",
    "NoActionFound",
    "MalformedCoordinates",
    "MultipleActions",
    "EpisodeFinished",
    "EmptyInput",
    "PolicyFailure",
    "LogFormatError",
    "ZoomIn",
    "MirrorIn",
    "Finalize",
    "Action",
    "Observation",
    "Turn",
    "Trajectory",
    "EpisodeState",
    "FORCED_ANSWER_NOTE",
    "parse_action",
    "split_response",
    "serialize_action",
    "new_episode",
    "step",
    "run_episode",
    "replay_policy",
    "trajectory_stats",
    "TrajectorySummary",
    "TrajectoryLogEntry",
    "trajectory_log_entry",
    "serialize_trajectory_line",
    "parse_trajectory_line",
    "write_trajectory_log",
    "read_trajectory_log",
]


class ActionError(ValueError):
    """Raw policy text did not yield a usable action."""


class NoActionFound(ActionError):
    pass


class MalformedCoordinates(ActionError):
    pass


class MultipleActions(ActionError):
    pass


class EpisodeFinished(RuntimeError):
    """Step attempted on a finalized or budget-exhausted episode."""


class EmptyInput(ValueError):
    pass


class PolicyFailure(RuntimeError):
    """Policy-side breakdown; carries the trajectory built so far."""

    def __init__(self, message: str, partial: "Trajectory") -> None:
        super().__init__(message)
        self.partial = partial


class LogFormatError(ValueError):
    """Trajectory log line does not satisfy the schema."""


@dataclass(frozen=True)
class ZoomIn:
    region: Region


@dataclass(frozen=True)
class MirrorIn:
    region: Region


@dataclass(frozen=True)
class Finalize:
    answer: str


Action = Union[ZoomIn, MirrorIn, Finalize]


@dataclass(frozen=True)
class Observation:
    """What the environment handed back: text plus zero or more views."""

    text: str
    images: tuple[RasterImage, ...] = ()
    refs: tuple[str, ...] = ()


@dataclass(frozen=True)
class Turn:
    thought: str
    action: Action
    observation: Observation


@dataclass(frozen=True)
class Trajectory:
    """A finished (or aborted) episode record."""

    query_id: str
    turns: tuple[Turn, ...]
    final_answer: str
    truncated: bool = False
    query: str = ""
    image_ref: str = ""
    score: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        for turn in self.turns[:-1]:
            if isinstance(turn.action, Finalize):
                raise ValueError("Finalize may only appear as the last turn")

    @property
    def rounds(self) -> int:
        return len(self.turns)

    @property
    def n_tool(self) -> int:
        return sum(1 for t in self.turns if not isinstance(t.action, Finalize))


@dataclass(frozen=True)
class EpisodeState:
    """Immutable in-flight episode; ``step`` returns the successor state."""

    query: str
    max_steps: int
    turns: tuple[Turn, ...] = ()
    final_answer: str | None = None

    @property
    def rounds(self) -> int:
        return len(self.turns)

    @property
    def n_tool(self) -> int:
        return sum(1 for t in self.turns if not isinstance(t.action, Finalize))

    @property
    def finished(self) -> bool:
        return self.final_answer is not None


# --- grammar ---------------------------------------------------------------

_TAG_RE = re.compile(r"</?(?:Think|Answer)>", re.IGNORECASE)
_INT_RE = re.compile(r"-?\d+$")
_TOOL_NAMES = {"zoom_in": ZoomIn, "mirror_in": MirrorIn}

FORCED_ANSWER_NOTE = (
    "Step limit reached. Reply with a FINAL line carrying your complete "
    "report; tools are no longer available."
)


def _action_lines(raw: str) -> list[str]:
    cleaned = _TAG_RE.sub("\n", raw)
    hits = []
    for line in cleaned.splitlines():
        stripped = line.strip()
        if stripped == "TOOL" or stripped.startswith("TOOL "):
            hits.append(stripped)
        elif stripped == "FINAL" or stripped.startswith("FINAL "):
            hits.append(stripped)
    return hits


def _parse_line(line: str) -> Action:
    if line.startswith("FINAL"):
        return Finalize(line[len("FINAL"):].strip())
    parts = line.split()
    if len(parts) != 6:
        raise MalformedCoordinates(
            f"tool line needs a tool name and four integers, got {line!r}"
        )
    name = parts[1]
    if name not in _TOOL_NAMES:
        raise MalformedCoordinates(f"unknown tool {name!r}")
    for token in parts[2:]:
        if not _INT_RE.match(token):
            raise MalformedCoordinates(f"coordinate {token!r} is not an integer")
    x1, y1, x2, y2 = (int(t) for t in parts[2:])
    try:
        region = Region(x1, y1, x2, y2)
    except ImagingError as exc:
        raise MalformedCoordinates(str(exc)) from exc
    return _TOOL_NAMES[name](region)


def parse_action(raw: str) -> Action:
    """Extract the single action line embedded in raw policy text."""
    hits = _action_lines(raw)
    if not hits:
        raise NoActionFound("no TOOL or FINAL line in policy output")
    if len(hits) > 1:
        raise MultipleActions(f"found {len(hits)} action lines; expected exactly one")
    return _parse_line(hits[0])


def split_response(raw: str) -> tuple[str, Action]:
    """Separate a raw response into (thought text, action).

    The thought is everything outside the action line, with the prompt
    scaffolding tags removed and surrounding whitespace trimmed.
    """
    action = parse_action(raw)
    cleaned = _TAG_RE.sub("\n", raw)
    kept: list[str] = []
    taken = False
    for line in cleaned.splitlines():
        stripped = line.strip()
        is_hit = stripped == "TOOL" or stripped == "FINAL" or stripped.startswith(("TOOL ", "FINAL "))
        if is_hit and not taken:
            taken = True
            continue
        kept.append(line)
    return "\n".join(kept).strip(), action


def serialize_action(action: Action) -> str:
    if isinstance(action, Finalize):
        text = action.answer.replace("\n", " ").strip()
        return f"FINAL {text}" if text else "FINAL"
    if isinstance(action, ZoomIn):
        name = "zoom_in"
    elif isinstance(action, MirrorIn):
        name = "mirror_in"
    else:
        raise TypeError(f"not an action: {action!r}")
    r = action.region
    return f"TOOL {name} {r.x1} {r.y1} {r.x2} {r.y2}"


# --- stepping --------------------------------------------------------------


def new_episode(query: str, max_steps: int = 6) -> EpisodeState:
    if not query or not query.strip():
        raise EmptyInput("episode query must be non-empty")
    if max_steps < 1:
        raise ValueError("max_steps must be at least 1")
    return EpisodeState(query=query, max_steps=max_steps)


def step(
    state: EpisodeState,
    action: Action,
    image: RasterImage,
    *,
    thought: str = "",
    pad_factor: float = 1.5,
    zoom_min_side: int = 0,
) -> tuple[Observation, EpisodeState]:
    """Apply one action, returning the observation and successor state.

    Imaging failures (a region outside the image, say) do not abort the
    episode: they come back as a textual error observation so the policy
    can correct itself on the next turn.
    """
    if state.finished:
        raise EpisodeFinished("episode already finalized")
    if len(state.turns) >= state.max_steps:
        raise EpisodeFinished(f"turn budget of {state.max_steps} exhausted")
    if isinstance(action, Finalize):
        obs = Observation("")
        turn = Turn(thought, action, obs)
        return obs, replace(state, turns=state.turns + (turn,), final_answer=action.answer)
    try:
        if isinstance(action, ZoomIn):
            view = zoom_in(image, action.region, factor=pad_factor, min_side=zoom_min_side)
            shown = pad_region(action.region, pad_factor, image)
            ref = f"zoom {shown.x1} {shown.y1} {shown.x2} {shown.y2} {view.width}x{view.height}"
            obs = Observation(
                f"zoomed view of [{shown.x1},{shown.x2})x[{shown.y1},{shown.y2}) "
                f"at {view.width}x{view.height}",
                (view,),
                (ref,),
            )
        elif isinstance(action, MirrorIn):
            dual = mirror_in(image, action.region, factor=pad_factor)
            src, ref_region = dual.source_region, dual.mirror_region
            refs = (
                f"primary {src.x1} {src.y1} {src.x2} {src.y2}",
                f"mirror {ref_region.x1} {ref_region.y1} {ref_region.x2} {ref_region.y2}",
            )
            obs = Observation(
                f"side-by-side comparison of [{src.x1},{src.x2})x[{src.y1},{src.y2}) "
                f"with its contralateral reflection, each {dual.original.width}x{dual.original.height}",
                (dual.original, dual.mirrored),
                refs,
            )
        else:
            raise TypeError(f"not an action: {action!r}")
    except ImagingError as exc:
        obs = Observation(f"tool error: {exc}")
    turn = Turn(thought, action, obs)
    return obs, replace(state, turns=state.turns + (turn,))


Policy = Callable[[str, RasterImage, tuple[Turn, ...]], tuple[str, str]]


def _partial(query_id: str, query: str, image_ref: str, state: EpisodeState) -> Trajectory:
    return Trajectory(
        query_id=query_id,
        turns=state.turns,
        final_answer="",
        truncated=True,
        query=query,
        image_ref=image_ref,
    )


def run_episode(
    policy: Policy,
    query: str,
    image: RasterImage,
    max_steps: int = 6,
    *,
    query_id: str = "q0",
    image_ref: str = "",
    pad_factor: float = 1.5,
    zoom_min_side: int = 0,
) -> Trajectory:
    """Drive a policy to completion against one image.

    The policy is a callable (query, image, history) -> (thought, raw
    action text).  It is consulted at most ``max_steps`` times, plus one
    forced answer-only call if it never finalized; in that case the
    returned trajectory is marked truncated.  Anything that goes wrong on
    the policy side, including unparsable action text, surfaces as
    PolicyFailure with the partial trajectory attached.
    """
    state = new_episode(query, max_steps)
    while not state.finished and len(state.turns) < max_steps:
        try:
            thought, raw = policy(query, image, state.turns)
            action = parse_action(raw)
        except ActionError as exc:
            raise PolicyFailure(
                f"policy produced an unusable action: {exc}",
                _partial(query_id, query, image_ref, state),
            ) from exc
        except Exception as exc:
            raise PolicyFailure(
                f"policy raised {type(exc).__name__}: {exc}",
                _partial(query_id, query, image_ref, state),
            ) from exc
        _, state = step(
            state, action, image,
            thought=thought, pad_factor=pad_factor, zoom_min_side=zoom_min_side,
        )
    if state.finished:
        assert state.final_answer is not None
        return Trajectory(
            query_id=query_id,
            turns=state.turns,
            final_answer=state.final_answer,
            truncated=False,
            query=query,
            image_ref=image_ref,
        )
    # budget gone: one answer-only call, no tools honored
    forced_query = f"{query}\n\n{FORCED_ANSWER_NOTE}"
    try:
        _, raw = policy(forced_query, image, state.turns)
    except Exception as exc:
        raise PolicyFailure(
            f"policy raised {type(exc).__name__} on the forced answer call: {exc}",
            _partial(query_id, query, image_ref, state),
        ) from exc
    try:
        action = parse_action(raw)
    except NoActionFound:
        answer = _TAG_RE.sub("\n", raw).strip()
    except ActionError as exc:
        raise PolicyFailure(
            f"unusable forced answer: {exc}",
            _partial(query_id, query, image_ref, state),
        ) from exc
    else:
        if not isinstance(action, Finalize):
            raise PolicyFailure(
                "policy issued a tool call on the forced answer round",
                _partial(query_id, query, image_ref, state),
            )
        answer = action.answer
    return Trajectory(
        query_id=query_id,
        turns=state.turns,
        final_answer=answer,
        truncated=True,
        query=query,
        image_ref=image_ref,
    )


def replay_policy(script: Sequence[str]) -> Policy:
    """Policy that replays a fixed list of raw response lines in order.

    The thought handed to the engine is whatever text surrounds the
    action line in the scripted response, so a replayed episode is
    indistinguishable from a live one that produced the same lines.
    """
    lines = list(script)

    def fire(query: str, image: RasterImage, history: tuple[Turn, ...]) -> tuple[str, str]:
        index = len(history)
        if index >= len(lines):
            raise IndexError(f"replay script exhausted after {len(lines)} line(s)")
        raw = lines[index]
        try:
            thought, _ = split_response(raw)
        except ActionError:
            thought = ""
        return thought, raw

    return fire


# --- statistics ------------------------------------------------------------


@dataclass(frozen=True)
class TrajectorySummary:
    count: int
    rounds_histogram: dict[int, float] = field(compare=False)
    mean_n_tool: float = 0.0
    single_round_proportion: float = 0.0


def trajectory_stats(trajectories: Sequence) -> TrajectorySummary:
    """Round-count histogram (as proportions), mean tool use, one-shot rate."""
    items = list(trajectories)
    if not items:
        raise EmptyInput("no trajectories to summarize")
    n = len(items)
    counts = Counter(t.rounds for t in items)
    histogram = {rounds: counts[rounds] / n for rounds in sorted(counts)}
    mean_n_tool = fsum(t.n_tool for t in items) / n
    return TrajectorySummary(
        count=n,
        rounds_histogram=histogram,
        mean_n_tool=mean_n_tool,
        single_round_proportion=counts.get(1, 0) / n,
    )


# --- log serialization -----------------------------------------------------


@dataclass(frozen=True)
class TrajectoryLogEntry:
    query_id: str
    rounds: int
    n_tool: int
    turns: tuple[dict, ...]
    final_answer: str
    score: float | None = None


def trajectory_log_entry(trajectory: Trajectory, score: float | None = None) -> dict:
    entry: dict = {
        "query_id": trajectory.query_id,
        "rounds": trajectory.rounds,
        "n_tool": trajectory.n_tool,
        "turns": [
            {
                "thought": turn.thought,
                "action": serialize_action(turn.action),
                "obs_refs": list(turn.observation.refs),
            }
            for turn in trajectory.turns
        ],
        "final_answer": trajectory.final_answer,
    }
    value = trajectory.score if score is None else score
    if value is not None:
        entry["score"] = float(value)
    return entry


def serialize_trajectory_line(trajectory: Trajectory, score: float | None = None) -> str:
    """Canonical one-line JSON form: sorted keys, no whitespace."""
    return json.dumps(trajectory_log_entry(trajectory, score), sort_keys=True, separators=(",", ":"))


def parse_trajectory_line(line: str) -> TrajectoryLogEntry:
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as exc:
        raise LogFormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise LogFormatError("log line must be a JSON object")
    try:
        turns = payload["turns"]
        if not isinstance(turns, list):
            raise LogFormatError("turns must be a list")
        for turn in turns:
            if not {"thought", "action", "obs_refs"} <= set(turn):
                raise LogFormatError("turn entry missing thought/action/obs_refs")
        return TrajectoryLogEntry(
            query_id=str(payload["query_id"]),
            rounds=int(payload["rounds"]),
            n_tool=int(payload["n_tool"]),
            turns=tuple(turns),
            final_answer=str(payload["final_answer"]),
            score=float(payload["score"]) if "score" in payload else None,
        )
    except KeyError as exc:
        raise LogFormatError(f"log line missing key {exc.args[0]!r}") from exc


def write_trajectory_log(path: str | Path, trajectories: Iterable[Trajectory]) -> int:
    """Append-free write of one canonical JSON line per trajectory."""
    count = 0
    with open(path, "w", encoding="utf-8") as handle:
        for trajectory in trajectories:
            handle.write(serialize_trajectory_line(trajectory) + "\n")
            count += 1
    return count


def read_trajectory_log(path: str | Path) -> list[TrajectoryLogEntry]:
    entries = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                entries.append(parse_trajectory_line(line))
    return entries
