"""Command-line surface binding the modules into reproducible runs.

Exit codes: 0 success, 2 validation error, 3 I/O error, 4 judge or
transport error.  Failures print one machine-readable JSON object to
stderr.  Every command is deterministic given config and seed, except
those that talk to a remote judge.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .builder import JudgeUnavailable, build_training_record, export_records
from .config import ConfigError, RunConfig, iter_keys, load_config
from .evaluation import (
    JudgeFailure,
    LocalRuleJudge,
    RemoteJudge,
    RemoteJudgeConfig,
    evaluate,
    read_benchmark,
    write_benchmark,
)
from .findings import findings_from_text
from .imagefiles import read_image, write_image
from .rewards import RewardWeights, hybrid_reward, rubric_score
from .synthetic import (
    SURVEY_QUESTION,
    ToyConfig,
    make_benchmark,
    read_cases,
    run_toy_grpo,
    scripted_policy,
    write_cases,
)
from .trajectory import (
    EpisodeFinished,
    PolicyFailure,
    Trajectory,
    new_episode,
    read_trajectory_log,
    replay_policy,
    run_episode,
    serialize_trajectory_line,
    split_response,
    step,
    trajectory_stats,
)

__all__ = ["main"]

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_JUDGE = 4

ENV_PROTOCOL_VERSION = 1

_POLICY_KINDS = ("finalize_now", "zoom_only", "zoom_mirror", "replay")


class ProtocolError(ValueError):
    """A malformed request on the env-stdio wire."""


def _dumps(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _emit(payload: dict) -> None:
    sys.stdout.write(_dumps(payload) + "\n")
    sys.stdout.flush()


def _fail(exc: BaseException, code: int) -> int:
    sys.stderr.write(_dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}) + "\n")
    return code


def _make_policy(kind: str, script_path: str | None, config: RunConfig):
    if kind == "replay":
        if not script_path:
            raise ConfigError("policy 'replay' needs --script with a JSON list of responses")
        with open(script_path, "r", encoding="utf-8") as handle:
            script = json.load(handle)
        if not isinstance(script, list) or not all(isinstance(s, str) for s in script):
            raise ConfigError("replay script must be a JSON list of strings")
        return replay_policy(script)
    return scripted_policy(
        kind,
        detection_threshold=config.detection_threshold,
        mirror_threshold=config.mirror_threshold,
        max_mirrors=config.max_mirrors,
    )


def _make_judge(config: RunConfig):
    if config.judge_backend == "local":
        return LocalRuleJudge()
    if config.judge_backend == "remote":
        if not config.judge_endpoint:
            raise ConfigError("judge.backend=remote needs judge.endpoint")
        return RemoteJudge(
            RemoteJudgeConfig(
                endpoint=config.judge_endpoint,
                model=config.judge_model,
                api_key_env=config.judge_api_key_env,
                timeout=config.judge_timeout,
                max_retries=config.judge_max_retries,
                backoff=config.judge_backoff,
                max_in_flight=config.judge_max_in_flight,
            )
        )
    raise ConfigError(f"unknown judge backend {config.judge_backend!r}")


# --- commands ----------------------------------------------------------------


def _cmd_gen_synthetic(args: argparse.Namespace, config: RunConfig) -> int:
    params = {"items": 12, "seed": config.seed, "width": 1024, "height": 512, "noise_amplitude": 6}
    if args.spec != "-":
        with open(args.spec, "r", encoding="utf-8") as handle:
            loaded = json.load(handle)
        if not isinstance(loaded, dict):
            raise ConfigError("generation spec must be a JSON object")
        unknown = set(loaded) - set(params)
        if unknown:
            raise ConfigError(f"unknown generation spec keys: {sorted(unknown)}")
        params.update({k: int(v) for k, v in loaded.items()})
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    items, images, cases = make_benchmark(
        params["items"],
        params["seed"],
        width=params["width"],
        height=params["height"],
        noise_amplitude=params["noise_amplitude"],
    )
    for ref, image in images.items():
        write_image(image, out_dir / ref)
    bench_path = out_dir / "benchmark.jsonl"
    cases_path = out_dir / "cases.jsonl"
    write_benchmark(items, bench_path)
    write_cases(cases_path, cases)
    _emit(
        {
            "benchmark": str(bench_path),
            "cases": str(cases_path),
            "images": len(images),
            "items": len(items),
        }
    )
    return EXIT_OK


def _cmd_build_trajectories(args: argparse.Namespace, config: RunConfig) -> int:
    cases = read_cases(args.cases)
    images_dir = Path(args.images_dir) if args.images_dir else Path(args.cases).parent
    records = []
    for case in cases:
        if not case.image_ref:
            raise ConfigError(f"case {case.case_id!r} has no image_ref; generate images first")
        image = read_image(images_dir / case.image_ref)
        records.append(
            build_training_record(
                image,
                case,
                seed=config.seed,
                k=config.kmeans_k or None,
                pad_factor=config.pad_factor,
                n_init=config.kmeans_n_init,
                mirror_quality_threshold=config.mirror_quality_threshold,
            )
        )
    count = export_records(records, args.out)
    _emit({"out": str(args.out), "records": count})
    return EXIT_OK


def _cmd_run_episode(args: argparse.Namespace, config: RunConfig) -> int:
    image = read_image(args.image)
    policy = _make_policy(args.policy, args.script, config)
    max_steps = args.max_steps if args.max_steps is not None else config.max_steps
    trajectory = run_episode(
        policy,
        args.question,
        image,
        max_steps=max_steps,
        query_id=args.query_id,
        image_ref=Path(args.image).name,
        pad_factor=config.pad_factor,
        zoom_min_side=config.zoom_min_side,
    )
    with open(args.out, "w", encoding="utf-8") as handle:
        handle.write(serialize_trajectory_line(trajectory) + "\n")
    _emit(
        {
            "final_answer": trajectory.final_answer,
            "n_tool": trajectory.n_tool,
            "out": str(args.out),
            "rounds": trajectory.rounds,
            "truncated": trajectory.truncated,
        }
    )
    return EXIT_OK


def _cmd_score(args: argparse.Namespace, config: RunConfig) -> int:
    del config
    items = {item.item_id: item for item in read_benchmark(args.gt)}
    judge = LocalRuleJudge()
    scores: dict[str, float] = {}
    with open(args.pred, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            row = json.loads(line)
            if not isinstance(row, dict) or "id" not in row or "prediction" not in row:
                raise ConfigError(f"{args.pred}:{number}: prediction rows need id and prediction")
            item_id = str(row["id"])
            if item_id not in items:
                raise ConfigError(f"{args.pred}:{number}: unknown item id {item_id!r}")
            if item_id in scores:
                raise ConfigError(f"{args.pred}:{number}: duplicate prediction for {item_id!r}")
            scores[item_id] = judge.score(items[item_id], str(row["prediction"]))
    if not scores:
        raise ConfigError("prediction file is empty")
    _emit({"mean": sum(scores.values()) / len(scores), "scores": scores})
    return EXIT_OK


def _cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    items = read_benchmark(args.bench)
    images_dir = Path(args.images_dir) if args.images_dir else Path(args.bench).parent
    policy = _make_policy(args.policy, args.script, config)
    judge = _make_judge(config)
    runs = args.runs if args.runs is not None else config.runs
    report = evaluate(
        policy,
        items,
        judge,
        runs=runs,
        seed=config.seed,
        image_loader=lambda ref: read_image(images_dir / ref),
        max_steps=config.max_steps,
        pad_factor=config.pad_factor,
        zoom_min_side=config.zoom_min_side,
    )
    payload = report.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as handle:
            handle.write(report.summary_csv())
    if args.out:
        _emit(
            {
                "avg_at_k": report.avg_at_k,
                "out": str(args.out),
                "overall_mean": report.overall_mean,
                "pass_at_1": report.pass_at_1,
            }
        )
    else:
        _emit(payload)
    return EXIT_OK


def _cmd_simulate_rl(args: argparse.Namespace, config: RunConfig) -> int:
    toy = ToyConfig(
        iterations=args.iterations,
        group_size=config.group_size,
        with_diag_reward=not args.ablate_diag,
        seed=args.seed if args.seed is not None else config.seed,
        step_size=config.step_size,
    )
    log = run_toy_grpo(toy)
    log.to_csv(args.out)
    final = log.final
    _emit(
        {
            "ablated": args.ablate_diag,
            "final": {
                "frac_fully_correct": final.frac_fully_correct,
                "frac_mixed": final.frac_mixed,
                "iteration": final.iteration,
                "mean_n_tool": final.mean_n_tool,
                "mean_score": final.mean_score,
                "tool_rate": final.tool_rate,
            },
            "iterations": args.iterations,
            "out": str(args.out),
        }
    )
    return EXIT_OK


def _cmd_stats(args: argparse.Namespace, config: RunConfig) -> int:
    del config
    entries = read_trajectory_log(args.trajlog)
    summary = trajectory_stats(entries)
    _emit(
        {
            "count": summary.count,
            "mean_n_tool": summary.mean_n_tool,
            "rounds_percent": {
                str(rounds): round(100.0 * share, 1)
                for rounds, share in sorted(summary.rounds_histogram.items())
            },
            "single_round_percent": round(100.0 * summary.single_round_proportion, 1),
        }
    )
    return EXIT_OK


# --- env-stdio ----------------------------------------------------------------


class _EnvSession:
    """One live episode behind the line-JSON protocol."""

    def __init__(self, config: RunConfig) -> None:
        self._config = config
        self._image = None
        self._state = None
        self._query = ""
        self._query_id = "q0"
        self._image_ref = ""

    def handle(self, request: dict) -> dict:
        op = request.get("op")
        if op == "hello":
            return {"ok": True, "op": "hello", "protocol": ENV_PROTOCOL_VERSION}
        if op == "reset":
            return self._reset(request)
        if op == "step":
            return self._step(request)
        if op == "score":
            return self._score(request)
        if op == "trajectory_line":
            return self._trajectory_line()
        raise ProtocolError(f"unknown op {op!r}")

    def _reset(self, request: dict) -> dict:
        if "image" not in request or "question" not in request:
            raise ProtocolError("reset needs image and question")
        image = read_image(request["image"])
        question = str(request["question"]) or SURVEY_QUESTION
        max_steps = int(request.get("max_steps", self._config.max_steps))
        self._state = new_episode(question, max_steps)
        self._image = image
        self._query = question
        self._query_id = str(request.get("query_id", "q0"))
        self._image_ref = str(request.get("image_ref", Path(str(request["image"])).name))
        return {
            "height": image.height,
            "ok": True,
            "op": "reset",
            "width": image.width,
        }

    def _step(self, request: dict) -> dict:
        if self._state is None or self._image is None:
            raise ProtocolError("step before reset")
        if "response" not in request:
            raise ProtocolError("step needs a response field")
        thought, action = split_response(str(request["response"]))
        observation, self._state = step(
            self._state,
            action,
            self._image,
            thought=thought,
            pad_factor=self._config.pad_factor,
            zoom_min_side=self._config.zoom_min_side,
        )
        return {
            "done": self._state.finished,
            "info": {"n_tool": self._state.n_tool, "rounds": self._state.rounds},
            "observation": {"refs": list(observation.refs), "text": observation.text},
            "ok": True,
            "op": "step",
        }

    def _score(self, request: dict) -> dict:
        if "gt" not in request:
            raise ProtocolError("score needs a gt field")
        if "final_answer" in request:
            answer = str(request["final_answer"])
        elif self._state is not None and self._state.finished:
            answer = self._state.final_answer or ""
        else:
            raise ProtocolError("score needs final_answer or a finalized episode")
        rubric = rubric_score(findings_from_text(answer), findings_from_text(str(request["gt"])))
        breakdown = hybrid_reward(rubric, 0.0, 0.0, RewardWeights())
        return {
            "diagnostic": breakdown.diagnostic,
            "format": breakdown.format,
            "ok": True,
            "op": "score",
            "rubric": breakdown.rubric,
            "total": breakdown.total,
        }

    def _trajectory_line(self) -> dict:
        if self._state is None:
            raise ProtocolError("trajectory_line before reset")
        if not self._state.finished:
            raise ProtocolError("trajectory_line before the episode finalized")
        trajectory = Trajectory(
            query_id=self._query_id,
            turns=self._state.turns,
            final_answer=self._state.final_answer or "",
            truncated=False,
            query=self._query,
            image_ref=self._image_ref,
        )
        return {"line": serialize_trajectory_line(trajectory), "ok": True, "op": "trajectory_line"}


def _cmd_env_stdio(args: argparse.Namespace, config: RunConfig) -> int:
    del args
    session = _EnvSession(config)
    _emit({"event": "hello", "ok": True, "protocol": ENV_PROTOCOL_VERSION})
    for line in sys.stdin:
        if not line.strip():
            continue
        op = None
        try:
            request = json.loads(line)
            if not isinstance(request, dict):
                raise ProtocolError("request must be a JSON object")
            op = request.get("op")
            if op == "close":
                _emit({"ok": True, "op": "close"})
                break
            _emit(session.handle(request))
        except Exception as exc:  # every failure goes back over the wire
            payload = {"error": {"message": str(exc), "type": type(exc).__name__}, "ok": False}
            if op is not None:
                payload["op"] = op
            _emit(payload)
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def _config_epilog() -> str:
    lines = [
        "configuration keys (precedence: --set flag, then PANODIAG_* environment",
        "variable, then --config file, then the built-in default):",
    ]
    for dotted, env, default in iter_keys():
        lines.append(f"  {dotted:<34} {env:<42} default: {default!r}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panodiag",
        description="Panoramic-radiograph inspection toolkit: synthetic data, "
        "trajectory construction, scoring, and training dynamics.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", metavar="FILE", help="INI-style config file")
    parser.add_argument(
        "--set",
        metavar="SECTION.KEY=VALUE",
        action="append",
        default=[],
        help="override one config value (repeatable)",
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    gen = commands.add_parser(
        "gen-synthetic",
        help="generate a solvable synthetic benchmark into a directory",
        description="Generate PNG images plus benchmark.jsonl and cases.jsonl. "
        "SPEC is a JSON object file with any of: items, seed, width, height, "
        "noise_amplitude; pass '-' for all defaults.",
    )
    gen.add_argument("spec", help="JSON generation spec, or '-' for defaults")
    gen.add_argument("out_dir", help="output directory")
    gen.set_defaults(handler=_cmd_gen_synthetic)

    build = commands.add_parser(
        "build-trajectories",
        help="turn annotated cases into multi-round training records",
    )
    build.add_argument("cases", help="cases JSONL (from gen-synthetic)")
    build.add_argument("out", help="output records JSONL")
    build.add_argument("--images-dir", help="directory holding case images (default: cases dir)")
    build.set_defaults(handler=_cmd_build_trajectories)

    run = commands.add_parser(
        "run-episode",
        help="drive one policy over one image and log the trajectory",
    )
    run.add_argument("image", help="PNG or PGM radiograph")
    run.add_argument("question", help="the query posed to the policy")
    run.add_argument("policy", choices=_POLICY_KINDS, help="policy to drive")
    run.add_argument("out", help="output trajectory JSONL (one line)")
    run.add_argument("--script", help="JSON list of raw responses (replay policy)")
    run.add_argument("--query-id", default="q0", help="query id recorded in the log")
    run.add_argument("--max-steps", type=int, help="override the configured turn budget")
    run.set_defaults(handler=_cmd_run_episode)

    score = commands.add_parser(
        "score",
        help="score predictions against a benchmark with the local rule judge",
        description="PRED rows are {\"id\", \"prediction\"}; GT is benchmark JSONL. "
        "Prints per-item rubric scores on the 0..1 grid.",
    )
    score.add_argument("pred", help="predictions JSONL")
    score.add_argument("gt", help="benchmark JSONL with ground truth")
    score.set_defaults(handler=_cmd_score)

    ev = commands.add_parser(
        "evaluate",
        help="run a policy over a benchmark and aggregate judged scores",
    )
    ev.add_argument("bench", help="benchmark JSONL")
    ev.add_argument("policy", choices=_POLICY_KINDS, help="policy to evaluate")
    ev.add_argument("--runs", type=int, help="independent runs (Avg@k)")
    ev.add_argument("--images-dir", help="directory holding benchmark images")
    ev.add_argument("--script", help="JSON list of raw responses (replay policy)")
    ev.add_argument("--out", help="write the full JSON report here")
    ev.add_argument("--csv", help="write the CSV summary here")
    ev.set_defaults(handler=_cmd_evaluate)

    sim = commands.add_parser(
        "simulate-rl",
        help="run the miniature group-relative training loop, logging dynamics",
    )
    sim.add_argument("out", help="output dynamics CSV")
    sim.add_argument("--iterations", type=int, default=500, help="training iterations")
    sim.add_argument("--seed", type=int, help="override the configured seed")
    sim.add_argument(
        "--ablate-diag",
        action="store_true",
        help="drop the gated diagnostic bonus from the reward",
    )
    sim.set_defaults(handler=_cmd_simulate_rl)

    st = commands.add_parser(
        "stats",
        help="summarize a trajectory log (round histogram as percentages)",
    )
    st.add_argument("trajlog", help="trajectory JSONL")
    st.set_defaults(handler=_cmd_stats)

    env = commands.add_parser(
        "env-stdio",
        help="serve reset/step/score over line-JSON on stdin/stdout",
        description="Protocol: one JSON object per line. Ops: hello, reset"
        "{image,question,max_steps?,query_id?,image_ref?}, step{response}, "
        "score{gt,final_answer?}, trajectory_line, close. Every reply carries "
        "ok; failures carry error.type/error.message with native exception names.",
    )
    env.set_defaults(handler=_cmd_env_stdio)

    return parser


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    overrides = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {pair!r}")
        overrides[key.strip()] = value
    return overrides


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, overrides=_parse_overrides(args.set))
        return args.handler(args, config)
    except (JudgeFailure, JudgeUnavailable) as exc:
        return _fail(exc, EXIT_JUDGE)
    except OSError as exc:
        return _fail(exc, EXIT_IO)
    except (ValueError, PolicyFailure, EpisodeFinished) as exc:
        return _fail(exc, EXIT_VALIDATION)


if __name__ == "__main__":
    sys.exit(main())
