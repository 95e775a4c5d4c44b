"""Command-line surface: exit codes, JSON output, error mapping, and the
line-JSON environment protocol."""

from __future__ import annotations

import json
import subprocess
import sys

import pytest

from panodiag.builder import import_records
from panodiag.cli import EXIT_IO, EXIT_JUDGE, EXIT_OK, EXIT_VALIDATION, build_parser, main
from panodiag.config import iter_keys
from panodiag.evaluation import read_benchmark
from panodiag.imagefiles import write_image
from panodiag.synthetic import SyntheticSpec, generate_case
from panodiag.trajectory import parse_trajectory_line

SPEC = {"items": 3, "seed": 7, "width": 256, "height": 128}


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    """One small generated benchmark shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("synth")
    spec_path = root / "spec.json"
    spec_path.write_text(json.dumps(SPEC), encoding="utf-8")
    out_dir = root / "data"
    assert main(["gen-synthetic", str(spec_path), str(out_dir)]) == EXIT_OK
    return out_dir


@pytest.fixture
def clean_png(tmp_path):
    image, _ = generate_case(SyntheticSpec(seed=3, width=256, height=128))
    path = tmp_path / "clean.png"
    write_image(image, path)
    return path


def _run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    out = json.loads(captured.out.splitlines()[-1]) if captured.out.strip() else None
    err = json.loads(captured.err.splitlines()[-1]) if captured.err.strip() else None
    return code, out, err


# --- parser basics -------------------------------------------------------------


def test_help_lists_every_config_key(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for dotted, env, _ in iter_keys():
        assert dotted in text
        assert env in text


def test_missing_command_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_unknown_command_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_parser_covers_all_commands():
    text = build_parser().format_help()
    for command in (
        "gen-synthetic",
        "build-trajectories",
        "run-episode",
        "score",
        "evaluate",
        "simulate-rl",
        "stats",
        "env-stdio",
    ):
        assert command in text


# --- generation and trajectory building ----------------------------------------


def test_gen_synthetic_outputs(synth_dir, capsys):
    assert (synth_dir / "benchmark.jsonl").exists()
    assert (synth_dir / "cases.jsonl").exists()
    for index in range(SPEC["items"]):
        assert (synth_dir / f"case_{index:03d}.png").exists()
    items = read_benchmark(synth_dir / "benchmark.jsonl")
    assert [i.item_id for i in items] == ["case_000", "case_001", "case_002"]


def test_gen_synthetic_rejects_unknown_spec_keys(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text('{"items": 2, "flavor": "mint"}', encoding="utf-8")
    code, _, err = _run(["gen-synthetic", str(spec), str(tmp_path / "out")], capsys)
    assert code == EXIT_VALIDATION
    assert err["error"]["type"] == "ConfigError"
    assert "flavor" in err["error"]["message"]


def test_build_trajectories(synth_dir, tmp_path, capsys):
    out = tmp_path / "records.jsonl"
    code, payload, _ = _run(
        ["build-trajectories", str(synth_dir / "cases.jsonl"), str(out)], capsys
    )
    assert code == EXIT_OK
    assert payload == {"out": str(out), "records": 3}
    records = import_records(out)  # import re-validates every record
    assert len(records) == 3
    assert all(r.rounds >= 1 for r in records)


# --- episodes and scoring -------------------------------------------------------


def test_run_episode_and_stats(synth_dir, tmp_path, capsys):
    out = tmp_path / "traj.jsonl"
    code, payload, _ = _run(
        [
            "run-episode",
            str(synth_dir / "case_000.png"),
            "Examine the radiograph and report all abnormalities.",
            "zoom_mirror",
            str(out),
        ],
        capsys,
    )
    assert code == EXIT_OK
    assert payload["rounds"] >= 2
    assert payload["n_tool"] >= 1
    assert payload["truncated"] is False
    entry = parse_trajectory_line(out.read_text(encoding="utf-8").strip())
    assert entry.final_answer == payload["final_answer"]

    code, stats, _ = _run(["stats", str(out)], capsys)
    assert code == EXIT_OK
    assert stats["count"] == 1
    assert stats["rounds_percent"] == {str(payload["rounds"]): 100.0}


def test_run_episode_max_steps_flag_truncates(clean_png, tmp_path, capsys):
    out = tmp_path / "traj.jsonl"
    code, payload, _ = _run(
        [
            "run-episode",
            str(clean_png),
            "Anything unusual?",
            "zoom_only",
            str(out),
            "--max-steps",
            "1",
        ],
        capsys,
    )
    assert code == EXIT_OK
    assert payload["truncated"] is True
    assert payload["rounds"] == 1  # the forced answer round adds no turn
    assert payload["final_answer"] == "no abnormalities detected."


def test_run_episode_replay_needs_script(clean_png, tmp_path, capsys):
    code, _, err = _run(
        ["run-episode", str(clean_png), "q", "replay", str(tmp_path / "t.jsonl")], capsys
    )
    assert code == EXIT_VALIDATION
    assert err["error"]["type"] == "ConfigError"


def test_run_episode_missing_image_is_io_error(tmp_path, capsys):
    code, _, err = _run(
        ["run-episode", str(tmp_path / "ghost.png"), "q", "zoom_only", str(tmp_path / "t.jsonl")],
        capsys,
    )
    assert code == EXIT_IO
    assert err["error"]["type"] == "FileNotFoundError"


def test_score_perfect_predictions(synth_dir, tmp_path, capsys):
    items = read_benchmark(synth_dir / "benchmark.jsonl")
    pred = tmp_path / "pred.jsonl"
    with open(pred, "w", encoding="utf-8") as handle:
        for item in items:
            handle.write(json.dumps({"id": item.item_id, "prediction": item.gt_answer}) + "\n")
    code, payload, _ = _run(["score", str(pred), str(synth_dir / "benchmark.jsonl")], capsys)
    assert code == EXIT_OK
    assert payload["mean"] == 1.0
    assert set(payload["scores"]) == {i.item_id for i in items}


def test_score_rejects_unknown_item(synth_dir, tmp_path, capsys):
    pred = tmp_path / "pred.jsonl"
    pred.write_text('{"id": "who", "prediction": "x"}\n', encoding="utf-8")
    code, _, err = _run(["score", str(pred), str(synth_dir / "benchmark.jsonl")], capsys)
    assert code == EXIT_VALIDATION
    assert "unknown item id" in err["error"]["message"]


# --- evaluation ------------------------------------------------------------------


def test_evaluate_writes_report_and_csv(synth_dir, tmp_path, capsys):
    report_path = tmp_path / "report.json"
    csv_path = tmp_path / "summary.csv"
    code, payload, _ = _run(
        [
            "evaluate",
            str(synth_dir / "benchmark.jsonl"),
            "zoom_mirror",
            "--runs",
            "2",
            "--out",
            str(report_path),
            "--csv",
            str(csv_path),
        ],
        capsys,
    )
    assert code == EXIT_OK
    assert payload["overall_mean"] == 100.0
    assert payload["avg_at_k"] == 100.0
    report = json.loads(report_path.read_text(encoding="utf-8"))
    assert report["runs"] == 2
    assert report["stability"]["stddev"] == 0.0
    lines = csv_path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "metric,value"
    assert "overall_mean,100.0" in lines


def test_evaluate_missing_benchmark_is_io_error(tmp_path, capsys):
    code, _, err = _run(["evaluate", str(tmp_path / "nope.jsonl"), "zoom_only"], capsys)
    assert code == EXIT_IO
    assert err["error"]["type"] == "FileNotFoundError"


def test_evaluate_remote_without_endpoint_rejected(synth_dir, capsys):
    code, _, err = _run(
        [
            "--set",
            "judge.backend=remote",
            "evaluate",
            str(synth_dir / "benchmark.jsonl"),
            "zoom_only",
        ],
        capsys,
    )
    assert code == EXIT_VALIDATION
    assert "judge.endpoint" in err["error"]["message"]


def test_evaluate_unreachable_judge_exits_4(synth_dir, capsys, monkeypatch):
    monkeypatch.delenv("PANODIAG_JUDGE_KEY", raising=False)
    with pytest.warns(UserWarning):
        code, _, err = _run(
            [
                "--set",
                "judge.backend=remote",
                "--set",
                "judge.endpoint=https://judge.invalid/v1",
                "--set",
                "judge.max_retries=1",
                "evaluate",
                str(synth_dir / "benchmark.jsonl"),
                "zoom_only",
            ],
            capsys,
        )
    assert code == EXIT_JUDGE
    assert err["error"]["type"] == "JudgeFailure"


# --- config plumbing --------------------------------------------------------------


def test_set_flag_requires_key_value(capsys):
    code, _, err = _run(["--set", "imaging", "stats", "whatever.jsonl"], capsys)
    assert code == EXIT_VALIDATION
    assert err["error"]["type"] == "ConfigError"


def test_unknown_set_key_rejected(capsys):
    code, _, err = _run(["--set", "imaging.bogus=1", "stats", "whatever.jsonl"], capsys)
    assert code == EXIT_VALIDATION
    assert err["error"]["type"] == "ConfigError"


def test_config_file_flows_into_commands(clean_png, tmp_path, capsys):
    ini = tmp_path / "run.ini"
    ini.write_text("[episode]\nmax_steps = 1\n", encoding="utf-8")
    out = tmp_path / "traj.jsonl"
    code, payload, _ = _run(
        [
            "--config",
            str(ini),
            "run-episode",
            str(clean_png),
            "Anything unusual?",
            "zoom_only",
            str(out),
        ],
        capsys,
    )
    assert code == EXIT_OK
    assert payload["truncated"] is True


# --- the toy training loop --------------------------------------------------------


def test_simulate_rl_writes_dynamics(tmp_path, capsys):
    out = tmp_path / "dynamics.csv"
    code, payload, _ = _run(["simulate-rl", str(out), "--iterations", "20"], capsys)
    assert code == EXIT_OK
    assert payload["iterations"] == 20
    assert payload["ablated"] is False
    assert payload["final"]["iteration"] == 19
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "iteration,mean_score,mean_n_tool,tool_rate,frac_fully_correct,frac_mixed"
    assert len(lines) == 21

    code, ablated, _ = _run(
        ["simulate-rl", str(tmp_path / "ablated.csv"), "--iterations", "20", "--ablate-diag"],
        capsys,
    )
    assert code == EXIT_OK
    assert ablated["ablated"] is True


# --- env-stdio ---------------------------------------------------------------------


def _env_session(requests, timeout=120):
    proc = subprocess.run(
        [sys.executable, "-m", "panodiag.cli", "env-stdio"],
        input="".join(json.dumps(r) + "\n" for r in requests),
        capture_output=True,
        text=True,
        timeout=timeout,
    )
    replies = [json.loads(line) for line in proc.stdout.splitlines() if line.strip()]
    return proc.returncode, replies


def test_env_stdio_full_session(synth_dir, tmp_path, capsys):
    image = synth_dir / "case_000.png"
    question = "Survey the radiograph."
    script = [
        "<think>survey the arch</think>\nTOOL zoom_in 8 8 120 60",
        "<think>call it</think>\nFINAL no abnormalities detected",
    ]

    # Native reference line through the ordinary episode runner.
    native_out = tmp_path / "native.jsonl"
    script_path = tmp_path / "script.json"
    script_path.write_text(json.dumps(script), encoding="utf-8")
    assert (
        main(
            [
                "run-episode",
                str(image),
                question,
                "replay",
                str(native_out),
                "--script",
                str(script_path),
            ]
        )
        == EXIT_OK
    )
    capsys.readouterr()
    native_line = native_out.read_text(encoding="utf-8").strip()

    code, replies = _env_session(
        [
            {"op": "step", "response": "FINAL too early"},
            {"op": "hello"},
            {"op": "reset", "image": str(image), "question": question},
            {"op": "step", "response": script[0]},
            {"op": "step", "response": script[1]},
            {"op": "score", "gt": "no abnormalities detected"},
            {"op": "trajectory_line"},
            {"op": "step", "response": "FINAL again"},
            {"op": "warp"},
            {"op": "close"},
        ]
    )
    assert code == 0

    banner = replies[0]
    assert banner == {"event": "hello", "ok": True, "protocol": 1}

    early, hello, reset, step1, step2, score, line, after, unknown, close = replies[1:]
    assert early["ok"] is False and early["error"]["type"] == "ProtocolError"
    assert hello == {"ok": True, "op": "hello", "protocol": 1}
    assert reset["ok"] is True and reset["width"] == 256 and reset["height"] == 128

    assert step1["ok"] is True and step1["done"] is False
    assert step1["info"] == {"n_tool": 1, "rounds": 1}
    # requested 8 8 120 60, padded 1.5x about its center and clamped
    assert step1["observation"]["refs"] == ["zoom 0 0 148 73 148x73"]

    assert step2["done"] is True
    assert step2["info"] == {"n_tool": 1, "rounds": 2}

    assert score["ok"] is True
    assert score["rubric"] == 1.0 and score["total"] == 1.0

    assert line["ok"] is True
    assert line["line"] == native_line  # byte parity with the native runner

    assert after["ok"] is False and after["error"]["type"] == "EpisodeFinished"
    assert unknown["ok"] is False and unknown["error"]["type"] == "ProtocolError"
    assert close == {"ok": True, "op": "close"}


def test_env_stdio_survives_garbage_lines():
    proc = subprocess.run(
        [sys.executable, "-m", "panodiag.cli", "env-stdio"],
        input='not json at all\n{"op": "hello"}\n{"op": "close"}\n',
        capture_output=True,
        text=True,
        timeout=120,
    )
    assert proc.returncode == 0
    replies = [json.loads(line) for line in proc.stdout.splitlines() if line.strip()]
    assert replies[1]["ok"] is False
    assert replies[1]["error"]["type"] == "JSONDecodeError"
    assert replies[2] == {"ok": True, "op": "hello", "protocol": 1}


def test_env_stdio_score_with_explicit_answer(synth_dir):
    code, replies = _env_session(
        [
            {"op": "score", "gt": "carious lesion on tooth 36.", "final_answer": "caries 36."},
            {"op": "close"},
        ]
    )
    assert code == 0
    score = replies[1]
    assert score["ok"] is True and score["rubric"] == 1.0
