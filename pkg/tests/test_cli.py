import csv
import json
import os

import pytest

from crossview_grpo import cli
from crossview_grpo.dataio import load_predictions


def run(*argv):
    return cli.main([str(a) for a in argv])


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


def annotation_rows(durations=(100.0, 200.0)):
    rows = []
    for i, d in enumerate(durations):
        for view in ("ego", "exo"):
            rows.append({
                "schema_version": 1, "pair_id": f"p{i}", "subset": "CharadesEgo", "view": view,
                "video_id": f"v{i}{view}", "duration_s": d,
                "queries": [
                    {"query_id": "q0", "text": "event", "type": "refined", "span": [0, 0.6 * d],
                     "expected_answer": True},
                    {"query_id": "q1", "text": "other", "type": "misaligned", "span": [0, 0.1 * d],
                     "expected_answer": False},
                ],
            })
    return rows


# --- eval --------------------------------------------------------------------


def test_eval_golden_byte_identical(tmp_path, fixture_path):
    out = tmp_path / "report.json"
    code = run("eval", "--annotations", fixture_path("golden_annotations.jsonl"),
               "--predictions", fixture_path("golden_predictions.jsonl"), "--out", out)
    assert code == 0
    with open(fixture_path("golden_report.json"), encoding="utf-8") as f:
        assert out.read_text(encoding="utf-8") == f.read()
    with open(fixture_path("golden_report.txt"), encoding="utf-8") as f:
        assert (tmp_path / "report.txt").read_text(encoding="utf-8") == f.read()


def test_eval_missing_predictions_file(tmp_path, fixture_path, capsys):
    out = tmp_path / "report.json"
    code = run("eval", "--annotations", fixture_path("golden_annotations.jsonl"),
               "--predictions", tmp_path / "nope.jsonl", "--out", out)
    assert code == cli.EXIT_INGEST
    assert not out.exists() and os.listdir(tmp_path) == []
    assert "nope.jsonl" in capsys.readouterr().err


def test_eval_task_with_no_predictions(tmp_path, fixture_path, capsys):
    preds = write_jsonl(tmp_path / "p.jsonl", [
        {"pair_id": "p00", "query_id": "q0", "view": "ego", "task": "grounding", "response": "1 - 2 seconds"}])
    code = run("eval", "--annotations", fixture_path("golden_annotations.jsonl"), "--predictions", preds,
               "--task", "verification", "--out", tmp_path / "r.json")
    assert code == cli.EXIT_INGEST
    assert "no predictions" in capsys.readouterr().err


def test_eval_schema_error_exit_code(tmp_path):
    ann = tmp_path / "a.jsonl"
    ann.write_text("{broken\n")
    preds = write_jsonl(tmp_path / "p.jsonl", [])
    assert run("eval", "--annotations", ann, "--predictions", preds, "--out", tmp_path / "r.json") == cli.EXIT_INGEST


# --- baseline ----------------------------------------------------------------


def test_baseline_then_eval(tmp_path):
    ann = write_jsonl(tmp_path / "a.jsonl", annotation_rows())
    g = tmp_path / "g.jsonl"
    v = tmp_path / "v.jsonl"
    assert run("baseline", "--annotations", ann, "--mode", "random-grounding", "--out", g) == 0
    assert run("baseline", "--annotations", ann, "--mode", "random-verification", "--out", v) == 0
    gp, vp = load_predictions(g), load_predictions(v)
    assert len(vp) == 4 * 2 and len(gp) == 2 * 2
    assert {p.raw_response for p in gp} == {"0 - 100 seconds", "0 - 200 seconds"}
    both = tmp_path / "both.jsonl"
    both.write_text(g.read_text() + v.read_text())
    assert run("eval", "--annotations", ann, "--predictions", both, "--out", tmp_path / "r.json") == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["overall"]["verification"]["ego"] == 50.0
    assert rep["overall"]["grounding"]["egoexo"] == 100.0


def test_baseline_bad_mode_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as ei:
        run("baseline", "--annotations", "a", "--mode", "clever", "--out", "o")
    assert ei.value.code == cli.EXIT_USAGE


# --- stats -------------------------------------------------------------------


def test_stats(tmp_path, capsys):
    rows = annotation_rows() + [dict(r, pair_id="e0", subset="EgoExo4D") for r in annotation_rows((50.0,))]
    ann = write_jsonl(tmp_path / "a.jsonl", rows)
    assert run("stats", "--annotations", ann) == 0
    out = capsys.readouterr().out
    lines = {l.split()[0]: l.split() for l in out.splitlines() if l.strip()}
    assert lines["CharadesEgo"][1:4] == ["2", "4", "150.00"]
    assert lines["EgoExo4D"][1:3] == ["1", "2"]
    assert lines["total"][1:3] == ["3", "6"]
    assert "omitted (no pairs): LEMMA, Synthetic" in out


# --- reward ------------------------------------------------------------------


def reward_inputs(tmp_path):
    responses = write_jsonl(tmp_path / "resp.jsonl", [
        {"id": "a", "response": "<think>hands reach fridge</think><answer>0 - 5 seconds</answer>"},
        {"id": "a", "candidate": "alt", "response": "2 - 9 seconds"},
        {"id": "b", "response": "<think>x</think><answer>Yes</answer>"},
    ])
    references = write_jsonl(tmp_path / "ref.jsonl", [
        {"id": "a", "task": "grounding", "gt_span": [0, 10], "reference_reasoning": "hands reach the fridge"},
        {"id": "b", "task": "verification", "gt_answer": True},
    ])
    return responses, references


def test_reward_lexical_offline(tmp_path):
    responses, references = reward_inputs(tmp_path)
    out = tmp_path / "r.csv"
    assert run("reward", "--responses", responses, "--references", references, "--out", out) == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["id"] for r in rows] == ["a", "a", "b"]
    assert rows[1]["candidate"] == "alt"
    for r in rows:
        assert float(r["total"]) == float(r["r_form"]) + float(r["r_acc"]) + float(r["r_sim"])
        assert r["judge"] == "lexical"
    assert rows[0]["r_acc"] == "0.5" and rows[0]["r_sim"] == repr(2 * 3 / 7)
    assert rows[2]["judge_skipped"] == "true"
    again = tmp_path / "r2.csv"
    run("reward", "--responses", responses, "--references", references, "--out", again)
    assert again.read_bytes() == out.read_bytes()


def test_reward_remote_without_endpoint(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("JUDGE_ENDPOINT", raising=False)
    responses, references = reward_inputs(tmp_path)
    code = run("reward", "--responses", tmp_path / "missing.jsonl", "--references", references,
               "--judge", "remote", "--judge-model", "m", "--out", tmp_path / "r.csv")
    assert code == cli.EXIT_USAGE
    assert "endpoint" in capsys.readouterr().err
    assert not (tmp_path / "r.csv").exists()


def test_reward_remote_unreachable(tmp_path, capsys):
    responses, references = reward_inputs(tmp_path)
    endpoint = "http://127.0.0.1:9/v1/chat/completions"
    code = run("reward", "--responses", responses, "--references", references, "--judge", "remote",
               "--judge-endpoint", endpoint, "--judge-model", "m", "--judge-retries", "0",
               "--judge-timeout", "2", "--out", tmp_path / "r.csv")
    assert code == cli.EXIT_JUDGE
    assert endpoint in capsys.readouterr().err
    assert not (tmp_path / "r.csv").exists()


def test_reward_unknown_reference_id(tmp_path):
    responses, references = reward_inputs(tmp_path)
    write_jsonl(responses, [{"id": "zzz", "response": "yes"}])
    assert run("reward", "--responses", responses, "--references", references, "--out", tmp_path / "o") == cli.EXIT_INGEST


# --- train-demo --------------------------------------------------------------

SMALL = ("--episodes", 60, "--eval-episodes", 20, "--iterations", 4, "--prompts-per-step", 4, "--sft-epochs", 2)


def test_train_demo_outputs_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("train-demo", "--out-dir", a, "--seeds", "1,2,3", *SMALL) == 0
    assert run("train-demo", "--out-dir", b, "--seeds", "1,2,3", *SMALL) == 0
    rows = list(csv.DictReader((a / "comparison.csv").open()))
    assert [r["method"] for r in rows].count("GRPO") == 3
    assert {r["seed"] for r in rows} == {"1", "2", "3"}
    for name in ("comparison.csv", "gradcheck.json", "curves/GRPO_seed2.csv", "curves/ViewGRPO_seed3.csv",
                 "curves/SFT_loss_seed1.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    gc = json.loads((a / "gradcheck.json").read_text())
    assert gc["max_rel_error"] < gc["tolerance"] == 1e-5


def test_train_demo_single_method(tmp_path):
    assert run("train-demo", "--out-dir", tmp_path, "--methods", "sft", *SMALL) == 0
    rows = list(csv.DictReader((tmp_path / "comparison.csv").open()))
    assert [r["method"] for r in rows] == ["SFT"]
    assert [r["seed"] for r in rows] == ["0"]


def test_train_demo_gradient_failure_aborts(tmp_path, monkeypatch, capsys):
    import numpy as np

    from crossview_grpo.grpo import GradientCheckResult

    monkeypatch.setattr(cli, "gradient_check",
                        lambda *a, **k: GradientCheckResult(0.3, (1, 4), np.zeros(1), np.zeros(1)))
    out = tmp_path / "demo"
    assert run("train-demo", "--out-dir", out, *SMALL) == cli.EXIT_NUMERIC
    assert "(1, 4)" in capsys.readouterr().err
    assert not out.exists()


def test_train_demo_bad_method_is_usage_error():
    with pytest.raises(SystemExit) as ei:
        run("train-demo", "--out-dir", "x", "--methods", "ppo")
    assert ei.value.code == cli.EXIT_USAGE


@pytest.mark.parametrize("command", ["eval", "baseline", "reward", "train-demo", "stats"])
def test_help_documents_defaults(command, capsys):
    with pytest.raises(SystemExit) as ei:
        run(command, "--help")
    assert ei.value.code == 0
    out = capsys.readouterr().out
    assert "--seed" in out and "(default: 0)" in out
