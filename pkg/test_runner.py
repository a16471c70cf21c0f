"""
Tests for the ReasonIQ command line
"""

import io
import json
from pathlib import Path

import numpy as np
import pytest

from run_reasoniq import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from src.agents.dashboard_generator import load_run
from src.agents.metrics_reporter import CHART_DIV_ID
from src.rl.policy import FeatureEncoder, init_params, load_checkpoint, save_checkpoint
from src.utils.rng import seeded_rng
from src.utils.vocab import Vocabulary

FIXTURES = Path(__file__).parent / "fixtures"

TRAIN_ARGS = ["--set", "prompts_per_iter=4", "--set", "responses_per_prompt=2",
              "--set", "snapshot_every=1", "--set", "max_positions=16",
              "--set", "prompt_buckets=32", "--set", "cross_buckets=64",
              "--set", "feature_replicas=2", "--quiet"]


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# grade

def test_grade_single_response(capsys):
    code, out, _ = run_cli(capsys, "grade", "--response", "so \\boxed{ 42. }", "--ref", "42")
    assert code == EXIT_OK
    assert json.loads(out) == {"extracted": " 42. ", "normalized": "42", "matched": True, "reward": 1.0}


def test_grade_lines_from_stdin(capsys, monkeypatch):
    monkeypatch.setattr("sys.stdin", io.StringIO("\\boxed{7}\nno box\n\\boxed{07}\n"))
    code, out, _ = run_cli(capsys, "grade", "--reference", "7")
    assert code == EXIT_OK
    assert [json.loads(line)["reward"] for line in out.splitlines()] == [1.0, 0.0, 1.0]


def test_grade_pairs_file(capsys):
    code, out, _ = run_cli(capsys, "grade", "--pairs", str(FIXTURES / "verifier_cases.jsonl"))
    assert code == EXIT_OK
    cases = [json.loads(line) for line in (FIXTURES / "verifier_cases.jsonl").read_text().splitlines()]
    verdicts = [json.loads(line) for line in out.splitlines()]
    assert [v["reward"] for v in verdicts] == [c["reward"] for c in cases]


def test_grade_empty_reference_is_a_usage_error(capsys):
    code, _, err = run_cli(capsys, "grade", "--response", "\\boxed{1}", "--ref", "  ")
    assert code == EXIT_USAGE
    assert "Configuration error" in err


def test_unknown_command_exits_with_usage_code():
    with pytest.raises(SystemExit) as exc:
        main(["transmogrify"])
    assert exc.value.code == EXIT_USAGE


# train, average, plot, correlate, report

def test_train_prints_summary_and_writes_run(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "train", "--iterations", "3", "--seed", "5",
                           "--output-dir", str(tmp_path), *TRAIN_ARGS)
    assert code == EXIT_OK
    summary = json.loads(out)
    assert summary["iterations"] == 3
    assert summary["policy_steps"] == 3
    assert summary["averaged_from"] == [1, 2, 3]
    assert len((tmp_path / "metrics.jsonl").read_text().splitlines()) == 3


def test_train_rejects_unknown_override(tmp_path, capsys):
    code, _, err = run_cli(capsys, "train", "--output-dir", str(tmp_path), "--set", "learning_rate=1")
    assert code == EXIT_USAGE
    assert "learning_rate" in err


def test_train_rejects_unknown_family(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "train", "--iterations", "1", "--output-dir", str(tmp_path),
                         "--set", "task_families=[GEOMETRY]", *TRAIN_ARGS)
    assert code == EXIT_USAGE


def test_train_with_report(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "train", "--iterations", "3", "--output-dir", str(tmp_path),
                         "--report", *TRAIN_ARGS)
    assert code == EXIT_OK
    assert (tmp_path / "dynamics.html").exists()
    assert (tmp_path / "run_summary.md").exists()


def test_average_command(tmp_path, capsys):
    vocab = Vocabulary.default()
    encoder = FeatureEncoder(len(vocab), max_positions=4, prompt_buckets=4, cross_buckets=8)
    paths = []
    for seed in range(3):
        params = init_params(vocab, encoder.dim, seeded_rng(seed, "init"), encoder)
        paths.append(save_checkpoint(params, str(tmp_path / f"c{seed}.json")))

    out_path = tmp_path / "avg.json"
    code, _, _ = run_cli(capsys, "average", "--inputs", *paths, "--output", str(out_path))
    assert code == EXIT_OK
    loaded = [load_checkpoint(p) for p in paths]
    averaged = load_checkpoint(str(out_path))
    expected = (loaded[0].critic_weights + loaded[1].critic_weights + loaded[2].critic_weights) / 3
    np.testing.assert_allclose(averaged.critic_weights, expected, rtol=1e-12)


def test_average_missing_input_is_a_runtime_error(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "average", "--inputs", str(tmp_path / "nope.json"),
                         "--output", str(tmp_path / "avg.json"))
    assert code == EXIT_RUNTIME


def test_correlate_command(capsys):
    code, out, _ = run_cli(capsys, "correlate", str(FIXTURES / "correlate_metrics.csv"))
    assert code == EXIT_OK
    assert json.loads(out)["r"] == pytest.approx(0.917918788510915, abs=1e-12)


def test_correlate_missing_file(capsys, tmp_path):
    code, _, _ = run_cli(capsys, "correlate", str(tmp_path / "missing.csv"))
    assert code == EXIT_RUNTIME


def test_plot_command(tmp_path, capsys):
    out_path = tmp_path / "chart.html"
    code, _, _ = run_cli(capsys, "plot", str(FIXTURES / "correlate_metrics.csv"), "--out", str(out_path))
    assert code == EXIT_OK
    assert CHART_DIV_ID in out_path.read_text(encoding="utf-8")


# curate and analyze

def test_curate_command(tmp_path, capsys):
    out_path = tmp_path / "curated.jsonl"
    code, out, _ = run_cli(capsys, "curate", "--corpus", str(FIXTURES / "curation_corpus.jsonl"),
                           "--output", str(out_path), "--loss-quantile", "0.9", "--default-rules",
                           "--difficulty", "0", "1", "--target", "algebra=0.5", "--target", "geometry=0.5",
                           "--quiet")
    assert code == EXIT_OK
    paths = json.loads(out)
    assert len(out_path.read_text().splitlines()) == 46
    report = json.loads(Path(paths["report"]).read_text())
    assert [s["kept"] for s in report["stages"]] == [90, 77, 46]


def test_curate_bad_regex_is_reported(tmp_path, capsys):
    code, _, err = run_cli(capsys, "curate", "--corpus", str(FIXTURES / "curation_corpus.jsonl"),
                           "--output", str(tmp_path / "o.jsonl"), "--rule", "re:(", "--quiet")
    assert code == EXIT_RUNTIME
    assert "rule #0" in err


def test_curate_annotation_needs_a_checkpoint(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "curate", "--corpus", str(FIXTURES / "curation_corpus.jsonl"),
                         "--output", str(tmp_path / "o.jsonl"), "--annotate-loss", "--quiet")
    assert code == EXIT_USAGE


def test_analyze_command(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "analyze", "--traces", str(FIXTURES / "behavior_traces.jsonl"),
                         "--labels", str(FIXTURES / "judge_labels.jsonl"),
                         "--output-dir", str(tmp_path), "--quiet")
    assert code == EXIT_OK
    saved = json.loads((tmp_path / "behavior_report.json").read_text())
    assert saved["trace_counts"]["VISUAL_VERIFICATION"] == 1
    assert saved["btr"]["VISUAL_REFLECTION"] == pytest.approx(0.8)


def test_analyze_into_a_run_directory_feeds_the_dashboard(tmp_path, capsys):
    run_dir = tmp_path / "run"
    code, _, _ = run_cli(capsys, "train", "--iterations", "1", "--output-dir", str(run_dir), *TRAIN_ARGS)
    assert code == EXIT_OK
    assert load_run(str(run_dir))["behavior"] is None

    code, _, _ = run_cli(capsys, "analyze", "--traces", str(FIXTURES / "behavior_traces.jsonl"),
                         "--output-dir", str(run_dir), "--quiet")
    assert code == EXIT_OK
    run = load_run(str(run_dir))
    assert run["behavior"]["trace_counts"]["VISUAL_VERIFICATION"] == 1
    assert run["config"]["iterations"] == 1


def test_analyze_prints_json_without_output_dir(capsys):
    code, out, _ = run_cli(capsys, "analyze", "--traces", str(FIXTURES / "behavior_traces.jsonl"), "--quiet")
    assert code == EXIT_OK
    assert json.loads(out)["total_traces"] == 20
