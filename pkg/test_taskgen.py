"""
Tests for the synthetic task families, rollout and pass-rate measurement
"""

import json
import re

import numpy as np
import pytest

from src.rl.policy import FeatureEncoder, PolicyParams, init_params, snapshot
from src.rl.taskgen import (
    ROLLOUT_CHUNK,
    OraclePolicy,
    TaskFamily,
    export_tasks,
    generate_task,
    generate_tasks,
    grade_trajectory,
    import_tasks,
    parse_family,
    pass_rate,
    prompt_key_of,
    rollout,
)
from src.utils.errors import ConfigError, ContractViolation, CorpusError
from src.utils.rng import seeded_rng
from src.utils.vocab import Vocabulary


def _operands(prompt):
    return [int(x) for x in re.findall(r"\d+", prompt)]


@pytest.mark.parametrize("family,check", [
    ("ADD", lambda a, b: a + b),
    ("SUB", lambda a, b: a - b),
    ("MUL", lambda a, b: a * b),
    ("COMPARE", max),
])
def test_binary_family_references(family, check):
    rng = seeded_rng(0, f"test/{family}")
    for _ in range(20):
        task = generate_task(family, 2, rng)
        a, b = _operands(task.prompt_text)
        assert task.reference_answer == str(check(a, b))
        assert 0 <= a < 100 and 0 <= b < 100


def test_copy_family():
    task = generate_task(TaskFamily.COPY, 3, seeded_rng(1, "copy"))
    assert task.prompt_text.startswith("echo ")
    assert task.reference_answer == task.prompt_text.split()[1]
    assert task.category == "perception"


def test_task_identity():
    task = generate_task("add", 1, seeded_rng(2, "id"))
    assert re.fullmatch(r"add-d1-[0-9a-f]{8}", task.task_id)
    assert task.family == "ADD" and task.category == "arithmetic"
    assert task.prompt_key == prompt_key_of(task.prompt_text)
    assert 0 <= task.prompt_key < 2**63
    assert task.prompt_tokens[-1] == Vocabulary.default().query_id


def test_generation_is_reproducible():
    a = generate_tasks(["ADD", "SUB", "COPY"], 1, 10, seeded_rng(5, "tasks/0"))
    b = generate_tasks(["ADD", "SUB", "COPY"], 1, 10, seeded_rng(5, "tasks/0"))
    assert a == b
    assert {t.family for t in a} <= {"ADD", "SUB", "COPY"}


def test_unknown_family_and_bad_difficulty():
    with pytest.raises(ConfigError, match="unsupported task family"):
        parse_family("GEOMETRY")
    with pytest.raises(ContractViolation):
        generate_task("ADD", 0, seeded_rng(0, "x"))
    with pytest.raises(ConfigError):
        generate_tasks([], 1, 3, seeded_rng(0, "x"))


# Rollout

def test_oracle_rollout_is_rewarded_on_the_last_step_only():
    tasks = generate_tasks(["ADD", "MUL", "COMPARE"], 2, 6, seeded_rng(0, "t"))
    batch = rollout(OraclePolicy(), tasks, n_responses=2, max_len=16, rng=seeded_rng(0, "r"))

    assert len(batch) == 12
    assert batch.mean_reward() == 1.0
    assert batch.task_ids == [t.task_id for t in tasks]
    for traj in batch.trajectories:
        assert traj.rewards[-1] == 1.0
        assert np.all(traj.rewards[:-1] == 0.0)
        assert traj.terminated_by_eos


def test_truncated_response_earns_nothing():
    vocab = Vocabulary.default()
    task = generate_task("ADD", 1, seeded_rng(0, "t"), vocab)
    traj = OraclePolicy(vocab).sample_response(task, max_len=2)
    graded = grade_trajectory(traj, task, vocab)
    assert graded.final_reward == 0.0
    assert not graded.terminated_by_eos


def test_rollout_is_identical_for_any_worker_count():
    vocab = Vocabulary.default()
    encoder = FeatureEncoder(len(vocab), max_positions=8, prompt_buckets=16, cross_buckets=32)
    snap = snapshot(init_params(vocab, encoder.dim, seeded_rng(0, "init"), encoder))
    tasks = generate_tasks(["ADD"], 1, 2 * ROLLOUT_CHUNK + 5, seeded_rng(0, "t"), vocab)

    serial = rollout(snap, tasks, 3, 8, seeded_rng(4, "r"), workers=1)
    threaded = rollout(snap, tasks, 3, 8, seeded_rng(4, "r"), workers=4)
    assert serial.policy_version == snap.version
    assert len(serial) == len(threaded) == 3 * len(tasks)
    for a, b in zip(serial.trajectories, threaded.trajectories):
        assert a.task_id == b.task_id
        np.testing.assert_array_equal(a.actions, b.actions)
        np.testing.assert_array_equal(a.rewards, b.rewards)


def test_uniform_random_policy_rarely_answers_correctly():
    vocab = Vocabulary.default()
    encoder = FeatureEncoder(len(vocab), max_positions=8, prompt_buckets=16, cross_buckets=32)
    uniform = PolicyParams(np.zeros((encoder.dim, len(vocab))), np.zeros(encoder.dim), encoder, vocab)
    tasks = generate_tasks(["ADD"], 1, 1000, seeded_rng(0, "uniform/tasks"), vocab)

    batch = rollout(snapshot(uniform), tasks, 10, 8, seeded_rng(0, "uniform/rollout"))
    assert len(batch) == 10_000
    assert np.mean([t.final_reward for t in batch.trajectories]) < 0.05
    assert all(np.allclose(t.old_logprobs, -np.log(len(vocab))) for t in batch.trajectories[:50])


def test_pass_rate():
    task = generate_task("COPY", 1, seeded_rng(0, "t"))
    assert pass_rate(OraclePolicy(), task, k=4, rng=seeded_rng(0, "p")) == 1.0
    assert pass_rate(OraclePolicy(), task, k=4, rng=seeded_rng(0, "p"), max_len=1) == 0.0
    with pytest.raises(ContractViolation):
        pass_rate(OraclePolicy(), task, k=0, rng=seeded_rng(0, "p"))


# Corpus files

def test_export_then_import(tmp_path):
    tasks = generate_tasks(["ADD", "COPY"], 1, 5, seeded_rng(0, "t"))
    path = export_tasks(tasks, str(tmp_path / "tasks.jsonl"))
    loaded = import_tasks(path)
    assert loaded == tasks


def test_import_keeps_external_families(tmp_path):
    path = tmp_path / "external.jsonl"
    records = [
        {"task_id": "g1", "family": "geometry", "prompt_text": "area of unit square", "reference_answer": "1"},
        {"task_id": "g2", "family": "logic", "prompt_text": "007", "reference_answer": "7"},
    ]
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
    loaded = import_tasks(str(path))
    assert [t.family for t in loaded] == ["GEOMETRY", "LOGIC"]
    assert loaded[1].reference_answer == "7"
    assert loaded[1].prompt_text == "007"

    bare = tmp_path / "bare.jsonl"
    bare.write_text('{"task_id": "x1", "prompt_text": "2 + 2 = ?", "reference_answer": "4"}\n')
    task = import_tasks(str(bare))[0]
    assert (task.family, task.difficulty, task.category) == ("EXTERNAL", 1, "external")


def test_import_rejects_blank_references(tmp_path):
    path = tmp_path / "blank.jsonl"
    path.write_text('{"task_id": "b1", "prompt_text": "1 + 1 = ?", "reference_answer": " "}\n')
    with pytest.raises(CorpusError, match="b1"):
        import_tasks(str(path))
