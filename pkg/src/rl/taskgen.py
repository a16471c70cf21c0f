"""
Synthetic verifiable task families, rollout orchestration and pass-rate measurement.

Families are a registry: adding one means registering a renderer that returns
(prompt_text, reference_answer) for a difficulty and random stream.
"""

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.rl import verifier
from src.rl.policy import SamplingPolicy
from src.utils.errors import ConfigError, ContractViolation, CorpusError
from src.utils.rng import child_rngs
from src.utils.types import RolloutBatch, Trajectory
from src.utils.vocab import Token, Vocabulary

logger = logging.getLogger(__name__)


class TaskFamily(str, Enum):
    ADD = "ADD"
    SUB = "SUB"
    MUL = "MUL"
    COPY = "COPY"
    COMPARE = "COMPARE"


# Families that only ask the policy to read a value back out of the prompt
PERCEPTION_FAMILIES = frozenset({TaskFamily.COPY, TaskFamily.COMPARE})

TASK_COLUMNS = ["task_id", "family", "prompt_text", "reference_answer", "difficulty", "category"]

# Tasks sampled together in one lockstep pass
ROLLOUT_CHUNK = 16


def _operand(difficulty: int, rng: np.random.Generator) -> int:
    return int(rng.integers(0, 10 ** difficulty))


def _render_add(difficulty, rng):
    a, b = _operand(difficulty, rng), _operand(difficulty, rng)
    return f"{a} + {b} = ?", str(a + b)


def _render_sub(difficulty, rng):
    a, b = _operand(difficulty, rng), _operand(difficulty, rng)
    return f"{a} - {b} = ?", str(a - b)


def _render_mul(difficulty, rng):
    a, b = _operand(difficulty, rng), _operand(difficulty, rng)
    return f"{a} * {b} = ?", str(a * b)


def _render_copy(difficulty, rng):
    a = _operand(difficulty, rng)
    return f"echo {a}", str(a)


def _render_compare(difficulty, rng):
    a, b = _operand(difficulty, rng), _operand(difficulty, rng)
    return f"max {a} {b}", str(max(a, b))


Renderer = Callable[[int, np.random.Generator], Tuple[str, str]]

FAMILY_REGISTRY: Dict[TaskFamily, Renderer] = {
    TaskFamily.ADD: _render_add,
    TaskFamily.SUB: _render_sub,
    TaskFamily.MUL: _render_mul,
    TaskFamily.COPY: _render_copy,
    TaskFamily.COMPARE: _render_compare,
}


def parse_family(family) -> TaskFamily:
    if isinstance(family, TaskFamily):
        return family
    try:
        return TaskFamily(str(family).upper())
    except ValueError:
        raise ConfigError(
            f"unsupported task family {family!r}; known: {', '.join(f.value for f in TaskFamily)}"
        ) from None


def category_of(family: TaskFamily) -> str:
    return "perception" if family in PERCEPTION_FAMILIES else "arithmetic"


def prompt_key_of(prompt_text: str) -> int:
    """63-bit hash of the prompt text, stable across processes."""
    digest = hashlib.blake2b(prompt_text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & (2**63 - 1)


@dataclass(frozen=True)
class TaskInstance:
    task_id: str
    family: str
    prompt_text: str
    prompt_tokens: Tuple[Token, ...]
    reference_answer: str
    difficulty: int
    category: str

    @property
    def prompt_key(self) -> int:
        return prompt_key_of(self.prompt_text)

    @property
    def family_name(self) -> str:
        return self.family

    def to_record(self) -> Dict:
        return {
            "task_id": self.task_id,
            "family": self.family,
            "prompt_text": self.prompt_text,
            "reference_answer": self.reference_answer,
            "difficulty": self.difficulty,
            "category": self.category,
        }


def generate_task(family, difficulty: int, rng: np.random.Generator,
                  vocab: Optional[Vocabulary] = None) -> TaskInstance:
    """Render one task; operands have `difficulty` digits at most."""
    if difficulty < 1:
        raise ContractViolation(f"difficulty must be >= 1, got {difficulty}")
    fam = parse_family(family)
    vocab = vocab or Vocabulary.default()
    prompt_text, reference = FAMILY_REGISTRY[fam](difficulty, rng)
    tag = int(rng.integers(0, 16**8))
    return TaskInstance(
        task_id=f"{fam.value.lower()}-d{difficulty}-{tag:08x}",
        family=fam.value,
        prompt_text=prompt_text,
        prompt_tokens=tuple(vocab.encode_prompt(prompt_text)),
        reference_answer=reference,
        difficulty=difficulty,
        category=category_of(fam),
    )


def generate_tasks(families: Sequence, difficulty: int, count: int,
                   rng: np.random.Generator, vocab: Optional[Vocabulary] = None) -> List[TaskInstance]:
    """`count` tasks, each family drawn uniformly from `families`."""
    fams = [parse_family(f) for f in families]
    if not fams:
        raise ConfigError("at least one task family is required")
    picks = rng.integers(0, len(fams), size=count)
    return [generate_task(fams[int(i)], difficulty, rng, vocab) for i in picks]


class OraclePolicy:
    """Scripted-perfect policy: always emits BOX_OPEN, the reference, BOX_CLOSE, EOS."""

    def __init__(self, vocab: Optional[Vocabulary] = None, version: int = 0):
        self.vocab = vocab or Vocabulary.default()
        self.version = version

    def sample_response(self, task, max_len: int, temperature: float = 1.0,
                        top_p: float = 1.0, rng: np.random.Generator = None) -> Trajectory:
        tokens = self.vocab.encode_answer(task.reference_answer)[:max_len]
        T = len(tokens)
        return Trajectory(
            task_id=task.task_id,
            prompt_key=task.prompt_key,
            actions=tokens,
            rewards=np.zeros(T),
            old_logprobs=np.zeros(T),
            values=np.zeros(T + 1),
            terminated_by_eos=tokens[-1] == self.vocab.eos_id,
            family=task.family_name,
        )


def grade_trajectory(trajectory: Trajectory, task: TaskInstance, vocab: Vocabulary) -> Trajectory:
    """Copy of the trajectory with the verifier's reward on its final step only."""
    verdict = verifier.grade(vocab.detokenize(trajectory.actions), task.reference_answer)
    rewards = np.zeros(trajectory.length)
    rewards[-1] = verdict.reward
    return replace(trajectory, rewards=rewards)


def _sample_task(policy: SamplingPolicy, task: TaskInstance, n_responses: int, max_len: int,
                 temperature: float, top_p: float, rng: np.random.Generator,
                 vocab: Vocabulary) -> List[Trajectory]:
    batched = getattr(policy, "sample_responses", None)
    if batched is not None:
        rows = [task] * n_responses
        raw = batched(rows, max_len, rng.random((n_responses, max_len)), temperature, top_p)
    else:
        raw = [policy.sample_response(task, max_len, temperature, top_p, rng) for _ in range(n_responses)]
    return [grade_trajectory(traj, task, vocab) for traj in raw]


def _sample_chunk(policy: SamplingPolicy, tasks: Sequence[TaskInstance], streams, n_responses: int,
                  max_len: int, temperature: float, top_p: float, vocab: Vocabulary) -> List[Trajectory]:
    """All responses for a chunk of tasks; batch-capable policies sample the chunk in lockstep."""
    batched = getattr(policy, "sample_responses", None)
    if batched is None:
        return [traj for task, rng in zip(tasks, streams)
                for traj in _sample_task(policy, task, n_responses, max_len, temperature, top_p, rng, vocab)]
    rows = [task for task in tasks for _ in range(n_responses)]
    uniforms = np.vstack([rng.random((n_responses, max_len)) for rng in streams])
    raw = batched(rows, max_len, uniforms, temperature, top_p)
    return [grade_trajectory(traj, task, vocab) for traj, task in zip(raw, rows)]


def rollout(snapshot: SamplingPolicy, tasks: Sequence[TaskInstance], n_responses: int,
            max_len: int, rng: np.random.Generator, temperature: float = 1.0, top_p: float = 1.0,
            iteration: int = 0, workers: int = 1, vocab: Optional[Vocabulary] = None) -> RolloutBatch:
    """
    Sample n_responses graded trajectories per task.

    Each task gets its own child stream drawn from `rng` in task order, and
    tasks are sampled in fixed chunks of ROLLOUT_CHUNK, so the batch is
    identical for any `workers` count.
    """
    if n_responses < 1:
        raise ContractViolation(f"n_responses must be >= 1, got {n_responses}")
    vocab = vocab or getattr(snapshot, "vocab", None) or Vocabulary.default()
    streams = child_rngs(rng, len(tasks))
    chunks = [range(start, min(start + ROLLOUT_CHUNK, len(tasks))) for start in range(0, len(tasks), ROLLOUT_CHUNK)]

    def work(chunk: range) -> List[Trajectory]:
        return _sample_chunk(snapshot, [tasks[i] for i in chunk], [streams[i] for i in chunk],
                             n_responses, max_len, temperature, top_p, vocab)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_chunk = list(pool.map(work, chunks))
    else:
        per_chunk = [work(chunk) for chunk in chunks]

    trajectories = [traj for group in per_chunk for traj in group]
    return RolloutBatch(
        trajectories=trajectories,
        iteration=iteration,
        policy_version=snapshot.version,
        max_length=max_len,
        task_ids=[t.task_id for t in tasks],
    )


def pass_rate(snapshot: SamplingPolicy, task: TaskInstance, k: int, rng: np.random.Generator,
              max_len: int = 64, temperature: float = 1.0, top_p: float = 1.0,
              vocab: Optional[Vocabulary] = None) -> float:
    """Fraction of k sampled responses graded correct."""
    if k < 1:
        raise ContractViolation(f"k must be >= 1, got {k}")
    vocab = vocab or getattr(snapshot, "vocab", None) or Vocabulary.default()
    graded = _sample_task(snapshot, task, k, max_len, temperature, top_p, rng, vocab)
    return float(np.mean([t.final_reward for t in graded]))


def export_tasks(tasks: Sequence[TaskInstance], path: str) -> str:
    df = pd.DataFrame([t.to_record() for t in tasks], columns=TASK_COLUMNS)
    df.to_json(path, orient="records", lines=True, force_ascii=False)
    logger.info("exported %d tasks to %s", len(df), path)
    return str(path)


def import_tasks(path: str, vocab: Optional[Vocabulary] = None) -> List[TaskInstance]:
    """
    Read a task corpus. Families outside the registry are kept as-is so
    external prompt-answer corpora can be graded.
    """
    vocab = vocab or Vocabulary.default()
    df = pd.read_json(path, lines=True, dtype=False)
    missing = [c for c in ("task_id", "prompt_text", "reference_answer") if c not in df.columns]
    if missing:
        raise CorpusError(f"task corpus {path} lacks columns {missing}")
    if "family" not in df.columns:
        df["family"] = "EXTERNAL"
    if "difficulty" not in df.columns:
        df["difficulty"] = 1
    if "category" not in df.columns:
        df["category"] = "external"

    blank = df["reference_answer"].isna() | (df["reference_answer"].astype(str).str.strip() == "")
    if blank.any():
        raise CorpusError("tasks without a reference answer", df.loc[blank, "task_id"].astype(str).tolist())

    return [
        TaskInstance(
            task_id=str(row.task_id),
            family=str(row.family).upper(),
            prompt_text=str(row.prompt_text),
            prompt_tokens=tuple(vocab.encode_prompt(str(row.prompt_text))),
            reference_answer=str(row.reference_answer),
            difficulty=int(row.difficulty),
            category=str(row.category),
        )
        for row in df.itertuples(index=False)
    ]
