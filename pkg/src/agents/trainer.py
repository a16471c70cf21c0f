"""
Trainer Agent
Runs the on-policy RLVR loop: curriculum length -> rollout -> grade -> PPO update,
streaming one metrics record per iteration and writing final and averaged checkpoints.
"""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from src.rl.curriculum import max_length_at
from src.rl.policy import (
    FeatureEncoder,
    PolicyParams,
    PolicySnapshot,
    average_checkpoints,
    init_params,
    save_checkpoint,
    snapshot,
)
from src.rl.ppo import UpdateReport, init_optimizer_states, train_iteration
from src.rl.taskgen import TaskInstance, generate_tasks, import_tasks, parse_family, rollout
from src.utils.config import TrainConfig, save_config
from src.utils.errors import ConfigError
from src.utils.rng import seeded_rng
from src.utils.types import RolloutBatch
from src.utils.vocab import Vocabulary

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"


@dataclass(frozen=True)
class IterationMetrics:
    iteration: int
    mean_reward: float
    mean_response_length: float
    policy_objective: float
    value_loss: float
    clip_fraction: float
    lr: float
    critic_lr: float
    grad_norm: float
    max_length: int
    policy_version: int
    policy_steps: int
    critic_steps: int
    family_reward: Dict[str, float] = field(default_factory=dict)
    family_length: Dict[str, float] = field(default_factory=dict)
    wall_ms: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def summarize_batch(batch: RolloutBatch, report: UpdateReport, max_length: int,
                    wall_ms: Optional[float] = None) -> IterationMetrics:
    """Fold a graded batch and its update report into one metrics record."""
    by_family: Dict[str, List] = {}
    for traj in batch.trajectories:
        by_family.setdefault(traj.family or "UNKNOWN", []).append(traj)

    return IterationMetrics(
        iteration=batch.iteration,
        mean_reward=batch.mean_reward(),
        mean_response_length=batch.mean_length(),
        policy_objective=report.policy_objective,
        value_loss=report.value_loss,
        clip_fraction=report.clip_fraction,
        lr=report.policy_lr,
        critic_lr=report.critic_lr,
        grad_norm=report.grad_norm,
        max_length=max_length,
        policy_version=report.policy_version,
        policy_steps=report.policy_steps,
        critic_steps=report.critic_steps,
        family_reward={f: float(np.mean([t.final_reward for t in ts])) for f, ts in sorted(by_family.items())},
        family_length={f: float(np.mean([t.length for t in ts])) for f, ts in sorted(by_family.items())},
        wall_ms=wall_ms,
    )


class MetricsWriter:
    """Single-consumer JSONL stream; every record is flushed as soon as it is written."""

    def __init__(self, path: str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8")
        self.records = 0

    def write(self, metrics: IterationMetrics):
        self._fh.write(metrics.to_json() + "\n")
        self._fh.flush()
        self.records += 1

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def select_average_set(snapshots: Dict[int, PolicySnapshot], cfg: TrainConfig) -> List[int]:
    """
    Iteration labels whose snapshots get averaged.

    Explicit cfg.average_iterations wins. Otherwise the snapshots in the last
    quartile of training, topped up to the most recent
    cfg.average_min_snapshots when the quartile holds fewer.
    """
    labels = sorted(snapshots)
    if cfg.average_iterations is not None:
        missing = [i for i in cfg.average_iterations if i not in snapshots]
        if missing:
            raise ConfigError(f"average_iterations {missing} have no snapshot; available: {labels}")
        return sorted(set(cfg.average_iterations))

    cutoff = math.ceil(0.75 * cfg.iterations)
    chosen = [i for i in labels if i >= cutoff]
    if len(chosen) < cfg.average_min_snapshots:
        chosen = labels[-cfg.average_min_snapshots:]
    return chosen


class TrainerAgent:
    """
    Agent that trains the reference policy on verifiable tasks.
    Owns the live parameters; rollouts only ever see immutable snapshots.
    """

    def __init__(self, config: TrainConfig, corpus_path: Optional[str] = None, verbose: bool = True):
        """
        Initialize the Trainer Agent.

        Args:
            config: Validated training configuration
            corpus_path: Optional task corpus JSONL; synthetic families are used when absent
            verbose: Print progress lines
        """
        self.config = config
        self.corpus_path = corpus_path
        self.verbose = verbose
        self.output_dir = Path(config.output_dir)
        self.vocab = Vocabulary.default()
        self.encoder = FeatureEncoder(
            vocab_size=len(self.vocab),
            max_positions=config.max_positions,
            prompt_buckets=config.prompt_buckets,
            cross_buckets=config.cross_buckets,
            scale=config.feature_scale,
            replicas=config.feature_replicas,
            critic_scale=config.critic_feature_scale,
        )
        self.params: Optional[PolicyParams] = None
        self.corpus: Optional[List[TaskInstance]] = None
        self.snapshots: Dict[int, PolicySnapshot] = {}
        self.step_counts = {"policy": 0, "critic": 0}
        self.history: List[IterationMetrics] = []

    def _say(self, message: str):
        if self.verbose:
            print(message)

    def _count_step(self, kind: str, _index: int):
        self.step_counts[kind] += 1

    def _tasks_for(self, iteration: int) -> List[TaskInstance]:
        rng = seeded_rng(self.config.seed, f"tasks/{iteration}")
        n = self.config.prompts_per_iter
        if self.corpus is not None:
            picks = rng.choice(len(self.corpus), size=n, replace=len(self.corpus) < n)
            return [self.corpus[int(i)] for i in picks]
        return generate_tasks(self.config.task_families, self.config.difficulty, n, rng, self.vocab)

    def setup(self):
        cfg = self.config
        self.params = init_params(self.vocab, self.encoder.dim, seeded_rng(cfg.seed, "init"), self.encoder)
        self.opt_states = init_optimizer_states(self.params, cfg)
        if self.corpus_path:
            self.corpus = import_tasks(self.corpus_path, self.vocab)
            if not self.corpus:
                raise ConfigError(f"task corpus {self.corpus_path} is empty")
            self._say(f"📥 Loaded {len(self.corpus)} tasks from {self.corpus_path}")
        else:
            for family in cfg.task_families:
                parse_family(family)
        save_config(cfg, str(self.output_dir / "config.json"))

    def train_step(self, iteration: int) -> IterationMetrics:
        """One iteration: sample under a fresh snapshot, then update the live params."""
        cfg = self.config
        started = time.perf_counter()
        max_len = max_length_at(cfg.curriculum, iteration)
        batch = rollout(
            snapshot(self.params),
            self._tasks_for(iteration),
            cfg.responses_per_prompt,
            max_len,
            seeded_rng(cfg.seed, f"rollout/{iteration}"),
            temperature=cfg.temperature,
            top_p=cfg.top_p,
            iteration=iteration,
            workers=cfg.workers,
            vocab=self.vocab,
        )
        report = train_iteration(batch, self.params, self.opt_states, cfg, on_step=self._count_step)
        wall_ms = (time.perf_counter() - started) * 1000.0 if cfg.record_wall_time else None
        return summarize_batch(batch, report, max_len, wall_ms)

    def _take_snapshot(self, label: int):
        self.snapshots[label] = snapshot(self.params)
        save_checkpoint(self.params, str(self.output_dir / "checkpoints" / f"iter_{label:05d}.json"))

    def finish(self) -> Dict:
        """Write the final checkpoint and the uniform average over the selected snapshots."""
        ckpt_dir = self.output_dir / "checkpoints"
        final_path = save_checkpoint(self.params, str(ckpt_dir / "final.json"))

        if self.snapshots:
            chosen = select_average_set(self.snapshots, self.config)
            averaged = average_checkpoints([self.snapshots[i] for i in chosen])
        else:
            chosen = []
            averaged = average_checkpoints([snapshot(self.params)])
        averaged_path = save_checkpoint(averaged, str(ckpt_dir / "averaged.json"))
        return {
            "final_checkpoint": final_path,
            "averaged_checkpoint": averaged_path,
            "averaged_from": chosen,
        }

    def run(self) -> Dict:
        """Run the full training loop."""
        cfg = self.config
        self._say("🚀 Starting Trainer Agent...")
        self._say("=" * 60)
        self.setup()
        self._say(f"📊 {cfg.iterations} iterations x {cfg.prompts_per_iter} prompts x "
                  f"{cfg.responses_per_prompt} responses, feature dim {self.encoder.dim}")

        metrics_path = self.output_dir / METRICS_FILE
        with MetricsWriter(str(metrics_path)) as writer:
            for iteration in range(cfg.iterations):
                metrics = self.train_step(iteration)
                writer.write(metrics)
                self.history.append(metrics)
                logger.info("iter %d reward %.3f length %.2f objective %.4f value_loss %.4f",
                            iteration, metrics.mean_reward, metrics.mean_response_length,
                            metrics.policy_objective, metrics.value_loss)
                if (iteration + 1) % cfg.snapshot_every == 0:
                    self._take_snapshot(iteration + 1)

        outputs = self.finish()
        summary = {
            "iterations": cfg.iterations,
            "metrics_path": str(metrics_path),
            "policy_steps": self.step_counts["policy"],
            "critic_steps": self.step_counts["critic"],
            "final_mean_reward": self.history[-1].mean_reward if self.history else None,
            **outputs,
        }

        self._say("\n" + "=" * 60)
        self._say("✅ TRAINING COMPLETE")
        self._say("=" * 60)
        if self.history:
            self._say(f"📈 Final mean reward: {self.history[-1].mean_reward:.3f}")
        self._say(f"💾 Metrics: {metrics_path}")
        self._say(f"💾 Averaged checkpoint ({len(outputs['averaged_from'])} snapshots): "
                  f"{outputs['averaged_checkpoint']}")
        return summary
