"""
Trajectory and rollout-batch records shared by taskgen, advantage and ppo.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from src.utils.errors import ContractViolation


def _frozen(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    One sampled response.

    actions, rewards and old_logprobs have length T; values has length T + 1
    with values[T] = 0 for the terminal state. PAD never appears in actions.
    """
    task_id: str
    prompt_key: int
    actions: np.ndarray
    rewards: np.ndarray
    old_logprobs: np.ndarray
    values: np.ndarray
    terminated_by_eos: bool
    family: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "actions", _frozen(self.actions, np.int64))
        object.__setattr__(self, "rewards", _frozen(self.rewards, np.float64))
        object.__setattr__(self, "old_logprobs", _frozen(self.old_logprobs, np.float64))
        object.__setattr__(self, "values", _frozen(self.values, np.float64))

        T = len(self.actions)
        if T < 1:
            raise ContractViolation(f"trajectory {self.task_id} is empty")
        if len(self.rewards) != T or len(self.old_logprobs) != T:
            raise ContractViolation(
                f"trajectory {self.task_id}: actions/rewards/old_logprobs lengths "
                f"{T}/{len(self.rewards)}/{len(self.old_logprobs)} differ"
            )
        if len(self.values) != T + 1:
            raise ContractViolation(f"trajectory {self.task_id}: values must have length T+1={T + 1}")
        if self.values[T] != 0.0:
            raise ContractViolation(f"trajectory {self.task_id}: terminal value must be 0")
        if not np.all(np.isfinite(self.rewards)):
            raise ContractViolation(f"trajectory {self.task_id}: non-finite reward")
        if np.any(self.old_logprobs > 0.0):
            raise ContractViolation(f"trajectory {self.task_id}: log-probabilities must be <= 0")

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def final_reward(self) -> float:
        return float(self.rewards[-1])


@dataclass(frozen=True)
class RolloutBatch:
    """Trajectories grouped by task, all sampled under snapshot `policy_version`."""
    trajectories: List[Trajectory]
    iteration: int
    policy_version: int
    max_length: int = 0
    task_ids: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def token_count(self) -> int:
        return int(sum(t.length for t in self.trajectories))

    def mean_reward(self) -> float:
        if not self.trajectories:
            return 0.0
        return float(np.mean([t.final_reward for t in self.trajectories]))

    def mean_length(self) -> float:
        if not self.trajectories:
            return 0.0
        return float(np.mean([t.length for t in self.trajectories]))
