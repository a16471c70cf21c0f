"""
TD residuals, generalized advantage estimation, empirical returns and
batch-level advantage normalization.
"""

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from src.utils.errors import ContractViolation
from src.utils.types import Trajectory

NORM_EPS = 1e-8


@dataclass(frozen=True, eq=False)
class AdvantageRecord:
    deltas: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __post_init__(self):
        n = len(self.deltas)
        if len(self.advantages) != n or len(self.returns) != n:
            raise ContractViolation("advantage record sequences must share one length")
        for name in ("deltas", "advantages", "returns"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ContractViolation(f"non-finite entry in {name}")


def compute_deltas(rewards: Sequence[float], values: Sequence[float], gamma: float) -> np.ndarray:
    """delta_t = r_t + gamma * V(s_{t+1}) - V(s_t); values carries the terminal V(s_T) = 0."""
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if len(v) != len(r) + 1:
        raise ContractViolation(f"values must have length T+1={len(r) + 1}, got {len(v)}")
    if v[-1] != 0.0:
        raise ContractViolation("terminal value V(s_T) must be 0")
    return r + gamma * v[1:] - v[:-1]


def compute_gae(deltas: Sequence[float], gamma: float, lam: float) -> np.ndarray:
    """A_t = delta_t + gamma*lam*A_{t+1}, accumulated backwards from the last step."""
    d = np.asarray(deltas, dtype=np.float64)
    adv = np.empty_like(d)
    running = 0.0
    decay = gamma * lam
    for t in range(len(d) - 1, -1, -1):
        running = d[t] + decay * running
        adv[t] = running
    return adv


def compute_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    ret = np.empty_like(r)
    running = 0.0
    for t in range(len(r) - 1, -1, -1):
        running = r[t] + gamma * running
        ret[t] = running
    return ret


def normalize_batch(advantages: Sequence[float]) -> np.ndarray:
    """(a - mean) / (population std + 1e-8) over every timestep in the batch."""
    a = np.asarray(advantages, dtype=np.float64)
    if a.ndim != 1 or len(a) < 2:
        raise ContractViolation(f"batch normalization needs at least 2 values, got {a.size}")
    mean = a.mean()
    centered = a - mean
    std = np.sqrt(np.mean(centered * centered))
    return centered / (std + NORM_EPS)


def advantage_record(trajectory: Trajectory, gamma: float, lam: float) -> AdvantageRecord:
    deltas = compute_deltas(trajectory.rewards, trajectory.values, gamma)
    return AdvantageRecord(
        deltas=deltas,
        advantages=compute_gae(deltas, gamma, lam),
        returns=compute_returns(trajectory.rewards, gamma),
    )


def batch_advantages(trajectories: List[Trajectory], gamma: float, lam: float):
    """
    Per-trajectory records plus the flattened, batch-normalized advantages and
    the flattened returns, both in trajectory-then-timestep order.
    """
    records = [advantage_record(t, gamma, lam) for t in trajectories]
    flat_adv = np.concatenate([r.advantages for r in records])
    flat_ret = np.concatenate([r.returns for r in records])
    return records, normalize_batch(flat_adv), flat_ret
