"""
Iteration-indexed maximum response length schedule.
"""

import bisect
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from src.utils.errors import ConfigError, ContractViolation

DESK_SCHEDULE = ((0, 32), (300, 48), (700, 64))
# Long-context stages the desk schedule is scaled down from
FULL_SCALE_SCHEDULE = ((0, 24000), (300, 32000), (700, 48000))


@dataclass(frozen=True)
class CurriculumSchedule:
    """
    Ordered (start_iteration, max_length) stages.

    A stage takes effect AT its start iteration and lasts until the next
    stage starts.
    """
    stages: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        stages = tuple((int(s), int(n)) for s, n in self.stages)
        if not stages:
            raise ConfigError("curriculum needs at least one stage")
        if stages[0][0] != 0:
            raise ConfigError(f"curriculum must start at iteration 0, got {stages[0][0]}")
        for (s0, n0), (s1, n1) in zip(stages, stages[1:]):
            if s1 <= s0:
                raise ConfigError(f"curriculum start iterations must increase: {s0} then {s1}")
            if n1 < n0:
                raise ConfigError(f"curriculum lengths must not shrink: {n0} then {n1}")
        if any(n < 1 for _, n in stages):
            raise ConfigError("curriculum lengths must be >= 1")
        object.__setattr__(self, "stages", stages)

    @classmethod
    def parse(cls, raw: Sequence[Sequence[int]]) -> "CurriculumSchedule":
        """Build from the config form: a list of [start, length] pairs."""
        try:
            pairs = [(int(p[0]), int(p[1])) for p in raw]
            if any(len(p) != 2 for p in raw):
                raise ValueError("pairs must have two entries")
        except (TypeError, ValueError, IndexError) as e:
            raise ConfigError(f"curriculum must be a list of [start, length] pairs: {e}") from e
        return cls(stages=tuple(pairs))

    def to_list(self) -> List[List[int]]:
        return [[s, n] for s, n in self.stages]

    @property
    def starts(self) -> List[int]:
        return [s for s, _ in self.stages]


def max_length_at(schedule: CurriculumSchedule, iteration: int) -> int:
    """Length of the last stage whose start_iteration <= iteration."""
    if iteration < 0:
        raise ContractViolation(f"iteration must be >= 0, got {iteration}")
    idx = bisect.bisect_right(schedule.starts, iteration) - 1
    return schedule.stages[idx][1]
