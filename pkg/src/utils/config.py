"""
Training configuration: defaults, validation, file loading and canonical serialization.

Config files hold flat keys. JSON files are parsed with json, anything else with
yaml.safe_load; both go through the same key check and type coercion.
"""

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple

import yaml

from src.rl.curriculum import DESK_SCHEDULE, CurriculumSchedule
from src.utils.errors import ConfigError

BASE_POLICY_LR = 1e-6
BASE_CRITIC_LR = 5e-6
DEFAULT_LR_SCALE = 1000.0


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 1.0
    lam: float = 1.0
    clip_eps: float = 0.2
    policy_lr: float = BASE_POLICY_LR
    critic_lr: float = BASE_CRITIC_LR
    lr_scale: float = DEFAULT_LR_SCALE
    warmup_steps: int = 50
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    prompts_per_iter: int = 64
    responses_per_prompt: int = 8
    critic_steps_per_iter: int = 4
    curriculum: CurriculumSchedule = field(default_factory=lambda: CurriculumSchedule(DESK_SCHEDULE))
    seed: int = 0
    iterations: int = 300
    temperature: float = 1.0
    top_p: float = 1.0
    task_families: Tuple[str, ...] = ("ADD",)
    difficulty: int = 1
    feature_scale: float = 3.0
    max_positions: int = 64
    prompt_buckets: int = 64
    cross_buckets: int = 256
    feature_replicas: int = 12
    critic_feature_scale: float = 0.003
    snapshot_every: int = 25
    average_iterations: Optional[Tuple[int, ...]] = None
    average_min_snapshots: int = 3
    workers: int = 1
    record_wall_time: bool = False
    output_dir: str = "runs/default"

    def __post_init__(self):
        if not isinstance(self.curriculum, CurriculumSchedule):
            object.__setattr__(self, "curriculum", CurriculumSchedule.parse(self.curriculum))
        object.__setattr__(self, "task_families", tuple(str(f).upper() for f in self.task_families))
        if self.average_iterations is not None:
            object.__setattr__(self, "average_iterations", tuple(int(i) for i in self.average_iterations))
        self._validate()

    def _validate(self):
        checks = [
            (0.0 <= self.gamma <= 1.0, f"gamma must be in [0, 1], got {self.gamma}"),
            (0.0 <= self.lam <= 1.0, f"lam must be in [0, 1], got {self.lam}"),
            (self.clip_eps > 0.0, f"clip_eps must be > 0, got {self.clip_eps}"),
            (self.policy_lr > 0.0 and self.critic_lr > 0.0, "learning rates must be > 0"),
            (self.lr_scale > 0.0, f"lr_scale must be > 0, got {self.lr_scale}"),
            (self.warmup_steps >= 0, "warmup_steps must be >= 0"),
            (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0, "betas must be in [0, 1)"),
            (self.adam_eps > 0.0, "adam_eps must be > 0"),
            (self.weight_decay >= 0.0, "weight_decay must be >= 0"),
            (self.prompts_per_iter >= 1 and self.responses_per_prompt >= 1,
             "prompts_per_iter and responses_per_prompt must be >= 1"),
            (self.critic_steps_per_iter >= 1, "critic_steps_per_iter must be >= 1"),
            (self.seed >= 0, "seed must be >= 0"),
            (self.iterations >= 0, "iterations must be >= 0"),
            (self.temperature > 0.0, "temperature must be > 0"),
            (0.0 < self.top_p <= 1.0, "top_p must be in (0, 1]"),
            (len(self.task_families) >= 1, "task_families must not be empty"),
            (self.difficulty >= 1, "difficulty must be >= 1"),
            (self.feature_scale > 0.0, "feature_scale must be > 0"),
            (self.critic_feature_scale > 0.0, "critic_feature_scale must be > 0"),
            (self.feature_replicas >= 1, "feature_replicas must be >= 1"),
            (min(self.max_positions, self.prompt_buckets, self.cross_buckets) >= 1,
             "feature sizes must be >= 1"),
            (self.snapshot_every >= 1, "snapshot_every must be >= 1"),
            (self.average_min_snapshots >= 1, "average_min_snapshots must be >= 1"),
            (self.workers >= 1, "workers must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    @property
    def effective_policy_lr(self) -> float:
        return self.policy_lr * self.lr_scale

    @property
    def effective_critic_lr(self) -> float:
        return self.critic_lr * self.lr_scale

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["curriculum"] = self.curriculum.to_list()
        data["task_families"] = list(self.task_families)
        if self.average_iterations is not None:
            data["average_iterations"] = list(self.average_iterations)
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def with_overrides(self, overrides: Dict[str, Any]) -> "TrainConfig":
        return replace(self, **_coerce(overrides))


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(raw: Dict[str, Any]) -> Dict[str, Any]:
    unknown = sorted(set(raw) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    out = {}
    for key, value in raw.items():
        kind = _FIELD_TYPES[key]
        try:
            if kind is float:
                out[key] = float(value)
            elif kind is int:
                if isinstance(value, bool) or float(value) != int(float(value)):
                    raise ValueError(f"expected an integer, got {value!r}")
                out[key] = int(float(value))
            elif kind is bool:
                if not isinstance(value, bool):
                    raise ValueError(f"expected true/false, got {value!r}")
                out[key] = value
            elif kind is str:
                out[key] = str(value)
            elif key == "curriculum":
                out[key] = value if isinstance(value, CurriculumSchedule) else CurriculumSchedule.parse(value)
            elif key == "task_families":
                out[key] = (value,) if isinstance(value, str) else tuple(value)
            elif key == "average_iterations":
                out[key] = None if value is None else tuple(int(v) for v in value)
            else:
                out[key] = value
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad value for {key}: {e}") from e
    return out


def default_config() -> TrainConfig:
    return TrainConfig()


def config_from_dict(raw: Dict[str, Any]) -> TrainConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a mapping of flat keys")
    return TrainConfig(**_coerce(raw))


def parse_config(text: str, fmt: str = "json") -> TrainConfig:
    try:
        raw = json.loads(text) if fmt == "json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"config is not valid {fmt}: {e}") from e
    return config_from_dict(raw or {})


def load_config(path: str) -> TrainConfig:
    """Load a config file; keys not present keep their defaults."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text, "json" if p.suffix.lower() == ".json" else "yaml")


def save_config(config: TrainConfig, path: str) -> str:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(config.to_json(), encoding="utf-8")
    return str(path)


def parse_overrides(pairs: Iterable[str]) -> Dict[str, Any]:
    """Turn CLI `key=value` strings into a dict, values parsed as YAML scalars/lists."""
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} must look like key=value")
        key, _, value = pair.partition("=")
        try:
            overrides[key.strip()] = yaml.safe_load(value)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse override {pair!r}: {e}") from e
    return overrides
