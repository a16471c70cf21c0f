"""
Reference autoregressive policy and critic over the toy vocabulary.

The policy is linear-softmax over hashed state features, the critic a linear
value head without bias. Both are plain numpy arrays so every gradient is
analytic and can be checked against finite differences.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from src.utils.errors import CheckpointError, ContractViolation
from src.utils.types import Trajectory
from src.utils.vocab import Vocabulary

CHECKPOINT_FORMAT_VERSION = 1
CRITIC_INIT_BOUND = float(np.sqrt(5.0))
POLICY_INIT_BOUND = 0.1

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_SALT_PREV = np.uint64(0x51ED270B)
_SALT_POS = np.uint64(0x2545F491)
_MASK64 = (1 << 64) - 1


def _mix64(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arrays wrap silently on overflow
    x = x.astype(np.uint64, copy=True)
    x ^= x >> np.uint64(30)
    x *= _M1
    x ^= x >> np.uint64(27)
    x *= _M2
    x ^= x >> np.uint64(31)
    return x


def _bucket(prompt_keys: np.ndarray, other: np.ndarray, salt: np.uint64, buckets: int) -> np.ndarray:
    h = _mix64(prompt_keys.astype(np.uint64) ^ _mix64(other.astype(np.uint64) * _GOLDEN + salt))
    return (h % np.uint64(buckets)).astype(np.int64)


def _replica_salt(replica: int) -> np.uint64:
    return np.uint64((replica * 0x9E3779B97F4A7C15) & _MASK64)


@dataclass(frozen=True)
class StateFeatures:
    """Sparse view of phi(s): active indices, policy values and the critic's values."""
    indices: np.ndarray
    values: np.ndarray
    critic_values: np.ndarray
    dim: int

    def dense(self) -> np.ndarray:
        phi = np.zeros(self.dim)
        np.add.at(phi, self.indices, self.values)
        return phi

    def critic_dense(self) -> np.ndarray:
        phi = np.zeros(self.dim)
        np.add.at(phi, self.indices, self.critic_values)
        return phi


@dataclass(frozen=True)
class FeatureEncoder:
    """
    Deterministic encoding of (prompt hash, position, previous token).

    One block layout holds bias, position one-hot (clipped to the last slot),
    previous-token one-hot, prompt bucket, (prompt, previous token) bucket and
    (prompt, position) bucket. The layout is repeated `replicas` times with
    independently salted hashes; logits sum over the copies, so a collision
    in one copy is outvoted by the others.

    The policy reads every active feature at `scale`, the critic reads the
    same features at `critic_scale`.
    """
    vocab_size: int
    max_positions: int = 64
    prompt_buckets: int = 256
    cross_buckets: int = 1024
    scale: float = 1.0
    replicas: int = 1
    critic_scale: float = 1.0

    BLOCKS = 6

    def __post_init__(self):
        if self.replicas < 1:
            raise ContractViolation(f"replicas must be >= 1, got {self.replicas}")

    @property
    def block_dim(self) -> int:
        return 1 + self.max_positions + self.vocab_size + self.prompt_buckets + 2 * self.cross_buckets

    @property
    def dim(self) -> int:
        return self.replicas * self.block_dim

    @property
    def active(self) -> int:
        return self.BLOCKS * self.replicas

    def _offsets(self):
        pos = 1
        prev = pos + self.max_positions
        prompt = prev + self.vocab_size
        cross_prev = prompt + self.prompt_buckets
        cross_pos = cross_prev + self.cross_buckets
        return pos, prev, prompt, cross_prev, cross_pos

    def encode_batch(self, prompt_keys, positions, prev_tokens) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized encode: returns (N x active indices, N x active policy values)."""
        keys = np.asarray(prompt_keys, dtype=np.int64)
        pos = np.asarray(positions, dtype=np.int64)
        prev = np.asarray(prev_tokens, dtype=np.int64)
        if np.any(prev < 0) or np.any(prev >= self.vocab_size) or np.any(pos < 0):
            raise ContractViolation("state has a negative position or an out-of-vocabulary previous token")

        o_pos, o_prev, o_prompt, o_cprev, o_cpos = self._offsets()
        pos_slot = np.minimum(pos, self.max_positions - 1)
        keys_u = keys.astype(np.uint64)

        columns = []
        for r in range(self.replicas):
            base = r * self.block_dim
            salt = _replica_salt(r)
            prompt_slot = (_mix64(keys_u ^ salt) % np.uint64(self.prompt_buckets)).astype(np.int64)
            columns += [
                np.full_like(keys, base),
                base + o_pos + pos_slot,
                base + o_prev + prev,
                base + o_prompt + prompt_slot,
                base + o_cprev + _bucket(keys, prev, _SALT_PREV ^ salt, self.cross_buckets),
                base + o_cpos + _bucket(keys, pos_slot, _SALT_POS ^ salt, self.cross_buckets),
            ]
        idx = np.stack(columns, axis=1)
        return idx, np.full(idx.shape, float(self.scale))

    def critic_view(self, indices: np.ndarray) -> np.ndarray:
        """Critic feature values for encoded indices."""
        return np.full(np.shape(indices), float(self.critic_scale))

    def encode(self, prompt_key: int, position: int, prev_token: int) -> StateFeatures:
        idx, val = self.encode_batch([prompt_key], [position], [prev_token])
        return StateFeatures(indices=idx[0], values=val[0], critic_values=self.critic_view(idx[0]), dim=self.dim)


@dataclass
class PolicyParams:
    """Live, single-writer parameters. `version` counts policy updates."""
    policy_weights: np.ndarray
    critic_weights: np.ndarray
    encoder: Optional[FeatureEncoder] = None
    vocab: Vocabulary = field(default_factory=Vocabulary.default)
    version: int = 0

    @property
    def feature_dim(self) -> int:
        return self.policy_weights.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.policy_weights.shape[1]


@dataclass(frozen=True, eq=False)
class PolicySnapshot:
    """Read-only copy of the parameters a rollout batch is sampled under."""
    policy_weights: np.ndarray
    critic_weights: np.ndarray
    encoder: Optional[FeatureEncoder]
    vocab: Vocabulary
    version: int

    def sample_response(self, task, max_len: int, temperature: float = 1.0,
                        top_p: float = 1.0, rng: np.random.Generator = None) -> Trajectory:
        return sample_response(self, task, max_len, temperature, top_p, rng)

    def sample_responses(self, tasks, max_len: int, uniforms: np.ndarray,
                         temperature: float = 1.0, top_p: float = 1.0) -> List[Trajectory]:
        return sample_responses(self, tasks, max_len, uniforms, temperature, top_p)

    def as_params(self) -> PolicyParams:
        return PolicyParams(
            policy_weights=np.array(self.policy_weights, copy=True),
            critic_weights=np.array(self.critic_weights, copy=True),
            encoder=self.encoder,
            vocab=self.vocab,
            version=self.version,
        )


ParamsLike = Union[PolicyParams, PolicySnapshot]


class SamplingPolicy(Protocol):
    """Anything rollout can sample from. Policies that also define sample_responses are sampled a chunk at a time."""
    version: int

    def sample_response(self, task, max_len: int, temperature: float,
                        top_p: float, rng: np.random.Generator) -> Trajectory: ...


def init_params(vocab: Vocabulary, feature_dim: int, rng: np.random.Generator,
                encoder: Optional[FeatureEncoder] = None) -> PolicyParams:
    """Policy weights ~ U(-0.1, 0.1); value head ~ U(-sqrt5, sqrt5), no bias."""
    if feature_dim < 1:
        raise ContractViolation(f"feature_dim must be >= 1, got {feature_dim}")
    if encoder is not None and encoder.dim != feature_dim:
        raise ContractViolation(f"encoder dimension {encoder.dim} != feature_dim {feature_dim}")
    policy_w = rng.uniform(-POLICY_INIT_BOUND, POLICY_INIT_BOUND, size=(feature_dim, len(vocab)))
    critic_w = rng.uniform(-CRITIC_INIT_BOUND, CRITIC_INIT_BOUND, size=feature_dim)
    return PolicyParams(policy_weights=policy_w, critic_weights=critic_w, encoder=encoder, vocab=vocab)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


# Row-wise evaluation; single states go through the same code as batches

def batch_logits(params: ParamsLike, idx: np.ndarray, val: np.ndarray) -> np.ndarray:
    """Row n: sum_k val[n, k] * W[idx[n, k]], accumulated one active feature at a time."""
    weights = params.policy_weights
    out = np.zeros((idx.shape[0], weights.shape[1]))
    for k in range(idx.shape[1]):
        out += val[:, k, None] * weights[idx[:, k]]
    return out


def batch_values(params: ParamsLike, idx: np.ndarray, critic_val: np.ndarray) -> np.ndarray:
    weights = params.critic_weights
    out = np.zeros(idx.shape[0])
    for k in range(idx.shape[1]):
        out += critic_val[:, k] * weights[idx[:, k]]
    return out


def batch_logprobs(params: ParamsLike, idx: np.ndarray, val: np.ndarray,
                   actions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(log pi(a_n|s_n) for each row, full probability matrix)."""
    lsm = log_softmax(batch_logits(params, idx, val))
    return lsm[np.arange(len(actions)), actions], np.exp(lsm)


def weighted_logprob_grad(params: ParamsLike, idx: np.ndarray, val: np.ndarray,
                          actions: np.ndarray, probs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_n weights[n] * d log pi(a_n|s_n) / dW."""
    coeff = -probs * weights[:, None]
    coeff[np.arange(len(actions)), actions] += weights
    rows = params.policy_weights.shape[0]
    flat = idx.ravel()
    grad = np.empty(params.policy_weights.shape)
    for j in range(grad.shape[1]):
        grad[:, j] = np.bincount(flat, weights=(val * coeff[:, j, None]).ravel(), minlength=rows)
    return grad


def weighted_value_grad(params: ParamsLike, idx: np.ndarray, critic_val: np.ndarray,
                        weights: np.ndarray) -> np.ndarray:
    """sum_n weights[n] * dV(s_n)/dw."""
    return np.bincount(idx.ravel(), weights=(critic_val * weights[:, None]).ravel(),
                       minlength=params.critic_weights.shape[0])


def logits(params: ParamsLike, state: StateFeatures) -> np.ndarray:
    """policy_weights^T . phi(s), evaluated on the active features only."""
    return batch_logits(params, state.indices[None, :], state.values[None, :])[0]


def log_prob(params: ParamsLike, state: StateFeatures, action: int) -> float:
    if not 0 <= int(action) < params.policy_weights.shape[1]:
        raise ContractViolation(f"action {action} outside vocabulary")
    return float(log_softmax(logits(params, state))[int(action)])


def value(params: ParamsLike, state: StateFeatures) -> float:
    return float(batch_values(params, state.indices[None, :], state.critic_values[None, :])[0])


def grad_logprob(params: ParamsLike, state: StateFeatures, action: int) -> np.ndarray:
    """d log pi(a|s) / dW[:, j] = phi(s) * ([j == a] - pi(j|s))."""
    probs = softmax(logits(params, state))[None, :]
    return weighted_logprob_grad(params, state.indices[None, :], state.values[None, :],
                                 np.array([int(action)]), probs, np.ones(1))


def grad_value(params: ParamsLike, state: StateFeatures) -> np.ndarray:
    return weighted_value_grad(params, state.indices[None, :], state.critic_values[None, :], np.ones(1))


# Sampling

def sampling_distribution(z: np.ndarray, temperature: float = 1.0, top_p: float = 1.0,
                          banned: Sequence[int] = ()) -> np.ndarray:
    """Tempered, nucleus-truncated distribution actually drawn from, per row; banned ids get zero mass."""
    scaled = np.array(z, dtype=np.float64) / temperature
    if len(banned):
        scaled[..., list(banned)] = -np.inf
    p = softmax(scaled)
    if top_p < 1.0:
        order = np.argsort(-p, axis=-1, kind="stable")
        sorted_p = np.take_along_axis(p, order, axis=-1)
        keep = (np.cumsum(sorted_p, axis=-1) - sorted_p) < top_p
        mask = np.zeros(p.shape, dtype=bool)
        np.put_along_axis(mask, order, keep, axis=-1)
        p = np.where(mask, p, 0.0)
        p = p / p.sum(axis=-1, keepdims=True)
    return p


def draw_tokens(p: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row: the first token whose cumulative mass exceeds u * total."""
    cdf = np.cumsum(p, axis=-1)
    target = uniforms * cdf[..., -1]
    picks = np.sum(cdf <= target[..., None], axis=-1)
    return np.minimum(picks, p.shape[-1] - 1)


def sample_responses(params: ParamsLike, tasks: Sequence, max_len: int, uniforms: np.ndarray,
                     temperature: float = 1.0, top_p: float = 1.0) -> List[Trajectory]:
    """
    Sample one response per task row in lockstep, step t of row i drawn with uniforms[i, t].

    A row's tokens depend only on its own uniforms, so how rows are grouped
    never changes the result. old_logprobs are the untempered policy
    log-probabilities; PAD is never drawn. Rewards are zero here and are
    written by the grader.
    """
    if max_len < 1:
        raise ContractViolation(f"max_len must be >= 1, got {max_len}")
    if params.encoder is None:
        raise ContractViolation("sampling needs parameters with a feature encoder")
    uniforms = np.asarray(uniforms, dtype=np.float64)
    if uniforms.shape != (len(tasks), max_len):
        raise ContractViolation(f"uniforms shape {uniforms.shape} != ({len(tasks)}, {max_len})")

    vocab, encoder = params.vocab, params.encoder
    n = len(tasks)
    banned = (int(vocab.pad_id),)
    keys = np.array([t.prompt_key for t in tasks], dtype=np.int64)
    prev = np.full(n, int(vocab.query_id), dtype=np.int64)
    actions = np.zeros((n, max_len), dtype=np.int64)
    logps = np.zeros((n, max_len))
    values = np.zeros((n, max_len))
    lengths = np.full(n, max_len)
    alive = np.ones(n, dtype=bool)

    for t in range(max_len):
        rows = np.flatnonzero(alive)
        if rows.size == 0:
            break
        idx, val = encoder.encode_batch(keys[rows], np.full(rows.size, t), prev[rows])
        z = batch_logits(params, idx, val)
        tokens = draw_tokens(sampling_distribution(z, temperature, top_p, banned), uniforms[rows, t])
        actions[rows, t] = tokens
        logps[rows, t] = np.minimum(0.0, log_softmax(z)[np.arange(rows.size), tokens])
        values[rows, t] = batch_values(params, idx, encoder.critic_view(idx))
        prev[rows] = tokens
        ended = rows[tokens == int(vocab.eos_id)]
        lengths[ended] = t + 1
        alive[ended] = False

    trajectories = []
    for i, task in enumerate(tasks):
        T = int(lengths[i])
        trajectories.append(Trajectory(
            task_id=task.task_id,
            prompt_key=task.prompt_key,
            actions=actions[i, :T],
            rewards=np.zeros(T),
            old_logprobs=logps[i, :T],
            values=np.append(values[i, :T], 0.0),
            terminated_by_eos=bool(actions[i, T - 1] == int(vocab.eos_id)),
            family=getattr(task, "family_name", None),
        ))
    return trajectories


def sample_response(params: ParamsLike, task, max_len: int, temperature: float = 1.0,
                    top_p: float = 1.0, rng: np.random.Generator = None) -> Trajectory:
    """Sample tokens until EOS or `max_len`, drawing max_len uniforms from `rng`."""
    if max_len < 1:
        raise ContractViolation(f"max_len must be >= 1, got {max_len}")
    if rng is None:
        raise ContractViolation("sampling needs an explicit random stream")
    return sample_responses(params, [task], max_len, rng.random((1, max_len)), temperature, top_p)[0]


def snapshot(params: ParamsLike) -> PolicySnapshot:
    pw = np.array(params.policy_weights, copy=True)
    cw = np.array(params.critic_weights, copy=True)
    pw.setflags(write=False)
    cw.setflags(write=False)
    return PolicySnapshot(policy_weights=pw, critic_weights=cw, encoder=params.encoder,
                          vocab=params.vocab, version=params.version)


def average_checkpoints(snapshots: Sequence[ParamsLike]) -> PolicyParams:
    """Elementwise uniform mean of every parameter tensor."""
    if not snapshots:
        raise ContractViolation("cannot average an empty list of checkpoints")
    first = snapshots[0]
    for s in snapshots[1:]:
        if (s.policy_weights.shape != first.policy_weights.shape
                or s.critic_weights.shape != first.critic_weights.shape):
            raise ContractViolation("checkpoint shapes differ; cannot average")
        if s.vocab.fingerprint() != first.vocab.fingerprint():
            raise ContractViolation("checkpoints were trained on different vocabularies")

    policy_total = np.zeros_like(first.policy_weights, dtype=np.float64)
    critic_total = np.zeros_like(first.critic_weights, dtype=np.float64)
    for s in snapshots:
        policy_total = policy_total + s.policy_weights
        critic_total = critic_total + s.critic_weights
    n = len(snapshots)
    return PolicyParams(
        policy_weights=policy_total / n,
        critic_weights=critic_total / n,
        encoder=first.encoder,
        vocab=first.vocab,
        version=max(s.version for s in snapshots),
    )


# States of a rollout batch, in the order the PPO update reads them

def gather_states(encoder: FeatureEncoder, vocab: Vocabulary,
                  trajectories: Iterable[Trajectory]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feature indices/values and actions for every step, trajectory-then-timestep order."""
    keys, positions, prevs, actions = [], [], [], []
    for traj in trajectories:
        T = traj.length
        keys.append(np.full(T, traj.prompt_key, dtype=np.int64))
        positions.append(np.arange(T, dtype=np.int64))
        prevs.append(np.concatenate([[int(vocab.query_id)], traj.actions[:-1]]).astype(np.int64))
        actions.append(traj.actions)
    idx, val = encoder.encode_batch(np.concatenate(keys), np.concatenate(positions), np.concatenate(prevs))
    return idx, val, np.concatenate(actions).astype(np.int64)


# Checkpoint files

def checkpoint_dict(params: ParamsLike) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "vocab_hash": params.vocab.fingerprint(),
        "vocab": list(params.vocab.symbols),
        "version": int(params.version),
        "encoder": None if params.encoder is None else asdict(params.encoder),
        "policy_weights": np.asarray(params.policy_weights).tolist(),
        "critic_weights": np.asarray(params.critic_weights).tolist(),
    }


def save_checkpoint(params: ParamsLike, path: str) -> str:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(checkpoint_dict(params), f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
    return str(path)


def load_checkpoint(path: str, vocab: Optional[Vocabulary] = None) -> PolicyParams:
    """Read a checkpoint; reject it when its vocabulary hash differs from `vocab`."""
    vocab = vocab or Vocabulary.default()
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    if data.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {data.get('format_version')!r}")
    if data.get("vocab_hash") != vocab.fingerprint():
        raise CheckpointError(
            f"checkpoint vocabulary {data.get('vocab_hash')} does not match {vocab.fingerprint()}"
        )
    try:
        encoder = None if data["encoder"] is None else FeatureEncoder(**data["encoder"])
        params = PolicyParams(
            policy_weights=np.asarray(data["policy_weights"], dtype=np.float64),
            critic_weights=np.asarray(data["critic_weights"], dtype=np.float64),
            encoder=encoder,
            vocab=vocab,
            version=int(data["version"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"checkpoint {path} is incomplete: {e}") from e

    if params.policy_weights.ndim != 2 or params.policy_weights.shape[1] != len(vocab):
        raise CheckpointError("policy weights do not match the vocabulary size")
    if encoder is not None and encoder.dim != params.feature_dim:
        raise CheckpointError("encoder dimension does not match the stored weights")
    return params


def load_checkpoints(paths: List[str], vocab: Optional[Vocabulary] = None) -> List[PolicyParams]:
    return [load_checkpoint(p, vocab) for p in paths]
