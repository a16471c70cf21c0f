"""
Clipped PPO objective, critic regression loss, adaptive-moment optimizer with
linear warmup, and the strict on-policy update schedule.

Sign convention: optimizer_step always descends. The policy is maximized by
descending on the negated clipped objective.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from src.rl.advantage import batch_advantages
from src.rl.policy import (
    PolicyParams,
    batch_logprobs,
    batch_values,
    gather_states,
    weighted_logprob_grad,
    weighted_value_grad,
)
from src.utils.config import TrainConfig
from src.utils.errors import ContractViolation, OnPolicyViolation
from src.utils.types import RolloutBatch

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.95
    base_lr: float = 1e-3
    warmup_steps: int = 50
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def zeros_like(cls, param: np.ndarray, **settings) -> "OptimizerState":
        return cls(first_moment=np.zeros_like(param, dtype=np.float64),
                   second_moment=np.zeros_like(param, dtype=np.float64), **settings)


@dataclass
class OptimizerStates:
    """One optimizer per parameter group."""
    policy: OptimizerState
    critic: OptimizerState


@dataclass(frozen=True)
class UpdateReport:
    policy_objective: float
    value_loss: float
    clip_fraction: float
    grad_norm: float
    policy_steps: int = 1
    critic_steps: int = 0
    policy_lr: float = 0.0
    critic_lr: float = 0.0
    final_value_loss: float = 0.0
    policy_version: int = 0

    def to_dict(self) -> Dict:
        return asdict(self)


def _check_lengths(**arrays) -> int:
    lengths = {name: len(a) for name, a in arrays.items()}
    if len(set(lengths.values())) != 1:
        raise ContractViolation(f"length mismatch: {lengths}")
    return next(iter(lengths.values()))


def _clip_terms(old_lp, new_lp, adv, eps):
    old_lp = np.asarray(old_lp, dtype=np.float64)
    new_lp = np.asarray(new_lp, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    n = _check_lengths(old_lp=old_lp, new_lp=new_lp, adv=adv)
    if eps <= 0:
        raise ContractViolation(f"clip epsilon must be > 0, got {eps}")
    if n == 0:
        raise ContractViolation("clipped objective needs at least one token")
    ratio = np.exp(new_lp - old_lp)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    clipped_active = clipped < unclipped
    return ratio, adv, np.where(clipped_active, clipped, unclipped), clipped_active


def ppo_objective(old_lp, new_lp, adv, eps: float) -> Tuple[float, float]:
    """
    mean_t min(rho_t * A_t, clip(rho_t, 1-eps, 1+eps) * A_t) with rho_t = exp(new - old).

    Returns (objective, fraction of tokens on the clipped branch). No KL or
    entropy terms.
    """
    _, _, terms, active = _clip_terms(old_lp, new_lp, adv, eps)
    return float(np.mean(terms)), float(np.mean(active))


def ppo_objective_grad(old_lp, new_lp, adv, eps: float) -> np.ndarray:
    """d objective / d new_lp; zero wherever the clipped branch is active."""
    ratio, adv, _, active = _clip_terms(old_lp, new_lp, adv, eps)
    return np.where(active, 0.0, ratio * adv) / len(adv)


def value_loss(values, returns) -> float:
    v = np.asarray(values, dtype=np.float64)
    r = np.asarray(returns, dtype=np.float64)
    n = _check_lengths(values=v, returns=r)
    if n == 0:
        raise ContractViolation("value loss needs at least one token")
    return float(np.mean((v - r) ** 2))


def lr_at(state: OptimizerState) -> float:
    """base_lr * min(1, step_count / warmup_steps); no warmup means base_lr throughout."""
    if state.warmup_steps <= 0:
        return state.base_lr
    return state.base_lr * min(1.0, state.step_count / state.warmup_steps)


def optimizer_step(param: np.ndarray, grad: np.ndarray,
                   state: OptimizerState) -> Tuple[np.ndarray, OptimizerState]:
    """
    One bias-corrected adaptive-moment descent step with decoupled weight decay.

    The step counter advances before the learning rate is read, so the first
    step under warmup W uses base_lr / W.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != param.shape or state.first_moment.shape != param.shape:
        raise ContractViolation(f"gradient shape {grad.shape} does not match parameter shape {param.shape}")

    state.step_count += 1
    lr = lr_at(state)
    state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = state.first_moment / (1.0 - state.beta1 ** state.step_count)
    v_hat = state.second_moment / (1.0 - state.beta2 ** state.step_count)

    updated = param - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if state.weight_decay:
        updated = updated - lr * state.weight_decay * param
    return updated, state


def init_optimizer_states(params: PolicyParams, cfg: TrainConfig) -> OptimizerStates:
    shared = dict(beta1=cfg.beta1, beta2=cfg.beta2, warmup_steps=cfg.warmup_steps,
                  eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
    return OptimizerStates(
        policy=OptimizerState.zeros_like(params.policy_weights, base_lr=cfg.effective_policy_lr, **shared),
        critic=OptimizerState.zeros_like(params.critic_weights, base_lr=cfg.effective_critic_lr, **shared),
    )


def train_iteration(batch: RolloutBatch, params: PolicyParams, opt_states: OptimizerStates,
                    cfg: TrainConfig,
                    on_step: Optional[Callable[[str, int], None]] = None) -> UpdateReport:
    """
    Exactly one full-batch policy step, then cfg.critic_steps_per_iter critic
    steps on the same batch. Bumps params.version.

    Args:
        batch: Rollouts sampled under snapshot version batch.policy_version
        params: Live parameters, updated in place
        opt_states: Policy and critic optimizer states
        cfg: Training configuration
        on_step: Optional observer called as on_step("policy"|"critic", step_index)
    """
    if batch.policy_version != params.version:
        raise OnPolicyViolation(
            f"batch sampled under policy version {batch.policy_version}, live version is {params.version}"
        )
    if params.encoder is None:
        raise ContractViolation("training needs parameters with a feature encoder")
    trajectories = batch.trajectories
    if not trajectories:
        raise ContractViolation("cannot train on an empty rollout batch")

    _, advantages, returns = batch_advantages(trajectories, cfg.gamma, cfg.lam)
    idx, val, actions = gather_states(params.encoder, params.vocab, trajectories)
    critic_val = params.encoder.critic_view(idx)
    old_lp = np.concatenate([t.old_logprobs for t in trajectories])

    # Policy: single step over the whole batch
    new_lp, probs = batch_logprobs(params, idx, val, actions)
    objective, clip_fraction = ppo_objective(old_lp, new_lp, advantages, cfg.clip_eps)
    token_weights = ppo_objective_grad(old_lp, new_lp, advantages, cfg.clip_eps)
    objective_grad = weighted_logprob_grad(params, idx, val, actions, probs, token_weights)
    grad_norm = float(np.linalg.norm(objective_grad))
    params.policy_weights, _ = optimizer_step(params.policy_weights, -objective_grad, opt_states.policy)
    policy_lr = lr_at(opt_states.policy)
    if on_step:
        on_step("policy", 0)

    # Critic: full-batch regression steps towards the empirical returns
    n = len(returns)
    first_loss = 0.0
    for k in range(cfg.critic_steps_per_iter):
        v = batch_values(params, idx, critic_val)
        if k == 0:
            first_loss = value_loss(v, returns)
        critic_grad = weighted_value_grad(params, idx, critic_val, 2.0 * (v - returns) / n)
        params.critic_weights, _ = optimizer_step(params.critic_weights, critic_grad, opt_states.critic)
        if on_step:
            on_step("critic", k)

    params.version += 1
    report = UpdateReport(
        policy_objective=objective,
        value_loss=first_loss,
        clip_fraction=clip_fraction,
        grad_norm=grad_norm,
        policy_steps=1,
        critic_steps=cfg.critic_steps_per_iter,
        policy_lr=policy_lr,
        critic_lr=lr_at(opt_states.critic),
        final_value_loss=value_loss(batch_values(params, idx, critic_val), returns),
        policy_version=params.version,
    )
    logger.debug("iteration %d update: %s", batch.iteration, report)
    return report
