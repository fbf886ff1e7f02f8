"""Sampling-based MPC core: control sampling, importance weighting,
distribution updates, receding-horizon shift, and single-step planning.

One planner instance is owned by exactly one arm agent. Rollout evaluation
is vectorized over the sample batch and may additionally fan out across a
thread pool (MRSTORM_WORKERS); chunk reductions stay per-sample, so results
are bit-identical for any worker count.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cost import CostWeights, GoalSpec, SphereIntent, rollout_totals, stage_costs_batch
from .dynamics import RobotState, rollout_batch
from .kinematics import ArmModel, sphere_centers
from .world import Obstacle

logger = logging.getLogger(__name__)

SIGMA_FLOOR_FRACTION = 0.05

_allocator_tuned = False


def tune_allocator() -> None:
    """Raise glibc's mmap/trim thresholds so large rollout buffers are reused
    instead of being returned to the OS every iteration; the page-fault churn
    otherwise roughly doubles planning time. No-op off glibc."""
    global _allocator_tuned
    if _allocator_tuned:
        return
    _allocator_tuned = True
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 512 * 1024 * 1024)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 512 * 1024 * 1024)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


@dataclass(eq=False)
class Policy:
    """Per-arm control distribution: means and diagonal standard deviations
    over joint accelerations along the horizon."""

    mu: np.ndarray  # (H, n)
    sigma: np.ndarray  # (H, n), > 0
    step: int = 0

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 2:
            raise ValueError("mu and sigma must both be H x n")
        if np.any(self.sigma <= 0):
            raise ValueError("sigma must be positive")

    @classmethod
    def initial(cls, horizon: int, n_joints: int, sigma_init: float) -> "Policy":
        return cls(np.zeros((horizon, n_joints)), np.full((horizon, n_joints), sigma_init))

    @property
    def horizon(self) -> int:
        return int(self.mu.shape[0])


@dataclass
class PlannerConfig:
    horizon: int = 40
    n_rollouts: int = 400
    opt_iters: int = 5
    ema_mean: float = 0.9
    ema_std: float = 0.5
    sigma_init: float = 2.5
    seed: int = 0
    dt: float = 1.0 / 60.0

    def __post_init__(self) -> None:
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        if self.n_rollouts < 1 or self.opt_iters < 1:
            raise ValueError("need at least one rollout and one iteration")
        if not (0.0 < self.ema_mean <= 1.0 and 0.0 < self.ema_std <= 1.0):
            raise ValueError("EMA step sizes must be in (0, 1]")

    @property
    def sigma_floor(self) -> float:
        return SIGMA_FLOOR_FRACTION * self.sigma_init


@dataclass(eq=False)
class RolloutBatch:
    """Sampled controls plus their rolled-out states and costs."""

    controls: np.ndarray  # (N, H, n)
    qs: np.ndarray  # (N, H, n)
    qds: np.ndarray  # (N, H, n)
    stage_costs: np.ndarray  # (N, H)
    totals: np.ndarray  # (N,)


@dataclass(eq=False)
class PlanResult:
    action: np.ndarray
    policy: Policy
    sphere_trajectory: np.ndarray | None  # (H, S, 3) mean-trajectory centers
    best_cost: float
    best_index: int = -1
    batch: RolloutBatch | None = None


def sample_controls(
    policy: Policy, n_rollouts: int, rng: np.random.Generator, a_max: np.ndarray | None = None
) -> np.ndarray:
    """Gaussian perturbations of the policy mean; sample 0 is the exact mean
    so the incumbent plan is always evaluated. Clamped to the acceleration
    limits when given."""
    noise = rng.standard_normal((n_rollouts, *policy.mu.shape)) * policy.sigma
    noise[0] = 0.0
    controls = policy.mu + noise
    if a_max is not None:
        np.clip(controls, -a_max, a_max, out=controls)
    return controls


def compute_weights(totals: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax of negative cost over temperature, max-subtracted for stability."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    totals = np.asarray(totals, dtype=float)
    finite = np.isfinite(totals)
    if not np.any(finite):
        logger.warning("all rollout costs non-finite; falling back to uniform weights")
        return np.full(totals.shape[0], 1.0 / totals.shape[0])
    shifted = (totals - np.min(totals[finite])) / temperature
    w = np.where(finite, np.exp(-np.where(finite, shifted, 0.0)), 0.0)
    return w / np.sum(w)


def weighted_stats(
    controls: np.ndarray, weights: np.ndarray, sigma_floor: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Importance-weighted mean and per-coordinate standard deviation."""
    mu = np.einsum("n,nhk->hk", weights, controls)
    var = np.einsum("n,nhk->hk", weights, (controls - mu) ** 2)
    return mu, np.maximum(np.sqrt(var), sigma_floor)


def update_distribution(
    policy: Policy,
    mu_tilde: np.ndarray,
    sigma_tilde: np.ndarray,
    ema_mean: float,
    ema_std: float,
) -> Policy:
    """Exponential-moving-average step toward the weighted statistics."""
    mu = (1.0 - ema_mean) * policy.mu + ema_mean * mu_tilde
    sigma = (1.0 - ema_std) * policy.sigma + ema_std * sigma_tilde
    return Policy(mu, sigma, policy.step)


def shift(policy: Policy, sigma_init: float | None = None) -> Policy:
    """Receding-horizon shift: drop the executed step, replicate the tail.

    The tail standard deviation is re-widened to at least sigma_init so the
    fresh slot keeps exploring.
    """
    mu = np.vstack([policy.mu[1:], policy.mu[-1:]])
    sigma = np.vstack([policy.sigma[1:], policy.sigma[-1:]])
    if sigma_init is not None:
        sigma[-1] = np.maximum(sigma[-1], sigma_init)
    return Policy(mu, sigma, policy.step)


def _worker_count() -> int:
    raw = os.environ.get("MRSTORM_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("ignoring invalid MRSTORM_WORKERS=%r", raw)
        return 1


def _evaluate_rollouts(
    state: RobotState,
    controls: np.ndarray,
    model: ArmModel,
    goal: GoalSpec,
    obstacles: list[Obstacle],
    intents: list[SphereIntent],
    weights: CostWeights,
    dt: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    def chunk_eval(u: np.ndarray):
        qs, qds = rollout_batch(state.q, state.qd, u, model, dt)
        stage = stage_costs_batch(model, qs, qds, goal, obstacles, intents, weights, dt)
        return qs, qds, stage

    workers = _worker_count()
    n = controls.shape[0]
    if workers == 1 or n < 2 * workers:
        return chunk_eval(controls)
    bounds = np.linspace(0, n, workers + 1, dtype=int)
    chunks = [controls[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(chunk_eval, chunks))
    qs = np.concatenate([p[0] for p in parts])
    qds = np.concatenate([p[1] for p in parts])
    stage = np.concatenate([p[2] for p in parts])
    return qs, qds, stage


def plan_step(
    state: RobotState,
    goal: GoalSpec,
    obstacles: list[Obstacle],
    intents: list[SphereIntent],
    config: PlannerConfig,
    weights: CostWeights,
    policy: Policy,
    model: ArmModel,
    rng: np.random.Generator,
    keep_batch: bool = False,
) -> PlanResult:
    """One control step: K iterations of sample/rollout/cost/update, then the
    first action of the lowest-cost sampled sequence of the final iteration.

    A non-finite state is refused with a zero action (safety stop).
    """
    if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.qd))):
        logger.warning("non-finite state; commanding zero acceleration")
        return PlanResult(np.zeros(model.n_joints), policy, None, float("inf"))

    tune_allocator()
    batch = None
    for _ in range(config.opt_iters):
        controls = sample_controls(policy, config.n_rollouts, rng, model.a_max)
        qs, qds, stage = _evaluate_rollouts(
            state, controls, model, goal, obstacles, intents, weights, config.dt
        )
        totals = rollout_totals(stage, weights.discount)
        w = compute_weights(totals, weights.temperature)
        mu_tilde, sigma_tilde = weighted_stats(controls, w, config.sigma_floor)
        policy = update_distribution(policy, mu_tilde, sigma_tilde, config.ema_mean, config.ema_std)
        batch = RolloutBatch(controls, qs, qds, stage, totals)

    best = int(np.argmin(batch.totals))
    action = batch.controls[best, 0].copy()
    mean_qs, _ = rollout_batch(state.q, state.qd, policy.mu[None], model, config.dt)
    spheres = sphere_centers(model, mean_qs[0])  # (H, S, 3)
    new_policy = Policy(policy.mu, policy.sigma, policy.step + 1)
    return PlanResult(
        action,
        new_policy,
        spheres,
        float(batch.totals[best]),
        best,
        batch if keep_batch else None,
    )


@dataclass(eq=False)
class Planner:
    """Receding-horizon planner owned by one arm: policy + RNG + config."""

    model: ArmModel
    config: PlannerConfig
    weights: CostWeights
    policy: Policy = field(init=False)
    rng: np.random.Generator = field(init=False)

    def __post_init__(self) -> None:
        self.reset()

    def reset(self) -> None:
        self.policy = Policy.initial(self.config.horizon, self.model.n_joints, self.config.sigma_init)
        self.rng = np.random.default_rng(self.config.seed)

    def plan(
        self,
        state: RobotState,
        goal: GoalSpec,
        obstacles: list[Obstacle],
        intents: list[SphereIntent],
        keep_batch: bool = False,
    ) -> PlanResult:
        self.policy = shift(self.policy, self.config.sigma_init)
        result = plan_step(
            state, goal, obstacles, intents, self.config, self.weights,
            self.policy, self.model, self.rng, keep_batch,
        )
        self.policy = result.policy
        return result
