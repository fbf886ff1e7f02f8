"""Stage-cost terms, the masked dynamic-obstacle penalty, goal-distance
prioritization, and discounted trajectory aggregation.

Scalar operations define the contracts; `stage_costs_batch` evaluates the
same terms vectorized over an entire rollout batch (the parallel-query path
used by the planner).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import RobotState
from .kinematics import (
    ArmModel,
    Pose,
    SphereSet,
    _det3,
    compute_spheres,
    fk_frames,
    manipulability,
    matrix_to_quat,
    sphere_centers_from_frames,
)
from .geometry import Obstacle, signed_distance_batch

PRIORITY_DIST_FLOOR = 1e-3
PRIORITY_CLAMP = (1e-3, 1e3)

POSITION_ONLY = "position"
FULL_POSE = "full_pose"


@dataclass
class CostWeights:
    """Weights and hyperparameters of the stage cost and its extensions."""

    pose_weight: float = 60.0
    stop_weight: float = 20.0
    joint_weight: float = 500.0
    manip_weight: float = 20.0
    coll_weight: float = 2000.0
    dyn_weight: float = 5000.0
    safety_buffer: float = 0.3  # m, mask cutoff for shared dynamic bodies
    env_buffer: float = 0.1  # m, mask cutoff for environment obstacles
    trust: float = 3.0  # goal-distance prioritization exponent
    discount: float = 0.98
    temperature: float = 50.0  # importance-weighting temperature
    joint_buffer: float = 0.1  # rad
    goal_tol: float = 0.05  # m
    self_buffer: float = 0.05  # m, self-collision mask cutoff
    rot_weight: float = 0.3  # orientation term inside pose cost
    manip_ref: float = 0.1  # manipulability below this is penalized

    def __post_init__(self) -> None:
        for name in ("pose_weight", "stop_weight", "joint_weight", "manip_weight",
                     "coll_weight", "dyn_weight", "trust"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.safety_buffer <= 0 or self.self_buffer <= 0 or self.env_buffer <= 0:
            raise ValueError("buffers must be positive")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must be in (0, 1]")


@dataclass(eq=False)
class GoalSpec:
    """A world-frame target for the end effector."""

    target: Pose
    kind: str = POSITION_ONLY

    def __post_init__(self) -> None:
        if self.kind not in (POSITION_ONLY, FULL_POSE):
            raise ValueError(f"unknown goal kind {self.kind!r}")

    @classmethod
    def at(cls, position, kind: str = POSITION_ONLY) -> "GoalSpec":
        return cls(Pose.from_position(position), kind)


@dataclass(eq=False)
class SphereIntent:
    """Another body's predicted spheres over the horizon, plus its priority.

    centers is (H, S, 3) for a time-varying prediction or (S, 3) for a body
    held at its current pose. alpha scales this body's collision penalty.
    """

    centers: np.ndarray
    radii: np.ndarray
    alpha: float = 1.0

    def __post_init__(self) -> None:
        self.centers = np.asarray(self.centers, dtype=float)
        self.radii = np.asarray(self.radii, dtype=float).reshape(-1)
        if self.centers.shape[-1] != 3 or self.centers.shape[-2] != self.radii.shape[0]:
            raise ValueError("intent centers/radii shape mismatch")

    def at_step(self, h: int) -> np.ndarray:
        if self.centers.ndim == 2:
            return self.centers
        return self.centers[min(h, self.centers.shape[0] - 1)]


# ---------------------------------------------------------------------------
# Individual stage-cost terms
# ---------------------------------------------------------------------------

def pose_cost(ee: Pose, goal: GoalSpec, rot_weight: float = 0.3) -> float:
    """Euclidean goal distance, plus a quaternion-alignment term for full-pose goals."""
    dist = float(np.linalg.norm(ee.position - goal.target.position))
    if goal.kind == POSITION_ONLY:
        return dist
    dot = abs(float(np.dot(ee.orientation, goal.target.orientation)))
    return dist + rot_weight * (1.0 - min(dot, 1.0))


def stop_cost(qd: np.ndarray, h: int, model: ArmModel, horizon: int, dt: float) -> float:
    """Penalty for speeds too high to brake to rest by the end of the horizon."""
    v_stop = model.a_max * dt * (horizon - 1 - h)
    over = np.maximum(0.0, np.abs(np.asarray(qd, dtype=float)) - v_stop)
    return float(np.sum(over**2))


def joint_limit_cost(q: np.ndarray, model: ArmModel, buffer: float) -> float:
    """Quadratic penetration beyond the buffered joint range, zero inside."""
    q = np.asarray(q, dtype=float)
    low = np.maximum(0.0, (model.q_min + buffer) - q)
    high = np.maximum(0.0, q - (model.q_max - buffer))
    return float(np.sum(low**2 + high**2))


def manip_cost(q: np.ndarray, model: ArmModel, manip_ref: float = 0.1) -> float:
    """Linear ramp from 0 (manipulability >= reference) to 1 (singularity)."""
    return max(0.0, 1.0 - manipulability(model, q) / manip_ref)


def mask(x: float, buffer: float) -> float:
    """Collision mask: 0 beyond the buffer, ramping to 1 at contact and past
    1 under penetration (deeper is costlier)."""
    if buffer <= 0:
        raise ValueError("buffer must be positive")
    return max(0.0, 1.0 - x / buffer)


def _mask_arr(x: np.ndarray, buffer: float) -> np.ndarray:
    return np.maximum(0.0, 1.0 - x / buffer)


def static_collision_cost(spheres: SphereSet, obstacles: list[Obstacle], buffer: float) -> float:
    """Sum of masked closest-sphere distances, one term per obstacle."""
    total = 0.0
    for obstacle in obstacles:
        d = signed_distance_batch(spheres.centers, spheres.radii, obstacle)
        total += mask(float(np.min(d)), buffer)
    return total


def self_collision_cost(spheres: SphereSet, model: ArmModel, buffer: float = 0.05) -> float:
    """Masked minimum sphere distance per non-excluded link pair, summed."""
    if model._self_pair_i.size == 0:
        return 0.0
    ci = spheres.centers[model._self_pair_i]
    cj = spheres.centers[model._self_pair_j]
    d = np.linalg.norm(ci - cj, axis=-1) - (
        spheres.radii[model._self_pair_i] + spheres.radii[model._self_pair_j]
    )
    group_min = np.minimum.reduceat(d, model._self_group_starts)
    return float(np.sum(_mask_arr(group_min, buffer)))


def priority_factor(d_self: float, d_other: float, trust: float) -> float:
    """Goal-distance ratio raised to the trust exponent; the body closer to
    its goal gets a smaller factor and may press on."""
    ratio = max(d_self, PRIORITY_DIST_FLOOR) / max(d_other, PRIORITY_DIST_FLOOR)
    return float(np.clip(ratio**trust, *PRIORITY_CLAMP))


def dynamic_obstacle_cost(
    spheres_h: SphereSet, intents: list[tuple[SphereSet, float]], buffer: float
) -> float:
    """Priority-scaled masked distance to each shared sphere set at one step."""
    total = 0.0
    for other, alpha in intents:
        diff = spheres_h.centers[:, None, :] - other.centers[None, :, :]
        d = np.linalg.norm(diff, axis=-1) - (
            spheres_h.radii[:, None] + other.radii[None, :]
        )
        total += alpha * mask(float(np.min(d)), buffer)
    return total


def stage_cost(
    state: RobotState,
    h: int,
    model: ArmModel,
    obstacles: list[Obstacle],
    intents: list[tuple[SphereSet, float]],
    goal: GoalSpec,
    weights: CostWeights,
    horizon: int,
    dt: float,
) -> float:
    """Weighted sum of all stage-cost terms for one rollout state."""
    _, ee = _ee_pose(model, state.q)
    spheres = compute_spheres(model, state.q)
    value = weights.pose_weight * pose_cost(ee, goal, weights.rot_weight)
    value += weights.stop_weight * stop_cost(state.qd, h, model, horizon, dt)
    value += weights.joint_weight * joint_limit_cost(state.q, model, weights.joint_buffer)
    value += weights.manip_weight * manip_cost(state.q, model, weights.manip_ref)
    value += weights.coll_weight * (
        static_collision_cost(spheres, obstacles, weights.env_buffer)
        + self_collision_cost(spheres, model, weights.self_buffer)
    )
    value += weights.dyn_weight * dynamic_obstacle_cost(spheres, intents, weights.safety_buffer)
    return float(value)


def _ee_pose(model: ArmModel, q: np.ndarray):
    _, _, ee_rot, ee_pos = fk_frames(model, np.asarray(q, dtype=float).reshape(-1))
    return ee_rot, Pose(ee_pos, matrix_to_quat(ee_rot))


def terminal_scale(discount: float, horizon: int) -> float:
    """Scale applied to the last stage cost as a crude infinite-horizon tail."""
    if discount < 1.0:
        return 1.0 / (1.0 - discount)
    return float(horizon)


def trajectory_cost(stage_costs: np.ndarray, terminal: float, discount: float) -> float:
    """Discounted sum of stage costs (h = 0, 1, ...) plus an undiscounted terminal."""
    stage_costs = np.asarray(stage_costs, dtype=float).reshape(-1)
    if stage_costs.shape[0] < 1:
        raise ValueError("need at least one stage cost")
    factors = discount ** np.arange(stage_costs.shape[0])
    return float(np.dot(factors, stage_costs) + terminal)


def rollout_totals(stage: np.ndarray, discount: float) -> np.ndarray:
    """Trajectory totals for an (N, H) stage-cost array: discounted steps
    0..H-2 plus the scaled final stage cost as terminal."""
    n, horizon = stage.shape
    if horizon < 2:
        raise ValueError("horizon must be >= 2")
    factors = discount ** np.arange(horizon - 1)
    terminal = terminal_scale(discount, horizon) * stage[:, -1]
    return stage[:, :-1] @ factors + terminal


# ---------------------------------------------------------------------------
# Vectorized evaluation over a rollout batch (N sequences x H steps)
# ---------------------------------------------------------------------------

def stage_costs_batch(
    model: ArmModel,
    q_batch: np.ndarray,
    qd_batch: np.ndarray,
    goal: GoalSpec,
    obstacles: list[Obstacle],
    intents: list[SphereIntent],
    weights: CostWeights,
    dt: float,
) -> np.ndarray:
    """All stage-cost terms for an (N, H, n) rollout batch; returns (N, H).

    Equals looping stage_cost over every (sample, step) pair.
    """
    n_samples, horizon, _ = q_batch.shape
    flat_q = q_batch.reshape(n_samples * horizon, -1)
    link_rot, link_pos, ee_rot, ee_pos = fk_frames(model, flat_q)

    # goal reaching
    offset = ee_pos - goal.target.position
    dist = np.sqrt(np.einsum("bi,bi->b", offset, offset))
    if goal.kind == FULL_POSE:
        goal_rot = goal.target.rotation_matrix()
        rel_trace = np.einsum("bij,ij->b", ee_rot, goal_rot)
        # |<q_ee, q_goal>| = sqrt((trace(R_ee R_goal^T) + 1) / 4)
        dot = np.sqrt(np.clip((rel_trace + 1.0) / 4.0, 0.0, 1.0))
        dist = dist + weights.rot_weight * (1.0 - dot)
    total = weights.pose_weight * dist.reshape(n_samples, horizon)

    # braking reserve
    v_stop = model.a_max[None, :] * dt * (horizon - 1 - np.arange(horizon))[:, None]
    over = np.maximum(0.0, np.abs(qd_batch) - v_stop[None, :, :])
    total += weights.stop_weight * np.sum(over**2, axis=-1)

    # joint limits
    low = np.maximum(0.0, (model.q_min + weights.joint_buffer) - q_batch)
    high = np.maximum(0.0, q_batch - (model.q_max - weights.joint_buffer))
    total += weights.joint_weight * np.sum(low**2 + high**2, axis=-1)

    # singularity avoidance
    if weights.manip_weight > 0.0:
        axes_w = np.einsum("bnij,nj->bni", link_rot, model.joint_axes)
        cols = np.cross(axes_w, ee_pos[:, None, :] - link_pos)
        jl = np.swapaxes(cols, 1, 2)
        if model.n_joints >= 3:
            det = _det3(jl @ np.swapaxes(jl, 1, 2))
        else:
            det = np.linalg.det(np.swapaxes(jl, 1, 2) @ jl)
        manip = np.sqrt(np.clip(det, 0.0, None))
        ramp = np.maximum(0.0, 1.0 - manip / weights.manip_ref)
        total += weights.manip_weight * ramp.reshape(n_samples, horizon)

    # collision spheres in world frame
    centers = sphere_centers_from_frames(model, link_rot, link_pos)
    radii = model._sphere_radii

    # environment collision (obstacles held at their sensed pose)
    if weights.coll_weight > 0.0:
        coll = np.zeros(n_samples * horizon)
        for obstacle in obstacles:
            d = signed_distance_batch(centers, radii[None, :], obstacle)
            coll += _mask_arr(np.min(d, axis=-1), weights.env_buffer)
        if model._self_pair_i.size:
            diff = centers[:, model._self_pair_i] - centers[:, model._self_pair_j]
            d = np.sqrt(np.einsum("bpi,bpi->bp", diff, diff)) - (
                radii[model._self_pair_i] + radii[model._self_pair_j]
            )
            group_min = np.minimum.reduceat(d, model._self_group_starts, axis=-1)
            coll += np.sum(_mask_arr(group_min, weights.self_buffer), axis=-1)
        total += weights.coll_weight * coll.reshape(n_samples, horizon)

    # shared dynamic bodies, priority scaled
    if intents and weights.dyn_weight > 0.0:
        n_spheres = centers.shape[1]
        # (H, N*S, 3): all rollout spheres grouped per horizon step
        mine = np.ascontiguousarray(
            centers.reshape(n_samples, horizon, n_spheres, 3).transpose(1, 0, 2, 3)
        ).reshape(horizon, n_samples * n_spheres, 3)
        mine_sq = np.einsum("hbi,hbi->hb", mine, mine)
        dyn = np.zeros((horizon, n_samples))
        for intent in intents:
            other = intent.centers
            if other.ndim == 2:
                other = np.broadcast_to(other, (horizon, *other.shape))
            elif other.shape[0] != horizon:
                other = other[np.minimum(np.arange(horizon), other.shape[0] - 1)]
            other = np.ascontiguousarray(other)
            other_sq = np.einsum("hsi,hsi->hs", other, other)
            # squared pair distances via ||a||^2 + ||b||^2 - 2 a.b
            sq = mine_sq[:, :, None] + other_sq[:, None, :] - 2.0 * (mine @ other.transpose(0, 2, 1))
            d = np.sqrt(np.maximum(sq, 0.0)).reshape(horizon, n_samples, n_spheres, -1)
            d -= radii[None, None, :, None] + intent.radii[None, None, None, :]
            dmin = d.min(axis=(2, 3))
            dyn += intent.alpha * _mask_arr(dmin, weights.safety_buffer)
        total += weights.dyn_weight * dyn.T

    return total
