"""Approximate forward model for rollouts: double-integrator joint dynamics.

Joint accelerations are the control input. Velocity and position limits are
clamped in the model itself (soft-limit penalties live in the cost module).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .kinematics import ArmModel

if TYPE_CHECKING:
    from .mppi import Policy


@dataclass(eq=False)
class RobotState:
    """Joint positions/velocities plus the simulation step index."""

    q: np.ndarray
    qd: np.ndarray
    t: int = 0

    def __post_init__(self) -> None:
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        self.qd = np.asarray(self.qd, dtype=float).reshape(-1)
        if self.q.shape != self.qd.shape:
            raise ValueError("q and qd must have the same length")

    @classmethod
    def rest(cls, q: np.ndarray, t: int = 0) -> "RobotState":
        q = np.asarray(q, dtype=float)
        return cls(q, np.zeros_like(q), t)


@dataclass(eq=False)
class ControlSequence:
    """H x n joint accelerations applied at a fixed control period."""

    u: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        self.u = np.asarray(self.u, dtype=float)
        if self.u.ndim != 2 or self.u.shape[0] < 1:
            raise ValueError("control sequence must be a nonempty H x n array")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def horizon(self) -> int:
        return int(self.u.shape[0])


def step(state: RobotState, u_h: np.ndarray, model: ArmModel, dt: float) -> RobotState:
    """Semi-implicit Euler step with velocity/position clamping.

    A position clamp zeroes the corresponding joint velocity (the joint hits
    its stop and stays there).
    """
    u_h = np.asarray(u_h, dtype=float).reshape(-1)
    if u_h.shape[0] != model.n_joints or state.q.shape[0] != model.n_joints:
        raise ValueError("dimension mismatch")
    if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.qd)) and np.all(np.isfinite(u_h))):
        raise ValueError("non-finite state or control")
    qd = np.clip(state.qd + u_h * dt, -model.v_max, model.v_max)
    q_free = state.q + qd * dt
    q = np.clip(q_free, model.q_min, model.q_max)
    qd = np.where(q != q_free, 0.0, qd)
    return RobotState(q, qd, state.t + 1)


def rollout(state: RobotState, seq: ControlSequence, model: ArmModel) -> list[RobotState]:
    """Iterated step(); element h is the state after controls u_0..u_h."""
    out = []
    current = state
    for h in range(seq.horizon):
        current = step(current, seq.u[h], model, seq.dt)
        out.append(current)
    return out


def rollout_batch(
    q0: np.ndarray, qd0: np.ndarray, controls: np.ndarray, model: ArmModel, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized rollout of N control sequences from a common start state.

    controls: (N, H, n). Returns positions and velocities with shape (N, H, n).
    Bitwise identical to looping step() per sequence.
    """
    n_samples, horizon, _ = controls.shape
    q = np.broadcast_to(q0, (n_samples, model.n_joints)).copy()
    qd = np.broadcast_to(qd0, (n_samples, model.n_joints)).copy()
    qs = np.empty_like(controls)
    qds = np.empty_like(controls)
    for h in range(horizon):
        qd = np.clip(qd + controls[:, h] * dt, -model.v_max, model.v_max)
        q_free = q + qd * dt
        q = np.clip(q_free, model.q_min, model.q_max)
        qd = np.where(q != q_free, 0.0, qd)
        qs[:, h] = q
        qds[:, h] = qd
    return qs, qds


def mean_trajectory(policy: "Policy", state: RobotState, model: ArmModel, dt: float) -> list[RobotState]:
    """Rollout of the policy mean (zero sampling noise)."""
    return rollout(state, ControlSequence(policy.mu, dt), model)
