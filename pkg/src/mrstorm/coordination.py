"""Shared intention board, its wire codec, and the per-agent control loop.

The board is the only shared-mutable structure: one writer per slot, many
readers, atomic slot replacement, snapshot reads. Published entries carry
sphere-center trajectories only; radii are registered once per arm.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .cost import GoalSpec, SphereIntent, priority_factor
from .dynamics import RobotState
from .kinematics import ArmModel, ee_position
from .mppi import Planner, PlanResult
from .world import Obstacle

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class BoardEntry:
    """One arm's published plan: mean-trajectory sphere centers over the
    horizon, its current goal distance, and the publisher's step index."""

    arm_id: int
    sphere_trajectory: np.ndarray  # (H, S, 3) centers only
    goal_distance: float
    stamp: int

    def __post_init__(self) -> None:
        self.sphere_trajectory = np.asarray(self.sphere_trajectory, dtype=float)
        if self.sphere_trajectory.ndim != 3 or self.sphere_trajectory.shape[-1] != 3:
            raise ValueError("sphere_trajectory must be (H, S, 3)")
        if self.goal_distance < 0:
            raise ValueError("goal_distance must be nonnegative")

    @property
    def horizon(self) -> int:
        return int(self.sphere_trajectory.shape[0])


class DecodeError(ValueError):
    """Malformed wire entry; `field` names the offending part."""

    def __init__(self, message: str, field_name: str):
        super().__init__(message)
        self.field = field_name


def encode_entry(entry: BoardEntry) -> bytes:
    """One newline-terminated JSON text line per entry."""
    payload = {
        "arm": int(entry.arm_id),
        "stamp": int(entry.stamp),
        "d": float(entry.goal_distance),
        "traj": entry.sphere_trajectory.tolist(),
    }
    return (json.dumps(payload) + "\n").encode()


def decode_entry(data: bytes | str, expected_horizon: int | None = None) -> BoardEntry:
    """Parse one wire line back into a BoardEntry, validating lengths.

    Unknown extra fields are ignored for forward compatibility.
    """
    if isinstance(data, bytes):
        data = data.decode()
    try:
        payload = json.loads(data)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"not valid JSON: {exc}", "line") from exc
    if not isinstance(payload, dict):
        raise DecodeError("entry must be a JSON object", "line")
    for key, kind in (("arm", int), ("stamp", int), ("d", (int, float)), ("traj", list)):
        if key not in payload:
            raise DecodeError(f"missing field '{key}'", key)
        if not isinstance(payload[key], kind) or isinstance(payload[key], bool):
            raise DecodeError(f"field '{key}' has wrong type", key)
    traj = payload["traj"]
    if expected_horizon is not None and len(traj) != expected_horizon:
        raise DecodeError(
            f"traj length != H ({len(traj)} != {expected_horizon})", "traj"
        )
    try:
        arr = np.asarray(traj, dtype=float)
    except ValueError as exc:
        raise DecodeError("field 'traj' is ragged or non-numeric", "traj") from exc
    if arr.ndim != 3 or arr.shape[-1] != 3 or arr.shape[0] == 0:
        raise DecodeError("field 'traj' must be H x S x 3", "traj")
    return BoardEntry(payload["arm"], arr, float(payload["d"]), payload["stamp"])


class IntentionBoard:
    """Per-arm slots holding the latest published intent, plus a radii board.

    Linearizable per slot: publishes swap an immutable entry under a lock, so
    readers see either the old or the new entry, never a mix.
    """

    def __init__(self, n_arms: int):
        if n_arms < 1:
            raise ValueError("board needs at least one arm slot")
        self.n_arms = n_arms
        self._entries: list[BoardEntry | None] = [None] * n_arms
        self._radii: list[np.ndarray | None] = [None] * n_arms
        self._lock = threading.Lock()
        self.trajectory_reads = 0  # instrumentation: read_intents call count

    def _check_arm(self, arm_id: int) -> None:
        if not 0 <= arm_id < self.n_arms:
            raise ValueError(f"arm id {arm_id} out of range")

    def register_radii(self, arm_id: int, radii: np.ndarray) -> None:
        """Record an arm's sphere radii once, before its first control step."""
        self._check_arm(arm_id)
        radii = np.asarray(radii, dtype=float).copy()
        radii.flags.writeable = False
        with self._lock:
            existing = self._radii[arm_id]
            if existing is not None:
                if not np.array_equal(existing, radii):
                    raise ValueError(f"arm {arm_id} already registered different radii")
                return  # idempotent re-registration
            self._radii[arm_id] = radii

    def radii(self, arm_id: int) -> np.ndarray:
        self._check_arm(arm_id)
        with self._lock:
            radii = self._radii[arm_id]
        if radii is None:
            raise KeyError(f"arm {arm_id} has not registered radii")
        return radii

    def publish_intent(self, entry: BoardEntry) -> None:
        """Replace the arm's slot atomically; stale stamps are dropped."""
        self._check_arm(entry.arm_id)
        entry.sphere_trajectory = np.ascontiguousarray(entry.sphere_trajectory)
        entry.sphere_trajectory.flags.writeable = False
        with self._lock:
            current = self._entries[entry.arm_id]
            if current is not None and entry.stamp <= current.stamp:
                logger.warning(
                    "ignoring stale intent for arm %d (stamp %d <= %d)",
                    entry.arm_id, entry.stamp, current.stamp,
                )
                return
            self._entries[entry.arm_id] = entry

    def read_intents(self, self_id: int | None = None) -> list[BoardEntry]:
        """Snapshot of the latest entries of all other arms (missing omitted)."""
        with self._lock:
            self.trajectory_reads += 1
            return [
                e for i, e in enumerate(self._entries)
                if e is not None and i != self_id
            ]


def prioritized_intents(
    entries: list[BoardEntry], board: IntentionBoard, d_self: float, trust: float
) -> list[SphereIntent]:
    """Turn board entries into cost-ready intents with priority factors."""
    return [
        SphereIntent(
            e.sphere_trajectory,
            board.radii(e.arm_id),
            alpha=priority_factor(d_self, e.goal_distance, trust),
        )
        for e in entries
    ]


class ControlEnv(Protocol):
    """World access an agent loop needs; the harness provides snapshots."""

    def sense(self, arm_id: int) -> RobotState: ...

    def goal(self, arm_id: int) -> GoalSpec: ...

    def obstacles(self, arm_id: int) -> list[Obstacle]: ...

    def execute(self, arm_id: int, action: np.ndarray) -> None: ...


@dataclass(eq=False)
class Agent:
    """One arm's planning agent: reads intents, plans, publishes, executes."""

    arm_id: int
    model: ArmModel
    planner: Planner
    board: IntentionBoard
    read_board: bool = True  # static-treatment baselines plan without reading
    last_entry: BoardEntry | None = field(default=None, init=False)

    def __post_init__(self) -> None:
        self.board.register_radii(self.arm_id, self.model.sphere_radii)

    def goal_distance(self, state: RobotState, goal: GoalSpec) -> float:
        return float(np.linalg.norm(ee_position(self.model, state.q) - goal.target.position))

    def plan_once(
        self,
        state: RobotState,
        goal: GoalSpec,
        obstacles: list[Obstacle],
        extra_intents: list[SphereIntent] | None = None,
        keep_batch: bool = False,
    ) -> tuple[PlanResult, float]:
        """Shift + K optimization iterations against the latest shared intents.

        extra_intents lets the harness inject current-pose sphere sets for
        baselines that do not read trajectories.
        """
        d_self = self.goal_distance(state, goal)
        intents = list(extra_intents) if extra_intents else []
        if self.read_board:
            entries = self.board.read_intents(self.arm_id)
            intents.extend(
                prioritized_intents(entries, self.board, d_self, self.planner.weights.trust)
            )
        result = self.planner.plan(state, goal, obstacles, intents, keep_batch)
        return result, d_self

    def publish(self, result: PlanResult, d_self: float, stamp: int) -> None:
        if result.sphere_trajectory is None:
            if self.last_entry is not None:
                logger.warning("arm %d republishing previous intent", self.arm_id)
            return  # keep the previous entry on the board
        entry = BoardEntry(self.arm_id, result.sphere_trajectory, d_self, stamp)
        self.board.publish_intent(entry)
        self.last_entry = entry


def agent_loop(
    arm_id: int,
    model: ArmModel,
    planner: Planner,
    board: IntentionBoard,
    env: ControlEnv,
    t_max: int,
) -> list[dict]:
    """Full per-arm control loop: sense, shift+optimize, publish, execute.

    Runs until t_max or until the environment's stop flag. A planner failure
    brakes (zero acceleration) and leaves the previous intent on the board.
    """
    agent = Agent(arm_id, model, planner, board)
    log = []
    for t in range(1, t_max + 1):
        if getattr(env, "should_stop", lambda: False)():
            break
        state = env.sense(arm_id)
        goal = env.goal(arm_id)
        obstacles = env.obstacles(arm_id)
        try:
            result, d_self = agent.plan_once(state, goal, obstacles)
            agent.publish(result, d_self, stamp=t)
            action = result.action
            best_cost = result.best_cost
        except Exception:
            logger.exception("arm %d planning failed at step %d; braking", arm_id, t)
            action = np.zeros(model.n_joints)
            best_cost = float("inf")
        env.execute(arm_id, action)
        log.append(
            {
                "step": t,
                "q": state.q.copy(),
                "qd": state.qd.copy(),
                "goal": goal.target.position.copy(),
                "action": np.asarray(action, dtype=float).copy(),
                "best_cost": best_cost,
            }
        )
    return log
