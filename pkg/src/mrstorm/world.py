"""Obstacles, goal management, and deterministic scenario generators.

Scenarios place arms on the corners of a 1 m^2 square and schedule cuboid
obstacles around four task families (reaching easy/hard, following,
bin loading) at five difficulty levels. Everything is a pure function of
(task, level, seed); scenario files serialize the full schedule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .cost import GoalSpec
from .geometry import (  # re-exported: the obstacle/query surface lives here
    BOX,
    SPHERE,
    Obstacle,
    signed_distance,
    signed_distance_batch,
    sphere_pair_distance,
)
from .kinematics import ArmModel, Pose, quat_from_axis_angle

REACHING_EASY = "reaching_easy"
REACHING_HARD = "reaching_hard"
FOLLOWING = "following"
BIN_LOADING = "bin_loading"
TASKS = (REACHING_EASY, REACHING_HARD, FOLLOWING, BIN_LOADING)

SQUARE_CENTER = np.array([0.5, 0.5])
SQUARE_CORNERS = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
WORKSPACE_LO = np.array([-0.6, -0.6, -0.25])
WORKSPACE_HI = np.array([1.6, 1.6, 1.2])

GOAL_TIMEOUT_S = 1.0  # reaching goals are resampled after this long
SCHEMA_VERSION = 1


def advance_obstacles(obstacles: list[Obstacle], dt: float) -> list[Obstacle]:
    """Constant-velocity drift for dynamic obstacles; statics pass through."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    out = []
    for obs in obstacles:
        if not obs.dynamic or not np.any(obs.velocity):
            out.append(obs)
            continue
        moved = Obstacle(
            obs.shape,
            Pose(obs.pose.position + obs.velocity * dt, obs.pose.orientation),
            radius=obs.radius,
            half_extents=None if obs.half_extents is None else obs.half_extents.copy(),
            velocity=obs.velocity.copy(),
            dynamic=True,
            name=obs.name,
        )
        out.append(moved)
    return out


def in_workspace(position: np.ndarray) -> bool:
    return bool(np.all(position >= WORKSPACE_LO) and np.all(position <= WORKSPACE_HI))


@dataclass(eq=False)
class ScheduledObstacle:
    """An obstacle that enters the world at a given step (0 = present at start)."""

    obstacle: Obstacle
    spawn_step: int = 0
    slot: str = ""


class ObstacleTimeline:
    """Runtime obstacle manager: spawns on schedule, drifts, despawns out of
    bounds. Deterministic because the full schedule is precomputed."""

    def __init__(self, scheduled: list[ScheduledObstacle], dt: float):
        self._pending = sorted(scheduled, key=lambda s: (s.spawn_step, s.slot, s.obstacle.name))
        self.dt = dt
        self.active: list[Obstacle] = []
        self._spawned = 0
        self.advance(0)

    def advance(self, t: int) -> list[Obstacle]:
        """Advance to step t: drift actives, cull leavers, admit new spawns."""
        self.active = [
            obs for obs in advance_obstacles(self.active, self.dt if t > 0 else 0.0)
            if in_workspace(obs.pose.position)
        ]
        while self._spawned < len(self._pending) and self._pending[self._spawned].spawn_step <= t:
            self.active.append(self._pending[self._spawned].obstacle)
            self._spawned += 1
        return self.active


# ---------------------------------------------------------------------------
# Arm presets
# ---------------------------------------------------------------------------

def _spheres_along(vec: np.ndarray, count: int, radius: float) -> list[tuple[np.ndarray, float]]:
    vec = np.asarray(vec, dtype=float)
    fractions = (np.arange(count) + 0.5) / count
    return [(f * vec, radius) for f in fractions]


def desk_arm(
    base_position=(0.0, 0.0, 0.0), base_yaw: float = 0.0, spheres_per_link: int = 3,
    name: str = "desk6",
) -> ArmModel:
    """Six-joint revolute arm with 0.85 m reach, mounted at base_position."""
    offsets = [
        Pose.from_position([0.0, 0.0, 0.10]),  # riser to shoulder-pan joint
        Pose.from_position([0.0, 0.0, 0.06]),  # shoulder lift
        Pose.from_position([0.35, 0.0, 0.0]),  # elbow
        Pose.from_position([0.30, 0.0, 0.0]),  # wrist 1
        Pose.from_position([0.08, 0.0, 0.0]),  # wrist 2
        Pose.from_position([0.07, 0.0, 0.0]),  # wrist 3
    ]
    axes = np.array([
        [0.0, 0.0, 1.0],
        [0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 1.0, 0.0],
    ])
    segments = [offsets[1].position, offsets[2].position, offsets[3].position,
                offsets[4].position, offsets[5].position, np.array([0.05, 0.0, 0.0])]
    link_spheres = []
    for seg in segments:
        length = np.linalg.norm(seg)
        count = spheres_per_link if length > 0.15 else 1
        link_spheres.append(_spheres_along(seg, count, 0.05))
    return ArmModel(
        joint_offsets=offsets,
        joint_axes=axes,
        base_pose=Pose(np.asarray(base_position, dtype=float),
                       quat_from_axis_angle([0, 0, 1], base_yaw)),
        ee_offset=Pose.from_position([0.05, 0.0, 0.0]),
        q_min=np.array([-2 * np.pi, -np.pi, -np.pi, -np.pi, -2 * np.pi, -np.pi]),
        q_max=np.array([2 * np.pi, np.pi, np.pi, np.pi, 2 * np.pi, np.pi]),
        v_max=np.full(6, 3.14),
        a_max=np.full(6, 10.0),
        link_spheres=link_spheres,
        self_collision_exclusions={(3, 5)},  # wrist links are structurally close
        name=name,
        reach=0.85,
        home_q=np.array([0.0, -1.3, 2.2, -0.9, 0.0, 0.0]),
    )


def planar_arm(
    base_position=(0.0, 0.0, 0.0), base_yaw: float = 0.0, spheres_per_link: int = 3,
    lengths=(0.3, 0.25, 0.2), name: str = "planar3",
    v_max: float = 4.0, a_max: float = 10.0, thickness: float = 0.04,
) -> ArmModel:
    """Three-joint planar chain (all axes +z), for fast tests."""
    n = len(lengths)
    offsets = [Pose.identity()] + [Pose.from_position([l, 0.0, 0.0]) for l in lengths[:-1]]
    link_spheres = [
        _spheres_along(np.array([l, 0.0, 0.0]), spheres_per_link, thickness) for l in lengths
    ]
    return ArmModel(
        joint_offsets=offsets,
        joint_axes=np.tile([0.0, 0.0, 1.0], (n, 1)),
        base_pose=Pose(np.asarray(base_position, dtype=float),
                       quat_from_axis_angle([0, 0, 1], base_yaw)),
        ee_offset=Pose.from_position([lengths[-1], 0.0, 0.0]),
        q_min=-np.full(n, np.pi),
        q_max=np.full(n, np.pi),
        v_max=np.full(n, v_max),
        a_max=np.full(n, a_max),
        link_spheres=link_spheres,
        name=name,
        reach=float(sum(lengths)),
        home_q=np.array([0.5, 0.8, 0.6] + [0.0] * (n - 3)) if n >= 3 else np.zeros(n),
    )


ARM_PRESETS = {"desk6": desk_arm, "planar3": planar_arm}


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------

def default_task_params(task: str) -> dict:
    params = {
        "base_height": 0.3,
        "goal_z": [0.15, 0.55],
        "easy_radius": [0.3, 0.6],
        "easy_azimuth_spread": 1.8,  # rad, around the interior diagonal
        "hard_spread": 0.15,  # m, ball around the goal anchor
        "hard_center_pull": 0.5,  # anchor = base + pull * (center - base)
        "obstacle_speed": 0.25,  # m/s
        "static_half_extent": [0.04, 0.09],
        "static_pillar_height": [0.15, 0.3],
        "dynamic_half_extent": [0.04, 0.08],
        "include_table": True,
        "reach_margin": 0.95,
    }
    if task == FOLLOWING:
        params["target_speed"] = 0.06  # m/s
    if task == BIN_LOADING:
        params.update({
            "bin_center": [0.5, 0.5],
            "bin_cell": 0.10,  # m, square cell side
            "bin_top": 0.06,
            "drop_height": 0.35,  # above the cell center
            "pick_distance": 0.45,  # behind the base
            "pick_z": 0.2,
        })
    return params


@dataclass(eq=False)
class Scenario:
    task: str
    level: int
    seed: int
    dt: float
    t_max: int
    arms: list[ArmModel]
    obstacles: list[ScheduledObstacle]
    task_params: dict

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if not 1 <= self.level <= 5:
            raise ValueError("level must be in 1..5")
        positions = [tuple(np.round(a.base_pose.position, 9)) for a in self.arms]
        if len(set(positions)) != len(positions):
            raise ValueError("arm bases must be distinct")

    def timeline(self) -> ObstacleTimeline:
        return ObstacleTimeline(self.obstacles, self.dt)


def _rng_streams(seed: int) -> dict[str, np.random.Generator]:
    root = np.random.SeedSequence(seed)
    obstacles, goals, layout = root.spawn(3)
    return {
        "obstacles": np.random.default_rng(obstacles),
        "goals": np.random.default_rng(goals),
        "layout": np.random.default_rng(layout),
    }


def _table_obstacle() -> ScheduledObstacle:
    table = Obstacle(
        BOX,
        Pose.from_position([0.5, 0.5, -0.05]),
        half_extents=np.array([1.1, 1.1, 0.05]),
        name="table",
    )
    return ScheduledObstacle(table, 0, slot="table")


def _bin_obstacle(params: dict) -> ScheduledObstacle:
    cell = params["bin_cell"]
    top = params["bin_top"]
    center = params["bin_center"]
    box = Obstacle(
        BOX,
        Pose.from_position([center[0], center[1], top / 2]),
        half_extents=np.array([cell + 0.01, cell + 0.01, top / 2]),
        name="bin",
    )
    return ScheduledObstacle(box, 0, slot="bin")


def _exit_step(position: np.ndarray, velocity: np.ndarray, dt: float) -> int:
    """Steps until constant-velocity motion leaves the workspace bounds."""
    steps = np.inf
    for axis in range(3):
        v = velocity[axis] * dt
        if v > 0:
            steps = min(steps, (WORKSPACE_HI[axis] - position[axis]) / v)
        elif v < 0:
            steps = min(steps, (position[axis] - WORKSPACE_LO[axis]) / -v)
    return int(np.ceil(steps)) + 1 if np.isfinite(steps) else 10**9


def _static_entries(rng: np.random.Generator, count: int, params: dict,
                    bases: list[np.ndarray]) -> list[ScheduledObstacle]:
    entries = []
    lo, hi = params["static_half_extent"]
    pil_lo, pil_hi = params["static_pillar_height"]
    for k in range(count):
        for _ in range(100):
            xy = rng.uniform(0.25, 0.75, size=2)
            if all(np.linalg.norm(xy - b[:2]) > 0.28 for b in bases):
                break
        half = np.array([rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(pil_lo, pil_hi)])
        obs = Obstacle(BOX, Pose.from_position([xy[0], xy[1], half[2]]),
                       half_extents=half, name=f"static{k}")
        entries.append(ScheduledObstacle(obs, 0, slot=f"static{k}"))
    return entries


def _dynamic_entries(rng: np.random.Generator, count: int, params: dict,
                     t_max: int, dt: float) -> list[ScheduledObstacle]:
    """Per slot, a precomputed spawn/respawn schedule covering the trial."""
    entries = []
    speed = params["obstacle_speed"]
    lo, hi = params["dynamic_half_extent"]
    for k in range(count):
        t = int(rng.integers(1, 40))
        cycle = 0
        while t <= t_max:
            azimuth = rng.uniform(0, 2 * np.pi)
            start = np.array([
                SQUARE_CENTER[0] + 1.0 * np.cos(azimuth),
                SQUARE_CENTER[1] + 1.0 * np.sin(azimuth),
                rng.uniform(0.12, 0.5),
            ])
            target = np.array([
                rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.15, 0.45),
            ])
            direction = target - start
            velocity = speed * direction / np.linalg.norm(direction)
            half = rng.uniform(lo, hi, size=3)
            obs = Obstacle(BOX, Pose.from_position(start), half_extents=half,
                           velocity=velocity, dynamic=True, name=f"dyn{k}_{cycle}")
            entries.append(ScheduledObstacle(obs, t, slot=f"dyn{k}"))
            t += _exit_step(start, velocity, dt) + int(rng.integers(30, 90))
            cycle += 1
    return entries


def make_scenario(
    task: str,
    level: int,
    seed: int,
    n_arms: int = 4,
    arm_preset: str = "desk6",
    t_max: int = 500,
    dt: float = 1.0 / 60.0,
    spheres_per_link: int = 3,
) -> Scenario:
    """Deterministic scenario: same (task, level, seed) gives byte-identical
    schedules and goal streams."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    if not 1 <= level <= 5:
        raise ValueError("level must be in 1..5")
    if not 1 <= n_arms <= 4:
        raise ValueError("n_arms must be in 1..4")
    params = default_task_params(task)
    params["arm_preset"] = arm_preset
    params["n_arms"] = n_arms
    if arm_preset == "planar3":
        if task == BIN_LOADING:
            raise ValueError("bin loading needs an arm that can change height")
        # planar arms work at a fixed height: goals must live in that plane
        params["goal_z"] = [params["base_height"], params["base_height"]]
    streams = _rng_streams(seed)

    corner_ids = {1: [0], 2: [0, 1], 3: [0, 1, 2], 4: [0, 1, 2, 3]}[n_arms]
    factory = ARM_PRESETS[arm_preset]
    base_z = params["base_height"]
    arms, bases = [], []
    for i, cid in enumerate(corner_ids):
        corner = np.array([*SQUARE_CORNERS[cid], base_z])
        to_center = np.arctan2(SQUARE_CENTER[1] - corner[1], SQUARE_CENTER[0] - corner[0])
        arms.append(factory(corner, to_center, spheres_per_link, name=f"{arm_preset}_{i}"))
        bases.append(corner)

    obstacles: list[ScheduledObstacle] = []
    if params.get("include_table") and arm_preset == "desk6":
        obstacles.append(_table_obstacle())
    if task == BIN_LOADING:
        obstacles.append(_bin_obstacle(params))
    else:
        n_dynamic = (level + 1) // 2
        n_static = level // 2
        obstacles.extend(_static_entries(streams["layout"], n_static, params, bases))
        obstacles.extend(_dynamic_entries(streams["obstacles"], n_dynamic, params, t_max, dt))

    return Scenario(task, level, seed, dt, t_max, arms, obstacles, params)


def scheduled_obstacle_slots(scenario: Scenario) -> set[str]:
    """Distinct obstacle slots excluding fixtures (table, bin)."""
    return {s.slot for s in scenario.obstacles if s.slot not in ("table", "bin")}


# ---------------------------------------------------------------------------
# Task state: per-arm goals, timers, and score counters
# ---------------------------------------------------------------------------

BIN_CONCURRENCY = {1: 1, 2: 2, 3: 4, 4: 2, 5: 4}
BIN_DISTINCT_CELLS = {1: True, 2: True, 3: True, 4: False, 5: False}

TO_PICK = "to_pick"
WAIT_SLOT = "wait_slot"
TO_BIN = "to_bin"


@dataclass(eq=False)
class TaskState:
    """Goal automaton state for one trial."""

    task: str
    level: int
    goals: list[GoalSpec]
    rng: np.random.Generator
    params: dict
    bases: list[np.ndarray]
    reaches: list[float]
    static_obstacles: list[Obstacle]
    timers: list[int] = field(default_factory=list)
    counters: list[int] = field(default_factory=list)
    goal_velocities: list[np.ndarray] = field(default_factory=list)
    phases: list[str] = field(default_factory=list)
    cells: list[int | None] = field(default_factory=list)
    events: list[tuple[int, int, str]] = field(default_factory=list)  # (t, arm, kind)

    @property
    def n_arms(self) -> int:
        return len(self.goals)

    def score(self) -> int:
        return int(sum(self.counters))


def _sample_easy_goal(rng, base, reach, params, static_obstacles, arm_index=0) -> np.ndarray:
    interior = np.arctan2(SQUARE_CENTER[1] - base[1], SQUARE_CENTER[0] - base[0])
    spread = params["easy_azimuth_spread"]
    r_lo, r_hi = params["easy_radius"]
    z_lo, z_hi = params["goal_z"]
    margin = params["reach_margin"]
    for _ in range(200):
        azimuth = interior + rng.uniform(-spread / 2, spread / 2)
        radius = rng.uniform(r_lo, min(r_hi, margin * reach))
        z = rng.uniform(z_lo, z_hi)
        goal = np.array([base[0] + radius * np.cos(azimuth),
                         base[1] + radius * np.sin(azimuth), z])
        if np.linalg.norm(goal - base) > margin * reach:
            continue
        if _clear_of_obstacles(goal, static_obstacles):
            return goal
    return goal  # accept the last candidate if rejection kept failing


def _sample_hard_goal(rng, base, reach, params, static_obstacles, arm_index=0) -> np.ndarray:
    anchors = params.get("hard_anchor_xy")
    if anchors is not None:
        mid = np.asarray(anchors[arm_index], dtype=float)
    else:
        pull = params.get("hard_center_pull", 0.5)
        mid = base[:2] + pull * (SQUARE_CENTER - base[:2])
    spread = params["hard_spread"]
    z_lo, z_hi = params["goal_z"]
    margin = params["reach_margin"]
    for _ in range(200):
        xy = mid + rng.uniform(-spread, spread, size=2)
        goal = np.array([xy[0], xy[1], rng.uniform(z_lo, min(z_hi, 0.45))])
        if np.linalg.norm(goal - base) > margin * reach:
            continue
        if _clear_of_obstacles(goal, static_obstacles):
            return goal
    return goal


def _clear_of_obstacles(point: np.ndarray, obstacles: list[Obstacle], clearance=0.08) -> bool:
    return all(signed_distance(point, 0.0, obs) > clearance
               for obs in obstacles if obs.name != "table")


def _bin_cell_centers(params: dict) -> np.ndarray:
    cx, cy = params["bin_center"]
    half = params["bin_cell"] / 2
    return np.array([
        [cx - half, cy - half], [cx - half, cy + half],
        [cx + half, cy - half], [cx + half, cy + half],
    ])


def _bin_pick_spot(base: np.ndarray, params: dict) -> np.ndarray:
    away = base[:2] - SQUARE_CENTER
    away = away / np.linalg.norm(away)
    xy = base[:2] + params["pick_distance"] * away
    return np.array([xy[0], xy[1], params["pick_z"]])


def _bin_drop_point(cell: int, params: dict) -> np.ndarray:
    xy = _bin_cell_centers(params)[cell]
    return np.array([xy[0], xy[1], params["bin_top"] + params["drop_height"]])


def make_task_state(scenario: Scenario) -> TaskState:
    """Initial goals, timers, and counters for a scenario (seeded stream)."""
    rng = _rng_streams(scenario.seed)["goals"]
    params = scenario.task_params
    bases = [a.base_pose.position.copy() for a in scenario.arms]
    reaches = [float(a.reach) for a in scenario.arms]
    statics = [s.obstacle for s in scenario.obstacles
               if not s.obstacle.dynamic and s.obstacle.name not in ("table",)]
    state = TaskState(scenario.task, scenario.level, [], rng, params, bases, reaches, statics)
    n = len(scenario.arms)
    state.timers = [0] * n
    state.counters = [0] * n
    if scenario.task == BIN_LOADING:
        state.phases = [TO_PICK] * n
        state.cells = [None] * n
        state.goals = [GoalSpec.at(_bin_pick_spot(bases[i], params)) for i in range(n)]
    elif scenario.task == FOLLOWING:
        state.goals = [
            GoalSpec.at(_sample_easy_goal(rng, bases[i], reaches[i], params, statics))
            for i in range(n)
        ]
        state.goal_velocities = [_sample_target_velocity(rng, params) for _ in range(n)]
    else:
        sampler = _sample_easy_goal if scenario.task == REACHING_EASY else _sample_hard_goal
        state.goals = [
            GoalSpec.at(sampler(rng, bases[i], reaches[i], params, statics, arm_index=i))
            for i in range(n)
        ]
    return state


def _sample_target_velocity(rng, params) -> np.ndarray:
    azimuth = rng.uniform(0, 2 * np.pi)
    return params["target_speed"] * np.array([np.cos(azimuth), np.sin(azimuth), 0.0])


def update_goals(state: TaskState, ee_positions: list[np.ndarray], t: int, dt: float,
                 goal_tol: float = 0.05) -> TaskState:
    """Advance the per-task goal automaton one step; mutates and returns state."""
    if state.task in (REACHING_EASY, REACHING_HARD):
        _update_reaching(state, ee_positions, t, dt, goal_tol)
    elif state.task == FOLLOWING:
        _update_following(state, ee_positions, t, dt)
    else:
        _update_bin(state, ee_positions, t, goal_tol)
    return state


def _update_reaching(state, ee_positions, t, dt, goal_tol) -> None:
    sampler = _sample_easy_goal if state.task == REACHING_EASY else _sample_hard_goal
    timeout_steps = max(1, int(round(GOAL_TIMEOUT_S / dt)))
    for i in range(state.n_arms):
        state.timers[i] += 1
        reached = np.linalg.norm(ee_positions[i] - state.goals[i].target.position) <= goal_tol
        if reached:
            state.counters[i] += 1
            state.events.append((t, i, "goal_reached"))
        if reached or state.timers[i] >= timeout_steps:
            state.goals[i] = GoalSpec.at(
                sampler(state.rng, state.bases[i], state.reaches[i], state.params,
                        state.static_obstacles, arm_index=i))
            state.timers[i] = 0


def _update_following(state, ee_positions, t, dt) -> None:
    for i in range(state.n_arms):
        pos = state.goals[i].target.position + state.goal_velocities[i] * dt
        drifted = np.linalg.norm(pos - state.bases[i]) > state.reaches[i]
        too_low = pos[2] < 0.1
        if drifted or too_low:
            pos = _sample_easy_goal(state.rng, state.bases[i], state.reaches[i],
                                    state.params, state.static_obstacles)
            state.goal_velocities[i] = _sample_target_velocity(state.rng, state.params)
            state.events.append((t, i, "target_reset"))
        state.goals[i] = GoalSpec.at(pos)


def _bin_slots_in_use(state) -> list[int]:
    return [i for i in range(state.n_arms) if state.phases[i] == TO_BIN]


def _update_bin(state, ee_positions, t, goal_tol) -> None:
    params = state.params
    level = state.level
    for i in range(state.n_arms):
        at_goal = np.linalg.norm(ee_positions[i] - state.goals[i].target.position) <= goal_tol
        if state.phases[i] == TO_PICK and at_goal:
            state.phases[i] = WAIT_SLOT  # picked (instantaneous attach)
            state.events.append((t, i, "picked"))
        elif state.phases[i] == TO_BIN and at_goal:
            state.counters[i] += 1  # dropped (instantaneous detach)
            state.events.append((t, i, "dropped"))
            state.phases[i] = TO_PICK
            state.cells[i] = None
            state.goals[i] = GoalSpec.at(_bin_pick_spot(state.bases[i], params))
    # grant bin access within the level's concurrency rules
    in_use = _bin_slots_in_use(state)
    capacity = BIN_CONCURRENCY[level] - len(in_use)
    if capacity <= 0:
        return
    taken_cells = {state.cells[i] for i in in_use}
    for i in range(state.n_arms):
        if capacity <= 0:
            break
        if state.phases[i] != WAIT_SLOT:
            continue
        if BIN_DISTINCT_CELLS[level]:
            free = [c for c in range(4) if c not in taken_cells]
            if not free:
                continue
            cell = int(free[int(state.rng.integers(len(free)))])
        else:
            cell = int(state.rng.integers(4))
        state.phases[i] = TO_BIN
        state.cells[i] = cell
        taken_cells.add(cell)
        state.goals[i] = GoalSpec.at(_bin_drop_point(cell, params))
        state.events.append((t, i, "cell_assigned"))
        capacity -= 1


# ---------------------------------------------------------------------------
# Scenario JSON schema (strict: unknown fields rejected)
# ---------------------------------------------------------------------------

def _require_keys(obj: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ValueError(f"unknown fields in {where}: {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ValueError(f"missing fields in {where}: {sorted(missing)}")


def _pose_to_json(pose: Pose) -> dict:
    return {"position": pose.position.tolist(), "orientation": pose.orientation.tolist()}


def _pose_from_json(obj: dict, where: str) -> Pose:
    _require_keys(obj, {"position", "orientation"}, {"position", "orientation"}, where)
    return Pose(np.asarray(obj["position"]), np.asarray(obj["orientation"]))


def _arm_to_json(arm: ArmModel) -> dict:
    return {
        "name": arm.name,
        "base_pose": _pose_to_json(arm.base_pose),
        "ee_offset": _pose_to_json(arm.ee_offset),
        "joints": [
            {"offset": _pose_to_json(off), "axis": axis.tolist()}
            for off, axis in zip(arm.joint_offsets, arm.joint_axes)
        ],
        "q_min": arm.q_min.tolist(),
        "q_max": arm.q_max.tolist(),
        "v_max": arm.v_max.tolist(),
        "a_max": arm.a_max.tolist(),
        "link_spheres": [
            [[*center.tolist(), radius] for center, radius in link]
            for link in arm.link_spheres
        ],
        "self_collision_exclusions": sorted(map(list, arm.self_collision_exclusions)),
        "reach": arm.reach,
        "home_q": arm.home_q.tolist(),
    }


def _arm_from_json(obj: dict) -> ArmModel:
    allowed = {"name", "base_pose", "ee_offset", "joints", "q_min", "q_max",
               "v_max", "a_max", "link_spheres", "self_collision_exclusions", "reach",
               "home_q"}
    _require_keys(obj, allowed, allowed - {"name", "reach", "home_q"}, "arm")
    joints = obj["joints"]
    return ArmModel(
        joint_offsets=[_pose_from_json(j["offset"], "joint offset") for j in joints],
        joint_axes=np.asarray([j["axis"] for j in joints]),
        base_pose=_pose_from_json(obj["base_pose"], "base_pose"),
        ee_offset=_pose_from_json(obj["ee_offset"], "ee_offset"),
        q_min=np.asarray(obj["q_min"]),
        q_max=np.asarray(obj["q_max"]),
        v_max=np.asarray(obj["v_max"]),
        a_max=np.asarray(obj["a_max"]),
        link_spheres=[
            [(np.asarray(s[:3]), float(s[3])) for s in link]
            for link in obj["link_spheres"]
        ],
        self_collision_exclusions={tuple(p) for p in obj["self_collision_exclusions"]},
        name=obj.get("name", "arm"),
        reach=obj.get("reach"),
        home_q=obj.get("home_q"),
    )


def _obstacle_to_json(sched: ScheduledObstacle) -> dict:
    obs = sched.obstacle
    out = {
        "shape": obs.shape,
        "position": obs.pose.position.tolist(),
        "orientation": obs.pose.orientation.tolist(),
        "velocity": obs.velocity.tolist(),
        "dynamic": obs.dynamic,
        "name": obs.name,
        "spawn_step": sched.spawn_step,
        "slot": sched.slot,
    }
    if obs.shape == SPHERE:
        out["radius"] = obs.radius
    else:
        out["half_extents"] = obs.half_extents.tolist()
    return out


def _obstacle_from_json(obj: dict) -> ScheduledObstacle:
    allowed = {"shape", "position", "orientation", "velocity", "dynamic", "name",
               "spawn_step", "slot", "radius", "half_extents"}
    _require_keys(obj, allowed, {"shape", "position"}, "obstacle")
    obstacle = Obstacle(
        obj["shape"],
        Pose(np.asarray(obj["position"]),
             np.asarray(obj.get("orientation", [1.0, 0.0, 0.0, 0.0]))),
        radius=obj.get("radius", 0.0),
        half_extents=obj.get("half_extents"),
        velocity=np.asarray(obj.get("velocity", [0.0, 0.0, 0.0])),
        dynamic=obj.get("dynamic", False),
        name=obj.get("name", ""),
    )
    return ScheduledObstacle(obstacle, obj.get("spawn_step", 0), obj.get("slot", ""))


def scenario_to_json(scenario: Scenario) -> str:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "task": scenario.task,
        "level": scenario.level,
        "seed": scenario.seed,
        "dt": scenario.dt,
        "t_max": scenario.t_max,
        "arms": [_arm_to_json(a) for a in scenario.arms],
        "obstacles": [_obstacle_to_json(s) for s in scenario.obstacles],
        "task_params": scenario.task_params,
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def scenario_from_json(text: str) -> Scenario:
    obj = json.loads(text)
    allowed = {"schema_version", "task", "level", "seed", "dt", "t_max", "arms",
               "obstacles", "task_params"}
    _require_keys(obj, allowed, allowed, "scenario")
    if obj["schema_version"] != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {obj['schema_version']}")
    return Scenario(
        task=obj["task"],
        level=int(obj["level"]),
        seed=int(obj["seed"]),
        dt=float(obj["dt"]),
        t_max=int(obj["t_max"]),
        arms=[_arm_from_json(a) for a in obj["arms"]],
        obstacles=[_obstacle_from_json(o) for o in obj["obstacles"]],
        task_params=obj["task_params"],
    )


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w") as fh:
        fh.write(scenario_to_json(scenario))


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_json(fh.read())
