"""Lockstep simulation driver, baseline algorithm modes, metrics, and
paired-difference reporting.

Lockstep trials are bit-reproducible: (scenario, mode, seed) fully determine
every output except wall-clock timing fields. The asynchronous mode runs each
agent on its own thread with the intention board as the only synchronization
point; its results carry a nondeterminism flag.
"""

from __future__ import annotations

import csv
import json
import logging
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .coordination import Agent, IntentionBoard, agent_loop
from .cost import CostWeights, GoalSpec, rollout_totals, stage_costs_batch
from .dynamics import RobotState, rollout_batch, step as dynamics_step
from .kinematics import ArmModel, Pose, ee_position, sphere_centers
from .mppi import Planner, PlannerConfig, Policy, compute_weights, sample_controls, shift, update_distribution, weighted_stats
from .world import (
    FOLLOWING,
    Obstacle,
    Scenario,
    make_task_state,
    signed_distance_batch,
    update_goals,
)

logger = logging.getLogger(__name__)

MRS = "mrs"
MRS_NOPRIO = "mrs-noprio"
SD = "sd"
SC = "sc"
ALGOS = (MRS, MRS_NOPRIO, SD, SC)

METRICS_SCHEMA_VERSION = 1


@dataclass
class AlgoMode:
    """Algorithm selector: the planner variant plus its rollout budget.

    mrs        decentralized planners sharing intent trajectories
    mrs-noprio mrs with the prioritization exponent forced to zero
    sd         decentralized, others treated as static spheres at current pose
    sc         one coupled planner over the concatenated joint space
    """

    kind: str
    n_rollouts: int = 400
    opt_iters: int = 5

    def __post_init__(self) -> None:
        if self.kind not in ALGOS:
            raise ValueError(f"unknown algorithm {self.kind!r}")

    @property
    def reads_intents(self) -> bool:
        return self.kind in (MRS, MRS_NOPRIO)

    def effective_trust(self, base_trust: float) -> float:
        if self.kind in (MRS_NOPRIO, SD):
            return 0.0
        return base_trust

    @property
    def label(self) -> str:
        return f"{self.kind}({self.n_rollouts},{self.opt_iters})"


@dataclass
class Metrics:
    task: str
    level: int
    seed: int
    algo: str
    t_max: int
    n_arms: int
    collision_steps: int
    task_score: float
    score_kind: str  # "goals" | "drops" | "following_error_m"
    control_frequency_hz: float
    per_arm_frequency_hz: list[float]
    plan_time_total_s: float
    nondeterministic: bool = False
    aborted: bool = False
    task_params: dict = field(default_factory=dict)
    schema_version: int = METRICS_SCHEMA_VERSION

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Metrics":
        obj = json.loads(text)
        version = obj.pop("schema_version", METRICS_SCHEMA_VERSION)
        metrics = cls(**obj)
        metrics.schema_version = version
        return metrics


@dataclass(eq=False)
class TrialResult:
    metrics: Metrics
    rows: list[dict]  # per-step log rows
    q_trajectories: np.ndarray  # (T, n_arms, n) executed joint positions
    board: IntentionBoard | None = None  # instrumentation (trajectory_reads)


def planner_seed(trial_seed: int, arm_id: int) -> np.random.SeedSequence:
    """Stable per-arm planner stream, identical across runs and platforms."""
    return np.random.SeedSequence(entropy=(int(trial_seed), 1000 + int(arm_id)))


# ---------------------------------------------------------------------------
# Metric primitives
# ---------------------------------------------------------------------------

def collision_step_count(contact_flags: list[bool]) -> int:
    """Number of steps in which any arm touched anything (distance < 0)."""
    return int(sum(bool(f) for f in contact_flags))


def following_error(goal_distances: np.ndarray) -> float:
    """Mean end-effector goal distance over steps and arms: (T, A) -> m."""
    goal_distances = np.asarray(goal_distances, dtype=float)
    return float(np.mean(np.mean(goal_distances, axis=1)))


def control_frequency(plan_times_s: list[float]) -> float:
    """Steps divided by total planning time."""
    total = float(np.sum(plan_times_s))
    if total <= 0.0:
        return float("inf")
    return len(plan_times_s) / total


def _detect_contact(
    models: list[ArmModel], states: list[RobotState], obstacles: list[Obstacle]
) -> bool:
    """Ground-truth contact via exact geometry (not the cost-module mask)."""
    spheres = [sphere_centers(m, s.q) for m, s in zip(models, states)]
    radii = [m.sphere_radii for m in models]
    for i in range(len(models)):
        for obs in obstacles:
            if np.min(signed_distance_batch(spheres[i], radii[i], obs)) < 0.0:
                return True
        for j in range(i + 1, len(models)):
            diff = spheres[i][:, None, :] - spheres[j][None, :, :]
            dist = np.linalg.norm(diff, axis=-1) - (radii[i][:, None] + radii[j][None, :])
            if np.min(dist) < 0.0:
                return True
    return False


# ---------------------------------------------------------------------------
# Coupled baseline: one policy over the concatenated joint space
# ---------------------------------------------------------------------------

class CoupledPlanner:
    """Single sampling planner controlling every arm jointly (baseline SC).

    Inter-arm proximity is penalized with the same masked term and weight the
    decentralized planners apply to shared intents, evaluated on its own
    rollouts.
    """

    def __init__(self, models: list[ArmModel], config: PlannerConfig, weights: CostWeights,
                 seed: np.random.SeedSequence | int):
        self.models = models
        self.config = config
        self.weights = weights
        self.joint_slices = []
        start = 0
        for m in models:
            self.joint_slices.append(slice(start, start + m.n_joints))
            start += m.n_joints
        self.total_joints = start
        self.a_max = np.concatenate([m.a_max for m in models])
        self.policy = Policy.initial(config.horizon, self.total_joints, config.sigma_init)
        self.rng = np.random.default_rng(seed)

    def plan(self, states: list[RobotState], goals: list[GoalSpec],
             obstacles: list[Obstacle]) -> tuple[list[np.ndarray], float]:
        self.policy = shift(self.policy, self.config.sigma_init)
        config, weights = self.config, self.weights
        batch = None
        policy = self.policy
        for _ in range(config.opt_iters):
            controls = sample_controls(policy, config.n_rollouts, self.rng, self.a_max)
            stage = np.zeros((config.n_rollouts, config.horizon))
            all_centers = []
            for model, sl, state, goal in zip(self.models, self.joint_slices, states, goals):
                qs, qds = rollout_batch(state.q, state.qd, controls[:, :, sl], model, config.dt)
                stage += stage_costs_batch(model, qs, qds, goal, obstacles, [], weights, config.dt)
                centers = sphere_centers(model, qs.reshape(-1, model.n_joints))
                all_centers.append(centers.reshape(config.n_rollouts, config.horizon, -1, 3))
            stage += weights.dyn_weight * self._inter_arm_term(all_centers)
            totals = rollout_totals(stage, weights.discount)
            w = compute_weights(totals, weights.temperature)
            mu_t, sigma_t = weighted_stats(controls, w, config.sigma_floor)
            policy = update_distribution(policy, mu_t, sigma_t, config.ema_mean, config.ema_std)
            batch = (controls, totals)
        self.policy = Policy(policy.mu, policy.sigma, policy.step + 1)
        controls, totals = batch
        best = int(np.argmin(totals))
        action = controls[best, 0]
        return [action[sl].copy() for sl in self.joint_slices], float(totals[best])

    def _inter_arm_term(self, all_centers: list[np.ndarray]) -> np.ndarray:
        n, horizon = all_centers[0].shape[:2]
        out = np.zeros((n, horizon))
        buffer = self.weights.safety_buffer
        for i in range(len(self.models)):
            for j in range(i + 1, len(self.models)):
                pair_r = self.models[i].sphere_radii[:, None] + self.models[j].sphere_radii[None, :]
                for h in range(horizon):
                    diff = all_centers[i][:, h, :, None, :] - all_centers[j][:, h, None, :, :]
                    d = np.linalg.norm(diff, axis=-1) - pair_r
                    out[:, h] += np.maximum(0.0, 1.0 - d.min(axis=(1, 2)) / buffer)
        return out


# ---------------------------------------------------------------------------
# Lockstep trial
# ---------------------------------------------------------------------------

def run_trial(
    scenario: Scenario,
    mode: AlgoMode,
    weights: CostWeights | None = None,
    config: PlannerConfig | None = None,
    trial_seed: int | None = None,
    out_dir: str | Path | None = None,
    timing: bool = True,
) -> TrialResult:
    """One deterministic lockstep trial; optionally writes metrics.json and
    log.csv to out_dir.

    Each step: advance obstacles, plan all arms against stale-by-one intents,
    publish, execute, update goals, record exact-geometry contacts and
    planning times.
    """
    weights = weights or CostWeights()
    config = config or PlannerConfig()
    trial_seed = scenario.seed if trial_seed is None else trial_seed
    run_weights = replace(weights, trust=mode.effective_trust(weights.trust))
    run_config = replace(config, n_rollouts=mode.n_rollouts, opt_iters=mode.opt_iters,
                         dt=scenario.dt)

    models = scenario.arms
    n_arms = len(models)
    timeline = scenario.timeline()
    task = make_task_state(scenario)
    states = [RobotState.rest(m.home_q) for m in models]

    board = IntentionBoard(n_arms)
    coupled = None
    agents: list[Agent] = []
    if mode.kind == SC:
        coupled = CoupledPlanner(models, run_config, run_weights, planner_seed(trial_seed, 0))
    else:
        for i, model in enumerate(models):
            planner = Planner(model, replace(run_config, seed=planner_seed(trial_seed, i)),
                              run_weights)
            agents.append(Agent(i, model, planner, board, read_board=mode.reads_intents))

    rows: list[dict] = []
    contact_flags: list[bool] = []
    plan_times = [[] for _ in range(n_arms)]
    goal_dists: list[list[float]] = []
    q_log = np.zeros((scenario.t_max, n_arms, models[0].n_joints))
    aborted = False

    for t in range(1, scenario.t_max + 1):
        obstacles = timeline.advance(t)
        goals = [task.goals[i] for i in range(n_arms)]
        actions = [None] * n_arms
        step_plan_ms = [0.0] * n_arms

        try:
            if mode.kind == SC:
                t0 = time.perf_counter()
                actions, _ = coupled.plan(states, goals, obstacles)
                elapsed = time.perf_counter() - t0
                plan_times[0].append(elapsed)
                step_plan_ms[0] = elapsed * 1e3
            else:
                sd_obstacles = None
                if mode.kind == SD:
                    # static treatment: other arms become plain sphere obstacles
                    # at their sensed pose, through the environment channel
                    sd_obstacles = [
                        [
                            Obstacle("sphere", Pose.from_position(c), radius=r)
                            for c, r in zip(sphere_centers(m, s.q), m.sphere_radii)
                        ]
                        for m, s in zip(models, states)
                    ]
                results = []
                for i, agent in enumerate(agents):
                    arm_obstacles = obstacles
                    if sd_obstacles is not None:
                        arm_obstacles = obstacles + [
                            o for j, group in enumerate(sd_obstacles) if j != i
                            for o in group
                        ]
                    t0 = time.perf_counter()
                    result, d_self = agent.plan_once(states[i], goals[i], arm_obstacles)
                    elapsed = time.perf_counter() - t0
                    results.append((result, d_self, elapsed))
                for i, agent in enumerate(agents):
                    result, d_self, elapsed = results[i]
                    if mode.reads_intents:
                        t0 = time.perf_counter()
                        agent.publish(result, d_self, stamp=t)
                        elapsed += time.perf_counter() - t0
                    actions[i] = result.action
                    plan_times[i].append(elapsed)
                    step_plan_ms[i] = elapsed * 1e3
            states = [
                dynamics_step(states[i], actions[i], models[i], scenario.dt)
                for i in range(n_arms)
            ]
        except ValueError:
            logger.exception("trial aborted at step %d (non-finite state)", t)
            aborted = True
            break

        ees = [ee_position(models[i], states[i].q) for i in range(n_arms)]
        goal_dists.append([
            float(np.linalg.norm(ees[i] - goals[i].target.position)) for i in range(n_arms)
        ])
        contact = _detect_contact(models, states, obstacles)
        contact_flags.append(contact)
        update_goals(task, ees, t, scenario.dt, weights.goal_tol)
        q_log[t - 1] = np.stack([s.q for s in states])

        row = {"step": t, "contact": int(contact)}
        for i in range(n_arms):
            row[f"a{i}_plan_ms"] = step_plan_ms[i] if timing else 0.0
            for k, axis in enumerate("xyz"):
                row[f"a{i}_goal_{axis}"] = goals[i].target.position[k]
                row[f"a{i}_ee_{axis}"] = ees[i][k]
            for j in range(models[i].n_joints):
                row[f"a{i}_q{j}"] = states[i].q[j]
                row[f"a{i}_qd{j}"] = states[i].qd[j]
        rows.append(row)

    if scenario.task == FOLLOWING:
        score = following_error(np.asarray(goal_dists)) if goal_dists else float("nan")
        score_kind = "following_error_m"
    else:
        score = float(task.score())
        score_kind = "drops" if scenario.task == "bin_loading" else "goals"

    freq_streams = [ts for ts in plan_times if ts]
    per_arm_freq = [control_frequency(ts) for ts in freq_streams]
    metrics = Metrics(
        task=scenario.task,
        level=scenario.level,
        seed=scenario.seed,
        algo=mode.label,
        t_max=scenario.t_max,
        n_arms=n_arms,
        collision_steps=collision_step_count(contact_flags),
        task_score=score,
        score_kind=score_kind,
        control_frequency_hz=float(np.mean(per_arm_freq)) if per_arm_freq else 0.0,
        per_arm_frequency_hz=per_arm_freq,
        plan_time_total_s=float(sum(sum(ts) for ts in plan_times)),
        aborted=aborted,
        task_params=dict(scenario.task_params),
    )
    result = TrialResult(metrics, rows, q_log[: len(rows)], board)
    if out_dir is not None:
        write_trial_outputs(result, out_dir)
    return result


def write_trial_outputs(result: TrialResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(result.metrics.to_json())
    write_log_csv(result.rows, out / "log.csv")


def write_log_csv(rows: list[dict], path: str | Path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    fieldnames = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([_format_cell(row[k]) for k in fieldnames])


def _format_cell(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


# ---------------------------------------------------------------------------
# Asynchronous mode: one worker thread per agent, board-only synchronization
# ---------------------------------------------------------------------------

class _AsyncEnv:
    """Thread-safe world for free-running agents; arm 0 drives world time."""

    def __init__(self, scenario: Scenario, goal_tol: float):
        self.scenario = scenario
        self.models = scenario.arms
        self.lock = threading.Lock()
        self.states = [RobotState.rest(m.home_q) for m in self.models]
        self.timeline = scenario.timeline()
        self.obstacle_list = self.timeline.advance(1)
        self.task = make_task_state(scenario)
        self.goal_tol = goal_tol
        self.t_world = 1
        self.contact_flags: list[bool] = []

    def sense(self, arm_id: int) -> RobotState:
        with self.lock:
            s = self.states[arm_id]
            return RobotState(s.q.copy(), s.qd.copy(), s.t)

    def goal(self, arm_id: int) -> GoalSpec:
        with self.lock:
            return self.task.goals[arm_id]

    def obstacles(self, arm_id: int) -> list[Obstacle]:
        with self.lock:
            return list(self.obstacle_list)

    def execute(self, arm_id: int, action: np.ndarray) -> None:
        with self.lock:
            self.states[arm_id] = dynamics_step(
                self.states[arm_id], action, self.models[arm_id], self.scenario.dt
            )
            if arm_id == 0:
                self.t_world += 1
                self.obstacle_list = self.timeline.advance(self.t_world)
                ees = [ee_position(m, s.q) for m, s in zip(self.models, self.states)]
                self.contact_flags.append(
                    _detect_contact(self.models, self.states, self.obstacle_list)
                )
                update_goals(self.task, ees, self.t_world, self.scenario.dt, self.goal_tol)


def run_trial_async(
    scenario: Scenario,
    mode: AlgoMode,
    weights: CostWeights | None = None,
    config: PlannerConfig | None = None,
    trial_seed: int | None = None,
) -> Metrics:
    """Free-running agents on worker threads; nondeterministic by design."""
    if mode.kind == SC:
        raise ValueError("asynchronous mode applies to decentralized algorithms")
    weights = weights or CostWeights()
    config = config or PlannerConfig()
    trial_seed = scenario.seed if trial_seed is None else trial_seed
    run_weights = replace(weights, trust=mode.effective_trust(weights.trust))
    run_config = replace(config, n_rollouts=mode.n_rollouts, opt_iters=mode.opt_iters,
                         dt=scenario.dt)
    env = _AsyncEnv(scenario, weights.goal_tol)
    board = IntentionBoard(len(scenario.arms))
    threads = []
    for i, model in enumerate(scenario.arms):
        planner = Planner(model, replace(run_config, seed=planner_seed(trial_seed, i)),
                          run_weights)
        threads.append(
            threading.Thread(
                target=agent_loop, args=(i, model, planner, board, env, scenario.t_max)
            )
        )
    start = time.perf_counter()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    elapsed = time.perf_counter() - start
    steps = len(env.contact_flags)
    return Metrics(
        task=scenario.task,
        level=scenario.level,
        seed=scenario.seed,
        algo=mode.label,
        t_max=scenario.t_max,
        n_arms=len(scenario.arms),
        collision_steps=collision_step_count(env.contact_flags),
        task_score=float(env.task.score()),
        score_kind="drops" if scenario.task == "bin_loading" else "goals",
        control_frequency_hz=steps / elapsed if elapsed > 0 else 0.0,
        per_arm_frequency_hz=[],
        plan_time_total_s=elapsed,
        nondeterministic=True,
        task_params=dict(scenario.task_params),
    )


# ---------------------------------------------------------------------------
# Paired per-environment differences and the sweep/report pipeline
# ---------------------------------------------------------------------------

@dataclass
class PairedStats:
    algo: str
    n_envs: int
    task_mean: float
    task_sd: float
    coll_mean: float
    coll_sd: float


def _mean_sd(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    mean = float(np.mean(arr))
    sd = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return mean, sd


def paired_differences(
    results: list[Metrics], baseline: str
) -> dict[str, dict[int | str, PairedStats]]:
    """Per-algorithm, per-level paired differences against the baseline.

    Returns {algo: {level or "all": PairedStats}}; environments without a
    baseline result are excluded with a warning.
    """
    by_env: dict[tuple, dict[str, Metrics]] = {}
    for m in results:
        by_env.setdefault((m.task, m.level, m.seed), {})[m.algo] = m

    algos = sorted({m.algo for m in results})
    base_key = _match_algo(algos, baseline)
    out: dict[str, dict[int | str, PairedStats]] = {}
    for algo in algos:
        deltas: dict[int | str, list[tuple[float, float]]] = {}
        for env, per_algo in sorted(by_env.items()):
            if base_key not in per_algo:
                logger.warning("environment %s has no baseline result; excluded", env)
                continue
            if algo not in per_algo:
                continue
            base = per_algo[base_key]
            m = per_algo[algo]
            pair = (m.task_score - base.task_score,
                    float(m.collision_steps - base.collision_steps))
            deltas.setdefault(env[1], []).append(pair)
            deltas.setdefault("all", []).append(pair)
        out[algo] = {}
        for level, pairs in sorted(deltas.items(), key=str):
            t_mean, t_sd = _mean_sd([p[0] for p in pairs])
            c_mean, c_sd = _mean_sd([p[1] for p in pairs])
            out[algo][level] = PairedStats(algo, len(pairs), t_mean, t_sd, c_mean, c_sd)
    return out


def _match_algo(algos: list[str], baseline: str) -> str:
    if baseline in algos:
        return baseline
    matches = [a for a in algos if a.split("(")[0] == baseline]
    if len(matches) != 1:
        raise ValueError(f"baseline {baseline!r} not found among {algos}")
    return matches[0]


def env_seed(base_seed: int, level: int, seed_index: int) -> int:
    """Environment seeds shared by every algorithm in a sweep."""
    return int(base_seed) * 1000 + level * 10 + seed_index


def sweep(
    task: str,
    algos: list[AlgoMode],
    out_dir: str | Path,
    levels=range(1, 6),
    seeds_per_level: int = 6,
    base_seed: int = 0,
    weights: CostWeights | None = None,
    config: PlannerConfig | None = None,
    scenario_kwargs: dict | None = None,
    timing: bool = True,
) -> list[Metrics]:
    """The environment grid: levels x seeds per level x algorithms.

    Trials already on disk are skipped, so partial sweeps resume.
    """
    from .world import make_scenario

    out = Path(out_dir)
    collected = []
    for mode in algos:
        for level in levels:
            for s in range(seeds_per_level):
                seed = env_seed(base_seed, level, s)
                trial_dir = out / mode.kind / f"{task}_level{level}_seed{s}"
                metrics_path = trial_dir / "metrics.json"
                if metrics_path.exists():
                    collected.append(Metrics.from_json(metrics_path.read_text()))
                    continue
                scenario = make_scenario(task, level, seed, **(scenario_kwargs or {}))
                result = run_trial(scenario, mode, weights, config,
                                   out_dir=trial_dir, timing=timing)
                collected.append(result.metrics)
                logger.info("finished %s %s", mode.label, trial_dir.name)
    return collected


def load_sweep_metrics(in_dir: str | Path) -> list[Metrics]:
    return [
        Metrics.from_json(path.read_text())
        for path in sorted(Path(in_dir).glob("**/metrics.json"))
    ]


def report(in_dir: str | Path, baseline: str, out_path: str | Path) -> dict:
    """Paired-difference tables (per level and overall) written as CSV."""
    results = load_sweep_metrics(in_dir)
    if not results:
        raise ValueError(f"no metrics.json files under {in_dir}")
    stats = paired_differences(results, baseline)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["algo", "level", "n_envs", "task_delta_mean", "task_delta_sd",
                         "collision_delta_mean", "collision_delta_sd"])
        for algo in sorted(stats):
            for level in sorted(stats[algo], key=str):
                row = stats[algo][level]
                writer.writerow([
                    algo, level, row.n_envs,
                    _format_cell(row.task_mean), _format_cell(row.task_sd),
                    _format_cell(row.coll_mean), _format_cell(row.coll_sd),
                ])
    return stats
