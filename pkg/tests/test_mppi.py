import numpy as np
import pytest

from mrstorm.cost import CostWeights, GoalSpec
from mrstorm.dynamics import RobotState, rollout_batch
from mrstorm.kinematics import ee_position
from mrstorm.mppi import (
    Planner,
    PlannerConfig,
    Policy,
    compute_weights,
    plan_step,
    sample_controls,
    shift,
    update_distribution,
    weighted_stats,
)
from conftest import make_planar_arm


@pytest.fixture
def policy():
    return Policy(np.array([[0.5, -0.5], [1.0, 0.0], [0.0, 2.0]]),
                  np.full((3, 2), 0.7))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def test_sample_zero_sigma_limit(policy):
    tiny = Policy(policy.mu, np.full_like(policy.sigma, 1e-12))
    u = sample_controls(tiny, 16, np.random.default_rng(0))
    assert np.max(np.abs(u - policy.mu)) < 1e-9


def test_sample_zero_is_mean(policy, rng):
    u = sample_controls(policy, 8, rng)
    np.testing.assert_array_equal(u[0], policy.mu)


def test_sample_deterministic(policy):
    a = sample_controls(policy, 32, np.random.default_rng(7))
    b = sample_controls(policy, 32, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)


def test_sample_empirical_mean(policy):
    n = 100_000
    u = sample_controls(policy, n, np.random.default_rng(3))
    tol = 3.0 * policy.sigma / np.sqrt(n)
    assert np.all(np.abs(u.mean(axis=0) - policy.mu) <= tol + 1e-12)


def test_sample_respects_accel_limits(policy):
    a_max = np.array([1.0, 1.0])
    u = sample_controls(policy, 64, np.random.default_rng(5), a_max)
    assert np.all(np.abs(u) <= a_max)


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------

def test_equal_costs_equal_weights():
    np.testing.assert_allclose(compute_weights(np.array([4.0, 4.0]), 1.0), [0.5, 0.5])


def test_small_temperature_argmin_wins():
    w = compute_weights(np.array([1.0, 1.001, 5.0]), 1e-6)
    assert w[0] == pytest.approx(1.0)


def test_weights_closed_form():
    lam = 0.37
    w = compute_weights(np.array([0.0, lam * np.log(2.0)]), lam)
    np.testing.assert_allclose(w, [2 / 3, 1 / 3], atol=1e-12)


def test_weights_probability_vector(rng):
    for _ in range(50):
        totals = rng.uniform(0, 1e4, size=32)
        w = compute_weights(totals, rng.uniform(0.1, 100))
        assert np.all(w >= 0)
        assert np.sum(w) == pytest.approx(1.0, abs=1e-12)


def test_weights_infinite_fallback_uniform():
    w = compute_weights(np.full(4, np.inf), 1.0)
    np.testing.assert_allclose(w, 0.25)


def test_weights_partial_infinite():
    w = compute_weights(np.array([1.0, np.inf, 2.0]), 1.0)
    assert w[1] == 0.0
    assert np.sum(w) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# weighted statistics and EMA update
# ---------------------------------------------------------------------------

def test_weighted_stats_single_winner(rng):
    controls = rng.normal(size=(5, 4, 3))
    weights = np.zeros(5)
    weights[2] = 1.0
    mu, sigma = weighted_stats(controls, weights, sigma_floor=0.05)
    np.testing.assert_allclose(mu, controls[2])
    np.testing.assert_allclose(sigma, 0.05)


def test_weighted_stats_symmetric():
    a = np.full((1, 2, 2), 0.8)
    controls = np.concatenate([a, -a])
    mu, sigma = weighted_stats(controls, np.array([0.5, 0.5]))
    np.testing.assert_allclose(mu, 0.0, atol=1e-15)
    np.testing.assert_allclose(sigma, 0.8)


def test_weighted_stats_matches_loop_oracle(rng):
    controls = rng.normal(size=(16, 5, 3))
    weights = rng.uniform(size=16)
    weights /= weights.sum()
    mu, sigma = weighted_stats(controls, weights)
    mu_expected = np.zeros((5, 3))
    for n in range(16):
        mu_expected += weights[n] * controls[n]
    var_expected = np.zeros((5, 3))
    for n in range(16):
        var_expected += weights[n] * (controls[n] - mu_expected) ** 2
    np.testing.assert_allclose(mu, mu_expected, atol=1e-12)
    np.testing.assert_allclose(sigma, np.sqrt(var_expected), atol=1e-12)


def test_ema_step_sizes(policy, rng):
    mu_t = rng.normal(size=policy.mu.shape)
    sigma_t = rng.uniform(0.1, 1.0, size=policy.sigma.shape)
    full = update_distribution(policy, mu_t, sigma_t, 1.0, 1.0)
    np.testing.assert_array_equal(full.mu, mu_t)
    np.testing.assert_array_equal(full.sigma, sigma_t)
    hold = update_distribution(policy, mu_t, sigma_t, 1e-12, 1e-12)
    np.testing.assert_allclose(hold.mu, policy.mu, atol=1e-10)
    fixed = update_distribution(policy, policy.mu, policy.sigma, 0.3, 0.3)
    np.testing.assert_allclose(fixed.mu, policy.mu, atol=1e-15)


# ---------------------------------------------------------------------------
# shift
# ---------------------------------------------------------------------------

def test_shift_constant_unchanged():
    p = Policy(np.full((4, 2), 0.3), np.full((4, 2), 1.0))
    s = shift(p, sigma_init=1.0)
    np.testing.assert_array_equal(s.mu, p.mu)
    np.testing.assert_array_equal(s.sigma, p.sigma)


def test_shift_replicates_tail():
    p = Policy(np.array([[1.0], [2.0], [3.0]]), np.full((3, 1), 0.5))
    s = shift(p)
    np.testing.assert_array_equal(s.mu.ravel(), [2.0, 3.0, 3.0])


def test_shift_widens_tail_sigma():
    p = Policy(np.zeros((3, 1)), np.full((3, 1), 0.1))
    s = shift(p, sigma_init=2.0)
    np.testing.assert_allclose(s.sigma.ravel(), [0.1, 0.1, 2.0])


def test_double_shift_matches_oracle():
    def oracle_shift(mu):
        out = np.vstack([mu[1:], mu[-1:]])
        return out

    mu = np.arange(10, dtype=float).reshape(5, 2)
    p = Policy(mu, np.ones((5, 2)))
    twice = shift(shift(p))
    np.testing.assert_array_equal(twice.mu, oracle_shift(oracle_shift(mu)))


# ---------------------------------------------------------------------------
# plan_step
# ---------------------------------------------------------------------------

def _free_space_setup(n_rollouts=64, opt_iters=2, horizon=10, seed=11):
    arm = make_planar_arm([0.3, 0.25, 0.2])
    config = PlannerConfig(horizon=horizon, n_rollouts=n_rollouts,
                           opt_iters=opt_iters, seed=seed)
    weights = CostWeights(manip_weight=0.0, coll_weight=0.0, dyn_weight=0.0)
    return arm, config, weights


def test_plan_step_deterministic():
    arm, config, weights = _free_space_setup()
    q0 = np.array([0.4, -0.3, 0.2])
    goal = GoalSpec.at(ee_position(arm, q0) + [0.1, 0.1, 0.0])
    outs = []
    for _ in range(2):
        policy = Policy.initial(config.horizon, 3, config.sigma_init)
        res = plan_step(RobotState.rest(q0), goal, [], [], config, weights,
                        policy, arm, np.random.default_rng(42))
        outs.append(res)
    np.testing.assert_array_equal(outs[0].action, outs[1].action)
    np.testing.assert_array_equal(outs[0].policy.mu, outs[1].policy.mu)
    np.testing.assert_array_equal(outs[0].sphere_trajectory, outs[1].sphere_trajectory)
    assert outs[0].best_cost == outs[1].best_cost


def test_plan_step_at_goal_low_cost():
    arm, config, weights = _free_space_setup()
    q0 = np.array([0.5, 0.5, -0.4])
    goal = GoalSpec.at(ee_position(arm, q0))
    policy = Policy.initial(config.horizon, 3, config.sigma_init)
    res = plan_step(RobotState.rest(q0), goal, [], [], config, weights, policy,
                    arm, np.random.default_rng(0))
    assert np.all(np.abs(res.action) <= arm.a_max)
    # the incumbent (zero-mean) rollout holds position, so best cost stays small
    assert res.best_cost <= weights.pose_weight * 0.05 * (config.horizon + 1 / (1 - weights.discount))


def test_plan_step_refuses_nonfinite_state():
    arm, config, weights = _free_space_setup()
    bad = RobotState(np.array([np.inf, 0.0, 0.0]), np.zeros(3))
    policy = Policy.initial(config.horizon, 3, config.sigma_init)
    res = plan_step(bad, GoalSpec.at([0.1, 0.1, 0.0]), [], [], config, weights,
                    policy, arm, np.random.default_rng(0))
    np.testing.assert_array_equal(res.action, 0.0)
    assert res.sphere_trajectory is None


def test_plan_step_tie_breaks_lowest_index():
    arm, config, _ = _free_space_setup()
    zero = CostWeights(pose_weight=0, stop_weight=0, joint_weight=0,
                       manip_weight=0, coll_weight=0, dyn_weight=0)
    policy = Policy.initial(config.horizon, 3, config.sigma_init)
    res = plan_step(RobotState.rest(np.zeros(3)), GoalSpec.at([0.1, 0.1, 0.0]),
                    [], [], config, zero, policy, arm, np.random.default_rng(0))
    assert res.best_index == 0


def test_plan_step_action_within_limits():
    arm, config, weights = _free_space_setup()
    goal = GoalSpec.at([0.6, 0.3, 0.0])
    planner = Planner(arm, config, weights)
    state = RobotState.rest(np.zeros(3))
    for _ in range(5):
        res = planner.plan(state, goal, [], [])
        assert np.all(np.abs(res.action) <= arm.a_max + 1e-12)


def test_monotone_improvement_tendency():
    arm, _, weights = _free_space_setup()
    config = PlannerConfig(horizon=10, n_rollouts=64, opt_iters=3, seed=0)
    goal = GoalSpec.at([0.5, 0.4, 0.0])
    state = RobotState.rest(np.zeros(3))
    improved = 0
    trials = 100
    for seed in range(trials):
        policy = Policy.initial(config.horizon, 3, config.sigma_init)
        before = _mean_traj_cost(arm, policy, state, goal, weights, config)
        res = plan_step(state, goal, [], [], config, weights, policy, arm,
                        np.random.default_rng(seed))
        after = _mean_traj_cost(arm, res.policy, state, goal, weights, config)
        if after <= before + 1e-9:
            improved += 1
    assert improved >= 0.8 * trials


def _mean_traj_cost(arm, policy, state, goal, weights, config):
    from mrstorm.cost import rollout_totals, stage_costs_batch

    qs, qds = rollout_batch(state.q, state.qd, policy.mu[None], arm, config.dt)
    stage = stage_costs_batch(arm, qs, qds, goal, [], [], weights, config.dt)
    return float(rollout_totals(stage, weights.discount)[0])


def test_closed_loop_reaches_goal():
    arm, config, weights = _free_space_setup(n_rollouts=128, opt_iters=2, horizon=16)
    planner = Planner(arm, config, weights)
    state = RobotState.rest(np.array([0.3, 0.3, 0.3]))
    start = ee_position(arm, state.q)
    # rotate the start point about the base and pull it inward: reachable by
    # construction, roughly 0.3 m away
    ang = 0.45
    rot = np.array([[np.cos(ang), -np.sin(ang), 0], [np.sin(ang), np.cos(ang), 0], [0, 0, 1]])
    goal_pos = 0.9 * (rot @ start)
    assert 0.2 <= np.linalg.norm(goal_pos - start) <= 0.4
    goal = GoalSpec.at(goal_pos)
    from mrstorm.dynamics import step as dyn_step

    reached = False
    for _ in range(500):
        res = planner.plan(state, goal, [], [])
        state = dyn_step(state, res.action, arm, config.dt)
        if np.linalg.norm(ee_position(arm, state.q) - goal_pos) <= 0.05:
            reached = True
            break
    assert reached


def test_workers_env_bit_identical(monkeypatch):
    arm, config, weights = _free_space_setup(n_rollouts=40)
    q0 = np.array([0.2, 0.1, -0.3])
    goal = GoalSpec.at([0.5, 0.2, 0.0])

    def run():
        policy = Policy.initial(config.horizon, 3, config.sigma_init)
        return plan_step(RobotState.rest(q0), goal, [], [], config, weights,
                         policy, arm, np.random.default_rng(9))

    monkeypatch.setenv("MRSTORM_WORKERS", "1")
    one = run()
    monkeypatch.setenv("MRSTORM_WORKERS", "4")
    four = run()
    np.testing.assert_array_equal(one.action, four.action)
    np.testing.assert_array_equal(one.policy.mu, four.policy.mu)
    assert one.best_cost == four.best_cost
