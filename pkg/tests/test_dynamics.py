import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrstorm.dynamics import ControlSequence, RobotState, rollout, rollout_batch, step
from conftest import make_planar_arm


@pytest.fixture
def arm():
    return make_planar_arm([0.5, 0.5], spheres_per_link=1, v_max=2.0, a_max=5.0)


def test_zero_control_fixed_point(arm):
    s0 = RobotState.rest(np.zeros(2))
    s1 = step(s0, np.zeros(2), arm, 0.1)
    np.testing.assert_array_equal(s1.q, s0.q)
    np.testing.assert_array_equal(s1.qd, s0.qd)
    assert s1.t == 1


def test_euler_arithmetic(arm):
    s1 = step(RobotState.rest(np.zeros(2)), np.ones(2), arm, 0.1)
    np.testing.assert_allclose(s1.qd, 0.1)
    np.testing.assert_allclose(s1.q, 0.01)


def test_velocity_clamp(arm):
    s0 = RobotState(np.zeros(2), arm.v_max.copy())
    s1 = step(s0, np.ones(2), arm, 0.1)
    np.testing.assert_array_equal(s1.qd, arm.v_max)


def test_position_clamp_zeroes_velocity(arm):
    s0 = RobotState(arm.q_max - 1e-4, np.full(2, 2.0))
    s1 = step(s0, np.zeros(2), arm, 0.1)
    np.testing.assert_array_equal(s1.q, arm.q_max)
    np.testing.assert_array_equal(s1.qd, 0.0)


def test_nonfinite_rejected(arm):
    with pytest.raises(ValueError):
        step(RobotState(np.array([np.nan, 0.0]), np.zeros(2)), np.zeros(2), arm, 0.1)


def test_zero_rollout_constant(arm):
    seq = ControlSequence(np.zeros((5, 2)), 0.1)
    traj = rollout(RobotState.rest(np.array([0.2, -0.1])), seq, arm)
    for s in traj:
        np.testing.assert_array_equal(s.q, [0.2, -0.1])


def test_single_step_rollout_equals_step(arm):
    s0 = RobotState(np.array([0.1, 0.2]), np.array([0.3, -0.2]))
    u = np.array([[1.0, -1.0]])
    traj = rollout(s0, ControlSequence(u, 0.05), arm)
    direct = step(s0, u[0], arm, 0.05)
    assert len(traj) == 1
    np.testing.assert_array_equal(traj[0].q, direct.q)


def test_constant_control_closed_form():
    # closed-form discrete double integrator (semi-implicit, no clamps):
    # qd_h = (h+1) c dt ; q_h = dt^2 c (1 + 2 + ... + (h+1))
    arm = make_planar_arm([1.0], spheres_per_link=1, v_max=100.0, a_max=100.0)
    c, dt, horizon = 0.7, 0.02, 20
    seq = ControlSequence(np.full((horizon, 1), c), dt)
    traj = rollout(RobotState.rest(np.zeros(1)), seq, arm)
    for h, s in enumerate(traj):
        k = h + 1
        assert s.qd[0] == pytest.approx(k * c * dt, rel=1e-12)
        assert s.q[0] == pytest.approx(c * dt * dt * k * (k + 1) / 2, rel=1e-12)


def test_batch_matches_scalar(arm, rng):
    s0 = RobotState(np.array([0.1, -0.3]), np.array([0.5, 0.4]))
    controls = rng.normal(scale=8.0, size=(12, 15, 2))
    qs, qds = rollout_batch(s0.q, s0.qd, controls, arm, 1 / 60)
    for n in range(12):
        traj = rollout(s0, ControlSequence(controls[n], 1 / 60), arm)
        np.testing.assert_array_equal(qs[n], np.stack([s.q for s in traj]))
        np.testing.assert_array_equal(qds[n], np.stack([s.qd for s in traj]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_limits_never_violated(seed):
    arm = make_planar_arm([0.4, 0.3], spheres_per_link=1, v_max=1.5, a_max=6.0)
    gen = np.random.default_rng(seed)
    controls = gen.normal(scale=20.0, size=(8, 25, 2))
    q0 = gen.uniform(arm.q_min, arm.q_max)
    qd0 = gen.uniform(-arm.v_max, arm.v_max)
    qs, qds = rollout_batch(q0, qd0, controls, arm, 1 / 60)
    assert np.all(qs >= arm.q_min - 1e-12) and np.all(qs <= arm.q_max + 1e-12)
    assert np.all(np.abs(qds) <= arm.v_max + 1e-12)
