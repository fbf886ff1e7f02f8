import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from mrstorm.kinematics import (
    ArmModel,
    Pose,
    compute_spheres,
    fk_frames,
    forward_kinematics,
    jacobian,
    linear_jacobians,
    manipulability,
    manipulability_batch,
    matrix_to_quat,
    quat_to_matrix,
    sphere_centers,
)
from conftest import make_planar_arm, random_chain


# ---------------------------------------------------------------------------
# Independent oracle: 4x4 homogeneous-transform composition, written against
# scipy rotations only. Used to validate forward kinematics.
# ---------------------------------------------------------------------------

def _pose_to_hom(pose: Pose) -> np.ndarray:
    t = np.eye(4)
    # scipy uses xyzw ordering
    w, x, y, z = pose.orientation
    t[:3, :3] = Rotation.from_quat([x, y, z, w]).as_matrix()
    t[:3, 3] = pose.position
    return t


def _fk_oracle(model: ArmModel, q: np.ndarray):
    t = _pose_to_hom(model.base_pose)
    frames = []
    for j in range(model.n_joints):
        t = t @ _pose_to_hom(model.joint_offsets[j])
        rot = np.eye(4)
        rot[:3, :3] = Rotation.from_rotvec(q[j] * model.joint_axes[j]).as_matrix()
        t = t @ rot
        frames.append(t.copy())
    ee = t @ _pose_to_hom(model.ee_offset)
    return frames, ee


def test_straight_chain_ee(planar2):
    _, ee = forward_kinematics(planar2, np.zeros(2))
    np.testing.assert_allclose(ee.position, [2.0, 0.0, 0.0], atol=1e-12)


def test_quarter_turn(planar2):
    _, ee = forward_kinematics(planar2, [np.pi / 2, 0.0])
    np.testing.assert_allclose(ee.position, [0.0, 2.0, 0.0], atol=1e-12)


def test_fk_matches_matrix_product_oracle(rng):
    for _ in range(20):
        model = random_chain(rng)
        q = rng.uniform(-np.pi, np.pi, size=model.n_joints)
        links, ee = forward_kinematics(model, q)
        frames, ee_hom = _fk_oracle(model, q)
        for link, hom in zip(links, frames):
            np.testing.assert_allclose(link.position, hom[:3, 3], atol=1e-9)
            np.testing.assert_allclose(link.rotation_matrix(), hom[:3, :3], atol=1e-9)
        np.testing.assert_allclose(ee.position, ee_hom[:3, 3], atol=1e-9)
        np.testing.assert_allclose(ee.rotation_matrix(), ee_hom[:3, :3], atol=1e-9)


def test_fk_deterministic(rng):
    model = random_chain(rng)
    q = rng.uniform(-1, 1, size=model.n_joints)
    a = fk_frames(model, q)
    b = fk_frames(model, q)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_fk_batch_matches_scalar(rng):
    model = random_chain(rng)
    qs = rng.uniform(-np.pi, np.pi, size=(16, model.n_joints))
    link_rot, link_pos, ee_rot, ee_pos = fk_frames(model, qs)
    for i in range(16):
        lr, lp, er, ep = fk_frames(model, qs[i])
        np.testing.assert_array_equal(link_rot[i], lr)
        np.testing.assert_array_equal(ee_pos[i], ep)


def test_fk_dimension_mismatch(planar2):
    with pytest.raises(ValueError):
        forward_kinematics(planar2, np.zeros(3))


# ---------------------------------------------------------------------------
# Sphere decomposition
# ---------------------------------------------------------------------------

def test_sphere_at_link_origin():
    model = make_planar_arm([1.0, 1.0], spheres_per_link=1)
    model.link_spheres[0] = [(np.zeros(3), 0.1)]
    model._build_caches()
    spheres = compute_spheres(model, np.zeros(2))
    np.testing.assert_allclose(spheres.centers[0], model.base_pose.position, atol=1e-12)
    assert spheres.radii[0] == 0.1


def test_spheres_translate_with_base(rng):
    model = random_chain(rng)
    q = rng.uniform(-1, 1, size=model.n_joints)
    before = compute_spheres(model, q)
    shift = np.array([0.3, -0.2, 0.5])
    shifted = ArmModel(
        joint_offsets=model.joint_offsets,
        joint_axes=model.joint_axes,
        base_pose=Pose(model.base_pose.position + shift, model.base_pose.orientation),
        ee_offset=model.ee_offset,
        q_min=model.q_min,
        q_max=model.q_max,
        v_max=model.v_max,
        a_max=model.a_max,
        link_spheres=model.link_spheres,
    )
    after = compute_spheres(shifted, q)
    np.testing.assert_allclose(after.centers, before.centers + shift, atol=1e-9)


def test_sphere_radii_and_count_constant(rng, planar3):
    for _ in range(5):
        q = rng.uniform(-np.pi, np.pi, size=3)
        spheres = compute_spheres(planar3, q)
        np.testing.assert_array_equal(spheres.radii, planar3.sphere_radii)
        assert len(spheres) == planar3.n_spheres


def test_sphere_batch_matches_scalar(rng, planar3):
    qs = rng.uniform(-np.pi, np.pi, size=(7, 3))
    batch = sphere_centers(planar3, qs)
    for i in range(7):
        np.testing.assert_array_equal(batch[i], sphere_centers(planar3, qs[i]))


# ---------------------------------------------------------------------------
# Jacobian: planar closed form + central finite differences
# ---------------------------------------------------------------------------

def test_planar_jacobian_closed_form(planar2):
    jac = jacobian(planar2, np.zeros(2))
    assert jac[1, 0] == pytest.approx(2.0)
    assert jac[1, 1] == pytest.approx(1.0)


def test_jacobian_finite_differences(rng):
    for _ in range(10):
        model = random_chain(rng)
        q = rng.uniform(-np.pi, np.pi, size=model.n_joints)
        jac = jacobian(model, q)
        h = 1e-6
        fd = np.zeros((3, model.n_joints))
        for j in range(model.n_joints):
            dq = np.zeros(model.n_joints)
            dq[j] = h
            _, _, _, plus = fk_frames(model, q + dq)
            _, _, _, minus = fk_frames(model, q - dq)
            fd[:, j] = (plus - minus) / (2 * h)
        np.testing.assert_allclose(jac[:3], fd, rtol=1e-5, atol=1e-7)


def test_jacobian_small_step_prediction(rng):
    model = random_chain(rng)
    q = rng.uniform(-np.pi, np.pi, size=model.n_joints)
    dq = rng.normal(size=model.n_joints)
    dq *= 1e-6 / np.linalg.norm(dq)
    jac = jacobian(model, q)
    _, _, _, p0 = fk_frames(model, q)
    _, _, _, p1 = fk_frames(model, q + dq)
    assert np.linalg.norm(jac[:3] @ dq - (p1 - p0)) <= 1e-5


def test_zero_length_chain_zero_linear():
    model = make_planar_arm([1.0, 1.0], spheres_per_link=1)
    model.joint_offsets = [Pose.identity(), Pose.identity()]
    model.ee_offset = Pose.identity()
    model._build_caches()
    jac = jacobian(model, np.array([0.3, -0.7]))
    np.testing.assert_allclose(jac[:3], 0.0, atol=1e-12)


def test_linear_jacobians_match_scalar(rng, planar3):
    qs = rng.uniform(-np.pi, np.pi, size=(6, 3))
    batch = linear_jacobians(planar3, qs)
    for i in range(6):
        np.testing.assert_allclose(batch[i], jacobian(planar3, qs[i])[:3], atol=1e-12)


# ---------------------------------------------------------------------------
# Manipulability
# ---------------------------------------------------------------------------

def test_manipulability_singular_when_stretched(planar2):
    assert manipulability(planar2, np.zeros(2)) == 0.0


def test_manipulability_right_angle(planar2):
    # hand computation: J^T J = [[2, 1], [1, 1]], det = 1
    assert manipulability(planar2, [0.0, np.pi / 2]) == pytest.approx(1.0, abs=1e-12)


def test_manipulability_base_rotation_invariant(rng):
    model = make_planar_arm([0.5, 0.4, 0.3])
    q = rng.uniform(-2, 2, size=3)
    base = manipulability(model, q)
    rotated = make_planar_arm([0.5, 0.4, 0.3], base_yaw=1.1)
    assert manipulability(rotated, q) == pytest.approx(base, rel=1e-9)


def test_manipulability_nonnegative(rng):
    model = random_chain(rng)
    qs = rng.uniform(-np.pi, np.pi, size=(100, model.n_joints))
    assert np.all(manipulability_batch(model, qs) >= 0.0)


def test_matrix_quat_round_trip(rng):
    for _ in range(50):
        xyzw = Rotation.random(random_state=np.random.RandomState(rng.integers(2**31))).as_quat()
        q = np.array([xyzw[3], xyzw[0], xyzw[1], xyzw[2]])
        rt = matrix_to_quat(quat_to_matrix(q))
        assert min(np.linalg.norm(rt - q), np.linalg.norm(rt + q)) < 1e-9


# ---------------------------------------------------------------------------
# Model validation
# ---------------------------------------------------------------------------

def test_adjacent_pairs_auto_excluded(planar3):
    assert (0, 1) in planar3.self_collision_exclusions
    assert (1, 2) in planar3.self_collision_exclusions


def test_bad_limits_rejected():
    with pytest.raises(ValueError):
        make_planar_arm([1.0], spheres_per_link=1, v_max=-1.0)
