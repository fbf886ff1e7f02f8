import numpy as np
import pytest

from mrstorm.kinematics import ArmModel, Pose, quat_from_axis_angle


def make_planar_arm(lengths, spheres_per_link=2, thickness=0.04, base_position=(0, 0, 0),
                    base_yaw=0.0, v_max=4.0, a_max=10.0, name="planar"):
    """Revolute chain with all axes +z: joints rotate in the world XY plane."""
    n = len(lengths)
    offsets = [Pose.identity()]
    for length in lengths[:-1]:
        offsets.append(Pose.from_position([length, 0.0, 0.0]))
    link_spheres = []
    for length in lengths:
        pts = np.linspace(0.0, length, spheres_per_link + 1)[1:]
        link_spheres.append([(np.array([x, 0.0, 0.0]), thickness) for x in pts])
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
    )


def random_chain(rng, n_joints=5):
    offsets = [Pose.identity()]
    for _ in range(n_joints - 1):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        offsets.append(Pose(rng.uniform(-0.3, 0.3, size=3),
                            quat_from_axis_angle(axis, rng.uniform(-np.pi, np.pi))))
    axes = rng.normal(size=(n_joints, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    base_axis = rng.normal(size=3)
    base_axis /= np.linalg.norm(base_axis)
    link_spheres = [[(rng.uniform(-0.2, 0.2, size=3), rng.uniform(0.02, 0.08))
                     for _ in range(2)] for _ in range(n_joints)]
    return ArmModel(
        joint_offsets=offsets,
        joint_axes=axes,
        base_pose=Pose(rng.uniform(-1, 1, size=3), quat_from_axis_angle(base_axis, rng.uniform(-2, 2))),
        ee_offset=Pose(rng.uniform(-0.2, 0.2, size=3),
                       quat_from_axis_angle([0, 0, 1], rng.uniform(-1, 1))),
        q_min=-np.full(n_joints, 2 * np.pi),
        q_max=np.full(n_joints, 2 * np.pi),
        v_max=np.full(n_joints, 5.0),
        a_max=np.full(n_joints, 20.0),
        link_spheres=link_spheres,
    )


@pytest.fixture
def planar2():
    return make_planar_arm([1.0, 1.0], spheres_per_link=1)


@pytest.fixture
def planar3():
    return make_planar_arm([0.3, 0.25, 0.2])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
