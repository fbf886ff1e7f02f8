"""Serial-chain arm model: forward kinematics, Jacobian, collision spheres, limits.

All arms are modeled as revolute chains. Each joint carries a fixed offset pose
(parent link frame -> joint frame) and a unit rotation axis expressed in the
joint frame. Collision geometry is a set of spheres rigidly attached to links.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_QUAT_NORM_TOL = 1e-9


# ---------------------------------------------------------------------------
# Quaternion helpers (w, x, y, z convention)
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero-norm quaternion")
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(rot: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion with w >= 0 (canonical sign)."""
    m = rot
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


# ---------------------------------------------------------------------------
# Poses
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Pose:
    """Rigid transform: position (m) and unit quaternion orientation (wxyz)."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.orientation = np.asarray(self.orientation, dtype=float).reshape(4)
        n = np.linalg.norm(self.orientation)
        if abs(n - 1.0) > _QUAT_NORM_TOL:
            raise ValueError(f"quaternion norm {n} not within {_QUAT_NORM_TOL} of 1")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_position(cls, position) -> "Pose":
        return cls(np.asarray(position, dtype=float), np.array([1.0, 0.0, 0.0, 0.0]))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def compose(self, other: "Pose") -> "Pose":
        rot = self.rotation_matrix()
        return Pose(
            self.position + rot @ other.position,
            quat_normalize(quat_mul(self.orientation, other.orientation)),
        )

    def transform_point(self, point: np.ndarray) -> np.ndarray:
        return self.position + self.rotation_matrix() @ np.asarray(point, dtype=float)


@dataclass(eq=False)
class SphereSet:
    """World-frame collision spheres for one arm at one instant."""

    centers: np.ndarray  # (S, 3)
    radii: np.ndarray  # (S,)
    owner: int = -1

    def __post_init__(self) -> None:
        self.centers = np.asarray(self.centers, dtype=float).reshape(-1, 3)
        self.radii = np.asarray(self.radii, dtype=float).reshape(-1)
        if self.centers.shape[0] != self.radii.shape[0]:
            raise ValueError("centers and radii length mismatch")
        if np.any(self.radii <= 0):
            raise ValueError("sphere radii must be positive")

    def __len__(self) -> int:
        return int(self.radii.shape[0])


# ---------------------------------------------------------------------------
# Arm model
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ArmModel:
    """Revolute serial chain with per-link sphere decomposition.

    joint_offsets[j] is the fixed transform from link j-1's frame (or the base
    pose for j=0) to joint j's frame; the joint then rotates about axes[j]
    (unit vector in that frame). Link j's frame is the post-rotation frame.
    """

    joint_offsets: list[Pose]
    joint_axes: np.ndarray  # (n, 3) unit vectors
    base_pose: Pose
    ee_offset: Pose
    q_min: np.ndarray
    q_max: np.ndarray
    v_max: np.ndarray
    a_max: np.ndarray
    link_spheres: list[list[tuple[np.ndarray, float]]]
    self_collision_exclusions: set[tuple[int, int]] = field(default_factory=set)
    name: str = "arm"
    reach: float | None = None
    home_q: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = len(self.joint_offsets)
        self.joint_axes = np.asarray(self.joint_axes, dtype=float).reshape(n, 3)
        for arr_name in ("q_min", "q_max", "v_max", "a_max"):
            setattr(self, arr_name, np.asarray(getattr(self, arr_name), dtype=float).reshape(n))
        if np.any(self.q_min >= self.q_max):
            raise ValueError("q_min must be < q_max elementwise")
        if np.any(self.v_max <= 0) or np.any(self.a_max <= 0):
            raise ValueError("v_max and a_max must be positive")
        norms = np.linalg.norm(self.joint_axes, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("joint axes must be unit vectors")
        if len(self.link_spheres) != n:
            raise ValueError("link_spheres must have one entry per link")
        # Adjacent links always excluded from self-collision checks.
        exclusions = {tuple(sorted(p)) for p in self.self_collision_exclusions}
        for j in range(n - 1):
            exclusions.add((j, j + 1))
        self.self_collision_exclusions = exclusions
        self._build_caches()
        if self.reach is None:
            offsets = [np.linalg.norm(p.position) for p in self.joint_offsets[1:]]
            self.reach = float(sum(offsets) + np.linalg.norm(self.ee_offset.position))
        if self.home_q is None:
            self.home_q = np.zeros(n)
        else:
            self.home_q = np.asarray(self.home_q, dtype=float).reshape(n)

    def _build_caches(self) -> None:
        n = self.n_joints
        self._off_rot = np.stack([p.rotation_matrix() for p in self.joint_offsets])  # (n,3,3)
        self._off_pos = np.stack([p.position for p in self.joint_offsets])  # (n,3)
        self._base_rot = self.base_pose.rotation_matrix()
        self._base_pos = self.base_pose.position
        self._ee_rot = self.ee_offset.rotation_matrix()
        self._ee_pos = self.ee_offset.position
        link_idx, locals_, radii = [], [], []
        for link, spheres in enumerate(self.link_spheres):
            for center, radius in spheres:
                if radius <= 0:
                    raise ValueError("sphere radii must be positive")
                link_idx.append(link)
                locals_.append(np.asarray(center, dtype=float))
                radii.append(float(radius))
        self._sphere_link = np.asarray(link_idx, dtype=int)
        self._sphere_local = (
            np.stack(locals_) if locals_ else np.zeros((0, 3))
        )
        self._sphere_radii = np.asarray(radii, dtype=float)
        # spheres are appended link-major, so per-link index ranges are slices
        self._sphere_slices = []
        for link in range(n):
            idx = np.flatnonzero(self._sphere_link == link)
            self._sphere_slices.append(
                slice(int(idx[0]), int(idx[-1]) + 1) if idx.size else slice(0, 0)
            )
        self._off_rot_identity = [
            bool(np.allclose(r, np.eye(3), atol=1e-15)) for r in self._off_rot
        ]
        self._off_pos_zero = [bool(np.all(p == 0.0)) for p in self._off_pos]
        # Sphere-index pairs for every non-excluded link pair, grouped so the
        # per-link-pair minimum can be taken with reduceat.
        pair_i, pair_j, group_starts, group_links = [], [], [], []
        per_link = [np.flatnonzero(self._sphere_link == l) for l in range(n)]
        for a in range(n):
            for b in range(a + 1, n):
                if (a, b) in self.self_collision_exclusions:
                    continue
                if len(per_link[a]) == 0 or len(per_link[b]) == 0:
                    continue
                group_starts.append(len(pair_i))
                group_links.append((a, b))
                for ia in per_link[a]:
                    for ib in per_link[b]:
                        pair_i.append(ia)
                        pair_j.append(ib)
        self._self_pair_i = np.asarray(pair_i, dtype=int)
        self._self_pair_j = np.asarray(pair_j, dtype=int)
        self._self_group_starts = np.asarray(group_starts, dtype=int)
        self._self_group_links = group_links

    @property
    def n_joints(self) -> int:
        return len(self.joint_offsets)

    @property
    def n_spheres(self) -> int:
        return int(self._sphere_radii.shape[0])

    @property
    def sphere_radii(self) -> np.ndarray:
        return self._sphere_radii

    def validate_q(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape[-1] != self.n_joints:
            raise ValueError(f"expected {self.n_joints} joint values, got {q.shape[-1]}")
        return q


# ---------------------------------------------------------------------------
# Batched kinematics (leading batch axis; scalar API wraps batch of one)
# ---------------------------------------------------------------------------

def _axis_angle_matrices(axis: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rodrigues rotation about a fixed axis for a batch of angles: (B,3,3).

    Entries are filled componentwise; equivalent to
    cos(t) I + sin(t) [a]_x + (1 - cos(t)) a a^T but with 1-D temporaries.
    """
    c = np.cos(angles)
    s = np.sin(angles)
    v = 1.0 - c
    ax, ay, az = axis
    out = np.empty((angles.shape[0], 3, 3))
    out[:, 0, 0] = c + v * (ax * ax)
    out[:, 0, 1] = v * (ax * ay) - s * az
    out[:, 0, 2] = v * (ax * az) + s * ay
    out[:, 1, 0] = v * (ax * ay) + s * az
    out[:, 1, 1] = c + v * (ay * ay)
    out[:, 1, 2] = v * (ay * az) - s * ax
    out[:, 2, 0] = v * (ax * az) - s * ay
    out[:, 2, 1] = v * (ay * az) + s * ax
    out[:, 2, 2] = c + v * (az * az)
    return out


def fk_frames(model: ArmModel, q: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Link frames and end-effector frame for a batch of configurations.

    Returns (link_rot (B,n,3,3), link_pos (B,n,3), ee_rot (B,3,3), ee_pos (B,3)).
    """
    q = model.validate_q(q)
    squeeze = q.ndim == 1
    q = np.atleast_2d(q)
    if not np.all(np.isfinite(q)):
        raise ValueError("non-finite joint values")
    batch = q.shape[0]
    n = model.n_joints
    rot = np.broadcast_to(model._base_rot, (batch, 3, 3))
    pos = np.broadcast_to(model._base_pos, (batch, 3))
    link_rot = np.empty((batch, n, 3, 3))
    link_pos = np.empty((batch, n, 3))
    for j in range(n):
        if not model._off_pos_zero[j]:
            pos = pos + rot @ model._off_pos[j]
        if not model._off_rot_identity[j]:
            rot = rot @ model._off_rot[j]
        rot = rot @ _axis_angle_matrices(model.joint_axes[j], q[:, j])
        link_rot[:, j] = rot
        link_pos[:, j] = pos
    ee_pos = pos + rot @ model._ee_pos
    ee_rot = rot @ model._ee_rot
    if squeeze:
        return link_rot[0], link_pos[0], ee_rot[0], ee_pos[0]
    return link_rot, link_pos, ee_rot, ee_pos


def forward_kinematics(model: ArmModel, q: np.ndarray) -> tuple[list[Pose], Pose]:
    """Poses of every link frame plus the end-effector pose, base to tip."""
    link_rot, link_pos, ee_rot, ee_pos = fk_frames(model, np.asarray(q, dtype=float).reshape(-1))
    links = [Pose(link_pos[j], matrix_to_quat(link_rot[j])) for j in range(model.n_joints)]
    return links, Pose(ee_pos, matrix_to_quat(ee_rot))


def sphere_centers_from_frames(
    model: ArmModel, link_rot: np.ndarray, link_pos: np.ndarray
) -> np.ndarray:
    """World sphere centers from precomputed frames: (B, S, 3), link-major."""
    batch = link_rot.shape[0]
    out = np.empty((batch, model.n_spheres, 3))
    for link, sl in enumerate(model._sphere_slices):
        if sl.start == sl.stop:
            continue
        locals_t = model._sphere_local[sl].T  # (3, k)
        out[:, sl] = link_pos[:, link, None, :] + np.swapaxes(
            link_rot[:, link] @ locals_t, 1, 2
        )
    return out


def sphere_centers(model: ArmModel, q: np.ndarray) -> np.ndarray:
    """World sphere centers, link-major order: (B, S, 3) (or (S,3) unbatched)."""
    link_rot, link_pos, _, _ = fk_frames(model, q)
    squeeze = link_rot.ndim == 3
    if squeeze:
        link_rot = link_rot[None]
        link_pos = link_pos[None]
    centers = sphere_centers_from_frames(model, link_rot, link_pos)
    return centers[0] if squeeze else centers


def compute_spheres(model: ArmModel, q: np.ndarray) -> SphereSet:
    """Collision spheres of the arm at configuration q (deterministic order)."""
    centers = sphere_centers(model, np.asarray(q, dtype=float).reshape(-1))
    return SphereSet(centers, model._sphere_radii.copy())


def ee_position(model: ArmModel, q: np.ndarray) -> np.ndarray:
    return fk_frames(model, q)[3]


def jacobian(model: ArmModel, q: np.ndarray) -> np.ndarray:
    """Geometric Jacobian (6 x n): rows 0-2 linear, 3-5 angular velocity."""
    q = np.asarray(q, dtype=float).reshape(-1)
    link_rot, link_pos, _, ee_pos = fk_frames(model, q)
    n = model.n_joints
    jac = np.zeros((6, n))
    for j in range(n):
        axis_w = link_rot[j] @ model.joint_axes[j]
        jac[:3, j] = np.cross(axis_w, ee_pos - link_pos[j])
        jac[3:, j] = axis_w
    return jac


def linear_jacobians(model: ArmModel, q: np.ndarray) -> np.ndarray:
    """Batched linear-velocity Jacobians: (B, 3, n)."""
    link_rot, link_pos, _, ee_pos = fk_frames(model, np.atleast_2d(np.asarray(q, dtype=float)))
    axes_w = np.einsum("bnij,nj->bni", link_rot, model.joint_axes)  # (B,n,3)
    arms = ee_pos[:, None, :] - link_pos  # (B,n,3)
    cols = np.cross(axes_w, arms)  # (B,n,3)
    return np.swapaxes(cols, 1, 2)


def _det3(m: np.ndarray) -> np.ndarray:
    return (
        m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
        - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
        + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0])
    )


def manipulability_batch(model: ArmModel, q: np.ndarray) -> np.ndarray:
    """Ellipsoid volume of the linear Jacobian; 0 at singularities.

    sqrt(det(J_lin J_lin^T)) for n >= 3; for shorter chains the 3xn Gram
    matrix is always rank-deficient, so the product of singular values is
    taken via det(J_lin^T J_lin) instead.
    """
    jl = linear_jacobians(model, q)
    if model.n_joints >= 3:
        det = _det3(jl @ np.swapaxes(jl, 1, 2))
    else:
        det = np.linalg.det(np.swapaxes(jl, 1, 2) @ jl)
    return np.sqrt(np.clip(det, 0.0, None))


def manipulability(model: ArmModel, q: np.ndarray) -> float:
    return float(manipulability_batch(model, np.asarray(q, dtype=float).reshape(1, -1))[0])
