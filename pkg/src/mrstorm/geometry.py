"""Obstacle primitives and signed-distance queries shared by cost and world."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinematics import Pose

SPHERE = "sphere"
BOX = "box"


@dataclass(eq=False)
class Obstacle:
    """A sphere or box (half extents, axis-aligned in its pose), optionally
    drifting at constant velocity."""

    shape: str
    pose: Pose
    radius: float = 0.0
    half_extents: np.ndarray | None = None
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    dynamic: bool = False
    name: str = ""

    def __post_init__(self) -> None:
        if self.shape not in (SPHERE, BOX):
            raise ValueError(f"unknown obstacle shape {self.shape!r}")
        if self.shape == SPHERE and self.radius <= 0:
            raise ValueError("sphere obstacle needs a positive radius")
        if self.shape == BOX:
            self.half_extents = np.asarray(self.half_extents, dtype=float).reshape(3)
            if np.any(self.half_extents <= 0):
                raise ValueError("box half extents must be positive")
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)


def signed_distance_batch(centers: np.ndarray, radii: np.ndarray, obstacle: Obstacle) -> np.ndarray:
    """Signed distance from spheres to an obstacle surface, any leading shape.

    Negative inside. Sphere-sphere is center distance minus both radii;
    sphere-box clamps per axis in the box frame.
    """
    centers = np.asarray(centers, dtype=float)
    radii = np.asarray(radii, dtype=float)
    if obstacle.shape == SPHERE:
        diff = centers - obstacle.pose.position
        d = np.sqrt(np.einsum("...i,...i->...", diff, diff))
        return d - obstacle.radius - radii
    rot = obstacle.pose.rotation_matrix()
    local = (centers - obstacle.pose.position) @ rot  # R^T applied to rows
    q = np.abs(local) - obstacle.half_extents
    clipped = np.maximum(q, 0.0)
    outside = np.sqrt(np.einsum("...i,...i->...", clipped, clipped))
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside - radii


def signed_distance(center: np.ndarray, radius: float, obstacle: Obstacle) -> float:
    """Signed distance (m) between one sphere and an obstacle; negative overlaps."""
    return float(signed_distance_batch(np.asarray(center, dtype=float), float(radius), obstacle))


def sphere_pair_distance(c1: np.ndarray, r1: float, c2: np.ndarray, r2: float) -> float:
    return float(np.linalg.norm(np.asarray(c1, float) - np.asarray(c2, float)) - (r1 + r2))
