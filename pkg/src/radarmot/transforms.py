"""Rigid 3D transforms (rotation + translation), sensor<->world plumbing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROTATION_TOL = 1e-6


class ValidationError(ValueError):
    """Raised when an input violates a documented invariant."""


def rot_z(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RigidTransform:
    """Maps points from a source frame into a target frame: x' = R x + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def validate(self) -> "RigidTransform":
        r = self.rotation
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(self.translation)):
            raise ValidationError("rigid transform has non-finite entries")
        if np.abs(r @ r.T - np.eye(3)).max() > ROTATION_TOL:
            raise ValidationError("rotation matrix is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
            raise ValidationError("rotation matrix determinant is not +1")
        return self

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = pts @ self.rotation.T + self.translation
        return out[0] if np.asarray(points).ndim == 1 else out

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self o other: first apply `other`, then `self`."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def as_flat(self) -> np.ndarray:
        """Row-major 3x4 [R | t] flattened to 12 values."""
        return np.hstack([self.rotation, self.translation[:, None]]).reshape(-1)

    @classmethod
    def from_flat(cls, values) -> "RigidTransform":
        m = np.asarray(values, dtype=float).reshape(3, 4)
        return cls(m[:, :3], m[:, 3])

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()
