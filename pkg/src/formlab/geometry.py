"""Small dense kernels: skew maps, axis projectors, and axis-angle rotations."""

from __future__ import annotations

import numpy as np

_MIN_AXIS_NORM = 1e-9


class RotationAxis:
    """Unit-norm rotation axis in 3-D.

    The direction is normalized at construction; vectors with norm below
    1e-9 are rejected so downstream code never divides by a near-zero
    length. The stored array is read-only.
    """

    __slots__ = ("vec",)

    def __init__(self, direction) -> None:
        v = np.array(direction, dtype=float).reshape(3)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"axis components must be finite, got {direction!r}")
        n = float(np.linalg.norm(v))
        if n < _MIN_AXIS_NORM:
            raise ValueError(f"axis norm {n:.3e} is below {_MIN_AXIS_NORM:g}, cannot normalize")
        v /= n
        v.flags.writeable = False
        self.vec = v

    def __repr__(self) -> str:
        x, y, z = self.vec
        return f"RotationAxis([{x:.9g}, {y:.9g}, {z:.9g}])"

    def __eq__(self, other) -> bool:
        return isinstance(other, RotationAxis) and bool(np.array_equal(self.vec, other.vec))

    def __hash__(self) -> int:
        return hash(self.vec.tobytes())


def skew(axis: RotationAxis) -> np.ndarray:
    """Return the 3x3 matrix K with K @ v == cross(axis, v) for every v."""
    x, y, z = axis.vec
    return np.array(
        [
            [0.0, -z, y],
            [z, 0.0, -x],
            [-y, x, 0.0],
        ]
    )


def axis_projector(axis: RotationAxis) -> np.ndarray:
    """Rank-one orthogonal projector onto the axis line (outer product)."""
    return np.outer(axis.vec, axis.vec)


def rodrigues(axis: RotationAxis, theta: float) -> np.ndarray:
    """Rotation by ``theta`` radians about ``axis``.

    Uses the axis-angle expansion I + sin(theta) K + (1 - cos(theta)) K^2,
    where K is the skew map of the axis. The result is orthogonal with unit
    determinant and leaves the axis itself fixed.
    """
    k = skew(axis)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)
