"""Quaternion, rotation, and rigid-transform primitives.

Conventions: quaternions are scalar-first (w, x, y, z) float64 arrays and kept
unit-norm; the double cover is canonicalized (scalar part non-negative) at
construction so serialized poses round-trip bit-exactly.  A Pose doubles as a
rigid transform via compose/inverse/transform_point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(angle):
    """Wrap angles into the half-open interval (-pi, pi]."""
    a = np.asarray(angle, dtype=float)
    wrapped = np.mod(a + math.pi, TWO_PI) - math.pi
    wrapped = np.where(wrapped == -math.pi, math.pi, wrapped)
    if np.ndim(angle) == 0:
        return float(wrapped)
    return wrapped


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not math.isfinite(n) or n == 0.0:
        raise ValueError("quaternion norm must be finite and nonzero")
    return q / n


def quat_canonical(q) -> np.ndarray:
    """Pick the double-cover representative with non-negative scalar part.

    Ties at w == 0 are broken on the first nonzero vector component.
    """
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        return -q
    if q[0] == 0.0:
        for c in q[1:]:
            if c != 0.0:
                return q if c > 0.0 else -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector(s) v by unit quaternion q.  v may be (3,) or (N, 3)."""
    v = np.asarray(v, dtype=float)
    u = np.asarray(q[1:], dtype=float)
    w = float(q[0])
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("rotation axis must be nonzero")
    half = 0.5 * angle
    out = np.empty(4)
    out[0] = math.cos(half)
    out[1:] = (math.sin(half) / n) * axis
    return out


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(R) -> np.ndarray:
    """Shepperd's method: branch on the largest diagonal term for stability."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array([
            0.25 * s,
            (R[2, 1] - R[1, 2]) / s,
            (R[0, 2] - R[2, 0]) / s,
            (R[1, 0] - R[0, 1]) / s,
        ])
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array([
            (R[2, 1] - R[1, 2]) / s,
            0.25 * s,
            (R[0, 1] + R[1, 0]) / s,
            (R[0, 2] + R[2, 0]) / s,
        ])
    elif R[1, 1] >= R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array([
            (R[0, 2] - R[2, 0]) / s,
            (R[0, 1] + R[1, 0]) / s,
            0.25 * s,
            (R[1, 2] + R[2, 1]) / s,
        ])
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array([
            (R[1, 0] - R[0, 1]) / s,
            (R[0, 2] + R[2, 0]) / s,
            (R[1, 2] + R[2, 1]) / s,
            0.25 * s,
        ])
    return quat_canonical(quat_normalize(q))


def quat_angle(a, b) -> float:
    """Rotation angle in radians taking either quaternion to the other."""
    d = abs(float(np.dot(a, b)))
    return 2.0 * math.acos(min(1.0, d))


def quat_slerp(a, b, u: float) -> np.ndarray:
    """Shortest-path spherical interpolation; u in [0, 1]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = float(np.dot(a, b))
    if d < 0.0:
        b = -b
        d = -d
    if d > 1.0 - 1e-12:
        # nearly parallel: fall back to normalized lerp
        return quat_normalize(a + u * (b - a))
    theta = math.acos(min(1.0, d))
    s = math.sin(theta)
    return (math.sin((1.0 - u) * theta) / s) * a + (math.sin(u * theta) / s) * b


def quat_log(q) -> np.ndarray:
    """Rotation vector (axis * angle) for the shortest rotation of q."""
    q = quat_canonical(np.asarray(q, dtype=float))
    w = min(1.0, max(-1.0, float(q[0])))
    n = float(np.linalg.norm(q[1:]))
    if n < 1e-12:
        return 2.0 * q[1:]
    angle = 2.0 * math.atan2(n, w)
    return (angle / n) * q[1:]


def quat_exp(rv) -> np.ndarray:
    """Inverse of quat_log: rotation vector to unit quaternion."""
    rv = np.asarray(rv, dtype=float)
    angle = float(np.linalg.norm(rv))
    half = 0.5 * angle
    if angle < 1e-12:
        out = np.empty(4)
        out[0] = 1.0
        out[1:] = 0.5 * rv
        return quat_normalize(out)
    out = np.empty(4)
    out[0] = math.cos(half)
    out[1:] = (math.sin(half) / angle) * rv
    return out


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: translation plus unit quaternion, both read-only."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        q = np.array(self.orientation, dtype=float).reshape(4)
        if not np.all(np.isfinite(p)):
            raise ValueError("pose position must be finite")
        n = float(np.linalg.norm(q))
        if not math.isfinite(n) or abs(n - 1.0) > 1e-6:
            raise ValueError(f"orientation must be unit norm, got {n!r}")
        q = quat_canonical(q / n)
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), quat_identity())

    @staticmethod
    def from_parts(x, y, z, quat) -> "Pose":
        return Pose(np.array([x, y, z], dtype=float), quat)

    @staticmethod
    def from_matrix(T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return Pose(T[:3, 3], quat_from_matrix(T[:3, :3]))

    def to_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = quat_to_matrix(self.orientation)
        T[:3, 3] = self.position
        return T

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other is expressed in self's frame: self * other."""
        q = quat_normalize(quat_multiply(self.orientation, other.orientation))
        p = self.position + quat_rotate(self.orientation, other.position)
        return Pose(p, q)

    def inverse(self) -> "Pose":
        q = quat_conjugate(self.orientation)
        return Pose(-quat_rotate(q, self.position), q)

    def transform_point(self, v) -> np.ndarray:
        return quat_rotate(self.orientation, v) + self.position

    def transform_points(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return quat_rotate(self.orientation, pts) + self.position

    def distance_to(self, other: "Pose") -> tuple[float, float]:
        """(translation error in metres, rotation error in radians)."""
        dp = float(np.linalg.norm(self.position - other.position))
        return dp, quat_angle(self.orientation, other.orientation)

    def approx_equal(self, other: "Pose", pos_tol: float, ang_tol: float) -> bool:
        dp, da = self.distance_to(other)
        return dp <= pos_tol and da <= ang_tol

    def to_dict(self) -> dict:
        return {
            "position": [float(v) for v in self.position],
            "orientation": [float(v) for v in self.orientation],
        }

    @staticmethod
    def from_dict(d: dict) -> "Pose":
        return Pose(np.array(d["position"], dtype=float),
                    np.array(d["orientation"], dtype=float))


def pose_slerp(a: Pose, b: Pose, u: float) -> Pose:
    """Interpolate position linearly and orientation along the short arc."""
    p = a.position + u * (b.position - a.position)
    return Pose(p, quat_slerp(a.orientation, b.orientation, u))
