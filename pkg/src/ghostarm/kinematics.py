"""Forward and inverse kinematics for offset-wrist 6R arms.

The closed-form inverse solver covers the arm class whose link table has
a1 = a4 = a5 = a6 = 0, d2 = d3 = 0 and twists (pi/2, 0, 0, pi/2, -pi/2, 0):
two shoulder branches, two wrist branches, and two elbow branches give up to
eight solutions, each verified against FK before it is reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .arm import ArmModel, LinkRow
from .transforms import Pose, normalize_angle

POSITION_TOL = 1e-6     # metres, FK verification of IK branches
ANGLE_TOL = 1e-6        # radians


class UnreachableError(ValueError):
    """Target admits no in-limit solution."""


class EmptySolutionSetError(ValueError):
    """Operation on a solution set with no entries."""


class UnsupportedArmError(ValueError):
    """Link table is outside the analytic solver's arm class."""


@dataclass(frozen=True)
class JointConfig:
    """Six joint angles plus the sample timestamp they were observed at."""

    q: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(6)
        if not np.all(np.isfinite(q)):
            raise ValueError("joint angles must be finite")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    def normalized(self) -> np.ndarray:
        """Angles wrapped to (-pi, pi] for comparisons; storage stays continuous."""
        return normalize_angle(self.q)


@dataclass(frozen=True)
class IkSolutionSet:
    """Ordered solutions for one target pose plus the active selection."""

    solutions: tuple[JointConfig, ...]
    target: Pose
    selected_index: int = 0

    def __post_init__(self):
        if self.solutions and not 0 <= self.selected_index < len(self.solutions):
            raise ValueError("selected_index out of range")

    def __len__(self) -> int:
        return len(self.solutions)

    @property
    def selected(self) -> JointConfig:
        if not self.solutions:
            raise EmptySolutionSetError("solution set is empty")
        return self.solutions[self.selected_index]


def row_transform(row: LinkRow, q: float) -> np.ndarray:
    th = q + row.theta_offset
    ct, st = math.cos(th), math.sin(th)
    ca, sa = math.cos(row.alpha), math.sin(row.alpha)
    return np.array([
        [ct, -st * ca, st * sa, row.a * ct],
        [st, ct * ca, -ct * sa, row.a * st],
        [0.0, sa, ca, row.d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def link_transforms(model: ArmModel, q) -> np.ndarray:
    """World transforms of the base frame and frames 1..6, shape (7, 4, 4)."""
    q = np.asarray(q, dtype=float).reshape(6)
    out = np.empty((7, 4, 4))
    out[0] = model.base_pose.to_matrix()
    for i, row in enumerate(model.rows):
        out[i + 1] = out[i] @ row_transform(row, q[i])
    return out


def forward_kinematics(model: ArmModel, q) -> Pose:
    """World pose of the flange for joint angles q (array or JointConfig)."""
    if isinstance(q, JointConfig):
        q = q.q
    return Pose.from_matrix(link_transforms(model, q)[6])


def jacobian(model: ArmModel, q) -> np.ndarray:
    """Geometric Jacobian in the world frame, rows [linear; angular]."""
    frames = link_transforms(model, q)
    p_ee = frames[6][:3, 3]
    J = np.empty((6, 6))
    for i in range(6):
        z = frames[i][:3, 2]
        p = frames[i][:3, 3]
        J[:3, i] = np.cross(z, p_ee - p)
        J[3:, i] = z
    return J


def manipulability(model: ArmModel, q) -> float:
    """sqrt(det(J J^T)); approaches zero at singularities."""
    J = jacobian(model, q)
    return math.sqrt(max(0.0, float(np.linalg.det(J @ J.T))))


def _solver_geometry(model: ArmModel) -> tuple[float, ...]:
    """Validate the arm class and pull out the six governing lengths."""
    rows = model.rows
    a = [r.a for r in rows]
    d = [r.d for r in rows]
    alpha = [r.alpha for r in rows]
    want_alpha = (math.pi / 2, 0.0, 0.0, math.pi / 2, -math.pi / 2, 0.0)
    tol = 1e-9
    zeros_ok = all(abs(v) < tol for v in (a[0], a[3], a[4], a[5], d[1], d[2]))
    alpha_ok = all(abs(x - w) < tol for x, w in zip(alpha, want_alpha))
    if not (zeros_ok and alpha_ok):
        raise UnsupportedArmError(
            "analytic solver requires an offset-wrist table "
            "(a1=a4=a5=a6=0, d2=d3=0, twists (pi/2,0,0,pi/2,-pi/2,0))")
    if abs(a[1]) < tol or abs(a[2]) < tol or abs(d[3]) < tol or abs(d[5]) < tol:
        raise UnsupportedArmError("degenerate link lengths")
    return d[0], a[1], a[2], d[3], d[4], d[5]


def _clamp(v: float) -> float:
    return min(1.0, max(-1.0, v))


def _rx(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ik_theta_candidates(model: ArmModel, target: Pose) -> list[tuple[int, np.ndarray]]:
    """Raw (branch_index, theta) candidates in link-angle space.

    Branch index encodes (shoulder, wrist, elbow) choices as s*4 + w*2 + e so
    the canonical order is stable across calls.
    """
    d1, a2, a3, d4, d5, d6 = _solver_geometry(model)
    T = model.base_pose.inverse().compose(target).to_matrix()
    R = T[:3, :3]
    p = T[:3, 3]

    out: list[tuple[int, np.ndarray]] = []
    p05 = p - d6 * R[:, 2]
    rho = math.hypot(p05[0], p05[1])
    if rho < abs(d4):
        return out
    psi = math.atan2(p05[1], p05[0])
    phi = math.acos(_clamp(d4 / rho))
    rx_neg = _rx(-math.pi / 2)

    for i1, t1 in enumerate((psi + phi + math.pi / 2, psi - phi + math.pi / 2)):
        c1, s1 = math.cos(t1), math.sin(t1)
        c5 = _clamp((p[0] * s1 - p[1] * c1 - d4) / d6)
        for i5, t5 in enumerate((math.acos(c5), -math.acos(c5))):
            s5 = math.sin(t5)
            if abs(s5) < 1e-10:
                # wrist-aligned: theta6 is unconstrained, pick zero
                t6 = 0.0
            else:
                t6 = math.atan2((-R[0, 1] * s1 + R[1, 1] * c1) / s5,
                                (R[0, 0] * s1 - R[1, 0] * c1) / s5)
            T01 = row_transform(LinkRow(0.0, math.pi / 2, d1), t1)
            T45 = row_transform(LinkRow(0.0, -math.pi / 2, d5), t5)
            T56 = row_transform(LinkRow(0.0, 0.0, d6), t6)
            T46 = T45 @ T56
            T14 = np.linalg.inv(T01) @ T @ np.linalg.inv(T46)
            p14 = T14[:3, 3]
            if abs(p14[2] - d4) > 1e-6:
                continue
            r2 = p14[0] * p14[0] + p14[1] * p14[1]
            c3 = (r2 - a2 * a2 - a3 * a3) / (2.0 * a2 * a3)
            if abs(c3) > 1.0 + 1e-9:
                continue
            M = T14[:3, :3] @ rx_neg
            t234 = math.atan2(M[1, 0], M[0, 0])
            for i3, t3 in enumerate((math.acos(_clamp(c3)), -math.acos(_clamp(c3)))):
                t2 = math.atan2(p14[1], p14[0]) - math.atan2(
                    a3 * math.sin(t3), a2 + a3 * math.cos(t3))
                t4 = t234 - t2 - t3
                theta = np.array([t1, t2, t3, t4, t5, t6])
                out.append((i1 * 4 + i5 * 2 + i3, theta))
    return out


def _fit_to_limits(model: ArmModel, q: np.ndarray) -> np.ndarray | None:
    """Pick a 2pi-shift of each joint inside its limits, preferring the
    normalized value; None if any joint cannot fit."""
    lo = model.joint_limits[:, 0]
    hi = model.joint_limits[:, 1]
    out = np.empty(6)
    for i in range(6):
        for cand in (q[i], q[i] + 2.0 * math.pi, q[i] - 2.0 * math.pi):
            if lo[i] <= cand <= hi[i]:
                out[i] = cand
                break
        else:
            return None
    return out


def inverse_kinematics(model: ArmModel, target: Pose,
                       previous: JointConfig | None = None,
                       position_tol: float = POSITION_TOL,
                       angle_tol: float = ANGLE_TOL) -> IkSolutionSet:
    """All verified analytic branches for a world-frame flange target.

    Solutions are ordered by joint-space distance to `previous` (uniform
    weights, wrapped differences) or, without one, by canonical branch index.
    Raises UnreachableError when no branch survives verification and limits.
    """
    offsets = np.array([r.theta_offset for r in model.rows])
    survivors: list[tuple[int, np.ndarray]] = []
    for branch, theta in _ik_theta_candidates(model, target):
        q = normalize_angle(theta - offsets)
        q = _fit_to_limits(model, q)
        if q is None:
            continue
        fk = forward_kinematics(model, q)
        dp, da = fk.distance_to(target)
        if dp > position_tol or da > angle_tol:
            continue
        if any(np.max(np.abs(normalize_angle(q - s))) < 1e-8 for _, s in survivors):
            continue
        survivors.append((branch, q))

    if not survivors:
        raise UnreachableError("no in-limit solution reaches the target pose")

    if previous is not None:
        prev = np.asarray(previous.q, dtype=float)

        def key(item):
            branch, q = item
            diff = normalize_angle(q - prev)
            return (float(np.sqrt(np.sum(diff * diff))), branch)
    else:
        def key(item):
            return (item[0],)

    survivors.sort(key=key)
    sols = tuple(JointConfig(q) for _, q in survivors)
    return IkSolutionSet(solutions=sols, target=target, selected_index=0)


def cycle_solution(solution_set: IkSolutionSet, direction: int = 1) -> IkSolutionSet:
    """Advance the selection cyclically; direction is +1 or -1."""
    n = len(solution_set.solutions)
    if n == 0:
        raise EmptySolutionSetError("cannot cycle an empty solution set")
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    return replace(solution_set,
                   selected_index=(solution_set.selected_index + direction) % n)
