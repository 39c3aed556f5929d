"""Workspace feasibility: arm capsules against point clouds, self-collision,
joint-limit / speed / singularity gating, and scene file IO.

The voxel index is an exactness-preserving accelerator: queries expand the
search radius until the candidate set provably contains the nearest point, so
indexed results equal the brute-force scan bit for bit.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arm import ArmModel
from .kinematics import link_transforms, manipulability

SCENE_FORMAT_VERSION = 1


class SceneError(ValueError):
    """Malformed scene manifest."""


class CloudFormatError(SceneError):
    """Unreadable or truncated point-cloud file."""


class Status(str, enum.Enum):
    FEASIBLE = "Feasible"
    ENV_COLLISION = "EnvCollision"
    SELF_COLLISION = "SelfCollision"
    SPEED_LIMIT = "SpeedLimit"
    SINGULAR = "Singular"
    UNREACHABLE = "Unreachable"


@dataclass(frozen=True)
class FeasibilityVerdict:
    status: Status
    min_clearance: float | None = None
    offending_link: int | None = None
    offending_joint: int | None = None

    @property
    def feasible(self) -> bool:
        return self.status is Status.FEASIBLE


@dataclass(frozen=True)
class FeasibilityParams:
    clearance_m: float = 0.005
    self_clearance_m: float = 0.0
    manipulability_min: float = 1e-4


def point_segment_distances(points, p0, p1) -> np.ndarray:
    """Distances from (N, 3) points to segment p0..p1; handles zero length."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d = p1 - p0
    L2 = float(np.dot(d, d))
    if L2 == 0.0:
        return np.linalg.norm(points - p0, axis=1)
    t = np.clip((points - p0) @ d / L2, 0.0, 1.0)
    closest = p0 + t[:, None] * d
    return np.linalg.norm(points - closest, axis=1)


def segment_segment_distance(p1, q1, p2, q2) -> float:
    """Closest distance between segments p1..q1 and p2..q2 (clamped form)."""
    p1 = np.asarray(p1, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = float(np.dot(d1, d1))
    e = float(np.dot(d2, d2))
    f = float(np.dot(d2, r))
    eps = 1e-13
    if a <= eps and e <= eps:
        return float(np.linalg.norm(r))
    if a <= eps:
        s = 0.0
        t = min(1.0, max(0.0, f / e))
    else:
        c = float(np.dot(d1, r))
        if e <= eps:
            t = 0.0
            s = min(1.0, max(0.0, -c / a))
        else:
            b = float(np.dot(d1, d2))
            denom = a * e - b * b
            s = min(1.0, max(0.0, (b * f - c * e) / denom)) if denom > eps else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = min(1.0, max(0.0, -c / a))
            elif t > 1.0:
                t = 1.0
                s = min(1.0, max(0.0, (b - c) / a))
    return float(np.linalg.norm((p1 + s * d1) - (p2 + t * d2)))


@dataclass(frozen=True, eq=False)
class EnvironmentCloud:
    """Static obstacle points with an optional uniform voxel index."""

    points: np.ndarray
    source_id: str = ""
    voxel_size: float | None = 0.05
    _grid: dict = field(default=None, repr=False, compare=False)
    _bounds: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if pts.size and not np.all(np.isfinite(pts)):
            raise CloudFormatError("cloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        grid = None
        bounds = None
        if self.voxel_size is not None and len(pts):
            if not self.voxel_size > 0.0:
                raise ValueError("voxel_size must be positive")
            cells = np.floor(pts / self.voxel_size).astype(np.int64)
            acc: dict[tuple[int, int, int], list[int]] = {}
            for i, key in enumerate(map(tuple, cells)):
                acc.setdefault(key, []).append(i)
            grid = {k: np.array(v, dtype=np.intp) for k, v in acc.items()}
            bounds = (pts.min(axis=0), pts.max(axis=0))
        object.__setattr__(self, "_grid", grid)
        object.__setattr__(self, "_bounds", bounds)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def is_empty(self) -> bool:
        return len(self.points) == 0

    @staticmethod
    def empty(source_id: str = "") -> "EnvironmentCloud":
        return EnvironmentCloud(np.zeros((0, 3)), source_id=source_id)

    def _gather(self, lo, hi, r) -> np.ndarray:
        vox = self.voxel_size
        clo = np.floor((lo - r) / vox).astype(np.int64)
        chi = np.floor((hi + r) / vox).astype(np.int64)
        span = int(np.prod(chi - clo + 1))
        picks = []
        if span > len(self._grid):
            for key, idx in self._grid.items():
                if (clo[0] <= key[0] <= chi[0] and clo[1] <= key[1] <= chi[1]
                        and clo[2] <= key[2] <= chi[2]):
                    picks.append(idx)
        else:
            for ix in range(clo[0], chi[0] + 1):
                for iy in range(clo[1], chi[1] + 1):
                    for iz in range(clo[2], chi[2] + 1):
                        idx = self._grid.get((ix, iy, iz))
                        if idx is not None:
                            picks.append(idx)
        if not picks:
            return np.empty(0, dtype=np.intp)
        return np.concatenate(picks)

    def min_distance_to_segment(self, p0, p1) -> float:
        """Exact nearest distance from the cloud to a segment."""
        if self.is_empty:
            return math.inf
        p0 = np.asarray(p0, dtype=float)
        p1 = np.asarray(p1, dtype=float)
        if self._grid is None:
            return float(point_segment_distances(self.points, p0, p1).min())
        lo = np.minimum(p0, p1)
        hi = np.maximum(p0, p1)
        blo, bhi = self._bounds
        r = self.voxel_size
        while True:
            if np.all(lo - r <= blo) and np.all(hi + r >= bhi):
                return float(point_segment_distances(self.points, p0, p1).min())
            idx = self._gather(lo, hi, r)
            if idx.size:
                d = float(point_segment_distances(self.points[idx], p0, p1).min())
                if d <= r:
                    # any point nearer than d lies inside the gathered box
                    return d
                r = d
            else:
                r *= 2.0


def link_capsules_world(model: ArmModel, q) -> list[tuple[int, np.ndarray, np.ndarray, float]]:
    """(link_index, p0_world, p1_world, radius) for every collision capsule."""
    frames = link_transforms(model, q)
    out = []
    for li, group in enumerate(model.collision_geometry, start=1):
        R = frames[li][:3, :3]
        t = frames[li][:3, 3]
        for c in group:
            out.append((li, R @ c.p0 + t, R @ c.p1 + t, c.radius))
    return out


def min_distance(model: ArmModel, q, cloud: EnvironmentCloud) -> tuple[float, int | None]:
    """Smallest capsule-surface clearance against the cloud and its link."""
    best = math.inf
    best_link = None
    for li, p0, p1, radius in link_capsules_world(model, q):
        d = cloud.min_distance_to_segment(p0, p1) - radius
        if d < best:
            best = d
            best_link = li
    return best, best_link


def self_collision(model: ArmModel, q,
                   self_clearance_m: float = 0.0) -> FeasibilityVerdict:
    """Pairwise capsule check over non-adjacent links; adjacent pairs exempt."""
    caps = link_capsules_world(model, q)
    groups: dict[int, list] = {}
    for li, p0, p1, r in caps:
        groups.setdefault(li, []).append((p0, p1, r))
    links = sorted(groups)
    for i in links:
        for j in links:
            if j < i + 2:
                continue
            for p0a, p1a, ra in groups[i]:
                for p0b, p1b, rb in groups[j]:
                    d = segment_segment_distance(p0a, p1a, p0b, p1b) - ra - rb
                    if d < self_clearance_m:
                        return FeasibilityVerdict(Status.SELF_COLLISION,
                                                 min_clearance=d,
                                                 offending_link=i)
    return FeasibilityVerdict(Status.FEASIBLE)


def _limit_check(model: ArmModel, q) -> FeasibilityVerdict | None:
    q = np.asarray(q, dtype=float)
    lo_bad = q < model.joint_limits[:, 0]
    hi_bad = q > model.joint_limits[:, 1]
    bad = lo_bad | hi_bad
    if bad.any():
        return FeasibilityVerdict(Status.UNREACHABLE,
                                  offending_joint=int(np.argmax(bad)) + 1)
    return None


def _static_checks(model: ArmModel, q, cloud: EnvironmentCloud,
                   params: FeasibilityParams) -> FeasibilityVerdict:
    if manipulability(model, q) < params.manipulability_min:
        return FeasibilityVerdict(Status.SINGULAR)
    verdict = self_collision(model, q, params.self_clearance_m)
    if not verdict.feasible:
        return verdict
    clearance, link = min_distance(model, q, cloud)
    if clearance < params.clearance_m:
        return FeasibilityVerdict(Status.ENV_COLLISION,
                                  min_clearance=clearance,
                                  offending_link=link)
    return FeasibilityVerdict(Status.FEASIBLE, min_clearance=clearance)


def check_config(model: ArmModel, q, cloud: EnvironmentCloud,
                 params: FeasibilityParams = FeasibilityParams()) -> FeasibilityVerdict:
    """Static feasibility: limits, singularity, self-collision, clearance."""
    bad = _limit_check(model, q)
    if bad is not None:
        return bad
    return _static_checks(model, q, cloud, params)


def check_step(model: ArmModel, q_prev, q_next, dt: float,
               cloud: EnvironmentCloud,
               params: FeasibilityParams = FeasibilityParams()) -> FeasibilityVerdict:
    """Feasibility of stepping q_prev -> q_next over dt seconds.

    Gate order is fixed: joint limits, per-joint speed, singularity,
    self-collision, environment clearance; the first failure wins.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    bad = _limit_check(model, q_next)
    if bad is not None:
        return bad
    q_prev = np.asarray(q_prev, dtype=float)
    q_next = np.asarray(q_next, dtype=float)
    speed = np.abs(q_next - q_prev) / dt
    over = speed > model.speed_limits
    if over.any():
        return FeasibilityVerdict(Status.SPEED_LIMIT,
                                  offending_joint=int(np.argmax(over)) + 1)
    return _static_checks(model, q_next, cloud, params)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; used for exemption regions and task ROIs."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float).reshape(3)
        hi = np.array(self.hi, dtype=float).reshape(3)
        if not np.all(lo <= hi):
            raise SceneError("box min must not exceed max")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lo, self.hi)

    def to_dict(self) -> dict:
        return {"min": [float(v) for v in self.lo],
                "max": [float(v) for v in self.hi]}

    @staticmethod
    def from_dict(d: dict) -> "Box":
        return Box(np.array(d["min"], dtype=float), np.array(d["max"], dtype=float))


@dataclass(frozen=True, eq=False)
class Scene:
    """A point-cloud workspace with thresholds and task regions.

    `cloud` holds the active (exemption-filtered) points used for gating;
    `raw_points` keeps the unfiltered cloud for display or re-export.
    """

    scene_id: str
    cloud: EnvironmentCloud
    raw_points: np.ndarray
    params: FeasibilityParams = FeasibilityParams()
    exemption_boxes: tuple[Box, ...] = ()
    rois: dict = field(default_factory=dict)


def save_ply(path, points) -> None:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(points)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("end_header\n")
        for x, y, z in points:
            # shortest round-trip decimal form, so reload is bit-exact
            fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")


def load_ply(path) -> np.ndarray:
    """ASCII PLY with x, y, z as the leading vertex properties."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise CloudFormatError(f"{path}: unreadable ({exc})") from exc
    if not lines or lines[0].strip() != "ply":
        raise CloudFormatError(f"{path}: missing ply magic")
    count = None
    props: list[str] = []
    body_at = None
    saw_format = False
    for li, line in enumerate(lines[1:], start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1:2] != ["ascii"]:
                raise CloudFormatError(f"{path}: only ascii format supported")
            saw_format = True
        elif tok[0] == "element" and len(tok) == 3 and tok[1] == "vertex":
            count = int(tok[2])
        elif tok[0] == "property" and count is not None:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body_at = li + 1
            break
    if not saw_format or count is None or body_at is None:
        raise CloudFormatError(f"{path}: incomplete header")
    if props[:3] != ["x", "y", "z"]:
        raise CloudFormatError(f"{path}: vertex properties must start with x y z")
    body = [ln for ln in lines[body_at:] if ln.strip()]
    if len(body) < count:
        raise CloudFormatError(
            f"{path}: truncated vertex list ({len(body)} of {count} rows)")
    pts = np.empty((count, 3))
    for i in range(count):
        tok = body[i].split()
        if len(tok) < len(props):
            raise CloudFormatError(f"{path}: short vertex row {i}")
        try:
            pts[i] = [float(tok[0]), float(tok[1]), float(tok[2])]
        except ValueError as exc:
            raise CloudFormatError(f"{path}: bad vertex row {i}") from exc
    if pts.size and not np.all(np.isfinite(pts)):
        raise CloudFormatError(f"{path}: non-finite vertex coordinates")
    return pts


def save_cloud_csv(path, points) -> None:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in points:
            fh.write(f"{float(x)!r},{float(y)!r},{float(z)!r}\n")


def load_cloud_csv(path) -> np.ndarray:
    path = Path(path)
    try:
        pts = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    except (OSError, ValueError) as exc:
        raise CloudFormatError(f"{path}: unreadable csv ({exc})") from exc
    if pts.size == 0:
        return np.zeros((0, 3))
    if pts.shape[1] < 3:
        raise CloudFormatError(f"{path}: csv rows need x,y,z columns")
    pts = pts[:, :3]
    if not np.all(np.isfinite(pts)):
        raise CloudFormatError(f"{path}: non-finite coordinates")
    return pts


def load_cloud(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return load_ply(path)
    if path.suffix.lower() == ".csv":
        return load_cloud_csv(path)
    raise CloudFormatError(f"{path}: unsupported cloud format {path.suffix!r}")


def scene_to_dict(scene: Scene, cloud_file: str) -> dict:
    return {
        "format_version": SCENE_FORMAT_VERSION,
        "scene_id": scene.scene_id,
        "cloud": cloud_file,
        "clearance_m": scene.params.clearance_m,
        "self_clearance_m": scene.params.self_clearance_m,
        "manipulability_min": scene.params.manipulability_min,
        "exemption_boxes": [b.to_dict() for b in scene.exemption_boxes],
        "rois": {name: b.to_dict() for name, b in scene.rois.items()},
    }


def save_scene(scene: Scene, directory, cloud_format: str = "ply") -> Path:
    """Write cloud + manifest into a directory; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cloud_file = f"cloud.{cloud_format}"
    if cloud_format == "ply":
        save_ply(directory / cloud_file, scene.raw_points)
    elif cloud_format == "csv":
        save_cloud_csv(directory / cloud_file, scene.raw_points)
    else:
        raise SceneError(f"unsupported cloud format {cloud_format!r}")
    manifest = directory / "scene.json"
    manifest.write_text(
        json.dumps(scene_to_dict(scene, cloud_file), indent=2) + "\n",
        encoding="utf-8")
    return manifest


def make_scene(scene_id: str, points, params: FeasibilityParams = FeasibilityParams(),
               exemption_boxes: tuple[Box, ...] = (), rois: dict | None = None,
               voxel_size: float | None = 0.05) -> Scene:
    """Build a Scene from raw points, applying exemption boxes to the
    active cloud while keeping the raw points for export."""
    raw = np.asarray(points, dtype=float).reshape(-1, 3)
    active = raw
    if len(raw) and exemption_boxes:
        drop = np.zeros(len(raw), dtype=bool)
        for box in exemption_boxes:
            drop |= box.contains(raw)
        active = raw[~drop]
    cloud = EnvironmentCloud(active, source_id=scene_id, voxel_size=voxel_size)
    return Scene(scene_id=scene_id, cloud=cloud, raw_points=raw, params=params,
                 exemption_boxes=tuple(exemption_boxes), rois=dict(rois or {}))


def load_scene(manifest_path) -> Scene:
    manifest_path = Path(manifest_path)
    try:
        data = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SceneError(f"{manifest_path}: unreadable manifest ({exc})") from exc
    version = data.get("format_version")
    if version != SCENE_FORMAT_VERSION:
        raise SceneError(
            f"{manifest_path}: unsupported format_version {version!r}")
    try:
        points = load_cloud(manifest_path.parent / data["cloud"])
        params = FeasibilityParams(
            clearance_m=float(data.get("clearance_m", 0.005)),
            self_clearance_m=float(data.get("self_clearance_m", 0.0)),
            manipulability_min=float(data.get("manipulability_min", 1e-4)),
        )
        boxes = tuple(Box.from_dict(b) for b in data.get("exemption_boxes", []))
        rois = {name: Box.from_dict(b) for name, b in data.get("rois", {}).items()}
        return make_scene(str(data["scene_id"]), points, params, boxes, rois)
    except KeyError as exc:
        raise SceneError(f"{manifest_path}: missing field {exc}") from exc
