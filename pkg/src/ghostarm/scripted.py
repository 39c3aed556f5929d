"""Scripted hand-motion driver: waypoint trajectories stand in for a live
tracked hand so the whole capture pipeline runs without hardware.

Ships two task recipes over synthetic tabletop scenes (single pick-and-place
and a three-phase stacking task) plus an obstacle variant whose trajectory
probes a wall, retreats to realign, and detours over the top.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arm import ArmModel, default_arm
from .capture import (CaptureConfig, CommandKind, ControllerCommand,
                      OverlayFeedback, SessionState, handle_command,
                      new_session, sample_clock, step)
from .dataset import DemoEpisode, HandSample
from .transforms import Pose, pose_slerp, quat_from_axis_angle
from .workspace import Box, FeasibilityParams, Scene, make_scene

TRAJECTORY_FORMAT_VERSION = 1

# tool axis straight down; every recipe approaches from above
DOWNWARD = quat_from_axis_angle([1.0, 0.0, 0.0], math.pi)


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class Waypoint:
    time: float
    pose: Pose
    pinch: float


@dataclass(frozen=True)
class ScriptedTrajectory:
    """Piecewise pose path: positions interpolate linearly, orientations
    slerp, pinch interpolates linearly; optional seeded position noise."""

    waypoints: tuple[Waypoint, ...]
    noise_sigma: tuple | None = None     # per-axis metres
    seed: int = 0

    def __post_init__(self):
        wps = tuple(self.waypoints)
        if len(wps) < 2:
            raise TrajectoryError("need at least two waypoints")
        times = [w.time for w in wps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise TrajectoryError("waypoint times must strictly increase")
        object.__setattr__(self, "waypoints", wps)
        if self.noise_sigma is not None:
            sigma = tuple(float(v) for v in self.noise_sigma)
            if len(sigma) != 3 or any(v < 0 for v in sigma):
                raise TrajectoryError("noise_sigma must be three non-negative values")
            object.__setattr__(self, "noise_sigma", sigma)

    @property
    def start(self) -> float:
        return self.waypoints[0].time

    @property
    def end(self) -> float:
        return self.waypoints[-1].time

    def sample_at(self, t: float) -> tuple[Pose, float]:
        """Noise-free pose and pinch at time t (clamped to the span)."""
        wps = self.waypoints
        if t <= wps[0].time:
            return wps[0].pose, wps[0].pinch
        if t >= wps[-1].time:
            return wps[-1].pose, wps[-1].pinch
        times = [w.time for w in wps]
        i = int(np.searchsorted(times, t, side="right")) - 1
        a, b = wps[i], wps[i + 1]
        u = (t - a.time) / (b.time - a.time)
        return pose_slerp(a.pose, b.pose, u), a.pinch + u * (b.pinch - a.pinch)


def generate(trajectory: ScriptedTrajectory, rate_hz: float) -> list[HandSample]:
    """Hand samples on the tick grid over [start, end); deterministic per seed."""
    ticks = sample_clock(rate_hz, trajectory.start,
                         trajectory.end - trajectory.start)
    rng = np.random.default_rng(trajectory.seed)
    sigma = trajectory.noise_sigma
    samples = []
    for t in ticks:
        pose, pinch = trajectory.sample_at(float(t))
        if sigma is not None:
            pose = Pose(pose.position + rng.normal(0.0, sigma), pose.orientation)
        samples.append(HandSample(timestamp=float(t), pose=pose,
                                  pinch_distance=max(0.0, pinch)))
    return samples


def trajectory_to_dict(trajectory: ScriptedTrajectory) -> dict:
    return {
        "format_version": TRAJECTORY_FORMAT_VERSION,
        "waypoints": [
            {"t": w.time, "position": [float(v) for v in w.pose.position],
             "orientation": [float(v) for v in w.pose.orientation],
             "pinch": w.pinch}
            for w in trajectory.waypoints
        ],
        "noise_sigma": list(trajectory.noise_sigma) if trajectory.noise_sigma else None,
        "seed": trajectory.seed,
    }


def trajectory_from_dict(data: dict) -> ScriptedTrajectory:
    version = data.get("format_version")
    if version != TRAJECTORY_FORMAT_VERSION:
        raise TrajectoryError(f"unsupported trajectory format_version {version!r}")
    try:
        wps = tuple(
            Waypoint(time=float(w["t"]),
                     pose=Pose(np.array(w["position"], dtype=float),
                               np.array(w["orientation"], dtype=float)),
                     pinch=float(w["pinch"]))
            for w in data["waypoints"]
        )
    except (KeyError, TypeError) as exc:
        raise TrajectoryError(f"malformed trajectory: {exc}") from exc
    noise = data.get("noise_sigma")
    return ScriptedTrajectory(
        waypoints=wps,
        noise_sigma=tuple(noise) if noise else None,
        seed=int(data.get("seed", 0)),
    )


def load_trajectory(path) -> ScriptedTrajectory:
    return trajectory_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_trajectory(trajectory: ScriptedTrajectory, path) -> None:
    Path(path).write_text(json.dumps(trajectory_to_dict(trajectory), indent=2) + "\n",
                          encoding="utf-8")


# ------------------------------------------------------------ scene pieces

def table_points(x_range=(0.02, 0.46), y_range=(-0.32, 0.32), z: float = 0.0,
                 spacing: float = 0.02, hole_radius: float = 0.17) -> np.ndarray:
    """Tabletop plane with a cutout around the arm base at the origin."""
    xs = np.arange(x_range[0], x_range[1] + 1e-9, spacing)
    ys = np.arange(y_range[0], y_range[1] + 1e-9, spacing)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)])
    keep = np.hypot(pts[:, 0], pts[:, 1]) > hole_radius
    return pts[keep]


def box_points(center, size, spacing: float = 0.012) -> np.ndarray:
    """Solid grid of points filling an axis-aligned box."""
    center = np.asarray(center, dtype=float)
    size = np.asarray(size, dtype=float)
    axes = [np.arange(-s / 2, s / 2 + 1e-9, spacing) for s in size]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return center + np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])


def _roi_box(center, half_xy: float = 0.06, z_top: float = 0.16) -> Box:
    cx, cy = float(center[0]), float(center[1])
    return Box(np.array([cx - half_xy, cy - half_xy, -0.005]),
               np.array([cx + half_xy, cy + half_xy, z_top]))


# -------------------------------------------------------------- recipes

@dataclass(frozen=True)
class TaskBundle:
    """A scene plus the scripted trajectory that solves it."""

    name: str
    scene: Scene
    trajectory: ScriptedTrajectory
    metadata: dict = field(default_factory=dict)


HOVER_Z = 0.25
GRASP_Z = 0.115
PINCH_OPEN = 0.08
PINCH_CLOSED = 0.010


def _pose(x: float, y: float, z: float) -> Pose:
    return Pose(np.array([x, y, z]), DOWNWARD)


def _jitter(rng: np.random.Generator, magnitude: float = 0.03) -> np.ndarray:
    return rng.uniform(-magnitude, magnitude, 2)


def pickplace_bundle(seed: int = 0, noise_sigma=None) -> TaskBundle:
    """Grasp a block in the pick region and set it down in the place region.

    Region centres are jittered by the seed so repeated recordings vary;
    the object clusters sit inside exemption boxes so the gripper may enter.
    """
    rng = np.random.default_rng(seed)
    pick = np.array([0.25, -0.15]) + _jitter(rng)
    place = np.array([0.25, 0.15]) + _jitter(rng)

    pick_roi = _roi_box(pick)
    place_roi = _roi_box(place)
    block = box_points([pick[0], pick[1], 0.05], [0.04, 0.04, 0.10])
    points = np.vstack([table_points(), block])
    scene = make_scene(
        scene_id=f"pickplace-{seed:04d}",
        points=points,
        params=FeasibilityParams(),
        exemption_boxes=(pick_roi, place_roi),
        rois={"pick": pick_roi, "place": place_roi},
    )

    px, py = float(pick[0]), float(pick[1])
    qx, qy = float(place[0]), float(place[1])
    wps = (
        Waypoint(0.0, _pose(px, py, 0.22), PINCH_OPEN),
        Waypoint(1.2, _pose(px, py, GRASP_Z), PINCH_OPEN),
        Waypoint(1.8, _pose(px, py, GRASP_Z), PINCH_CLOSED),
        Waypoint(2.4, _pose(px, py, GRASP_Z), PINCH_CLOSED),
        Waypoint(3.6, _pose(px, py, HOVER_Z), PINCH_CLOSED),
        Waypoint(6.2, _pose(qx, qy, HOVER_Z), PINCH_CLOSED),
        Waypoint(7.4, _pose(qx, qy, GRASP_Z), PINCH_CLOSED),
        Waypoint(8.0, _pose(qx, qy, GRASP_Z), PINCH_OPEN),
        Waypoint(9.2, _pose(qx, qy, 0.24), PINCH_OPEN),
        Waypoint(10.4, _pose(0.22, 0.05, 0.26), PINCH_OPEN),
    )
    trajectory = ScriptedTrajectory(wps, noise_sigma=noise_sigma, seed=seed)
    return TaskBundle(
        name="pickplace", scene=scene, trajectory=trajectory,
        metadata={"seed": seed, "pick": [px, py], "place": [qx, qy]})


def _pick_place_phase(t0: float, src, dst, span: float = 5.0) -> list[Waypoint]:
    sx, sy = float(src[0]), float(src[1])
    dx, dy = float(dst[0]), float(dst[1])
    return [
        Waypoint(t0 + 0.0, _pose(sx, sy, 0.22), PINCH_OPEN),
        Waypoint(t0 + span * 0.16, _pose(sx, sy, GRASP_Z), PINCH_OPEN),
        Waypoint(t0 + span * 0.28, _pose(sx, sy, GRASP_Z), PINCH_CLOSED),
        Waypoint(t0 + span * 0.44, _pose(sx, sy, HOVER_Z), PINCH_CLOSED),
        Waypoint(t0 + span * 0.68, _pose(dx, dy, HOVER_Z), PINCH_CLOSED),
        Waypoint(t0 + span * 0.82, _pose(dx, dy, GRASP_Z), PINCH_CLOSED),
        Waypoint(t0 + span * 0.92, _pose(dx, dy, GRASP_Z), PINCH_OPEN),
        Waypoint(t0 + span, _pose(dx, dy, 0.22), PINCH_OPEN),
    ]


def stack_bundle(seed: int = 0, noise_sigma=None) -> TaskBundle:
    """Three pick-place phases nesting bowls into the middle position."""
    rng = np.random.default_rng(seed)
    left = np.array([0.22, -0.18]) + _jitter(rng, 0.02)
    right = np.array([0.22, 0.18]) + _jitter(rng, 0.02)
    middle = np.array([0.28, 0.0]) + _jitter(rng, 0.02)
    seat = middle + np.array([0.02, 0.02])

    rois = {
        "left": _roi_box(left),
        "right": _roi_box(right),
        "middle": _roi_box(middle, half_xy=0.08),
    }
    bowls = np.vstack([
        box_points([left[0], left[1], 0.03], [0.07, 0.07, 0.06]),
        box_points([right[0], right[1], 0.03], [0.07, 0.07, 0.06]),
        box_points([seat[0], seat[1], 0.03], [0.07, 0.07, 0.06]),
    ])
    scene = make_scene(
        scene_id=f"stack-{seed:04d}",
        points=np.vstack([table_points(), bowls]),
        params=FeasibilityParams(),
        exemption_boxes=tuple(rois.values()),
        rois=rois,
    )

    # phase 1 seats the middle bowl, then the side bowls nest into it;
    # 1.1 s travel legs between phases keep joint rates well under limit
    wps = (_pick_place_phase(0.0, seat, middle, span=4.5)
           + _pick_place_phase(5.6, left, middle, span=4.5)
           + _pick_place_phase(11.2, right, middle, span=4.5))
    trajectory = ScriptedTrajectory(tuple(wps), noise_sigma=noise_sigma, seed=seed)
    return TaskBundle(
        name="stack", scene=scene, trajectory=trajectory,
        metadata={"seed": seed, "left": left.tolist(), "right": right.tolist(),
                  "middle": middle.tolist()})


def pickplace_obstacle_bundle(seed: int = 0) -> TaskBundle:
    """Pick-and-place with a wall across the transport path.

    The script drives into the wall (capture freezes), retreats along its own
    path until the overlay realigns, then climbs over the top; the recorded
    episode therefore contains a pause but stays fully feasible.
    """
    base = pickplace_bundle(seed)
    px, py = base.metadata["pick"]
    qx, qy = base.metadata["place"]
    # wall top at 0.26 m: blocks the 0.25 m hover transport, but a 0.34 m
    # crossing clears it without stretching the arm toward full extension
    wall_top = 0.26
    cross_z = 0.34
    wall = box_points([px, 0.0, wall_top / 2], [0.14, 0.024, wall_top],
                      spacing=0.012)
    scene = make_scene(
        scene_id=f"pickplace-wall-{seed:04d}",
        points=np.vstack([base.scene.raw_points, wall]),
        params=base.scene.params,
        exemption_boxes=base.scene.exemption_boxes,
        rois=dict(base.scene.rois, wall=Box(
            np.array([px - 0.07, -0.012, 0.0]),
            np.array([px + 0.07, 0.012, wall_top]))),
    )
    wps = (
        Waypoint(0.0, _pose(px, py, 0.22), PINCH_OPEN),
        Waypoint(1.2, _pose(px, py, GRASP_Z), PINCH_OPEN),
        Waypoint(1.8, _pose(px, py, GRASP_Z), PINCH_CLOSED),
        Waypoint(3.0, _pose(px, py, HOVER_Z), PINCH_CLOSED),
        # probe: head straight for the place side, into the wall
        Waypoint(4.8, _pose(px, 0.06, HOVER_Z), PINCH_CLOSED),
        # retreat along the same line; tracking realigns on the way back
        Waypoint(6.2, _pose(px, py * 0.6, HOVER_Z), PINCH_CLOSED),
        # detour over the top
        Waypoint(7.4, _pose(px, py * 0.6, cross_z), PINCH_CLOSED),
        Waypoint(9.0, _pose(qx, qy * 0.6, cross_z), PINCH_CLOSED),
        Waypoint(10.2, _pose(qx, qy, 0.26), PINCH_CLOSED),
        Waypoint(11.2, _pose(qx, qy, GRASP_Z), PINCH_CLOSED),
        Waypoint(11.8, _pose(qx, qy, GRASP_Z), PINCH_OPEN),
        Waypoint(12.8, _pose(qx, qy, 0.24), PINCH_OPEN),
    )
    trajectory = ScriptedTrajectory(wps, seed=seed)
    return TaskBundle(
        name="pickplace-wall", scene=scene, trajectory=trajectory,
        metadata=dict(base.metadata, wall_top=wall_top))


def task_recipes(seed: int = 0) -> dict[str, TaskBundle]:
    return {
        "pickplace": pickplace_bundle(seed),
        "stack": stack_bundle(seed),
        "pickplace-wall": pickplace_obstacle_bundle(seed),
    }


def save_bundle(bundle: TaskBundle, directory) -> dict[str, Path]:
    """Materialize scene + trajectory files; returns the written paths."""
    from .workspace import save_scene
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = save_scene(bundle.scene, directory / "scene")
    traj_path = directory / "trajectory.json"
    save_trajectory(bundle.trajectory, traj_path)
    return {"scene": manifest, "trajectory": traj_path}


# ------------------------------------------------------------- the driver

def record_trajectory(trajectory: ScriptedTrajectory, scene: Scene,
                      model: ArmModel | None = None,
                      config: CaptureConfig | None = None,
                      base_pose: Pose | None = None,
                      ) -> tuple[DemoEpisode | None, SessionState, list[OverlayFeedback]]:
    """Run one scripted capture: StartRecording, stream every sample,
    StopRecording.  Returns (episode or None if nothing recorded, final
    state, per-sample feedback)."""
    model = model if model is not None else default_arm()
    config = config if config is not None else CaptureConfig(
        feasibility=scene.params)
    state = new_session(scene.scene_id, base_pose=base_pose,
                        world_from_device=Pose.identity())
    state = handle_command(state, ControllerCommand(CommandKind.START_RECORDING),
                           model, scene.cloud, config)
    feedbacks = []
    for sample in generate(trajectory, config.sample_rate_hz):
        state, fb = step(state, sample, model, scene.cloud, config)
        feedbacks.append(fb)
    state = handle_command(state, ControllerCommand(CommandKind.STOP_RECORDING),
                           model, scene.cloud, config)
    episode = state.completed[-1] if state.completed else None
    return episode, state, feedbacks
