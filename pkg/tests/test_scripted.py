import math

import numpy as np
import pytest

from ghostarm.capture import Mode
from ghostarm.dataset import GripperState
from ghostarm.scripted import (ScriptedTrajectory, TrajectoryError, Waypoint,
                               box_points, generate, load_trajectory,
                               pickplace_bundle, pickplace_obstacle_bundle,
                               record_trajectory, save_bundle, save_trajectory,
                               stack_bundle, table_points, task_recipes,
                               trajectory_from_dict, trajectory_to_dict)
from ghostarm.transforms import Pose, quat_from_axis_angle
from ghostarm.validator import replay_validate
from ghostarm.workspace import load_scene

DOWN = quat_from_axis_angle([1.0, 0.0, 0.0], math.pi)


def simple_traj(noise=None, seed=0):
    return ScriptedTrajectory(
        waypoints=(
            Waypoint(0.0, Pose(np.array([0.2, -0.1, 0.25]), DOWN), 0.08),
            Waypoint(1.0, Pose(np.array([0.3, 0.1, 0.25]), DOWN), 0.02),
        ),
        noise_sigma=noise, seed=seed)


# ------------------------------------------------------------- trajectories

def test_waypoint_interpolation():
    traj = simple_traj()
    pose, pinch = traj.sample_at(0.0)
    assert np.allclose(pose.position, [0.2, -0.1, 0.25])
    assert pinch == pytest.approx(0.08)
    pose, pinch = traj.sample_at(0.5)
    assert np.allclose(pose.position, [0.25, 0.0, 0.25], atol=1e-12)
    assert pinch == pytest.approx(0.05)
    pose, pinch = traj.sample_at(1.0)
    assert np.allclose(pose.position, [0.3, 0.1, 0.25])
    # clamped outside the span
    pose, _ = traj.sample_at(5.0)
    assert np.allclose(pose.position, [0.3, 0.1, 0.25])


def test_trajectory_needs_increasing_waypoints():
    w = Waypoint(0.0, Pose(np.array([0.2, 0.0, 0.2]), DOWN), 0.08)
    with pytest.raises(TrajectoryError):
        ScriptedTrajectory(waypoints=(w,))
    with pytest.raises(TrajectoryError):
        ScriptedTrajectory(waypoints=(
            w, Waypoint(0.0, Pose(np.array([0.3, 0.0, 0.2]), DOWN), 0.08)))


def test_generate_noise_free_is_exact():
    traj = simple_traj()
    samples = generate(traj, rate_hz=10.0)
    assert len(samples) == 10
    assert samples[0].timestamp == 0.0
    want, _ = traj.sample_at(0.5)
    got = [s for s in samples if abs(s.timestamp - 0.5) < 1e-9][0]
    assert np.array_equal(got.pose.position, want.position)


def test_generate_determinism_and_seeding():
    noisy = simple_traj(noise=(0.001, 0.001, 0.001), seed=42)
    a = generate(noisy, 10.0)
    b = generate(noisy, 10.0)
    for s, t in zip(a, b):
        assert np.array_equal(s.pose.position, t.pose.position)
    other = generate(simple_traj(noise=(0.001, 0.001, 0.001), seed=43), 10.0)
    assert any(not np.array_equal(s.pose.position, t.pose.position)
               for s, t in zip(a, other))
    clean = generate(simple_traj(), 10.0)
    deltas = [np.linalg.norm(s.pose.position - t.pose.position)
              for s, t in zip(a, clean)]
    assert max(deltas) < 0.01    # noise is small jitter, not a new path


def test_trajectory_json_roundtrip(tmp_path):
    traj = simple_traj(noise=(0.002, 0.001, 0.0), seed=9)
    path = tmp_path / "traj.json"
    save_trajectory(traj, path)
    back = load_trajectory(path)
    assert back.seed == traj.seed
    assert back.noise_sigma == traj.noise_sigma
    assert len(back.waypoints) == len(traj.waypoints)
    for w, v in zip(traj.waypoints, back.waypoints):
        assert w.time == v.time
        assert np.array_equal(w.pose.position, v.pose.position)
        assert np.array_equal(w.pose.orientation, v.pose.orientation)
        assert w.pinch == v.pinch
    data = trajectory_to_dict(traj)
    again = trajectory_from_dict(data)
    assert again.waypoints[1].time == traj.waypoints[1].time


# ------------------------------------------------------------ scene helpers

def test_table_points_geometry():
    pts = table_points()
    assert pts.shape[1] == 3
    assert np.all(pts[:, 2] == 0.0)
    r = np.hypot(pts[:, 0], pts[:, 1])
    assert r.min() >= 0.17          # keep-out hole around the base
    assert pts[:, 0].min() >= 0.02 and pts[:, 0].max() <= 0.46
    gaps = np.diff(np.unique(pts[:, 0]))
    assert np.allclose(gaps, 0.02, atol=1e-9)


def test_box_points_fill_volume_on_grid():
    pts = box_points([0.0, 0.0, 0.1], [0.1, 0.05, 0.2], spacing=0.01)
    assert pts[:, 0].min() >= -0.05 - 1e-9
    assert pts[:, 0].max() <= 0.05 + 1e-9
    assert pts[:, 2].min() >= 0.0 - 1e-9
    assert pts[:, 2].max() <= 0.2 + 1e-9
    # dense occupancy grid: one point per lattice cell
    nx = len(np.unique(np.round(pts[:, 0], 9)))
    ny = len(np.unique(np.round(pts[:, 1], 9)))
    nz = len(np.unique(np.round(pts[:, 2], 9)))
    assert len(pts) == nx * ny * nz
    for axis, n in ((0, nx), (1, ny), (2, nz)):
        gaps = np.diff(np.unique(np.round(pts[:, axis], 9)))
        assert np.allclose(gaps, gaps[0], atol=1e-9)


# ----------------------------------------------------------------- recipes

def test_bundles_are_deterministic():
    a = pickplace_bundle(seed=3)
    b = pickplace_bundle(seed=3)
    assert np.array_equal(a.scene.cloud.points, b.scene.cloud.points)
    for w, v in zip(a.trajectory.waypoints, b.trajectory.waypoints):
        assert np.array_equal(w.pose.position, v.pose.position)
    c = pickplace_bundle(seed=4)
    assert not np.array_equal(
        a.trajectory.waypoints[1].pose.position,
        c.trajectory.waypoints[1].pose.position)


def test_task_recipes_named():
    recipes = task_recipes()
    assert set(recipes) == {"pickplace", "stack", "pickplace-wall"}
    for name, bundle in recipes.items():
        assert bundle.name == name
        assert bundle.trajectory.start == 0.0
        assert bundle.scene.cloud.points.shape[1] == 3


def test_save_bundle_roundtrip(tmp_path):
    bundle = pickplace_bundle(seed=1)
    paths = save_bundle(bundle, tmp_path)
    scene = load_scene(paths["scene"])
    traj = load_trajectory(paths["trajectory"])
    assert scene.scene_id == bundle.scene.scene_id
    assert np.array_equal(scene.cloud.points, bundle.scene.cloud.points)
    assert len(traj.waypoints) == len(bundle.trajectory.waypoints)


# ------------------------------------------------- scripted capture drives

def test_pickplace_records_cleanly(recorded_pickplace, pickplace, model):
    episode, state, feedbacks = recorded_pickplace
    assert len(episode.robot) == 104
    assert episode.duration_s == pytest.approx(10.4)
    assert not any(fb.awaiting_realignment for fb in feedbacks)
    grippers = [r.gripper for r in episode.robot]
    assert grippers[0] is GripperState.OPEN
    assert GripperState.CLOSED in grippers
    assert grippers[-1] is GripperState.OPEN
    # overlay follows the scripted hand to numerical precision
    for s, r in zip(episode.hand, episode.robot):
        assert np.allclose(s.pose.position, r.ee_pose.position, atol=1e-9)
    report = replay_validate(episode, pickplace.scene, model)
    assert report.success


def test_stack_records_three_cycles(recorded_stack, stack, model):
    episode, _, _ = recorded_stack
    assert len(episode.robot) == 157
    closures = sum(
        1 for a, b in zip(episode.robot, episode.robot[1:])
        if a.gripper is GripperState.OPEN and b.gripper is GripperState.CLOSED)
    assert closures == 3
    assert replay_validate(episode, stack.scene, model).success


def test_wall_course_freezes_and_realigns(wall_bundle, model):
    episode, state, feedbacks = record_trajectory(
        wall_bundle.trajectory, wall_bundle.scene, model)
    assert episode is not None
    waiting = [fb for fb in feedbacks if fb.awaiting_realignment]
    assert waiting, "the obstacle probe must trigger a freeze"
    assert any(fb.end_effector_red for fb in feedbacks)
    assert len(episode.robot) + len(waiting) == len(feedbacks)
    assert state.mode in (Mode.TRACKING, Mode.IDLE)
    report = replay_validate(episode, wall_bundle.scene, model)
    assert report.success, report.failure_reason
    # recorded stream never jumps across the pause
    for a, b in zip(episode.robot, episode.robot[1:]):
        dt = b.timestamp - a.timestamp
        dq = np.abs(np.asarray(b.config.q) - np.asarray(a.config.q))
        assert np.all(dq <= model.speed_limits * dt + 1e-9)


def test_record_trajectory_empty_when_infeasible_everywhere(model):
    # a target outside the reachable envelope never tracks, so recording
    # yields nothing
    traj = ScriptedTrajectory(waypoints=(
        Waypoint(0.0, Pose(np.array([1.5, 0.0, 0.2]), DOWN), 0.08),
        Waypoint(1.0, Pose(np.array([1.5, 0.1, 0.2]), DOWN), 0.08)))
    bundle = pickplace_bundle(seed=0)
    episode, state, _ = record_trajectory(traj, bundle.scene, model)
    assert episode is None
    assert state.episode_seq == 0
