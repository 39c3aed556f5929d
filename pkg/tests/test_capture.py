import math

import numpy as np
import pytest
from hypothesis import settings
from hypothesis.stateful import (RuleBasedStateMachine, initialize, invariant,
                                 rule)
from hypothesis import strategies as st

from ghostarm.capture import (CaptureConfig, CaptureError, CommandKind,
                              ControllerCommand, IllegalTransitionError,
                              InfeasibleBranchError, Mode, NotCalibratedError,
                              calibrate_world_frame, drain_completed,
                              handle_command, map_gripper, new_session,
                              sample_clock, step)
from ghostarm.dataset import GripperState, HandSample
from ghostarm.kinematics import forward_kinematics
from ghostarm.transforms import Pose, quat_from_axis_angle, quat_multiply
from ghostarm.workspace import EnvironmentCloud, Status, check_config

DOWN = quat_from_axis_angle([1.0, 0.0, 0.0], math.pi)
EMPTY = EnvironmentCloud(np.empty((0, 3)), source_id="empty")
CFG = CaptureConfig()


def hand(t, pos, quat=DOWN, pinch=0.08, tracked=True):
    return HandSample(timestamp=t, pose=Pose(np.asarray(pos, float), quat),
                      pinch_distance=pinch, tracked=tracked)


def fresh(world=True):
    return new_session("scene", world_from_device=Pose.identity() if world
                       else None)


START = ControllerCommand(CommandKind.START_RECORDING)
STOP = ControllerCommand(CommandKind.STOP_RECORDING)
CYCLE = ControllerCommand(CommandKind.CYCLE_SOLUTION)


# ------------------------------------------------------------- small parts

def test_gripper_hysteresis():
    assert map_gripper(0.01, GripperState.OPEN) is GripperState.CLOSED
    assert map_gripper(0.05, GripperState.CLOSED) is GripperState.OPEN
    # inside the band the previous state holds
    assert map_gripper(0.03, GripperState.OPEN) is GripperState.OPEN
    assert map_gripper(0.03, GripperState.CLOSED) is GripperState.CLOSED


def test_world_frame_calibration_basis():
    g = np.array([0.1, -9.7, 0.4])
    f = np.array([0.3, 0.2, 0.9])
    pose = calibrate_world_frame(g, f)
    R = pose.to_matrix()[:3, :3]
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
    up = R[:, 1]
    assert np.allclose(np.cross(up, -g / np.linalg.norm(g)), 0, atol=1e-12)
    assert float(np.dot(R[:, 2], g)) == pytest.approx(0.0, abs=1e-9)


def test_world_frame_calibration_rejects_degenerate():
    with pytest.raises(ValueError):
        calibrate_world_frame(np.zeros(3), np.array([0, 0, 1.0]))
    with pytest.raises(ValueError):
        calibrate_world_frame(np.array([0, -1.0, 0]), np.array([0, 2.0, 0]))


def test_sample_clock_counts():
    ticks = sample_clock(10.0, 0.0, 10.4)
    assert len(ticks) == 104
    assert ticks[0] == 0.0
    assert ticks[-1] == pytest.approx(10.3)
    assert len(sample_clock(10.0, 0.0, 0.0)) == 0


def test_step_requires_calibration(model):
    state = fresh(world=False)
    with pytest.raises(NotCalibratedError):
        step(state, hand(0.1, [0.25, -0.15, 0.2]), model, EMPTY, CFG)


def test_timestamps_must_increase(model):
    state = fresh()
    state, _ = step(state, hand(0.1, [0.25, -0.15, 0.2]), model, EMPTY, CFG)
    with pytest.raises(CaptureError):
        step(state, hand(0.1, [0.25, -0.15, 0.2]), model, EMPTY, CFG)


# ------------------------------------------------------------ tracking fsm

def test_bootstrap_enters_tracking_with_feasible_branch(model):
    state = fresh()
    state, fb = step(state, hand(0.1, [0.25, -0.15, 0.2]), model, EMPTY, CFG)
    assert state.mode is Mode.TRACKING
    assert state.last_valid is not None
    verdict = check_config(model, state.last_valid.config.q, EMPTY,
                           CFG.feasibility)
    assert verdict.feasible
    assert fb.solution_count >= 1


def test_overlay_tracks_hand_position(model):
    state = fresh()
    t, pos = 0.1, np.array([0.25, -0.15, 0.2])
    state, _ = step(state, hand(t, pos), model, EMPTY, CFG)
    for _ in range(10):
        t += 0.1
        pos = pos + [0.005, 0.002, 0.001]
        state, fb = step(state, hand(t, pos), model, EMPTY, CFG)
        assert fb.mode is Mode.TRACKING
        assert np.allclose(state.last_valid.pose.position, pos, atol=1e-9)


def test_teleport_freezes_bitwise_and_flags_red(model):
    state = fresh()
    state, _ = step(state, hand(0.1, [0.25, -0.15, 0.2]), model, EMPTY, CFG)
    frozen_q = np.array(state.last_valid.config.q)
    frozen_pos = np.array(state.last_valid.pose.position)
    state, fb = step(state, hand(0.2, [0.25, 0.25, 0.2]), model, EMPTY, CFG)
    assert state.mode is Mode.AWAITING_REALIGNMENT
    assert fb.end_effector_red and fb.awaiting_realignment
    assert fb.verdict is not None and not fb.verdict.feasible
    # stays bitwise frozen while the hand wanders
    for k, far in enumerate([[0.3, 0.2, 0.3], [0.1, 0.1, 0.4]]):
        state, fb = step(state, hand(0.3 + 0.1 * k, far), model, EMPTY, CFG)
        assert state.mode is Mode.AWAITING_REALIGNMENT
        assert np.array_equal(state.last_valid.config.q, frozen_q)
        assert np.array_equal(state.last_valid.pose.position, frozen_pos)
        assert not fb.sample_appended


def test_realignment_requires_tolerance(model):
    state = fresh()
    state, _ = step(state, hand(0.1, [0.25, -0.15, 0.2]), model, EMPTY, CFG)
    state, _ = step(state, hand(0.2, [0.25, 0.25, 0.2]), model, EMPTY, CFG)
    assert state.mode is Mode.AWAITING_REALIGNMENT
    # 3 cm away: still waiting
    state, fb = step(state, hand(0.3, [0.25, -0.12, 0.2]), model, EMPTY, CFG)
    assert state.mode is Mode.AWAITING_REALIGNMENT
    assert "realign" in fb.message
    # 1 cm away: resumes and processes this very sample
    state, fb = step(state, hand(0.4, [0.25, -0.14, 0.2]), model, EMPTY, CFG)
    assert state.mode is Mode.TRACKING
    assert np.allclose(state.last_valid.pose.position, [0.25, -0.14, 0.2],
                       atol=1e-9)


def test_realignment_angle_gate(model):
    state = fresh()
    pos = [0.25, -0.15, 0.2]
    state, _ = step(state, hand(0.1, pos), model, EMPTY, CFG)
    state, _ = step(state, hand(0.2, [0.25, 0.25, 0.2]), model, EMPTY, CFG)
    # right position, 20 degrees off: not aligned
    q20 = quat_multiply(DOWN, quat_from_axis_angle([0, 0, 1.0],
                                                   math.radians(20)))
    state, _ = step(state, hand(0.3, pos, quat=q20), model, EMPTY, CFG)
    assert state.mode is Mode.AWAITING_REALIGNMENT
    state, _ = step(state, hand(0.4, pos), model, EMPTY, CFG)
    assert state.mode is Mode.TRACKING


def test_dropout_holds_then_speed_gates(model):
    state = fresh()
    state, _ = step(state, hand(0.1, [0.25, -0.15, 0.2]), model, EMPTY, CFG)
    q_before = np.array(state.last_valid.config.q)
    state, fb = step(state, hand(0.2, [0.25, -0.15, 0.2], tracked=False),
                     model, EMPTY, CFG)
    assert np.array_equal(state.last_valid.config.q, q_before)
    assert "lost" in fb.message
    # long dropout, then a big move: allowed because dt spans the gap
    state, fb = step(state, hand(2.0, [0.25, 0.05, 0.25]), model, EMPTY, CFG)
    assert state.mode is Mode.TRACKING
    dt = 2.0 - 0.1
    dq = np.abs(np.asarray(state.last_valid.config.q) - q_before)
    assert np.all(dq <= model.speed_limits * dt + 1e-9)


# --------------------------------------------------------------- recording

def record_n(state, model, t0, n, pos, pinch=0.08, dt=0.1):
    for k in range(n):
        state, fb = step(state, hand(t0 + k * dt, pos, pinch=pinch),
                         model, EMPTY, CFG)
    return state, t0 + n * dt


def test_record_appends_on_rate_grid(model):
    state = fresh()
    state = handle_command(state, START, model, EMPTY, CFG)
    assert state.mode is Mode.RECORDING
    state, _ = record_n(state, model, 0.1, 20, [0.25, -0.15, 0.2])
    state = handle_command(state, STOP, model, EMPTY, CFG)
    state, done = drain_completed(state)
    assert len(done) == 1
    assert len(done[0].robot) == 20
    ts = [r.timestamp for r in done[0].robot]
    assert np.allclose(np.diff(ts), 0.1, atol=1e-9)


def test_record_downsamples_fast_input(model):
    state = fresh()
    state = handle_command(state, START, model, EMPTY, CFG)
    # 20 Hz input against the 10 Hz grid: every other sample lands
    state, _ = record_n(state, model, 0.1, 40, [0.25, -0.15, 0.2], dt=0.05)
    state = handle_command(state, STOP, model, EMPTY, CFG)
    _, done = drain_completed(state)
    assert len(done[0].robot) == 20


def test_pause_excluded_from_episode(model):
    state = fresh()
    state = handle_command(state, START, model, EMPTY, CFG)
    state, t = record_n(state, model, 0.1, 10, [0.25, -0.15, 0.2])
    state, _ = step(state, hand(t, [0.25, 0.25, 0.2]), model, EMPTY, CFG)
    assert state.mode is Mode.AWAITING_REALIGNMENT
    for k in range(1, 11):     # a second of wandering, none recorded
        state, _ = step(state, hand(t + 0.1 * k, [0.3, 0.2, 0.3]),
                        model, EMPTY, CFG)
    state, _ = step(state, hand(t + 1.2, [0.25, -0.15, 0.2]), model, EMPTY, CFG)
    assert state.mode is Mode.RECORDING
    state, _ = record_n(state, model, t + 1.3, 5, [0.25, -0.15, 0.2])
    state = handle_command(state, STOP, model, EMPTY, CFG)
    _, done = drain_completed(state)
    ep = done[0]
    assert len(ep.robot) == 16          # 10 before + resume sample + 5 after
    # last pre-freeze sample at t=1.0, resume sample at t=2.3
    gaps = np.diff([r.timestamp for r in ep.robot])
    assert gaps.max() == pytest.approx(1.3)
    # velocity invariant across the pause
    for a, b in zip(ep.robot, ep.robot[1:]):
        dq = np.abs(np.asarray(b.config.q) - np.asarray(a.config.q))
        assert np.all(dq <= model.speed_limits * (b.timestamp - a.timestamp)
                      + 1e-9)


def test_gripper_frozen_during_pause(model):
    state = fresh()
    state, _ = step(state, hand(0.1, [0.25, -0.15, 0.2], pinch=0.08),
                    model, EMPTY, CFG)
    assert state.gripper is GripperState.OPEN
    state, _ = step(state, hand(0.2, [0.25, 0.25, 0.2]), model, EMPTY, CFG)
    assert state.mode is Mode.AWAITING_REALIGNMENT
    # pinch closes during the pause but must not latch
    state, fb = step(state, hand(0.3, [0.3, 0.2, 0.3], pinch=0.005),
                     model, EMPTY, CFG)
    assert state.gripper is GripperState.OPEN
    assert fb.gripper is GripperState.OPEN


def test_empty_recording_dropped(model):
    state = fresh()
    state = handle_command(state, START, model, EMPTY, CFG)
    state = handle_command(state, STOP, model, EMPTY, CFG)
    state, done = drain_completed(state)
    assert done == ()
    assert state.episode_seq == 0


def test_stop_during_pause_finalizes(model):
    state = fresh()
    state = handle_command(state, START, model, EMPTY, CFG)
    state, t = record_n(state, model, 0.1, 8, [0.25, -0.15, 0.2])
    state, _ = step(state, hand(t, [0.25, 0.25, 0.2]), model, EMPTY, CFG)
    assert state.mode is Mode.AWAITING_REALIGNMENT
    state = handle_command(state, STOP, model, EMPTY, CFG)
    state, done = drain_completed(state)
    assert len(done) == 1 and len(done[0].robot) == 8
    assert state.mode is Mode.AWAITING_REALIGNMENT
    assert state.resume_mode is Mode.TRACKING


def test_illegal_transitions(model):
    state = fresh()
    with pytest.raises(IllegalTransitionError):
        handle_command(state, STOP, model, EMPTY, CFG)
    with pytest.raises(IllegalTransitionError):
        handle_command(state, CYCLE, model, EMPTY, CFG)
    state = handle_command(state, START, model, EMPTY, CFG)
    with pytest.raises(IllegalTransitionError):
        handle_command(state, START, model, EMPTY, CFG)


# ----------------------------------------------------------- branch cycling

def test_cycle_preserves_ee_pose(model):
    state = fresh()
    state, _ = step(state, hand(0.1, [0.25, -0.15, 0.2]), model, EMPTY, CFG)
    pose_before = state.last_valid.pose
    q_before = np.array(state.last_valid.config.q)
    idx_before = state.solution_index
    state = handle_command(state, CYCLE, model, EMPTY, CFG)
    assert state.solution_index != idx_before
    assert not np.allclose(state.last_valid.config.q, q_before, atol=1e-6)
    assert np.array_equal(state.last_valid.pose.position,
                          pose_before.position)
    assert np.array_equal(state.last_valid.pose.orientation,
                          pose_before.orientation)
    # FK of the new joints still lands on the same flange pose
    fk = forward_kinematics(model, state.last_valid.config.q)
    assert np.allclose(fk.position, pose_before.position, atol=1e-6)


def test_cycle_forward_then_back_restores_branch(model):
    state = fresh()
    state, _ = step(state, hand(0.1, [0.25, -0.15, 0.2]), model, EMPTY, CFG)
    q0 = np.array(state.last_valid.config.q)
    idx0 = state.solution_index
    state = handle_command(state, CYCLE, model, EMPTY, CFG)
    state = handle_command(
        state, ControllerCommand(CommandKind.CYCLE_SOLUTION, direction=-1),
        model, EMPTY, CFG)
    assert state.solution_index == idx0
    assert np.allclose(np.array(state.last_valid.config.q), q0, atol=1e-9)


def test_cycle_refuses_infeasible_branch_without_advancing(model):
    # chained branch switches unwrap toward the current joints, so a distant
    # branch
    # can leave its unwrapped image outside the joint limits; the command must
    # raise and leave the session on the old branch
    state = fresh()
    state, _ = step(state, hand(0.1, [0.172, -0.12, 0.321]), model, EMPTY, CFG)
    seen_raise = False
    for _ in range(state.solution_count):
        idx = state.solution_index
        q = np.array(state.last_valid.config.q)
        try:
            state = handle_command(state, CYCLE, model, EMPTY, CFG)
        except InfeasibleBranchError:
            seen_raise = True
            assert state.solution_index == idx
            assert np.array_equal(state.last_valid.config.q, q)
            break
        assert state.solution_index == (idx + 1) % state.solution_count


def test_cycle_while_recording_is_speed_gated(model):
    state = fresh()
    state = handle_command(state, START, model, EMPTY, CFG)
    state, _ = step(state, hand(0.1, [0.25, -0.15, 0.2]), model, EMPTY, CFG)
    # no time has passed since the accepted sample: a real switch would
    # teleport the recorded stream, so it must be refused
    with pytest.raises(InfeasibleBranchError) as err:
        handle_command(state, CYCLE, model, EMPTY, CFG)
    assert err.value.verdict.status is Status.SPEED_LIMIT


def test_cycle_during_long_pause_allowed(model):
    state = fresh()
    state = handle_command(state, START, model, EMPTY, CFG)
    state, _ = step(state, hand(0.1, [0.25, -0.15, 0.2]), model, EMPTY, CFG)
    state, _ = step(state, hand(0.2, [0.25, 0.25, 0.2]), model, EMPTY, CFG)
    assert state.mode is Mode.AWAITING_REALIGNMENT
    # five seconds of pause buys plenty of speed headroom
    for k in range(50):
        state, _ = step(state, hand(0.3 + 0.1 * k, [0.3, 0.2, 0.3]),
                        model, EMPTY, CFG)
    pose_before = state.last_valid.pose
    state = handle_command(state, CYCLE, model, EMPTY, CFG)
    assert np.array_equal(state.last_valid.pose.position,
                          pose_before.position)


# --------------------------------------------------------- base calibration

def test_base_calibration_flow(model):
    state = fresh()
    state, _ = step(state, hand(0.1, [0.25, -0.15, 0.2]), model, EMPTY, CFG)
    q_held = np.array(state.last_valid.config.q)
    state = handle_command(
        state, ControllerCommand(CommandKind.BEGIN_BASE_CALIBRATION),
        model, EMPTY, CFG)
    assert state.mode is Mode.BASE_CALIBRATION
    # samples only advance the clock while calibrating
    state, fb = step(state, hand(0.2, [0.4, 0.4, 0.4]), model, EMPTY, CFG)
    assert state.mode is Mode.BASE_CALIBRATION
    assert np.array_equal(state.last_valid.config.q, q_held)
    state = handle_command(
        state, ControllerCommand(CommandKind.BASE_JOG,
                                 jog_delta=(0.01, -0.02, 0.005)),
        model, EMPTY, CFG)
    state = handle_command(
        state, ControllerCommand(CommandKind.BASE_JOG,
                                 jog_delta=(0.01, 0.0, 0.0)),
        model, EMPTY, CFG)
    assert np.allclose(state.base_pose.position, [0.02, -0.02, 0.005])
    state = handle_command(
        state, ControllerCommand(CommandKind.END_BASE_CALIBRATION),
        model, EMPTY, CFG)
    assert state.mode is Mode.TRACKING
    # overlay pose re-expressed under the moved base, same joints
    fk = model.with_base(state.base_pose)
    expect = forward_kinematics(fk, q_held)
    assert np.allclose(state.last_valid.pose.position, expect.position,
                       atol=1e-12)


def test_base_jog_requires_calibration_mode(model):
    state = fresh()
    with pytest.raises(IllegalTransitionError):
        handle_command(state,
                       ControllerCommand(CommandKind.BASE_JOG,
                                         jog_delta=(0.01, 0, 0)),
                       model, EMPTY, CFG)


def test_begin_calibration_illegal_while_recording(model):
    state = fresh()
    state = handle_command(state, START, model, EMPTY, CFG)
    with pytest.raises(IllegalTransitionError):
        handle_command(
            state, ControllerCommand(CommandKind.BEGIN_BASE_CALIBRATION),
            model, EMPTY, CFG)


# ------------------------------------------------------ stateful fuzzing

class CaptureMachine(RuleBasedStateMachine):
    """Random sessions against an empty scene; finalized episodes must obey
    the safety invariants regardless of the command/sample interleaving."""

    def __init__(self):
        super().__init__()
        self.model = None

    @initialize()
    def setup(self):
        from ghostarm.arm import default_arm
        self.model = default_arm()
        self.state = fresh()
        self.t = 0.0
        self.pos = np.array([0.25, -0.15, 0.2])
        self.finalized = []

    def _step(self, sample):
        self.state, fb = step(self.state, sample, self.model, EMPTY, CFG)
        self.state, done = drain_completed(self.state)
        self.finalized.extend(done)
        return fb

    def _command(self, command):
        try:
            self.state = handle_command(self.state, command, self.model,
                                        EMPTY, CFG)
        except (IllegalTransitionError, InfeasibleBranchError):
            pass
        self.state, done = drain_completed(self.state)
        self.finalized.extend(done)

    @rule(dx=st.floats(-0.02, 0.02), dy=st.floats(-0.02, 0.02),
          dz=st.floats(-0.015, 0.015),
          pinch=st.floats(0.0, 0.08))
    def smooth_motion(self, dx, dy, dz, pinch):
        self.t += 0.1
        self.pos = np.clip(self.pos + [dx, dy, dz],
                           [0.18, -0.22, 0.12], [0.32, 0.22, 0.30])
        self._step(hand(self.t, self.pos, pinch=pinch))

    @rule()
    def teleport(self):
        self.t += 0.1
        self._step(hand(self.t, [0.6, 0.6, 0.6]))

    @rule()
    def return_to_overlay(self):
        self.t += 0.1
        if self.state.last_valid is not None:
            self.pos = np.array(self.state.last_valid.pose.position)
        self._step(hand(self.t, self.pos))

    @rule()
    def dropout(self):
        self.t += 0.1
        self._step(hand(self.t, self.pos, tracked=False))

    @rule()
    def start(self):
        self._command(START)

    @rule()
    def stop(self):
        self._command(STOP)

    @rule(direction=st.sampled_from([1, -1]))
    def cycle(self, direction):
        self._command(ControllerCommand(CommandKind.CYCLE_SOLUTION,
                                        direction=direction))

    @invariant()
    def finalized_episodes_are_safe(self):
        if self.model is None:
            return
        for ep in self.finalized:
            assert len(ep.robot) >= 1
            ts = [r.timestamp for r in ep.robot]
            assert all(b > a for a, b in zip(ts, ts[1:]))
            for a, b in zip(ep.robot, ep.robot[1:]):
                dt = b.timestamp - a.timestamp
                dq = np.abs(np.asarray(b.config.q) - np.asarray(a.config.q))
                assert np.all(dq <= self.model.speed_limits * dt + 1e-9)
            for r in ep.robot:
                assert check_config(self.model, r.config.q, EMPTY,
                                    CFG.feasibility).feasible


CaptureMachine.TestCase.settings = settings(
    max_examples=15, stateful_step_count=40, deadline=None)
TestCaptureMachine = CaptureMachine.TestCase
