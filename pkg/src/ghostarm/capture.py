"""Demonstration-capture session: a virtual arm overlay tracks the user's
hand through inverse kinematics, gates every step for feasibility, and
records feasible samples onto a fixed-rate grid.

When a step is infeasible the overlay freezes at the last valid state and
the session waits for the hand to realign within tolerance before resuming;
recording appends are suspended for the whole pause, which is what keeps
finalized episodes free of jumps.  State is immutable: step() and
handle_command() return new SessionState values, so readers can snapshot
freely.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .arm import ArmModel
from .dataset import (DemoEpisode, Embodiment, GripperState, HandSample,
                      RobotRecord)
from .kinematics import (IkSolutionSet, JointConfig, UnreachableError,
                         cycle_solution, forward_kinematics,
                         inverse_kinematics)
from .transforms import Pose, normalize_angle
from .workspace import (EnvironmentCloud, FeasibilityParams,
                        FeasibilityVerdict, Status, check_config, check_step)


class CaptureError(RuntimeError):
    pass


class NotCalibratedError(CaptureError):
    """Session used before a world frame was established."""


class IllegalTransitionError(CaptureError):
    """Command not legal in the current mode."""


class InfeasibleBranchError(CaptureError):
    """Requested solution branch failed its feasibility check."""

    def __init__(self, message: str, verdict: FeasibilityVerdict):
        super().__init__(message)
        self.verdict = verdict


class Mode(str, enum.Enum):
    IDLE = "Idle"
    TRACKING = "Tracking"
    RECORDING = "Recording"
    AWAITING_REALIGNMENT = "AwaitingRealignment"
    BASE_CALIBRATION = "BaseCalibration"


class CommandKind(str, enum.Enum):
    START_RECORDING = "StartRecording"
    STOP_RECORDING = "StopRecording"
    CYCLE_SOLUTION = "CycleSolution"
    BEGIN_BASE_CALIBRATION = "BeginBaseCalibration"
    END_BASE_CALIBRATION = "EndBaseCalibration"
    BASE_JOG = "BaseJog"


@dataclass(frozen=True)
class ControllerCommand:
    kind: CommandKind
    direction: int = 1                       # CycleSolution: +1 or -1
    jog_delta: tuple = (0.0, 0.0, 0.0)       # BaseJog: metres in world axes


@dataclass(frozen=True)
class CaptureConfig:
    sample_rate_hz: float = 10.0
    realign_position_m: float = 0.02
    realign_angle_rad: float = math.radians(5.0)
    pinch_close_m: float = 0.02
    pinch_open_m: float = 0.04
    hand_to_ee: Pose = field(default_factory=Pose.identity)
    feasibility: FeasibilityParams = field(default_factory=FeasibilityParams)


def calibrate_world_frame(gravity, forward) -> Pose:
    """Right-handed calibration basis from a gravity vector and a forward
    direction, both in device coordinates.

    Returned rotation columns are the frame axes expressed in device
    coordinates: y vertical (anti-parallel to gravity), z the
    gravity-orthogonalized forward direction, x = y cross z.  Sessions map
    device poses into world with the inverse of this basis.
    """
    g = np.asarray(gravity, dtype=float).reshape(3)
    f = np.asarray(forward, dtype=float).reshape(3)
    gn = np.linalg.norm(g)
    if gn < 1e-9:
        raise ValueError("gravity vector must be nonzero")
    up = -g / gn
    z = f - np.dot(f, up) * up
    zn = np.linalg.norm(z)
    if zn < 1e-9:
        raise ValueError("forward direction is parallel to gravity")
    z = z / zn
    x = np.cross(up, z)
    R = np.column_stack([x, up, z])
    return Pose.from_matrix(np.block([[R, np.zeros((3, 1))], [np.zeros((1, 3)), 1.0]]))


def map_gripper(pinch_distance: float, previous: GripperState,
                close_m: float = 0.02, open_m: float = 0.04) -> GripperState:
    """Binary pinch mapping with hysteresis; between thresholds the previous
    state holds."""
    if pinch_distance < close_m:
        return GripperState.CLOSED
    if pinch_distance > open_m:
        return GripperState.OPEN
    return previous


def sample_clock(rate_hz: float, start: float, duration: float) -> np.ndarray:
    """Deterministic tick times in the half-open window [start, start+duration)."""
    if not rate_hz > 0.0:
        raise ValueError("rate must be positive")
    count = max(0, int(math.ceil(duration * rate_hz - 1e-9)))
    return start + np.arange(count) / rate_hz


@dataclass(frozen=True)
class TrackState:
    """Last feasible overlay state; `pose` is the world flange pose."""

    config: JointConfig
    pose: Pose


@dataclass(frozen=True)
class EpisodeBuffer:
    episode_id: str
    scene_ref: str
    base_pose: Pose
    sample_rate_hz: float
    hand: tuple[HandSample, ...] = ()
    robot: tuple[RobotRecord, ...] = ()
    grid_start: float | None = None
    next_tick: int = 0


@dataclass(frozen=True)
class OverlayFeedback:
    """Per-step UI feedback mirrored into gateway snapshots."""

    mode: Mode
    end_effector_red: bool
    recording_active: bool
    awaiting_realignment: bool
    overlay: TrackState | None
    gripper: GripperState
    solution_index: int
    solution_count: int
    sample_appended: bool
    verdict: FeasibilityVerdict | None
    message: str = ""


@dataclass(frozen=True)
class SessionState:
    mode: Mode
    base_pose: Pose
    scene_ref: str
    world_from_device: Pose | None
    resume_mode: Mode | None = None
    calibration_return: Mode | None = None
    last_valid: TrackState | None = None
    solutions: IkSolutionSet | None = None
    gripper: GripperState = GripperState.OPEN
    episode: EpisodeBuffer | None = None
    completed: tuple[DemoEpisode, ...] = ()
    episode_seq: int = 0
    clock: float = 0.0

    @property
    def recording(self) -> bool:
        return self.mode is Mode.RECORDING

    @property
    def solution_count(self) -> int:
        return len(self.solutions) if self.solutions is not None else 0

    @property
    def solution_index(self) -> int:
        return self.solutions.selected_index if self.solutions is not None else 0


def new_session(scene_ref: str, base_pose: Pose | None = None,
                world_from_device: Pose | None = None) -> SessionState:
    """world_from_device=None means uncalibrated; step() will refuse to run."""
    return SessionState(
        mode=Mode.IDLE,
        base_pose=base_pose if base_pose is not None else Pose.identity(),
        scene_ref=scene_ref,
        world_from_device=world_from_device,
    )


def drain_completed(state: SessionState) -> tuple[SessionState, tuple[DemoEpisode, ...]]:
    """Hand finalized episodes to the caller and clear them from the state."""
    return replace(state, completed=()), state.completed


def _model_at_base(model: ArmModel, state: SessionState) -> ArmModel:
    return model.with_base(state.base_pose)


def _ee_target(state: SessionState, config: CaptureConfig,
               hand: HandSample) -> Pose:
    return state.world_from_device.compose(hand.pose).compose(config.hand_to_ee)


def _feedback(state: SessionState, *, appended: bool = False,
              verdict: FeasibilityVerdict | None = None,
              message: str = "") -> OverlayFeedback:
    return OverlayFeedback(
        mode=state.mode,
        end_effector_red=state.mode is Mode.AWAITING_REALIGNMENT,
        recording_active=state.mode is Mode.RECORDING,
        awaiting_realignment=state.mode is Mode.AWAITING_REALIGNMENT,
        overlay=state.last_valid,
        gripper=state.gripper,
        solution_index=state.solution_index,
        solution_count=state.solution_count,
        sample_appended=appended,
        verdict=verdict,
        message=message,
    )


def _tick_due(buffer: EpisodeBuffer, timestamp: float) -> bool:
    if buffer.grid_start is None:
        return True
    due_at = buffer.grid_start + buffer.next_tick / buffer.sample_rate_hz
    return timestamp >= due_at - 1e-9


def _append(buffer: EpisodeBuffer, hand: HandSample, track: TrackState,
            gripper: GripperState) -> EpisodeBuffer:
    t = hand.timestamp
    if buffer.grid_start is None:
        grid_start = t
        next_tick = 1
    else:
        grid_start = buffer.grid_start
        elapsed = t - grid_start
        next_tick = int(math.floor(elapsed * buffer.sample_rate_hz + 1e-9)) + 1
    record = RobotRecord(
        timestamp=t,
        config=replace(track.config, timestamp=t),
        ee_pose=track.pose,
        gripper=gripper,
        embodiment=Embodiment.ROBOT_OVERLAY,
    )
    return replace(buffer, hand=buffer.hand + (hand,),
                   robot=buffer.robot + (record,),
                   grid_start=grid_start, next_tick=next_tick)


def _finalize(state: SessionState) -> SessionState:
    """Close the open buffer; zero-sample buffers are dropped."""
    buffer = state.episode
    if buffer is None:
        return state
    if not buffer.robot:
        return replace(state, episode=None)
    episode = DemoEpisode(
        episode_id=buffer.episode_id,
        scene_ref=buffer.scene_ref,
        sample_rate_hz=buffer.sample_rate_hz,
        base_pose=buffer.base_pose,
        hand=buffer.hand,
        robot=buffer.robot,
    )
    return replace(state, episode=None,
                   completed=state.completed + (episode,),
                   episode_seq=state.episode_seq + 1)


def _accept(state: SessionState, hand: HandSample, track: TrackState,
            solutions: IkSolutionSet, gripper: GripperState,
            verdict: FeasibilityVerdict) -> tuple[SessionState, OverlayFeedback]:
    appended = False
    episode = state.episode
    if state.mode is Mode.RECORDING and episode is not None \
            and _tick_due(episode, hand.timestamp):
        episode = _append(episode, hand, track, gripper)
        appended = True
    state = replace(state, last_valid=track, solutions=solutions,
                    gripper=gripper, episode=episode)
    return state, _feedback(state, appended=appended, verdict=verdict)


def _freeze(state: SessionState, verdict: FeasibilityVerdict,
            message: str) -> tuple[SessionState, OverlayFeedback]:
    state = replace(state, mode=Mode.AWAITING_REALIGNMENT,
                    resume_mode=state.mode)
    return state, _feedback(state, verdict=verdict, message=message)


def _track(state: SessionState, hand: HandSample, model: ArmModel,
           cloud: EnvironmentCloud,
           config: CaptureConfig) -> tuple[SessionState, OverlayFeedback]:
    """Tracking/recording path for one tracked hand sample."""
    arm = _model_at_base(model, state)
    target = _ee_target(state, config, hand)
    gripper = map_gripper(hand.pinch_distance, state.gripper,
                          config.pinch_close_m, config.pinch_open_m)

    if state.last_valid is None:
        # bootstrap: no continuity constraint yet, take the first branch
        # that is statically feasible
        try:
            solutions = inverse_kinematics(arm, target)
        except UnreachableError:
            return state, _feedback(state, message="target unreachable")
        for idx, sol in enumerate(solutions.solutions):
            verdict = check_config(arm, sol.q, cloud, config.feasibility)
            if verdict.feasible:
                track = TrackState(
                    config=replace(sol, timestamp=hand.timestamp),
                    pose=forward_kinematics(arm, sol.q))
                solutions = replace(solutions, selected_index=idx)
                if state.mode is Mode.IDLE:
                    state = replace(state, mode=Mode.TRACKING)
                return _accept(state, hand, track, solutions, gripper, verdict)
        return state, _feedback(state, message="no feasible branch at start pose")

    prev = state.last_valid.config
    dt = hand.timestamp - prev.timestamp
    if dt <= 0.0:
        raise CaptureError("hand sample timestamps must strictly increase")
    try:
        solutions = inverse_kinematics(arm, target, previous=prev)
    except UnreachableError:
        return _freeze(state, FeasibilityVerdict(Status.UNREACHABLE),
                       "target unreachable")
    # continuity: follow the nearest branch, keeping angles unwrapped
    q_next = prev.q + normalize_angle(solutions.solutions[0].q - prev.q)
    verdict = check_step(arm, prev.q, q_next, dt, cloud, config.feasibility)
    if not verdict.feasible:
        return _freeze(state, verdict, f"step infeasible: {verdict.status.value}")
    track = TrackState(config=JointConfig(q_next, timestamp=hand.timestamp),
                       pose=forward_kinematics(arm, q_next))
    return _accept(state, hand, track, solutions, gripper, verdict)


def step(state: SessionState, hand: HandSample, model: ArmModel,
         cloud: EnvironmentCloud,
         config: CaptureConfig = CaptureConfig()) -> tuple[SessionState, OverlayFeedback]:
    """Consume one hand sample; returns the new state and UI feedback."""
    if state.world_from_device is None:
        raise NotCalibratedError("world frame was never calibrated")
    if hand.timestamp <= state.clock and state.clock > 0.0:
        raise CaptureError("hand sample timestamps must strictly increase")
    state = replace(state, clock=hand.timestamp)

    if not hand.tracked:
        # dropouts hold the overlay; the next tracked sample is speed-gated
        # over the full elapsed dt, so nothing can jump
        return state, _feedback(state, message="tracking lost")

    if state.mode in (Mode.IDLE, Mode.TRACKING, Mode.RECORDING):
        return _track(state, hand, model, cloud, config)

    if state.mode is Mode.AWAITING_REALIGNMENT:
        target = _ee_target(state, config, hand)
        dp, da = target.distance_to(state.last_valid.pose)
        if dp <= config.realign_position_m and da <= config.realign_angle_rad:
            state = replace(state, mode=state.resume_mode, resume_mode=None)
            return _track(state, hand, model, cloud, config)
        return state, _feedback(
            state, message=f"realign: {dp * 100:.1f} cm, {math.degrees(da):.1f} deg away")

    # BaseCalibration: overlay parked, samples advance the clock only
    return state, _feedback(state, message="base calibration active")


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise IllegalTransitionError(message)


def _cycle(state: SessionState, direction: int, model: ArmModel,
           cloud: EnvironmentCloud, config: CaptureConfig) -> SessionState:
    _require(state.mode in (Mode.TRACKING, Mode.RECORDING,
                            Mode.AWAITING_REALIGNMENT),
             f"CycleSolution not allowed in {state.mode.value}")
    if state.solutions is None or len(state.solutions) == 0:
        raise IllegalTransitionError("no active solution set to cycle")
    arm = _model_at_base(model, state)
    cycled = cycle_solution(state.solutions, direction)
    if cycled.selected_index == state.solutions.selected_index:
        return replace(state, solutions=cycled)
    prev = state.last_valid.config
    q_new = prev.q + normalize_angle(cycled.selected.q - prev.q)

    recording_chain = state.mode is Mode.RECORDING or (
        state.mode is Mode.AWAITING_REALIGNMENT
        and state.resume_mode is Mode.RECORDING)
    if recording_chain:
        # a recorded stream must stay under the speed limit, so the switch
        # is gated over the time elapsed since the last accepted config
        dt = state.clock - prev.timestamp
        if dt <= 0.0:
            if np.array_equal(q_new, prev.q):
                return replace(state, solutions=cycled)
            raise InfeasibleBranchError(
                "branch switch needs elapsed time while recording",
                FeasibilityVerdict(Status.SPEED_LIMIT))
        verdict = check_step(arm, prev.q, q_new, dt, cloud, config.feasibility)
    else:
        verdict = check_config(arm, q_new, cloud, config.feasibility)
    if not verdict.feasible:
        raise InfeasibleBranchError(
            f"branch {cycled.selected_index} infeasible: {verdict.status.value}",
            verdict)
    track = TrackState(config=JointConfig(q_new, timestamp=state.clock),
                       pose=state.last_valid.pose)
    return replace(state, solutions=cycled, last_valid=track)


def handle_command(state: SessionState, command: ControllerCommand,
                   model: ArmModel, cloud: EnvironmentCloud,
                   config: CaptureConfig = CaptureConfig()) -> SessionState:
    """Apply a controller command; raises IllegalTransitionError or
    InfeasibleBranchError, leaving the input state untouched."""
    kind = command.kind

    if kind is CommandKind.START_RECORDING:
        _require(state.mode in (Mode.IDLE, Mode.TRACKING),
                 f"StartRecording not allowed in {state.mode.value}")
        buffer = EpisodeBuffer(
            episode_id=f"ep-{state.episode_seq:04d}",
            scene_ref=state.scene_ref,
            base_pose=state.base_pose,
            sample_rate_hz=config.sample_rate_hz,
        )
        return replace(state, mode=Mode.RECORDING, episode=buffer)

    if kind is CommandKind.STOP_RECORDING:
        if state.mode is Mode.RECORDING:
            state = _finalize(state)
            mode = Mode.TRACKING if state.last_valid is not None else Mode.IDLE
            return replace(state, mode=mode)
        if state.mode is Mode.AWAITING_REALIGNMENT \
                and state.resume_mode is Mode.RECORDING:
            state = _finalize(state)
            return replace(state, resume_mode=Mode.TRACKING)
        raise IllegalTransitionError(
            f"StopRecording not allowed in {state.mode.value}")

    if kind is CommandKind.CYCLE_SOLUTION:
        return _cycle(state, command.direction, model, cloud, config)

    if kind is CommandKind.BEGIN_BASE_CALIBRATION:
        _require(state.mode in (Mode.IDLE, Mode.TRACKING),
                 f"BeginBaseCalibration not allowed in {state.mode.value}")
        return replace(state, mode=Mode.BASE_CALIBRATION,
                       calibration_return=state.mode)

    if kind is CommandKind.END_BASE_CALIBRATION:
        _require(state.mode is Mode.BASE_CALIBRATION,
                 f"EndBaseCalibration not allowed in {state.mode.value}")
        last_valid = state.last_valid
        if last_valid is not None:
            arm = _model_at_base(model, state)
            last_valid = TrackState(
                config=last_valid.config,
                pose=forward_kinematics(arm, last_valid.config.q))
        # stored solutions solved the old base; drop them
        return replace(state, mode=state.calibration_return,
                       calibration_return=None, last_valid=last_valid,
                       solutions=None)

    if kind is CommandKind.BASE_JOG:
        _require(state.mode is Mode.BASE_CALIBRATION,
                 f"BaseJog not allowed in {state.mode.value}")
        delta = np.asarray(command.jog_delta, dtype=float).reshape(3)
        new_base = Pose(state.base_pose.position + delta,
                        state.base_pose.orientation)
        return replace(state, base_pose=new_base)

    raise IllegalTransitionError(f"unknown command {kind!r}")
