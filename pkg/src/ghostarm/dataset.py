"""Demonstration data model: streams, alignment, action chunks, shared
normalization, and the on-disk episode layout.

An episode directory holds `manifest.json`, flat little-endian float64
binaries (`hand.bin`, `robot.bin`, `gripper.bin`, row-major), and a `frames/`
directory with an index of content-addressed image refs.  Every binary is
checksummed in the manifest so round trips are verified bit for bit.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .kinematics import JointConfig
from .transforms import Pose, pose_slerp, quat_slerp

EPISODE_FORMAT_VERSION = 1
FRAMES_INDEX_VERSION = 1

HAND_COLS = 10      # t, pos(3), quat(4), pinch, tracked
ROBOT_COLS = 16     # t, q(6), pos(3), quat(4), gripper, embodiment
GRIPPER_COLS = 2    # t, gripper


class DatasetError(ValueError):
    pass


class InsufficientOverlapError(DatasetError):
    """Streams share fewer than two sample-grid points."""


class EmptyEpisodeError(DatasetError):
    pass


class NotAlignedError(DatasetError):
    """Operation requires align_streams to have run first."""


class FormatVersionError(DatasetError):
    pass


class ChecksumError(DatasetError):
    pass


class CorruptEpisodeError(DatasetError):
    """Structural damage: truncated binaries or inconsistent streams."""


class Embodiment(enum.IntEnum):
    HUMAN = 0
    ROBOT_OVERLAY = 1


class GripperState(enum.IntEnum):
    OPEN = 0
    CLOSED = 1


class Space(str, enum.Enum):
    JOINT = "joint"
    EE_POSE = "ee_pose"


ACTION_DIM = {Space.JOINT: 7, Space.EE_POSE: 8}   # gripper is the last channel


@dataclass(frozen=True)
class HandSample:
    """One tracked-hand observation in the device/world frame."""

    timestamp: float
    pose: Pose
    pinch_distance: float
    tracked: bool = True

    def __post_init__(self):
        if not math.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")
        if self.pinch_distance < 0.0:
            raise ValueError("pinch distance must be non-negative")


@dataclass(frozen=True)
class RobotRecord:
    """One overlay-arm sample; config timestamp is forced to match."""

    timestamp: float
    config: JointConfig
    ee_pose: Pose
    gripper: GripperState
    embodiment: Embodiment = Embodiment.ROBOT_OVERLAY

    def __post_init__(self):
        if self.config.timestamp != self.timestamp:
            object.__setattr__(self, "config",
                               replace(self.config, timestamp=self.timestamp))


@dataclass(frozen=True)
class FrameRecord:
    """Camera frame references for one timestep; refs are content-addressed
    filenames under the episode's frames/ directory, or None."""

    timestamp: float
    ego: str | None = None
    external: str | None = None
    mask_ego: str | None = None
    mask_external: str | None = None


def _check_increasing(name: str, ts: list[float]) -> None:
    for a, b in zip(ts, ts[1:]):
        if not b > a:
            raise DatasetError(f"{name} timestamps must strictly increase")


@dataclass(frozen=True)
class DemoEpisode:
    episode_id: str
    scene_ref: str
    sample_rate_hz: float
    base_pose: Pose
    hand: tuple[HandSample, ...]
    robot: tuple[RobotRecord, ...]
    frames: tuple[FrameRecord, ...] = ()
    aligned: bool = False

    def __post_init__(self):
        if not self.sample_rate_hz > 0.0:
            raise DatasetError("sample rate must be positive")
        object.__setattr__(self, "hand", tuple(self.hand))
        object.__setattr__(self, "robot", tuple(self.robot))
        object.__setattr__(self, "frames", tuple(self.frames))
        _check_increasing("hand", [s.timestamp for s in self.hand])
        _check_increasing("robot", [r.timestamp for r in self.robot])
        _check_increasing("frames", [f.timestamp for f in self.frames])

    @property
    def duration_s(self) -> float:
        return len(self.robot) / self.sample_rate_hz


# ---------------------------------------------------------------- alignment

def _nearest_index(ts: np.ndarray, t: float) -> int:
    """Index of the timestamp closest to t; ties pick the earlier sample."""
    i = int(np.searchsorted(ts, t))
    if i == 0:
        return 0
    if i == len(ts):
        return len(ts) - 1
    before, after = ts[i - 1], ts[i]
    if t - before <= after - t:
        return i - 1
    return i


def _bracket(ts: np.ndarray, t: float) -> tuple[int, float]:
    """(lower index, interpolation weight u) with exact nodes giving u == 0."""
    i = int(np.searchsorted(ts, t, side="right")) - 1
    i = max(0, min(i, len(ts) - 2)) if len(ts) > 1 else 0
    if len(ts) == 1 or ts[i] == t:
        return i, 0.0
    span = ts[i + 1] - ts[i]
    return i, (t - ts[i]) / span


def align_streams(episode: DemoEpisode) -> DemoEpisode:
    """Resample every stream onto the shared sample-rate grid.

    The grid starts at the latest stream start and ends at the earliest
    stream end; joint vectors and positions interpolate linearly,
    orientations slerp, and discrete states (gripper, frame refs, tracked,
    embodiment) take the nearest sample.  Streams already on-grid come back
    identical.
    """
    if not episode.hand or not episode.robot:
        raise EmptyEpisodeError("alignment needs non-empty hand and robot streams")
    rate = episode.sample_rate_hz
    streams = [
        [s.timestamp for s in episode.hand],
        [r.timestamp for r in episode.robot],
    ]
    if episode.frames:
        streams.append([f.timestamp for f in episode.frames])
    t0 = max(ts[0] for ts in streams)
    t1 = min(ts[-1] for ts in streams)
    n = int(math.floor((t1 - t0) * rate + 1e-9)) + 1
    if n < 2:
        raise InsufficientOverlapError(
            f"streams overlap for {max(0.0, t1 - t0):.3f}s, fewer than two grid points")
    grid = t0 + np.arange(n) / rate

    hand_ts = np.array(streams[0])
    robot_ts = np.array(streams[1])

    new_hand = []
    for t in grid:
        i, u = _bracket(hand_ts, t)
        a = episode.hand[i]
        if u == 0.0:
            s = a if a.timestamp == t else replace(a, timestamp=float(t))
        else:
            b = episode.hand[i + 1]
            near = episode.hand[_nearest_index(hand_ts, t)]
            s = HandSample(
                timestamp=float(t),
                pose=pose_slerp(a.pose, b.pose, u),
                pinch_distance=a.pinch_distance + u * (b.pinch_distance - a.pinch_distance),
                tracked=near.tracked,
            )
        new_hand.append(s)

    new_robot = []
    for t in grid:
        i, u = _bracket(robot_ts, t)
        a = episode.robot[i]
        if u == 0.0:
            r = a if a.timestamp == t else RobotRecord(
                float(t), a.config, a.ee_pose, a.gripper, a.embodiment)
        else:
            b = episode.robot[i + 1]
            near = episode.robot[_nearest_index(robot_ts, t)]
            q = a.config.q + u * (b.config.q - a.config.q)
            r = RobotRecord(
                timestamp=float(t),
                config=JointConfig(q, timestamp=float(t)),
                ee_pose=pose_slerp(a.ee_pose, b.ee_pose, u),
                gripper=near.gripper,
                embodiment=near.embodiment,
            )
        new_robot.append(r)

    new_frames: list[FrameRecord] = []
    if episode.frames:
        frame_ts = np.array([f.timestamp for f in episode.frames])
        for t in grid:
            src = episode.frames[_nearest_index(frame_ts, t)]
            new_frames.append(src if src.timestamp == t
                              else replace(src, timestamp=float(t)))

    return replace(episode, hand=tuple(new_hand), robot=tuple(new_robot),
                   frames=tuple(new_frames), aligned=True)


# ----------------------------------------------------------------- chunking

@dataclass(frozen=True)
class ActionChunk:
    """h future actions from one timestep; padded tail repeats the last real
    action with valid == False."""

    actions: np.ndarray          # (h, dim)
    valid: np.ndarray            # (h,) bool
    space: Space
    start_index: int
    start_timestamp: float

    def __post_init__(self):
        actions = np.array(self.actions, dtype=float)
        valid = np.array(self.valid, dtype=bool).reshape(-1)
        if actions.ndim != 2 or len(actions) != len(valid) or len(actions) < 1:
            raise DatasetError("chunk actions and mask must agree and be non-empty")
        if not valid.any():
            raise DatasetError("chunk must contain at least one real action")
        actions.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "valid", valid)

    @property
    def horizon(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class Observation:
    """Proprioceptive observation paired with a chunk."""

    robot: RobotRecord
    frame: FrameRecord | None = None

    @property
    def timestamp(self) -> float:
        return self.robot.timestamp


@dataclass(frozen=True)
class ObservationActionPair:
    observation: Observation
    chunk: ActionChunk


def gripper_value(state: GripperState) -> float:
    return float(int(state))


def action_vector(record: RobotRecord, space: Space) -> np.ndarray:
    """Action row for one record; gripper occupies the last channel."""
    if space is Space.JOINT:
        return np.concatenate([record.config.q, [gripper_value(record.gripper)]])
    if space is Space.EE_POSE:
        return np.concatenate([record.ee_pose.position,
                               record.ee_pose.orientation,
                               [gripper_value(record.gripper)]])
    raise DatasetError(f"unknown action space {space!r}")


def action_matrix(episode: DemoEpisode, space: Space) -> np.ndarray:
    if not episode.robot:
        raise EmptyEpisodeError("episode has no robot records")
    return np.stack([action_vector(r, space) for r in episode.robot])


def make_chunk(actions: np.ndarray, start: int, h: int, space: Space,
               start_timestamp: float) -> ActionChunk:
    """Slice actions[start:start+h] with repeat-last padding past the end."""
    L = len(actions)
    if not 0 <= start < L:
        raise DatasetError(f"chunk start {start} outside stream of length {L}")
    if h < 1:
        raise DatasetError("horizon must be >= 1")
    stop = min(L, start + h)
    real = actions[start:stop]
    rows = [real]
    if stop - start < h:
        rows.append(np.repeat(real[-1:], h - (stop - start), axis=0))
    valid = np.zeros(h, dtype=bool)
    valid[:stop - start] = True
    return ActionChunk(np.concatenate(rows, axis=0), valid, space, start,
                       start_timestamp)


def extract_chunks(episode: DemoEpisode, h: int = 100,
                   space: Space = Space.JOINT) -> list[ObservationActionPair]:
    """One observation/chunk pair per aligned timestep."""
    if not episode.aligned:
        raise NotAlignedError("run align_streams before chunk extraction")
    if not episode.robot:
        raise EmptyEpisodeError("episode has no robot records")
    actions = action_matrix(episode, space)
    pairs = []
    for t, record in enumerate(episode.robot):
        frame = episode.frames[t] if episode.frames else None
        chunk = make_chunk(actions, t, h, space, record.timestamp)
        pairs.append(ObservationActionPair(Observation(record, frame), chunk))
    return pairs


# ------------------------------------------------------------ normalization

NORMALIZATION_FORMAT_VERSION = 1


@dataclass(frozen=True)
class NormalizationStats:
    """Per-dimension z-score stats shared across embodiments.

    Zero-variance dimensions are floored at epsilon so apply() sends them to
    zero (centred) and invert() restores them exactly.
    """

    space: Space
    mean: np.ndarray
    std: np.ndarray
    epsilon: float = 1e-8

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        std = np.array(self.std, dtype=float).reshape(-1)
        if mean.shape != std.shape:
            raise DatasetError("mean/std shape mismatch")
        std = np.maximum(std, self.epsilon)
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def apply(self, actions) -> np.ndarray:
        return (np.asarray(actions, dtype=float) - self.mean) / self.std

    def invert(self, normalized) -> np.ndarray:
        return np.asarray(normalized, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {
            "format_version": NORMALIZATION_FORMAT_VERSION,
            "space": self.space.value,
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "epsilon": self.epsilon,
        }

    @staticmethod
    def from_dict(data: dict) -> "NormalizationStats":
        if data.get("format_version") != NORMALIZATION_FORMAT_VERSION:
            raise FormatVersionError(
                f"unsupported normalization format_version {data.get('format_version')!r}")
        return NormalizationStats(
            space=Space(data["space"]),
            mean=np.array(data["mean"], dtype=float),
            std=np.array(data["std"], dtype=float),
            epsilon=float(data.get("epsilon", 1e-8)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n",
                              encoding="utf-8")

    @staticmethod
    def load(path) -> "NormalizationStats":
        return NormalizationStats.from_dict(
            json.loads(Path(path).read_text(encoding="utf-8")))


def fit_normalization(episodes, space: Space,
                      epsilon: float = 1e-8) -> NormalizationStats:
    """Pool actions from every episode regardless of embodiment tag."""
    rows = []
    for ep in episodes:
        for record in ep.robot:
            rows.append(action_vector(record, space))
    if not rows:
        raise EmptyEpisodeError("no actions to fit normalization on")
    data = np.stack(rows)
    return NormalizationStats(space=space, mean=data.mean(axis=0),
                              std=data.std(axis=0), epsilon=epsilon)


# -------------------------------------------------------------- persistence

def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _hand_matrix(hand: tuple[HandSample, ...]) -> np.ndarray:
    out = np.empty((len(hand), HAND_COLS))
    for i, s in enumerate(hand):
        out[i, 0] = s.timestamp
        out[i, 1:4] = s.pose.position
        out[i, 4:8] = s.pose.orientation
        out[i, 8] = s.pinch_distance
        out[i, 9] = 1.0 if s.tracked else 0.0
    return out


def _robot_matrix(robot: tuple[RobotRecord, ...]) -> np.ndarray:
    out = np.empty((len(robot), ROBOT_COLS))
    for i, r in enumerate(robot):
        out[i, 0] = r.timestamp
        out[i, 1:7] = r.config.q
        out[i, 7:10] = r.ee_pose.position
        out[i, 10:14] = r.ee_pose.orientation
        out[i, 14] = gripper_value(r.gripper)
        out[i, 15] = float(int(r.embodiment))
    return out


def _gripper_matrix(robot: tuple[RobotRecord, ...]) -> np.ndarray:
    out = np.empty((len(robot), GRIPPER_COLS))
    for i, r in enumerate(robot):
        out[i, 0] = r.timestamp
        out[i, 1] = gripper_value(r.gripper)
    return out


def _frames_index(frames: tuple[FrameRecord, ...]) -> dict:
    return {
        "format_version": FRAMES_INDEX_VERSION,
        "frames": [
            {"timestamp": f.timestamp, "ego": f.ego, "external": f.external,
             "mask_ego": f.mask_ego, "mask_external": f.mask_external}
            for f in frames
        ],
    }


def write_episode(episode: DemoEpisode, root) -> Path:
    """Persist one episode under root/<episode_id>; write-then-rename so a
    crash never leaves a half-written directory at the final path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    final = root / episode.episode_id
    tmp = Path(tempfile.mkdtemp(prefix=f".{episode.episode_id}.", dir=root))
    try:
        binaries = {
            "hand.bin": _hand_matrix(episode.hand),
            "robot.bin": _robot_matrix(episode.robot),
            "gripper.bin": _gripper_matrix(episode.robot),
        }
        files = {}
        for name, mat in binaries.items():
            data = np.ascontiguousarray(mat, dtype="<f8").tobytes()
            (tmp / name).write_bytes(data)
            files[name] = {"rows": int(mat.shape[0]), "cols": int(mat.shape[1]),
                           "sha256": _sha256(data)}
        frames_dir = tmp / "frames"
        frames_dir.mkdir()
        index_bytes = (json.dumps(_frames_index(episode.frames), indent=2)
                       + "\n").encode("utf-8")
        (frames_dir / "index.json").write_bytes(index_bytes)
        files["frames/index.json"] = {"rows": len(episode.frames), "cols": 0,
                                      "sha256": _sha256(index_bytes)}
        manifest = {
            "format_version": EPISODE_FORMAT_VERSION,
            "episode_id": episode.episode_id,
            "scene_ref": episode.scene_ref,
            "sample_rate_hz": episode.sample_rate_hz,
            "aligned": episode.aligned,
            "base_pose": episode.base_pose.to_dict(),
            "counts": {"hand": len(episode.hand), "robot": len(episode.robot),
                       "frames": len(episode.frames)},
            "duration_s": episode.duration_s,
            "files": files,
        }
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n",
                                           encoding="utf-8")
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
    except Exception:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return final


def store_frame(episode_dir, payload: bytes, suffix: str = ".png") -> str:
    """Content-addressed frame storage; returns the ref for a FrameRecord."""
    name = _sha256(payload) + suffix
    frames_dir = Path(episode_dir) / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    target = frames_dir / name
    if not target.exists():
        target.write_bytes(payload)
    return name


def _read_binary(path: Path, meta: dict, expect_cols: int) -> np.ndarray:
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CorruptEpisodeError(f"{path}: missing binary ({exc})") from exc
    if _sha256(data) != meta["sha256"]:
        raise ChecksumError(f"{path}: checksum mismatch")
    rows, cols = int(meta["rows"]), int(meta["cols"])
    if cols != expect_cols:
        raise CorruptEpisodeError(f"{path}: expected {expect_cols} cols, manifest says {cols}")
    if len(data) != rows * cols * 8:
        raise CorruptEpisodeError(
            f"{path}: size {len(data)} does not match {rows}x{cols} float64")
    return np.frombuffer(data, dtype="<f8").reshape(rows, cols).astype(float)


def read_episode(directory) -> DemoEpisode:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptEpisodeError(f"{manifest_path}: unreadable ({exc})") from exc
    version = manifest.get("format_version")
    if version != EPISODE_FORMAT_VERSION:
        raise FormatVersionError(
            f"{manifest_path}: unsupported format_version {version!r}")
    files = manifest["files"]

    hand_mat = _read_binary(directory / "hand.bin", files["hand.bin"], HAND_COLS)
    robot_mat = _read_binary(directory / "robot.bin", files["robot.bin"], ROBOT_COLS)
    grip_mat = _read_binary(directory / "gripper.bin", files["gripper.bin"],
                            GRIPPER_COLS)

    index_path = directory / "frames" / "index.json"
    index_bytes = index_path.read_bytes()
    if _sha256(index_bytes) != files["frames/index.json"]["sha256"]:
        raise ChecksumError(f"{index_path}: checksum mismatch")
    index = json.loads(index_bytes.decode("utf-8"))

    counts = manifest["counts"]
    if (len(hand_mat) != counts["hand"] or len(robot_mat) != counts["robot"]
            or len(index["frames"]) != counts["frames"]):
        raise CorruptEpisodeError(f"{directory}: stream counts disagree with manifest")
    if len(grip_mat) != len(robot_mat) or not np.array_equal(
            grip_mat, robot_mat[:, [0, 14]]):
        raise CorruptEpisodeError(f"{directory}: gripper stream disagrees with robot stream")

    hand = tuple(
        HandSample(timestamp=float(row[0]),
                   pose=Pose(row[1:4], row[4:8]),
                   pinch_distance=float(row[8]),
                   tracked=bool(row[9] != 0.0))
        for row in hand_mat
    )
    robot = tuple(
        RobotRecord(timestamp=float(row[0]),
                    config=JointConfig(row[1:7], timestamp=float(row[0])),
                    ee_pose=Pose(row[7:10], row[10:14]),
                    gripper=GripperState(int(row[14])),
                    embodiment=Embodiment(int(row[15])))
        for row in robot_mat
    )
    frames = tuple(
        FrameRecord(timestamp=float(f["timestamp"]), ego=f.get("ego"),
                    external=f.get("external"), mask_ego=f.get("mask_ego"),
                    mask_external=f.get("mask_external"))
        for f in index["frames"]
    )
    return DemoEpisode(
        episode_id=str(manifest["episode_id"]),
        scene_ref=str(manifest["scene_ref"]),
        sample_rate_hz=float(manifest["sample_rate_hz"]),
        base_pose=Pose.from_dict(manifest["base_pose"]),
        hand=hand, robot=robot, frames=frames,
        aligned=bool(manifest.get("aligned", False)),
    )


def list_episodes(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        return []
    return sorted(p.parent for p in root.glob("*/manifest.json"))


def episode_equal(a: DemoEpisode, b: DemoEpisode) -> bool:
    """Bit-exact stream comparison used by round-trip tests."""
    if (a.episode_id, a.scene_ref, a.sample_rate_hz, a.aligned) != \
            (b.episode_id, b.scene_ref, b.sample_rate_hz, b.aligned):
        return False
    if not np.array_equal(a.base_pose.position, b.base_pose.position):
        return False
    if not np.array_equal(a.base_pose.orientation, b.base_pose.orientation):
        return False
    if len(a.hand) != len(b.hand) or len(a.robot) != len(b.robot) \
            or len(a.frames) != len(b.frames):
        return False
    if len(a.hand) and not np.array_equal(_hand_matrix(a.hand), _hand_matrix(b.hand)):
        return False
    if len(a.robot) and not np.array_equal(_robot_matrix(a.robot), _robot_matrix(b.robot)):
        return False
    return all(fa == fb for fa, fb in zip(a.frames, b.frames))
