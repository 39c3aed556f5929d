"""Deployment-side action consumption: a control loop that queries a policy
for action chunks on a replan schedule, temporally ensembles overlapping
chunks, smooths, and emits one action per control tick.

No learned policy ships here; the built-in policies replay a recorded
episode, hold a constant, or track scripted joint waypoints.  Everything
runs on an injectable clock so tests are exact and instantaneous.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import (ActionChunk, DemoEpisode, Space, action_matrix,
                      make_chunk)
from .transforms import (quat_conjugate, quat_exp, quat_log, quat_multiply,
                         quat_normalize)

SCHEDULE_FORMAT_VERSION = 1
TRACE_FORMAT_VERSION = 1

DEFAULT_ENSEMBLE_DECAY = 0.01    # weight = exp(-decay * age_in_ticks)
DEFAULT_SMOOTHING_WINDOW = 3


class ExecutorError(RuntimeError):
    pass


class NoPredictionError(ExecutorError):
    """No live chunk covers the requested control tick."""


class PolicyTimeout(ExecutorError):
    """A policy query exceeded its deadline."""


class SinkRejected(ExecutorError):
    """The downstream sink refused an emitted action."""


@dataclass(frozen=True)
class ExecutionSchedule:
    """Replan cadence: execute_per_chunk ticks of each horizon-length chunk
    are consumed before the next policy query."""

    control_rate_hz: float = 25.0
    execute_per_chunk: int = 25
    horizon: int = 100

    def __post_init__(self):
        if self.control_rate_hz <= 0:
            raise ValueError("control_rate_hz must be positive")
        if not 1 <= self.execute_per_chunk <= self.horizon:
            raise ValueError("need 1 <= execute_per_chunk <= horizon")

    @property
    def tick_duration(self) -> float:
        return 1.0 / self.control_rate_hz

    def to_dict(self) -> dict:
        return {
            "format_version": SCHEDULE_FORMAT_VERSION,
            "control_rate_hz": self.control_rate_hz,
            "execute_per_chunk": self.execute_per_chunk,
            "horizon": self.horizon,
        }

    @staticmethod
    def from_dict(data: dict) -> "ExecutionSchedule":
        version = data.get("format_version")
        if version != SCHEDULE_FORMAT_VERSION:
            raise ValueError(f"unsupported schedule format_version {version!r}")
        return ExecutionSchedule(
            control_rate_hz=float(data.get("control_rate_hz", 25.0)),
            execute_per_chunk=int(data.get("execute_per_chunk", 25)),
            horizon=int(data.get("horizon", 100)),
        )


def load_schedule(path) -> ExecutionSchedule:
    return ExecutionSchedule.from_dict(
        json.loads(Path(path).read_text(encoding="utf-8")))


def save_schedule(schedule: ExecutionSchedule, path) -> None:
    Path(path).write_text(json.dumps(schedule.to_dict(), indent=2) + "\n",
                          encoding="utf-8")


class VirtualClock:
    """Deterministic loop clock; advances only when told."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def advance(self, dt: float) -> None:
        self._now += dt


class WallClock:
    def now(self) -> float:
        return time.monotonic()

    def advance(self, dt: float) -> None:
        time.sleep(dt)


# ------------------------------------------------------------- ensembling

def _average_quats(quats: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted mean in the tangent space of the first (newest) quaternion;
    signs aligned to it before mapping."""
    ref = quats[0]
    ref_inv = quat_conjugate(ref)
    tangent = np.zeros(3)
    for q, w in zip(quats, weights):
        if float(np.dot(q, ref)) < 0.0:
            q = -q
        tangent += w * quat_log(quat_multiply(ref_inv, q))
    return quat_normalize(quat_multiply(ref, quat_exp(tangent)))


@dataclass(frozen=True)
class _Entry:
    issued_tick: int
    chunk: ActionChunk


class EnsembleBuffer:
    """Live action chunks keyed by issue tick; aggregation weights decay
    exponentially with prediction age measured in control ticks."""

    def __init__(self, horizon: int, decay: float = DEFAULT_ENSEMBLE_DECAY,
                 space: Space = Space.JOINT):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        if decay < 0:
            raise ValueError("decay must be non-negative")
        self.horizon = horizon
        self.decay = decay
        self.space = space
        self._entries: list[_Entry] = []

    def __len__(self) -> int:
        return len(self._entries)

    def add(self, tick: int, chunk: ActionChunk) -> None:
        if chunk.horizon != self.horizon:
            raise ValueError(
                f"chunk horizon {chunk.horizon} != buffer horizon {self.horizon}")
        if chunk.space is not self.space:
            raise ValueError(f"chunk space {chunk.space} != buffer {self.space}")
        self._entries.append(_Entry(tick, chunk))

    def evict(self, tick: int) -> None:
        """Drop chunks whose coverage ended: age >= horizon ticks."""
        self._entries = [e for e in self._entries
                         if tick - e.issued_tick < self.horizon]

    def contributions(self, tick: int) -> list[tuple[int, np.ndarray]]:
        """(age, action) for every live chunk covering this tick, newest
        first.  Padded tail rows contribute: they are hold-last commands."""
        out = []
        for e in sorted(self._entries, key=lambda e: -e.issued_tick):
            offset = tick - e.issued_tick
            if 0 <= offset < e.chunk.horizon:
                out.append((offset, e.chunk.actions[offset]))
        return out

    def ensemble(self, tick: int) -> np.ndarray:
        contribs = self.contributions(tick)
        if not contribs:
            raise NoPredictionError(f"no chunk covers tick {tick}")
        newest = contribs[0][1]
        if all(np.array_equal(a, newest) for _, a in contribs[1:]):
            # agreement short-circuit keeps exact replay bit-identical
            return newest.copy()
        ages = np.array([age for age, _ in contribs], dtype=float)
        rows = np.stack([a for _, a in contribs])
        weights = np.exp(-self.decay * ages)
        weights /= weights.sum()
        if self.space is Space.EE_POSE:
            out = weights @ rows
            out[3:7] = _average_quats(rows[:, 3:7], weights)
            return out
        return weights @ rows


class MovingAverageSmoother:
    """Causal moving average over the last `window` actions.  The gripper
    channel (last) always passes through; in end-effector space only the
    position block is smoothed so quaternions stay unit."""

    def __init__(self, window: int = DEFAULT_SMOOTHING_WINDOW,
                 space: Space = Space.JOINT):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.space = space
        self._history: list[np.ndarray] = []

    def push(self, action: np.ndarray) -> np.ndarray:
        action = np.asarray(action, dtype=float)
        if self.window == 1:
            return action
        self._history.append(action)
        if len(self._history) > self.window:
            self._history.pop(0)
        mean = np.mean(self._history, axis=0)
        out = action.copy()
        stop = 3 if self.space is Space.EE_POSE else len(action) - 1
        out[:stop] = mean[:stop]
        return out

    def reset(self) -> None:
        self._history.clear()


# ---------------------------------------------------------------- policies

@dataclass(frozen=True)
class PolicyRequest:
    """What a policy sees at each replan: loop position plus whatever the
    state source produced."""

    tick: int
    time_s: float
    observation: object | None = None


class ReplayPolicy:
    """Deterministic playback: the chunk issued at control tick k starts at
    recorded sample k (clamped to the final sample, which then holds)."""

    def __init__(self, episode: DemoEpisode, horizon: int = 100,
                 space: Space = Space.JOINT):
        self.actions = action_matrix(episode, space)
        self.horizon = horizon
        self.space = space
        self.timestamps = [r.timestamp for r in episode.robot]

    def predict(self, request: PolicyRequest) -> ActionChunk:
        start = min(request.tick, len(self.actions) - 1)
        return make_chunk(self.actions, start, self.horizon, self.space,
                          self.timestamps[start])


class ConstantPolicy:
    def __init__(self, action, horizon: int = 100, space: Space = Space.JOINT):
        self.action = np.asarray(action, dtype=float)
        self.horizon = horizon
        self.space = space

    def predict(self, request: PolicyRequest) -> ActionChunk:
        actions = np.repeat(self.action[None, :], self.horizon, axis=0)
        return ActionChunk(actions, np.ones(self.horizon, dtype=bool),
                           self.space, request.tick, request.time_s)


class WaypointPolicy:
    """Piecewise-linear joint ramps against the loop clock."""

    def __init__(self, times, actions, control_rate_hz: float = 25.0,
                 horizon: int = 100, space: Space = Space.JOINT):
        self.times = np.asarray(times, dtype=float)
        self.actions = np.asarray(actions, dtype=float)
        if len(self.times) != len(self.actions) or len(self.times) < 1:
            raise ValueError("need matching, non-empty times and actions")
        self.rate = control_rate_hz
        self.horizon = horizon
        self.space = space

    def _at(self, t: float) -> np.ndarray:
        idx = np.searchsorted(self.times, t, side="right") - 1
        if idx < 0:
            return self.actions[0]
        if idx >= len(self.times) - 1:
            return self.actions[-1]
        a, b = self.times[idx], self.times[idx + 1]
        u = (t - a) / (b - a)
        return (1 - u) * self.actions[idx] + u * self.actions[idx + 1]

    def predict(self, request: PolicyRequest) -> ActionChunk:
        rows = np.stack([self._at(request.time_s + j / self.rate)
                         for j in range(self.horizon)])
        return ActionChunk(rows, np.ones(self.horizon, dtype=bool),
                           self.space, request.tick, request.time_s)


# -------------------------------------------------------------- the loop

@dataclass(frozen=True)
class QueryEvent:
    tick: int
    time_s: float
    latency_s: float
    chunk_start: int
    valid_count: int
    actions: np.ndarray

    def to_dict(self) -> dict:
        return {"kind": "query", "tick": self.tick, "time_s": self.time_s,
                "latency_s": self.latency_s, "chunk_start": self.chunk_start,
                "valid_count": self.valid_count,
                "actions": self.actions.tolist()}


@dataclass(frozen=True)
class EmitEvent:
    tick: int
    time_s: float
    action: np.ndarray
    contributing_ages: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"kind": "emit", "tick": self.tick, "time_s": self.time_s,
                "action": self.action.tolist(),
                "contributing_ages": list(self.contributing_ages)}


@dataclass(frozen=True)
class ExecutionTrace:
    schedule: ExecutionSchedule
    space: Space
    queries: tuple[QueryEvent, ...]
    emits: tuple[EmitEvent, ...]
    metadata: dict = field(default_factory=dict)

    @property
    def actions(self) -> np.ndarray:
        return np.stack([e.action for e in self.emits])


def save_trace(trace: ExecutionTrace, path) -> None:
    """One JSON record per line: a header, then every query and emit in tick
    order; stable field order keeps runs diffable."""
    events = sorted(list(trace.queries) + list(trace.emits),
                    key=lambda e: (e.tick, isinstance(e, EmitEvent)))
    with open(path, "w", encoding="utf-8") as fh:
        header = {"kind": "header", "format_version": TRACE_FORMAT_VERSION,
                  "schedule": trace.schedule.to_dict(),
                  "space": trace.space.value, "metadata": trace.metadata}
        fh.write(json.dumps(header) + "\n")
        for event in events:
            fh.write(json.dumps(event.to_dict()) + "\n")


def load_trace_records(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def run_policy_loop(policy, schedule: ExecutionSchedule,
                    state_source=None, sink=None, *,
                    total_ticks: int | None = None,
                    duration_s: float | None = None,
                    space: Space = Space.JOINT,
                    ensemble_decay: float = DEFAULT_ENSEMBLE_DECAY,
                    smoothing_window: int = DEFAULT_SMOOTHING_WINDOW,
                    deadline_s: float | None = None,
                    clock=None) -> ExecutionTrace:
    """Drive the control loop for a fixed tick count (or duration).

    Per tick: replan if due (one query in flight at a time, by construction),
    ensemble all live chunks, smooth, hand the action to the sink.  A sink
    returning False raises SinkRejected; a query exceeding deadline_s of
    wall time raises PolicyTimeout.
    """
    if (total_ticks is None) == (duration_s is None):
        raise ValueError("give exactly one of total_ticks or duration_s")
    if total_ticks is None:
        total_ticks = int(round(duration_s * schedule.control_rate_hz))
    clock = clock if clock is not None else VirtualClock()
    buffer = EnsembleBuffer(schedule.horizon, ensemble_decay, space)
    smoother = MovingAverageSmoother(smoothing_window, space)
    queries: list[QueryEvent] = []
    emits: list[EmitEvent] = []

    for tick in range(total_ticks):
        buffer.evict(tick)
        if tick % schedule.execute_per_chunk == 0:
            now = clock.now()
            observation = state_source(tick, now) if state_source else None
            started = time.perf_counter()
            chunk = policy.predict(PolicyRequest(tick, now, observation))
            latency = time.perf_counter() - started
            if deadline_s is not None and latency > deadline_s:
                raise PolicyTimeout(
                    f"policy took {latency:.3f}s > deadline {deadline_s:.3f}s")
            buffer.add(tick, chunk)
            queries.append(QueryEvent(tick, now, latency, chunk.start_index,
                                      int(chunk.valid.sum()),
                                      np.array(chunk.actions)))
        ages = tuple(age for age, _ in buffer.contributions(tick))
        action = smoother.push(buffer.ensemble(tick))
        if sink is not None:
            accepted = sink(tick, action)
            if accepted is False:
                raise SinkRejected(f"sink refused action at tick {tick}")
        emits.append(EmitEvent(tick, clock.now(), action, ages))
        clock.advance(schedule.tick_duration)

    return ExecutionTrace(schedule, space, tuple(queries), tuple(emits))
