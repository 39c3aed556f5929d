"""Session service: bridges live clients (browser studio or scripted
remotes) to the capture engine over a WebSocket, one capture session per
connection.

Wire format: JSON text envelopes {session_id, seq, kind, payload,
timestamp}.  seq is strictly increasing per direction per session; the
server assigns the session id in its hello message.  Inbound kinds are
HandSample and Command; the server replies with StateSnapshot (one per
processed sample), Feedback (hello, acks, heartbeats, saved episodes) and
Error.  Malformed input earns an Error reply and the session stays open;
only the offending session is ever affected.
"""

from __future__ import annotations

import asyncio
import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from uuid import uuid4

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .arm import ArmModel, arm_to_dict, default_arm
from .capture import (CaptureConfig, CaptureError, CommandKind,
                      ControllerCommand, IllegalTransitionError,
                      InfeasibleBranchError, Mode, OverlayFeedback,
                      SessionState, drain_completed, handle_command,
                      new_session, step)
from .dataset import HandSample, write_episode
from .transforms import Pose
from .workspace import Scene

PROTOCOL_VERSION = 1

INBOUND_KINDS = {"HandSample", "Command"}
ALL_KINDS = INBOUND_KINDS | {"StateSnapshot", "Feedback", "Error"}


class ProtocolError(ValueError):
    def __init__(self, code: str, detail: str):
        super().__init__(detail)
        self.code = code


@dataclass
class GatewayConfig:
    scene: Scene
    model: ArmModel = field(default_factory=default_arm)
    out_dir: Path = Path("episodes")
    host: str = "127.0.0.1"      # local tool: loopback unless overridden
    port: int = 8765
    capture: CaptureConfig | None = None
    heartbeat_s: float = 1.0
    idle_timeout_s: float = 30.0
    serve_ui: Path | None = None

    def capture_config(self) -> CaptureConfig:
        if self.capture is not None:
            return self.capture
        return CaptureConfig(feasibility=self.scene.params)


# ------------------------------------------------------------- envelopes

def make_envelope(session_id: str, seq: int, kind: str, payload: dict) -> dict:
    return {"session_id": session_id, "seq": seq, "kind": kind,
            "payload": payload, "timestamp": time.time()}


def parse_frame(raw: str, last_seq: int) -> dict:
    """Structural layer: JSON object with a fresh integer seq.  Frames that
    fail here do not consume a sequence number."""
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ProtocolError("bad_envelope", f"not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ProtocolError("bad_envelope", "envelope must be an object")
    seq = data.get("seq")
    if not isinstance(seq, int) or isinstance(seq, bool):
        raise ProtocolError("bad_envelope", "seq must be an integer")
    if seq <= last_seq:
        raise ProtocolError("bad_seq",
                            f"seq {seq} not greater than {last_seq}")
    return data


def validate_envelope(data: dict, session_id: str) -> None:
    """Semantic layer: kind routing and session ownership.  Rejections here
    still consumed the frame's seq."""
    kind = data.get("kind")
    if kind not in ALL_KINDS:
        raise ProtocolError("unknown_kind", f"unknown kind {kind!r}")
    if kind not in INBOUND_KINDS:
        raise ProtocolError("unexpected_kind",
                            f"{kind} is server-to-client only")
    if data.get("session_id") != session_id:
        raise ProtocolError("bad_session",
                            f"expected session_id {session_id!r}")
    if not isinstance(data.get("payload"), dict):
        raise ProtocolError("bad_envelope", "payload must be an object")


def parse_hand_sample(payload: dict) -> HandSample:
    try:
        pose = Pose(np.asarray(payload["position"], dtype=float),
                    np.asarray(payload["orientation"], dtype=float))
        return HandSample(
            timestamp=float(payload["timestamp"]),
            pose=pose,
            pinch_distance=float(payload["pinch_distance"]),
            tracked=bool(payload.get("tracked", True)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError("bad_payload", f"bad HandSample: {exc}") from exc


def parse_command(payload: dict) -> ControllerCommand:
    try:
        kind = CommandKind(payload["command"])
    except (KeyError, ValueError) as exc:
        raise ProtocolError("bad_payload", f"bad Command: {exc}") from exc
    try:
        direction = int(payload.get("direction", 1))
        jog = payload.get("jog_delta", (0.0, 0.0, 0.0))
        jog = tuple(float(v) for v in jog)
        if len(jog) != 3:
            raise ValueError("jog_delta needs three components")
    except (TypeError, ValueError) as exc:
        raise ProtocolError("bad_payload", f"bad Command: {exc}") from exc
    return ControllerCommand(kind=kind, direction=direction, jog_delta=jog)


def snapshot_payload(state: SessionState, feedback: OverlayFeedback,
                     episodes_saved: int) -> dict:
    overlay = None
    if feedback.overlay is not None:
        overlay = {
            "q": [float(v) for v in feedback.overlay.config.q],
            "ee_pose": feedback.overlay.pose.to_dict(),
        }
    verdict = None
    if feedback.verdict is not None:
        v = feedback.verdict
        verdict = {"status": v.status.value, "min_clearance": v.min_clearance,
                   "offending_link": v.offending_link,
                   "offending_joint": v.offending_joint}
    return {
        "mode": feedback.mode.value,
        "end_effector_red": feedback.end_effector_red,
        "recording_active": feedback.recording_active,
        "awaiting_realignment": feedback.awaiting_realignment,
        "gripper": int(feedback.gripper),
        "solution_index": feedback.solution_index,
        "solution_count": feedback.solution_count,
        "sample_appended": feedback.sample_appended,
        "overlay": overlay,
        "base_pose": state.base_pose.to_dict(),
        "verdict": verdict,
        "message": feedback.message,
        "episodes_saved": episodes_saved,
    }


# ------------------------------------------------------------ the service

class _Connection:
    """Outbound half of one session: socket plus the server-side seq
    counter; a lock serializes heartbeat and reply writers."""

    def __init__(self, websocket: WebSocket, session_id: str):
        self.websocket = websocket
        self.session_id = session_id
        self.last_in_seq = 0
        self._out_seq = 0
        self._lock = asyncio.Lock()

    async def send(self, kind: str, payload: dict) -> None:
        async with self._lock:
            self._out_seq += 1
            envelope = make_envelope(self.session_id, self._out_seq, kind,
                                     payload)
            await self.websocket.send_text(json.dumps(envelope))


async def _heartbeat_loop(conn: _Connection, interval_s: float) -> None:
    while True:
        await asyncio.sleep(interval_s)
        await conn.send("Feedback", {"event": "heartbeat",
                                     "server_time": time.time()})


def _decimate(points: np.ndarray, limit: int = 4000) -> np.ndarray:
    if len(points) <= limit:
        return points
    stride = int(np.ceil(len(points) / limit))
    return points[::stride]


def create_app(config: GatewayConfig) -> FastAPI:
    app = FastAPI(title="demonstration capture gateway")
    scene = config.scene
    model = config.model
    capture_cfg = config.capture_config()
    out_dir = Path(config.out_dir)

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "protocol_version": PROTOCOL_VERSION,
                "scene_id": scene.scene_id, "arm": model.name}

    @app.get("/arm")
    def arm() -> dict:
        return arm_to_dict(model)

    @app.get("/scene")
    def scene_meta() -> dict:
        shown = _decimate(scene.cloud.points)
        return {
            "scene_id": scene.scene_id,
            "point_count": int(len(scene.cloud.points)),
            "points": [[float(v) for v in p] for p in shown],
            "rois": {name: {"min": [float(v) for v in box.lo],
                            "max": [float(v) for v in box.hi]}
                     for name, box in scene.rois.items()},
            "sample_rate_hz": capture_cfg.sample_rate_hz,
        }

    @app.websocket("/session")
    async def session_socket(websocket: WebSocket) -> None:
        await websocket.accept()
        conn = _Connection(websocket, uuid4().hex[:12])
        # clients of this service live in world coordinates already, so
        # sessions start calibrated with the identity device mapping
        state = new_session(scene.scene_id, base_pose=None,
                            world_from_device=Pose.identity())
        saved = 0
        heartbeat = asyncio.create_task(
            _heartbeat_loop(conn, config.heartbeat_s))
        try:
            await conn.send("Feedback", {
                "event": "hello",
                "protocol_version": PROTOCOL_VERSION,
                "session_id": conn.session_id,
                "scene_id": scene.scene_id,
                "arm": model.name,
                "sample_rate_hz": capture_cfg.sample_rate_hz,
            })
            while True:
                try:
                    raw = await asyncio.wait_for(
                        websocket.receive_text(), config.idle_timeout_s)
                except asyncio.TimeoutError:
                    await conn.send("Error", {
                        "code": "idle_timeout",
                        "detail": f"no input for {config.idle_timeout_s}s"})
                    break
                try:
                    envelope = parse_frame(raw, conn.last_in_seq)
                except ProtocolError as exc:
                    await conn.send("Error", {"code": exc.code,
                                              "detail": str(exc)})
                    continue
                conn.last_in_seq = envelope["seq"]
                try:
                    validate_envelope(envelope, conn.session_id)
                except ProtocolError as exc:
                    await conn.send("Error", {"code": exc.code,
                                              "detail": str(exc)})
                    continue

                if envelope["kind"] == "HandSample":
                    try:
                        sample = parse_hand_sample(envelope["payload"])
                        state, feedback = step(state, sample, model,
                                               scene.cloud, capture_cfg)
                    except ProtocolError as exc:
                        await conn.send("Error", {"code": exc.code,
                                                  "detail": str(exc)})
                        continue
                    except CaptureError as exc:
                        await conn.send("Error", {"code": "bad_sample",
                                                  "detail": str(exc)})
                        continue
                    await conn.send("StateSnapshot",
                                    snapshot_payload(state, feedback, saved))
                    continue

                # Command
                try:
                    command = parse_command(envelope["payload"])
                    state = handle_command(state, command, model,
                                           scene.cloud, capture_cfg)
                except ProtocolError as exc:
                    await conn.send("Error", {"code": exc.code,
                                              "detail": str(exc)})
                    continue
                except IllegalTransitionError as exc:
                    await conn.send("Error", {"code": "illegal_transition",
                                              "detail": str(exc)})
                    continue
                except InfeasibleBranchError as exc:
                    await conn.send("Error", {
                        "code": "infeasible_branch", "detail": str(exc),
                        "status": exc.verdict.status.value})
                    continue
                await conn.send("Feedback", {
                    "event": "ack", "command": command.kind.value,
                    "mode": state.mode.value,
                    "solution_index": state.solution_index,
                    "solution_count": state.solution_count,
                    "base_pose": state.base_pose.to_dict(),
                })
                state, done = drain_completed(state)
                for episode in done:
                    saved += 1
                    path = _persist(episode, conn.session_id, out_dir)
                    await conn.send("Feedback", {
                        "event": "episode_saved",
                        "episode_id": path.name,
                        "path": str(path),
                        "samples": len(episode.robot),
                    })
        except WebSocketDisconnect:
            pass
        finally:
            heartbeat.cancel()
            # a drop mid-recording still lands the partial episode on disk
            try:
                state = handle_command(
                    state, ControllerCommand(CommandKind.STOP_RECORDING),
                    model, scene.cloud, capture_cfg)
            except (IllegalTransitionError, CaptureError):
                pass
            state, done = drain_completed(state)
            for episode in done:
                _persist(episode, conn.session_id, out_dir)

    if config.serve_ui is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(config.serve_ui),
                                   html=True), name="studio")

    return app


def _persist(episode, session_id: str, out_dir: Path) -> Path:
    # per-session namespace keeps concurrent sessions from colliding on
    # the engine's per-session episode counter
    unique = dataclasses.replace(
        episode, episode_id=f"{session_id}-{episode.episode_id}")
    return write_episode(unique, out_dir)


def serve(config: GatewayConfig) -> None:
    """Blocking entry point; binds and serves until interrupted."""
    import uvicorn
    uvicorn.run(create_app(config), host=config.host, port=config.port,
                log_level="warning")
