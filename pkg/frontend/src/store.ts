/** Client-side state: the latest server snapshot plus connection chrome.
 *
 * Capture semantics live entirely on the server; this store never
 * invents state locally.  The view derives from the newest server
 * message carrying each field (snapshots carry everything, acks refresh
 * mode/solution/base between samples). */

import {
  Ack,
  EpisodeSaved,
  Mode,
  PoseJson,
  ServerMessage,
  Snapshot,
} from "./protocol";

export type Connection = "connecting" | "connected" | "disconnected";

export interface ViewState {
  connection: Connection;
  /** null when nothing needs announcing */
  banner: string | null;
  mode: Mode;
  endEffectorRed: boolean;
  recordingActive: boolean;
  awaitingRealignment: boolean;
  gripperClosed: boolean;
  solutionIndex: number;
  solutionCount: number;
  overlayQ: number[] | null;
  overlayPose: PoseJson | null;
  basePose: PoseJson | null;
  episodesSaved: number;
  lastEpisode: EpisodeSaved | null;
  statusMessage: string;
  toasts: string[];
}

const MAX_TOASTS = 5;

export class Store {
  private connection: Connection = "connecting";
  private snapshot: Snapshot | null = null;
  private lastAck: Ack | null = null;
  private ackAfterSnapshot = false;
  private episodes: EpisodeSaved[] = [];
  private toasts: string[] = [];
  private listeners: Array<() => void> = [];

  subscribe(listener: () => void): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  setConnection(connection: Connection): void {
    this.connection = connection;
    this.notify();
  }

  toast(text: string): void {
    this.toasts = [...this.toasts.slice(-(MAX_TOASTS - 1)), text];
    this.notify();
  }

  apply(message: ServerMessage): void {
    if (message.kind === "StateSnapshot") {
      // latest wins; render loops read view() at their own cadence
      this.snapshot = message.payload;
      this.ackAfterSnapshot = false;
    } else if (message.kind === "Feedback") {
      const fb = message.payload;
      if (fb.event === "ack") {
        this.lastAck = fb;
        this.ackAfterSnapshot = true;
      } else if (fb.event === "episode_saved") {
        this.episodes = [...this.episodes, fb];
        this.toast(`saved ${fb.episode_id} (${fb.samples} samples)`);
      } else if (fb.event === "hello") {
        this.connection = "connected";
      }
      // heartbeats only prove liveness
    } else {
      this.toast(`${message.payload.code}: ${message.payload.detail}`);
    }
    this.notify();
  }

  /** Render state: latest snapshot plus connection chrome, nothing local. */
  view(): ViewState {
    const snap = this.snapshot;
    const ack = this.ackAfterSnapshot ? this.lastAck : null;
    const mode: Mode = ack?.mode ?? snap?.mode ?? "Idle";
    const awaiting = snap?.awaiting_realignment ?? false;
    const banner =
      this.connection === "disconnected"
        ? "disconnected - input disabled"
        : this.connection === "connecting"
          ? "connecting..."
          : mode === "AwaitingRealignment" || awaiting
            ? "move the hand back to the frozen arm to resume"
            : mode === "BaseCalibration"
              ? "base calibration: arrow keys jog, B finishes"
              : null;
    return {
      connection: this.connection,
      banner,
      mode,
      endEffectorRed: snap?.end_effector_red ?? false,
      recordingActive: snap?.recording_active ?? false,
      awaitingRealignment: awaiting,
      gripperClosed: (snap?.gripper ?? 0) === 1,
      solutionIndex: ack?.solution_index ?? snap?.solution_index ?? 0,
      solutionCount: ack?.solution_count ?? snap?.solution_count ?? 0,
      overlayQ: snap?.overlay?.q ?? null,
      overlayPose: snap?.overlay?.ee_pose ?? null,
      basePose: ack?.base_pose ?? snap?.base_pose ?? null,
      episodesSaved: Math.max(snap?.episodes_saved ?? 0, this.episodes.length),
      lastEpisode: this.episodes[this.episodes.length - 1] ?? null,
      statusMessage: snap?.message ?? "",
      toasts: this.toasts,
    };
  }
}
