/** Hand-cursor and keyboard input: turns pointer deltas into a hand pose
 * stream and key presses into controller commands.  Pure state plus an
 * injectable clock, so tests can drive it without a DOM. */

import { Quaternion, Vector3 } from "three";

import { CommandPayload, HandSamplePayload, Mode } from "./protocol";

/** Straight-down hand orientation (rotation of pi about x), the natural
 * rest pose for tabletop work. */
export const DOWN: [number, number, number, number] = [0, 1, 0, 0];

export interface CameraBasis {
  right: Vector3;
  up: Vector3;
  forward: Vector3;
}

export interface CursorConfig {
  /** metres of cursor travel per pixel of drag */
  dragScale: number;
  /** radians per pixel with the rotate modifier held */
  rotateScale: number;
  /** metres of depth per wheel notch */
  wheelStep: number;
  pinchOpen: number;
  pinchClosed: number;
}

export const DEFAULT_CURSOR: CursorConfig = {
  dragScale: 0.0015,
  rotateScale: 0.01,
  wheelStep: 0.01,
  pinchOpen: 0.08,
  pinchClosed: 0.0,
};

export class HandCursor {
  position: Vector3;
  orientation: Quaternion; // three order (x, y, z, w)
  pinch: number;
  readonly config: CursorConfig;

  constructor(start: Vector3, config: CursorConfig = DEFAULT_CURSOR) {
    this.position = start.clone();
    const [w, x, y, z] = DOWN;
    this.orientation = new Quaternion(x, y, z, w);
    this.pinch = config.pinchOpen;
    this.config = config;
  }

  /** Plain drag translates in the view plane; rotate=true (modifier held)
   * yaws about world z for dx and pitches about camera right for dy. */
  drag(dx: number, dy: number, basis: CameraBasis, rotate = false): void {
    if (rotate) {
      const yaw = new Quaternion().setFromAxisAngle(
        new Vector3(0, 0, 1),
        dx * this.config.rotateScale,
      );
      const pitch = new Quaternion().setFromAxisAngle(
        basis.right.clone().normalize(),
        dy * this.config.rotateScale,
      );
      this.orientation = yaw
        .multiply(pitch)
        .multiply(this.orientation)
        .normalize();
      return;
    }
    this.position
      .addScaledVector(basis.right, dx * this.config.dragScale)
      .addScaledVector(basis.up, -dy * this.config.dragScale);
  }

  /** Wheel moves the cursor along the camera forward axis (depth). */
  wheel(notches: number, basis: CameraBasis): void {
    this.position.addScaledVector(basis.forward, notches * this.config.wheelStep);
  }

  setPinchClosed(closed: boolean): void {
    this.pinch = closed ? this.config.pinchClosed : this.config.pinchOpen;
  }

  sample(timestamp: number): HandSamplePayload {
    const o = this.orientation;
    return {
      timestamp,
      position: [this.position.x, this.position.y, this.position.z],
      orientation: [o.w, o.x, o.y, o.z],
      pinch_distance: this.pinch,
      tracked: true,
    };
  }
}

/** Emits cursor samples on the session clock at the session rate. */
export class SampleStreamer {
  private t = 0.0;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly cursor: HandCursor,
    private readonly send: (sample: HandSamplePayload) => void,
    private readonly rateHz: number,
  ) {}

  /** Advance the sample clock one period and send; tests call this
   * directly, the browser calls it from an interval timer. */
  tick(): void {
    this.t += 1.0 / this.rateHz;
    this.send(this.cursor.sample(this.t));
  }

  start(): void {
    if (this.timer !== null) return;
    this.timer = setInterval(() => this.tick(), 1000 / this.rateHz);
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  get running(): boolean {
    return this.timer !== null;
  }
}

// --------------------------------------------------------------- keyboard

export interface KeyContext {
  /** latest server-reported mode; keys never guess state locally */
  mode(): Mode;
}

export const JOG_STEP_M = 0.01;

/** R starts, S stops, Tab cycles (shift reverses), B enters/leaves base
 * calibration, arrows and PageUp/Down jog the base while calibrating,
 * G toggles the pinch.  Returns null for unbound keys. */
export function commandForKey(
  key: string,
  shift: boolean,
  context: KeyContext,
): CommandPayload | null {
  switch (key) {
    case "r":
    case "R":
      return { command: "StartRecording" };
    case "s":
    case "S":
      return { command: "StopRecording" };
    case "Tab":
      return { command: "CycleSolution", direction: shift ? -1 : 1 };
    case "b":
    case "B":
      return context.mode() === "BaseCalibration"
        ? { command: "EndBaseCalibration" }
        : { command: "BeginBaseCalibration" };
    default:
      break;
  }
  if (context.mode() !== "BaseCalibration") return null;
  const jog: Record<string, [number, number, number]> = {
    ArrowUp: [JOG_STEP_M, 0, 0],
    ArrowDown: [-JOG_STEP_M, 0, 0],
    ArrowLeft: [0, JOG_STEP_M, 0],
    ArrowRight: [0, -JOG_STEP_M, 0],
    PageUp: [0, 0, JOG_STEP_M],
    PageDown: [0, 0, -JOG_STEP_M],
  };
  const delta = jog[key];
  return delta ? { command: "BaseJog", jog_delta: delta } : null;
}

export interface InputSinks {
  sendCommand(command: CommandPayload): void;
  setPinchClosed(closed: boolean): void;
  enabled(): boolean;
}

/** Wire keyboard events to the command palette; G is held-to-close. */
export function bindKeys(
  target: Pick<EventTarget, "addEventListener" | "removeEventListener">,
  context: KeyContext,
  sinks: InputSinks,
): () => void {
  const down = (ev: Event) => {
    const e = ev as KeyboardEvent;
    if (!sinks.enabled()) return;
    if (e.key === "g" || e.key === "G") {
      sinks.setPinchClosed(true);
      return;
    }
    const command = commandForKey(e.key, e.shiftKey, context);
    if (command) {
      e.preventDefault?.();
      sinks.sendCommand(command);
    }
  };
  const up = (ev: Event) => {
    const e = ev as KeyboardEvent;
    if (e.key === "g" || e.key === "G") sinks.setPinchClosed(false);
  };
  target.addEventListener("keydown", down);
  target.addEventListener("keyup", up);
  return () => {
    target.removeEventListener("keydown", down);
    target.removeEventListener("keyup", up);
  };
}
