/** Wire types for the capture-session gateway, mirrored field-by-field
 * from the server's protocol document (version 1). */

import { z } from "zod";

export const PROTOCOL_VERSION = 1;

const vec3 = z.tuple([z.number(), z.number(), z.number()]);
const quat = z.tuple([z.number(), z.number(), z.number(), z.number()]);

// scalar-first (w, x, y, z) unit quaternion
export const poseSchema = z.object({
  position: vec3,
  orientation: quat,
});
export type PoseJson = z.infer<typeof poseSchema>;

export const MODES = [
  "Idle",
  "Tracking",
  "Recording",
  "AwaitingRealignment",
  "BaseCalibration",
] as const;
export type Mode = (typeof MODES)[number];

export const COMMANDS = [
  "StartRecording",
  "StopRecording",
  "CycleSolution",
  "BeginBaseCalibration",
  "EndBaseCalibration",
  "BaseJog",
] as const;
export type CommandName = (typeof COMMANDS)[number];

const verdictSchema = z.object({
  status: z.string(),
  min_clearance: z.number().nullable(),
  offending_link: z.number().int().nullable(),
  offending_joint: z.number().int().nullable(),
});

export const snapshotSchema = z.object({
  mode: z.enum(MODES),
  end_effector_red: z.boolean(),
  recording_active: z.boolean(),
  awaiting_realignment: z.boolean(),
  gripper: z.number().int(),
  solution_index: z.number().int(),
  solution_count: z.number().int(),
  sample_appended: z.boolean(),
  overlay: z.object({ q: z.array(z.number()).length(6), ee_pose: poseSchema }).nullable(),
  base_pose: poseSchema,
  verdict: verdictSchema.nullable(),
  message: z.string(),
  episodes_saved: z.number().int(),
});
export type Snapshot = z.infer<typeof snapshotSchema>;

const helloSchema = z.object({
  event: z.literal("hello"),
  protocol_version: z.number().int(),
  session_id: z.string(),
  scene_id: z.string(),
  arm: z.string(),
  sample_rate_hz: z.number(),
});
const ackSchema = z.object({
  event: z.literal("ack"),
  command: z.enum(COMMANDS),
  mode: z.enum(MODES),
  solution_index: z.number().int(),
  solution_count: z.number().int(),
  base_pose: poseSchema,
});
const episodeSavedSchema = z.object({
  event: z.literal("episode_saved"),
  episode_id: z.string(),
  path: z.string(),
  samples: z.number().int(),
});
const heartbeatSchema = z.object({
  event: z.literal("heartbeat"),
  server_time: z.number(),
});
export const feedbackSchema = z.discriminatedUnion("event", [
  helloSchema,
  ackSchema,
  episodeSavedSchema,
  heartbeatSchema,
]);
export type Feedback = z.infer<typeof feedbackSchema>;
export type Hello = z.infer<typeof helloSchema>;
export type Ack = z.infer<typeof ackSchema>;
export type EpisodeSaved = z.infer<typeof episodeSavedSchema>;

export const errorSchema = z.object({
  code: z.string(),
  detail: z.string(),
  status: z.string().optional(),
});
export type ServerError = z.infer<typeof errorSchema>;

const envelopeSchema = z.object({
  session_id: z.string(),
  seq: z.number().int(),
  kind: z.enum(["StateSnapshot", "Feedback", "Error"]),
  payload: z.record(z.unknown()),
  timestamp: z.number(),
});

export type ServerMessage =
  | { kind: "StateSnapshot"; seq: number; payload: Snapshot }
  | { kind: "Feedback"; seq: number; payload: Feedback }
  | { kind: "Error"; seq: number; payload: ServerError };

export class ProtocolFormatError extends Error {}

/** Parse and validate one inbound frame; throws ProtocolFormatError with
 * the offending path on any shape mismatch. */
export function parseServerMessage(raw: string): ServerMessage {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch (exc) {
    throw new ProtocolFormatError(`frame is not JSON: ${exc}`);
  }
  const envelope = envelopeSchema.safeParse(data);
  if (!envelope.success) {
    throw new ProtocolFormatError(`bad envelope: ${envelope.error.message}`);
  }
  const { kind, seq, payload } = envelope.data;
  const body =
    kind === "StateSnapshot"
      ? snapshotSchema.safeParse(payload)
      : kind === "Feedback"
        ? feedbackSchema.safeParse(payload)
        : errorSchema.safeParse(payload);
  if (!body.success) {
    throw new ProtocolFormatError(`bad ${kind} payload: ${body.error.message}`);
  }
  return { kind, seq, payload: body.data } as ServerMessage;
}

// ------------------------------------------------------------- outbound

export interface HandSamplePayload {
  timestamp: number;
  position: [number, number, number];
  orientation: [number, number, number, number];
  pinch_distance: number;
  tracked?: boolean;
}

export interface CommandPayload {
  command: CommandName;
  direction?: number;
  jog_delta?: [number, number, number];
}

export function makeEnvelope(
  sessionId: string,
  seq: number,
  kind: "HandSample" | "Command",
  payload: HandSamplePayload | CommandPayload,
): string {
  return JSON.stringify({
    session_id: sessionId,
    seq,
    kind,
    payload,
    timestamp: Date.now() / 1000,
  });
}

// ------------------------------------------------------------ REST bodies

const capsuleSchema = z.object({ p0: vec3, p1: vec3, radius: z.number() });
export type CapsuleJson = z.infer<typeof capsuleSchema>;

export const armSchema = z.object({
  format_version: z.number().int(),
  name: z.string(),
  rows: z
    .array(
      z.object({
        a: z.number(),
        alpha: z.number(),
        d: z.number(),
        theta_offset: z.number(),
      }),
    )
    .length(6),
  joint_limits: z.array(z.tuple([z.number(), z.number()])).length(6),
  speed_limits: z.array(z.number()).length(6),
  collision_geometry: z.array(z.array(capsuleSchema)).length(6),
  base_pose: poseSchema,
});
export type ArmJson = z.infer<typeof armSchema>;

export const sceneInfoSchema = z.object({
  scene_id: z.string(),
  point_count: z.number().int(),
  points: z.array(vec3),
  rois: z.record(z.object({ min: vec3, max: vec3 })),
  sample_rate_hz: z.number(),
});
export type SceneInfo = z.infer<typeof sceneInfoSchema>;

export const healthSchema = z.object({
  status: z.string(),
  protocol_version: z.number().int(),
  scene_id: z.string(),
  arm: z.string(),
});
export type Health = z.infer<typeof healthSchema>;
