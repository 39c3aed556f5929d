/** Shared fixtures and frame builders for the studio tests.
 *
 * The arm description and kinematics goldens under fixtures/ were exported
 * from the capture engine itself, so the TypeScript port is checked against
 * the numbers the server will actually serve. */

import armJson from "./fixtures/arm.json";
import fkGoldenJson from "./fixtures/fk_golden.json";
import frameOriginsJson from "./fixtures/frame_origins.json";

import {
  ArmJson,
  Snapshot,
  armSchema,
  snapshotSchema,
} from "../src/protocol";

export const fixtureArm: ArmJson = armSchema.parse(armJson);

export interface FkGoldenCase {
  q: number[];
  position: number[];
  orientation: number[];
}
export const fkGolden: FkGoldenCase[] = fkGoldenJson;

export const frameOrigins: Record<
  string,
  { q: number[]; origins: number[][] }
> = frameOriginsJson;

/** A server frame as raw JSON text, the shape the socket delivers. */
export function serverFrame(
  seq: number,
  kind: "StateSnapshot" | "Feedback" | "Error",
  payload: unknown,
  sessionId = "abcdef012345",
): string {
  return JSON.stringify({
    session_id: sessionId,
    seq,
    kind,
    payload,
    timestamp: seq * 0.1,
  });
}

export function helloPayload(overrides: Record<string, unknown> = {}) {
  return {
    event: "hello",
    protocol_version: 1,
    session_id: "abcdef012345",
    scene_id: "pickplace",
    arm: "compact-6dof",
    sample_rate_hz: 10.0,
    ...overrides,
  };
}

/** A fully-populated feasible tracking snapshot; override what the test
 * cares about. */
export function snapshotPayload(
  overrides: Partial<Snapshot> = {},
): Snapshot {
  const base: Snapshot = {
    mode: "Tracking",
    end_effector_red: false,
    recording_active: false,
    awaiting_realignment: false,
    gripper: 0,
    solution_index: 0,
    solution_count: 8,
    sample_appended: false,
    overlay: {
      q: [0.1, -1.2, 1.4, -0.3, 1.1, 0.2],
      ee_pose: {
        position: [0.25, -0.1, 0.2],
        orientation: [0, 1, 0, 0],
      },
    },
    base_pose: { position: [0, 0, 0], orientation: [1, 0, 0, 0] },
    verdict: {
      status: "Feasible",
      min_clearance: 0.04,
      offending_link: null,
      offending_joint: null,
    },
    message: "",
    episodes_saved: 0,
  };
  return snapshotSchema.parse({ ...base, ...overrides });
}
