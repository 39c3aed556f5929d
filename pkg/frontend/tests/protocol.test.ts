import { describe, expect, it } from "vitest";

import {
  PROTOCOL_VERSION,
  ProtocolFormatError,
  armSchema,
  healthSchema,
  makeEnvelope,
  parseServerMessage,
  sceneInfoSchema,
} from "../src/protocol";
import {
  fixtureArm,
  helloPayload,
  serverFrame,
  snapshotPayload,
} from "./helpers";

describe("parseServerMessage", () => {
  it("accepts a state snapshot and preserves every field", () => {
    const payload = snapshotPayload({ end_effector_red: true, gripper: 1 });
    const message = parseServerMessage(serverFrame(3, "StateSnapshot", payload));
    expect(message.kind).toBe("StateSnapshot");
    expect(message.seq).toBe(3);
    if (message.kind !== "StateSnapshot") throw new Error("unreachable");
    expect(message.payload).toEqual(payload);
    expect(message.payload.overlay?.q).toHaveLength(6);
  });

  it("accepts each feedback event", () => {
    const events = [
      helloPayload(),
      {
        event: "ack",
        command: "CycleSolution",
        mode: "Tracking",
        solution_index: 1,
        solution_count: 8,
        base_pose: { position: [0, 0, 0], orientation: [1, 0, 0, 0] },
      },
      { event: "episode_saved", episode_id: "s-ep-0000", path: "/tmp/x", samples: 12 },
      { event: "heartbeat", server_time: 12.5 },
    ];
    for (const [i, payload] of events.entries()) {
      const message = parseServerMessage(serverFrame(i + 1, "Feedback", payload));
      expect(message.kind).toBe("Feedback");
      if (message.kind !== "Feedback") throw new Error("unreachable");
      expect(message.payload.event).toBe((payload as { event: string }).event);
    }
  });

  it("accepts error frames with optional status", () => {
    const message = parseServerMessage(
      serverFrame(9, "Error", {
        code: "infeasible_branch",
        detail: "branch 1 infeasible: EnvCollision",
        status: "EnvCollision",
      }),
    );
    if (message.kind !== "Error") throw new Error("expected Error frame");
    expect(message.payload.code).toBe("infeasible_branch");
    expect(message.payload.status).toBe("EnvCollision");
  });

  it("rejects frames that are not JSON", () => {
    expect(() => parseServerMessage("{nope")).toThrow(ProtocolFormatError);
  });

  it("rejects envelopes missing required fields", () => {
    const frame = JSON.stringify({ seq: 1, kind: "Feedback", payload: {} });
    expect(() => parseServerMessage(frame)).toThrow(/bad envelope/);
  });

  it("rejects unknown envelope kinds", () => {
    const frame = serverFrame(1, "Telemetry" as never, {});
    expect(() => parseServerMessage(frame)).toThrow(/bad envelope/);
  });

  it("rejects snapshots with an unknown mode", () => {
    const payload = { ...snapshotPayload(), mode: "Paused" };
    expect(() =>
      parseServerMessage(serverFrame(1, "StateSnapshot", payload)),
    ).toThrow(/bad StateSnapshot payload/);
  });

  it("rejects overlays without exactly six joint values", () => {
    const payload = {
      ...snapshotPayload(),
      overlay: {
        q: [1, 2, 3],
        ee_pose: { position: [0, 0, 0], orientation: [1, 0, 0, 0] },
      },
    };
    expect(() =>
      parseServerMessage(serverFrame(1, "StateSnapshot", payload)),
    ).toThrow(ProtocolFormatError);
  });

  it("rejects feedback with an unknown event tag", () => {
    expect(() =>
      parseServerMessage(serverFrame(1, "Feedback", { event: "goodbye" })),
    ).toThrow(/bad Feedback payload/);
  });
});

describe("makeEnvelope", () => {
  it("wraps a hand sample with the session id and sequence number", () => {
    const raw = makeEnvelope("abcdef012345", 7, "HandSample", {
      timestamp: 1.25,
      position: [0.1, 0.2, 0.3],
      orientation: [0, 1, 0, 0],
      pinch_distance: 0.08,
      tracked: true,
    });
    const parsed = JSON.parse(raw);
    expect(parsed.session_id).toBe("abcdef012345");
    expect(parsed.seq).toBe(7);
    expect(parsed.kind).toBe("HandSample");
    expect(parsed.payload.position).toEqual([0.1, 0.2, 0.3]);
    expect(parsed.payload.orientation).toEqual([0, 1, 0, 0]);
    expect(typeof parsed.timestamp).toBe("number");
  });

  it("wraps commands with optional direction", () => {
    const parsed = JSON.parse(
      makeEnvelope("abcdef012345", 2, "Command", {
        command: "CycleSolution",
        direction: -1,
      }),
    );
    expect(parsed.kind).toBe("Command");
    expect(parsed.payload).toEqual({ command: "CycleSolution", direction: -1 });
  });
});

describe("REST body schemas", () => {
  it("parses the served arm description fixture", () => {
    expect(fixtureArm.rows).toHaveLength(6);
    expect(fixtureArm.collision_geometry).toHaveLength(6);
    expect(fixtureArm.name).toBe("compact-6dof");
    const radii = fixtureArm.collision_geometry.map((g) => g[0]?.radius);
    expect(radii).toEqual([0.055, 0.045, 0.04, 0.035, 0.035, 0.035]);
  });

  it("rejects an arm with the wrong joint count", () => {
    const crippled = { ...fixtureArm, rows: fixtureArm.rows.slice(0, 5) };
    expect(armSchema.safeParse(crippled).success).toBe(false);
  });

  it("parses scene info and health bodies", () => {
    const scene = sceneInfoSchema.parse({
      scene_id: "pickplace",
      point_count: 12000,
      points: [[0, 0, 0], [0.1, 0.2, 0.0]],
      rois: { pick: { min: [0, 0, 0], max: [0.1, 0.1, 0.1] } },
      sample_rate_hz: 10,
    });
    expect(scene.point_count).toBe(12000);
    const health = healthSchema.parse({
      status: "ok",
      protocol_version: PROTOCOL_VERSION,
      scene_id: "pickplace",
      arm: "compact-6dof",
    });
    expect(health.protocol_version).toBe(PROTOCOL_VERSION);
  });
});
