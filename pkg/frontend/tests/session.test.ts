import { describe, expect, it } from "vitest";

import {
  ProtocolFormatError,
  ServerMessage,
} from "../src/protocol";
import { NotConnectedError, SessionClient, SocketLike } from "../src/session";
import { helloPayload, serverFrame, snapshotPayload } from "./helpers";

class FakeSocket implements SocketLike {
  sent: string[] = [];
  closed = false;
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.closed = true;
    this.onclose?.();
  }

  deliver(frame: string): void {
    this.onmessage?.({ data: frame });
  }
}

function harness() {
  const socket = new FakeSocket();
  const messages: ServerMessage[] = [];
  const protocolErrors: ProtocolFormatError[] = [];
  let closes = 0;
  const client = new SessionClient(
    "ws://example/session",
    {
      onMessage: (m) => messages.push(m),
      onClose: () => {
        closes += 1;
      },
      onProtocolError: (e) => protocolErrors.push(e),
    },
    () => socket,
  );
  return { socket, client, messages, protocolErrors, closes: () => closes };
}

describe("SessionClient", () => {
  it("refuses to send before the hello handshake", () => {
    const { socket, client } = harness();
    const sample = {
      timestamp: 0.1,
      position: [0, 0, 0] as [number, number, number],
      orientation: [0, 1, 0, 0] as [number, number, number, number],
      pinch_distance: 0.08,
    };
    expect(() => client.sendSample(sample)).toThrow(NotConnectedError);
    socket.onopen?.();
    expect(client.connected).toBe(false); // open but no hello yet
    expect(() => client.sendSample(sample)).toThrow(NotConnectedError);
  });

  it("captures the hello and numbers outbound frames from 1", () => {
    const { socket, client, messages } = harness();
    socket.onopen?.();
    socket.deliver(serverFrame(1, "Feedback", helloPayload()));
    expect(client.connected).toBe(true);
    expect(client.hello?.session_id).toBe("abcdef012345");
    expect(client.hello?.sample_rate_hz).toBe(10);
    expect(messages).toHaveLength(1);

    client.sendSample({
      timestamp: 0.1,
      position: [0.25, 0, 0.2],
      orientation: [0, 1, 0, 0],
      pinch_distance: 0.08,
      tracked: true,
    });
    client.sendCommand({ command: "StartRecording" });
    expect(socket.sent).toHaveLength(2);
    const first = JSON.parse(socket.sent[0]!);
    const second = JSON.parse(socket.sent[1]!);
    expect(first.kind).toBe("HandSample");
    expect(first.seq).toBe(1);
    expect(first.session_id).toBe("abcdef012345");
    expect(second.kind).toBe("Command");
    expect(second.seq).toBe(2);
  });

  it("drops frames whose server sequence does not advance", () => {
    const { socket, messages, protocolErrors } = harness();
    socket.onopen?.();
    socket.deliver(serverFrame(1, "Feedback", helloPayload()));
    socket.deliver(serverFrame(2, "StateSnapshot", snapshotPayload()));
    socket.deliver(serverFrame(2, "StateSnapshot", snapshotPayload()));
    socket.deliver(serverFrame(1, "Feedback", { event: "heartbeat", server_time: 1 }));
    expect(messages).toHaveLength(2);
    expect(protocolErrors).toHaveLength(2);
    expect(protocolErrors[0]!.message).toMatch(/seq 2 not after 2/);
  });

  it("reports malformed frames without dying", () => {
    const { socket, messages, protocolErrors } = harness();
    socket.onopen?.();
    socket.deliver("not json at all");
    socket.deliver(serverFrame(1, "Feedback", helloPayload()));
    expect(protocolErrors).toHaveLength(1);
    expect(messages).toHaveLength(1);
  });

  it("hangs up on a protocol version mismatch", () => {
    const { socket, client, protocolErrors } = harness();
    socket.onopen?.();
    socket.deliver(
      serverFrame(1, "Feedback", helloPayload({ protocol_version: 2 })),
    );
    expect(protocolErrors).toHaveLength(1);
    expect(protocolErrors[0]!.message).toMatch(/protocol 2/);
    expect(socket.closed).toBe(true);
    expect(client.connected).toBe(false);
  });

  it("reports the close and stops accepting sends", () => {
    const { socket, client, closes } = harness();
    socket.onopen?.();
    socket.deliver(serverFrame(1, "Feedback", helloPayload()));
    expect(client.connected).toBe(true);
    socket.close();
    expect(closes()).toBe(1);
    expect(client.connected).toBe(false);
    expect(() => client.sendCommand({ command: "StopRecording" })).toThrow(
      NotConnectedError,
    );
  });
});
