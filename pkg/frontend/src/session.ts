/** One capture session over one WebSocket: outbound sequence numbering,
 * hello handshake, inbound validation and ordering. */

import {
  CommandPayload,
  HandSamplePayload,
  Hello,
  PROTOCOL_VERSION,
  ProtocolFormatError,
  ServerMessage,
  makeEnvelope,
  parseServerMessage,
} from "./protocol";

/** The sliver of WebSocket both browsers and the node `ws` package share. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface SessionHandlers {
  onMessage(message: ServerMessage): void;
  onOpen?(): void;
  onClose?(): void;
  /** Inbound frames that fail validation (reported, then dropped). */
  onProtocolError?(error: ProtocolFormatError): void;
}

export class NotConnectedError extends Error {}

export class SessionClient {
  private socket: SocketLike;
  private outSeq = 0;
  private lastInSeq = 0;
  private hello_: Hello | null = null;
  private open = false;

  constructor(
    url: string,
    handlers: SessionHandlers,
    factory: SocketFactory = (u) => new WebSocket(u) as unknown as SocketLike,
  ) {
    this.socket = factory(url);
    this.socket.onopen = () => {
      this.open = true;
      handlers.onOpen?.();
    };
    this.socket.onclose = () => {
      this.open = false;
      handlers.onClose?.();
    };
    this.socket.onerror = () => {
      // the close handler carries the user-visible state change
    };
    this.socket.onmessage = (ev) => {
      let message: ServerMessage;
      try {
        message = parseServerMessage(String(ev.data));
      } catch (exc) {
        if (exc instanceof ProtocolFormatError) {
          handlers.onProtocolError?.(exc);
          return;
        }
        throw exc;
      }
      if (message.seq <= this.lastInSeq) {
        handlers.onProtocolError?.(
          new ProtocolFormatError(
            `server seq ${message.seq} not after ${this.lastInSeq}`,
          ),
        );
        return;
      }
      this.lastInSeq = message.seq;
      if (message.kind === "Feedback" && message.payload.event === "hello") {
        if (message.payload.protocol_version !== PROTOCOL_VERSION) {
          handlers.onProtocolError?.(
            new ProtocolFormatError(
              `server speaks protocol ${message.payload.protocol_version}, ` +
                `client speaks ${PROTOCOL_VERSION}`,
            ),
          );
          this.socket.close();
          return;
        }
        this.hello_ = message.payload;
      }
      handlers.onMessage(message);
    };
  }

  get hello(): Hello | null {
    return this.hello_;
  }

  get connected(): boolean {
    return this.open && this.hello_ !== null;
  }

  sendSample(payload: HandSamplePayload): void {
    this.send("HandSample", payload);
  }

  sendCommand(payload: CommandPayload): void {
    this.send("Command", payload);
  }

  private send(
    kind: "HandSample" | "Command",
    payload: HandSamplePayload | CommandPayload,
  ): void {
    if (!this.connected || this.hello_ === null) {
      throw new NotConnectedError("session has no hello yet");
    }
    this.outSeq += 1;
    this.socket.send(
      makeEnvelope(this.hello_.session_id, this.outSeq, kind, payload),
    );
  }

  close(): void {
    this.socket.close();
  }
}
