/** Websocket client: validation at the edge, last-frame-wins
 * coalescing, reconnect with doubling backoff.
 *
 * The socket constructor is injectable so tests can drive the client
 * with fakes; the browser entry point passes the real WebSocket.
 */

import { ServerMessageSchema } from "./types.js";
import type {
  ClientMessage,
  ConfigFrame,
  ConnectionStatus,
  TelemetryFrame,
} from "./types.js";

export interface SocketLike {
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  send(data: string): void;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ClientCallbacks {
  onConfig?: (cfg: ConfigFrame) => void;
  onStatus?: (status: ConnectionStatus) => void;
  onError?: (message: string) => void;
}

export const BACKOFF_BASE_MS = 500;
export const BACKOFF_CAP_MS = 8000;

export class TeleopClient {
  private socket: SocketLike | null = null;
  private pending: TelemetryFrame | null = null;
  private attempts = 0;
  private closedByUser = false;
  private timer: ReturnType<typeof setTimeout> | null = null;
  status: ConnectionStatus = "connecting";

  constructor(
    readonly url: string,
    readonly callbacks: ClientCallbacks = {},
    readonly factory: SocketFactory = (u) =>
      new WebSocket(u) as unknown as SocketLike,
  ) {}

  connect(): void {
    this.closedByUser = false;
    this.setStatus("connecting");
    const sock = this.factory(this.url);
    this.socket = sock;
    sock.onopen = () => {
      this.attempts = 0;
      this.setStatus("open");
    };
    sock.onclose = () => {
      this.socket = null;
      this.setStatus("closed");
      if (!this.closedByUser) this.scheduleReconnect();
    };
    sock.onmessage = (ev) => this.receive(ev.data);
  }

  close(): void {
    this.closedByUser = true;
    if (this.timer !== null) clearTimeout(this.timer);
    this.socket?.close();
    this.socket = null;
    this.setStatus("closed");
  }

  send(msg: ClientMessage): boolean {
    if (this.status !== "open" || this.socket === null) return false;
    this.socket.send(JSON.stringify(msg));
    return true;
  }

  /** Latest unconsumed frame, if any; older ones are coalesced away. */
  drain(): TelemetryFrame | null {
    const f = this.pending;
    this.pending = null;
    return f;
  }

  backoffMs(): number {
    return Math.min(BACKOFF_CAP_MS, BACKOFF_BASE_MS * 2 ** this.attempts);
  }

  private scheduleReconnect(): void {
    const delay = this.backoffMs();
    this.attempts += 1;
    this.timer = setTimeout(() => this.connect(), delay);
  }

  private receive(data: unknown): void {
    let parsed: unknown;
    try {
      parsed = JSON.parse(String(data));
    } catch {
      this.callbacks.onError?.("unparseable server message");
      return;
    }
    const result = ServerMessageSchema.safeParse(parsed);
    if (!result.success) {
      this.callbacks.onError?.("server message failed validation");
      return;
    }
    const msg = result.data;
    if (msg.type === "frame") {
      this.pending = msg;
    } else if (msg.type === "config") {
      this.callbacks.onConfig?.(msg);
    } else {
      this.callbacks.onError?.(msg.message);
    }
  }

  private setStatus(status: ConnectionStatus): void {
    this.status = status;
    this.callbacks.onStatus?.(status);
  }
}
