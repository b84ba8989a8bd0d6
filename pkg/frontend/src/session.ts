/**
 * Live teleoperation session: one connection, one state machine.
 *
 * The session owns the handshake, routes incoming messages into a view
 * (latest state, latest frame per camera, recording badge), and exposes the
 * operator verbs: anchor, stream poses, record.  Display state is monotone:
 * a stale StateUpdate or FrameMsg never rewinds what the operator sees.
 *
 * Reconnection is an explicit user action that builds a fresh Session (and
 * therefore a fresh anchor); there is no automatic retry.
 */

import type { DeviceSample, ErrorMsg, FrameMsg, HelloMsg, Message, RecordControlMsg, StateUpdateMsg } from "./protocol.js";
import { FrameDecoder, PROTOCOL_VERSION, encodeMessage } from "./protocol.js";

/** Transport contract; the browser wraps a WebSocket, tests inject fakes. */
export interface Transport {
  send(data: Uint8Array): void;
  close(): void;
  onMessage: ((data: Uint8Array) => void) | null;
  onOpen: (() => void) | null;
  onClose: (() => void) | null;
}

export type ConnectionState =
  | "connecting"
  | "connected"
  | "refused"
  | "closed"
  | "failed";

export interface SessionOptions {
  cameras?: string[];
  role?: string;
  protocolVersion?: number;
  /** microsecond clock for ping timestamps; injectable for tests */
  nowUs?: () => bigint;
  /** called after every state change so a UI can repaint */
  onChange?: () => void;
}

export class Session {
  state: ConnectionState = "connecting";
  serverHello: HelloMsg | null = null;
  refusal: ErrorMsg | null = null;
  /** last non-fatal error, e.g. a refused record transition */
  lastError: ErrorMsg | null = null;
  lastState: StateUpdateMsg | null = null;
  /** displayed time step; never decreases */
  displayStep = -1;
  readonly frames = new Map<string, FrameMsg>();
  recording = false;
  recordStartStep = -1;
  readonly recordAcks: RecordControlMsg[] = [];
  readonly rttMs: number[] = [];

  readonly cameras: string[];
  private readonly role: string;
  private readonly protocolVersion: number;
  private readonly nowUs: () => bigint;
  private readonly onChange: () => void;
  private readonly decoder = new FrameDecoder();
  private readonly pendingPings = new Map<number, bigint>();
  private pingSeq = 0;
  private lastPoseTimestampUs = 0n;

  constructor(private readonly transport: Transport, opts: SessionOptions = {}) {
    this.cameras = opts.cameras ?? [];
    this.role = opts.role ?? "operator";
    this.protocolVersion = opts.protocolVersion ?? PROTOCOL_VERSION;
    this.nowUs = opts.nowUs ?? (() => BigInt(Math.round(Date.now() * 1000)));
    this.onChange = opts.onChange ?? (() => {});
    transport.onOpen = () => this.sendHello();
    transport.onMessage = (data) => this.handleBytes(data);
    transport.onClose = () => this.handleClose();
  }

  /** The step counter shown next to the recording badge. */
  get recordSteps(): number {
    if (!this.recording || this.displayStep < 0) return 0;
    return Math.max(0, this.displayStep - this.recordStartStep);
  }

  private sendHello(): void {
    this.transport.send(
      encodeMessage({
        kind: "hello",
        protocolVersion: this.protocolVersion,
        cameraSet: this.cameras,
        role: this.role,
      }),
    );
    this.onChange();
  }

  private handleBytes(data: Uint8Array): void {
    let msgs: Message[];
    try {
      msgs = this.decoder.feed(data);
    } catch {
      // the stream is unreadable from here on; drop the connection
      this.state = "failed";
      this.transport.close();
      this.onChange();
      return;
    }
    for (const m of msgs) this.handleMessage(m);
    if (msgs.length > 0) this.onChange();
  }

  private handleMessage(m: Message): void {
    switch (m.kind) {
      case "hello":
        this.serverHello = m;
        if (this.state === "connecting") this.state = "connected";
        return;
      case "error":
        if (this.state === "connecting") {
          // handshake refusal: the server closes after this
          this.refusal = m;
          this.state = "refused";
        } else {
          this.lastError = m;
        }
        return;
      case "state_update":
        if (m.timeStep >= this.displayStep) {
          this.lastState = m;
          this.displayStep = m.timeStep;
        }
        return;
      case "frame": {
        const prev = this.frames.get(m.cameraId);
        if (!prev || m.timeStep >= prev.timeStep) this.frames.set(m.cameraId, m);
        return;
      }
      case "record_control":
        this.recordAcks.push(m);
        if (m.action === "start") {
          // the server reset the scene, so its step counter restarted; the
          // monotone display guard resets with it (a new epoch, not a rewind)
          this.recording = true;
          this.displayStep = -1;
          this.lastState = null;
          this.frames.clear();
          this.recordStartStep = 0;
        } else {
          this.recording = false;
        }
        return;
      case "echo": {
        const sent = this.pendingPings.get(m.seq);
        if (sent !== undefined) {
          this.pendingPings.delete(m.seq);
          this.rttMs.push(Number(this.nowUs() - sent) / 1000);
        }
        return;
      }
      default:
        // anchor_request / pose_update / reanchor / ping are client-to-server
        return;
    }
  }

  private handleClose(): void {
    if (this.state === "connecting") this.state = "failed";
    else if (this.state === "connected") this.state = "closed";
    this.onChange();
  }

  anchor(): void {
    this.transport.send(encodeMessage({ kind: "anchor_request" }));
  }

  reanchor(): void {
    this.transport.send(encodeMessage({ kind: "reanchor" }));
  }

  /**
   * Stream one pose snapshot.  Timestamps must strictly increase per device;
   * pass an explicit one (e.g. from the input loop's tick counter) or let the
   * session stamp a monotone clock.
   */
  sendPoses(
    devices: [DeviceSample, DeviceSample, DeviceSample],
    timestampUs?: bigint,
  ): void {
    let ts = timestampUs ?? this.nowUs();
    if (ts <= this.lastPoseTimestampUs) ts = this.lastPoseTimestampUs + 1n;
    this.lastPoseTimestampUs = ts;
    const stamped = devices.map((d) => ({ ...d, timestampUs: ts })) as [
      DeviceSample,
      DeviceSample,
      DeviceSample,
    ];
    this.transport.send(encodeMessage({ kind: "pose_update", devices: stamped }));
  }

  recordStart(task: string, seed: number): void {
    this.transport.send(
      encodeMessage({ kind: "record_control", action: "start", task, seed }),
    );
  }

  recordStop(): void {
    this.transport.send(
      encodeMessage({ kind: "record_control", action: "stop", task: null, seed: null }),
    );
  }

  ping(): void {
    const seq = this.pingSeq++;
    const now = this.nowUs();
    this.pendingPings.set(seq, now);
    this.transport.send(encodeMessage({ kind: "ping", seq, tSendUs: now }));
  }

  close(): void {
    this.transport.close();
    if (this.state === "connecting") this.state = "failed";
    else if (this.state === "connected") this.state = "closed";
    this.onChange();
  }
}
