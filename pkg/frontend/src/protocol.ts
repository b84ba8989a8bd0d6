/**
 * Wire codec for the teleoperation service, browser side.
 *
 * Every message is one frame: a 4-byte little-endian payload length, one tag
 * byte, then a type-specific body; the length counts the tag plus the body.
 * Over WebSocket each binary message carries one or more complete frames, so
 * receivers should always run incoming bytes through a FrameDecoder rather
 * than assume one frame per message.
 *
 * Decoding is total: any input either yields a message or throws DecodeError,
 * never anything else.
 */

export const PROTOCOL_VERSION = 1;
export const MAX_FRAME = 1 << 20;

export const WIRE_DEVICE_ORDER = ["head", "left_hand", "right_hand"] as const;
export type DeviceId = (typeof WIRE_DEVICE_ORDER)[number];

export enum Tag {
  Hello = 1,
  AnchorRequest = 2,
  PoseUpdate = 3,
  ReAnchor = 4,
  StateUpdate = 5,
  FrameMsg = 6,
  RecordControl = 7,
  Error = 8,
  Ping = 9,
  Echo = 10,
}

export class DecodeError extends Error {
  override name = "DecodeError";
}

export interface DeviceSample {
  /** position x, y, z in meters */
  t: [number, number, number];
  /** unit quaternion w, x, y, z */
  q: [number, number, number, number];
  /** 0 open .. 1 fully squeezed */
  trigger: number;
  timestampUs: bigint;
}

export interface HelloMsg {
  kind: "hello";
  protocolVersion: number;
  cameraSet: string[];
  role: string;
}
export interface AnchorRequestMsg {
  kind: "anchor_request";
}
export interface PoseUpdateMsg {
  kind: "pose_update";
  /** exactly one sample per device, in WIRE_DEVICE_ORDER */
  devices: [DeviceSample, DeviceSample, DeviceSample];
}
export interface ReAnchorMsg {
  kind: "reanchor";
}
export interface StateUpdateMsg {
  kind: "state_update";
  timeStep: number;
  qpos: number[];
  stageFlags: boolean[];
}
export interface FrameMsg {
  kind: "frame";
  cameraId: string;
  timeStep: number;
  width: number;
  height: number;
  /** row-major grayscale, width*height bytes */
  pixels: Uint8Array;
}
export interface RecordControlMsg {
  kind: "record_control";
  action: "start" | "stop";
  task: string | null;
  seed: number | null;
}
export interface ErrorMsg {
  kind: "error";
  code: string;
  text: string;
}
export interface PingMsg {
  kind: "ping";
  seq: number;
  tSendUs: bigint;
}
export interface EchoMsg {
  kind: "echo";
  seq: number;
  tSendUs: bigint;
}

export type Message =
  | HelloMsg
  | AnchorRequestMsg
  | PoseUpdateMsg
  | ReAnchorMsg
  | StateUpdateMsg
  | FrameMsg
  | RecordControlMsg
  | ErrorMsg
  | PingMsg
  | EchoMsg;

const DEVICE_STRUCT_SIZE = 40; // 8 x f32 + u64
export const POSE_UPDATE_BODY_SIZE = WIRE_DEVICE_ORDER.length * DEVICE_STRUCT_SIZE;

const textEncoder = new TextEncoder();
const textDecoder = new TextDecoder("utf-8", { fatal: true });

/** JSON with sorted object keys and no whitespace, matching the server. */
export function canonicalJson(value: unknown): string {
  if (value === null || typeof value !== "object") return JSON.stringify(value);
  if (Array.isArray(value)) return `[${value.map(canonicalJson).join(",")}]`;
  const obj = value as Record<string, unknown>;
  const parts = Object.keys(obj)
    .sort()
    .map((k) => `${JSON.stringify(k)}:${canonicalJson(obj[k])}`);
  return `{${parts.join(",")}}`;
}

function jsonBody(value: unknown): Uint8Array {
  return textEncoder.encode(canonicalJson(value));
}

// ---------------------------------------------------------------------------
// encoding

export function encodeBody(msg: Message): { tag: Tag; body: Uint8Array } {
  switch (msg.kind) {
    case "hello":
      return {
        tag: Tag.Hello,
        body: jsonBody({
          protocol_version: msg.protocolVersion,
          camera_set: msg.cameraSet,
          role: msg.role,
        }),
      };
    case "anchor_request":
      return { tag: Tag.AnchorRequest, body: jsonBody({}) };
    case "pose_update": {
      if (msg.devices.length !== WIRE_DEVICE_ORDER.length) {
        throw new Error("PoseUpdate must carry all three devices");
      }
      const body = new Uint8Array(POSE_UPDATE_BODY_SIZE);
      const view = new DataView(body.buffer);
      msg.devices.forEach((d, i) => {
        const at = i * DEVICE_STRUCT_SIZE;
        view.setFloat32(at, d.t[0], true);
        view.setFloat32(at + 4, d.t[1], true);
        view.setFloat32(at + 8, d.t[2], true);
        view.setFloat32(at + 12, d.q[0], true);
        view.setFloat32(at + 16, d.q[1], true);
        view.setFloat32(at + 20, d.q[2], true);
        view.setFloat32(at + 24, d.q[3], true);
        view.setFloat32(at + 28, d.trigger, true);
        view.setBigUint64(at + 32, d.timestampUs, true);
      });
      return { tag: Tag.PoseUpdate, body };
    }
    case "reanchor":
      return { tag: Tag.ReAnchor, body: jsonBody({}) };
    case "state_update": {
      const nq = msg.qpos.length;
      const nf = msg.stageFlags.length;
      if (nq > 255 || nf > 255) throw new Error("StateUpdate too wide");
      const body = new Uint8Array(4 + 1 + 4 * nq + 1 + nf);
      const view = new DataView(body.buffer);
      view.setUint32(0, msg.timeStep, true);
      view.setUint8(4, nq);
      msg.qpos.forEach((v, i) => view.setFloat32(5 + 4 * i, v, true));
      view.setUint8(5 + 4 * nq, nf);
      msg.stageFlags.forEach((f, i) => view.setUint8(6 + 4 * nq + i, f ? 1 : 0));
      return { tag: Tag.StateUpdate, body };
    }
    case "frame": {
      const cam = textEncoder.encode(msg.cameraId);
      if (cam.length > 255) throw new Error("camera id too long");
      if (msg.pixels.length !== msg.width * msg.height) {
        throw new Error("pixel payload does not match width*height");
      }
      const body = new Uint8Array(1 + cam.length + 8 + msg.pixels.length);
      const view = new DataView(body.buffer);
      view.setUint8(0, cam.length);
      body.set(cam, 1);
      const at = 1 + cam.length;
      view.setUint32(at, msg.timeStep, true);
      view.setUint16(at + 4, msg.width, true);
      view.setUint16(at + 6, msg.height, true);
      body.set(msg.pixels, at + 8);
      return { tag: Tag.FrameMsg, body };
    }
    case "record_control":
      return {
        tag: Tag.RecordControl,
        body: jsonBody({ action: msg.action, task: msg.task, seed: msg.seed }),
      };
    case "error":
      return { tag: Tag.Error, body: jsonBody({ code: msg.code, text: msg.text }) };
    case "ping":
    case "echo": {
      const body = new Uint8Array(12);
      const view = new DataView(body.buffer);
      view.setUint32(0, msg.seq, true);
      view.setBigUint64(4, msg.tSendUs, true);
      return { tag: msg.kind === "ping" ? Tag.Ping : Tag.Echo, body };
    }
  }
}

/** Full frame: length prefix + tag + body. */
export function encodeMessage(msg: Message): Uint8Array {
  const { tag, body } = encodeBody(msg);
  if (1 + body.length > MAX_FRAME) throw new Error("message exceeds frame cap");
  const out = new Uint8Array(5 + body.length);
  new DataView(out.buffer).setUint32(0, 1 + body.length, true);
  out[4] = tag;
  out.set(body, 5);
  return out;
}

// ---------------------------------------------------------------------------
// decoding

type FieldCheck = (v: unknown) => boolean;

const isInt: FieldCheck = (v) => typeof v === "number" && Number.isInteger(v);
const isStr: FieldCheck = (v) => typeof v === "string";
const isStrList: FieldCheck = (v) =>
  Array.isArray(v) && v.every((e) => typeof e === "string");
const isStrOrNull: FieldCheck = (v) => v === null || typeof v === "string";
const isIntOrNull: FieldCheck = (v) => v === null || isInt(v);

function decodeJsonObj(
  body: Uint8Array,
  fields: Record<string, FieldCheck>,
): Record<string, unknown> {
  let obj: unknown;
  try {
    obj = JSON.parse(textDecoder.decode(body));
  } catch (exc) {
    throw new DecodeError(`bad JSON body: ${exc}`);
  }
  if (obj === null || typeof obj !== "object" || Array.isArray(obj)) {
    throw new DecodeError("JSON body is not an object");
  }
  const got = Object.keys(obj).sort();
  const want = Object.keys(fields).sort();
  if (got.length !== want.length || got.some((k, i) => k !== want[i])) {
    throw new DecodeError(`JSON keys [${got}] != [${want}]`);
  }
  const rec = obj as Record<string, unknown>;
  for (const [k, check] of Object.entries(fields)) {
    if (!check(rec[k])) throw new DecodeError(`bad value for key ${k}`);
  }
  return rec;
}

function decodeView(body: Uint8Array): DataView {
  return new DataView(body.buffer, body.byteOffset, body.byteLength);
}

export function decodeBody(tag: number, body: Uint8Array): Message {
  switch (tag) {
    case Tag.Hello: {
      const o = decodeJsonObj(body, {
        protocol_version: isInt,
        camera_set: isStrList,
        role: isStr,
      });
      return {
        kind: "hello",
        protocolVersion: o.protocol_version as number,
        cameraSet: o.camera_set as string[],
        role: o.role as string,
      };
    }
    case Tag.AnchorRequest:
      decodeJsonObj(body, {});
      return { kind: "anchor_request" };
    case Tag.PoseUpdate: {
      if (body.length !== POSE_UPDATE_BODY_SIZE) {
        throw new DecodeError(`PoseUpdate body is ${body.length} bytes`);
      }
      const view = decodeView(body);
      const devices = WIRE_DEVICE_ORDER.map((_, i) => {
        const at = i * DEVICE_STRUCT_SIZE;
        return {
          t: [
            view.getFloat32(at, true),
            view.getFloat32(at + 4, true),
            view.getFloat32(at + 8, true),
          ] as [number, number, number],
          q: [
            view.getFloat32(at + 12, true),
            view.getFloat32(at + 16, true),
            view.getFloat32(at + 20, true),
            view.getFloat32(at + 24, true),
          ] as [number, number, number, number],
          trigger: view.getFloat32(at + 28, true),
          timestampUs: view.getBigUint64(at + 32, true),
        };
      });
      return {
        kind: "pose_update",
        devices: devices as [DeviceSample, DeviceSample, DeviceSample],
      };
    }
    case Tag.ReAnchor:
      decodeJsonObj(body, {});
      return { kind: "reanchor" };
    case Tag.StateUpdate: {
      if (body.length < 6) throw new DecodeError("StateUpdate too short");
      const view = decodeView(body);
      const timeStep = view.getUint32(0, true);
      const nq = view.getUint8(4);
      if (body.length < 6 + 4 * nq) throw new DecodeError("StateUpdate truncated");
      const qpos: number[] = [];
      for (let i = 0; i < nq; i++) qpos.push(view.getFloat32(5 + 4 * i, true));
      const nf = view.getUint8(5 + 4 * nq);
      if (body.length !== 6 + 4 * nq + nf) {
        throw new DecodeError("StateUpdate length mismatch");
      }
      const stageFlags: boolean[] = [];
      for (let i = 0; i < nf; i++) {
        const b = view.getUint8(6 + 4 * nq + i);
        if (b !== 0 && b !== 1) throw new DecodeError(`stage flag byte ${b}`);
        stageFlags.push(b === 1);
      }
      return { kind: "state_update", timeStep, qpos, stageFlags };
    }
    case Tag.FrameMsg: {
      if (body.length < 1) throw new DecodeError("FrameMsg too short");
      const view = decodeView(body);
      const camLen = view.getUint8(0);
      if (body.length < 1 + camLen + 8) throw new DecodeError("FrameMsg truncated");
      let cameraId: string;
      try {
        cameraId = textDecoder.decode(body.subarray(1, 1 + camLen));
      } catch (exc) {
        throw new DecodeError(`camera id is not UTF-8: ${exc}`);
      }
      const at = 1 + camLen;
      const timeStep = view.getUint32(at, true);
      const width = view.getUint16(at + 4, true);
      const height = view.getUint16(at + 6, true);
      const pixels = body.subarray(at + 8);
      if (pixels.length !== width * height) {
        throw new DecodeError(
          `frame is ${pixels.length} bytes for ${width}x${height}`,
        );
      }
      return { kind: "frame", cameraId, timeStep, width, height, pixels };
    }
    case Tag.RecordControl: {
      const o = decodeJsonObj(body, {
        action: isStr,
        task: isStrOrNull,
        seed: isIntOrNull,
      });
      const action = o.action as string;
      if (action !== "start" && action !== "stop") {
        throw new DecodeError(`record action ${action}`);
      }
      return {
        kind: "record_control",
        action,
        task: o.task as string | null,
        seed: o.seed as number | null,
      };
    }
    case Tag.Error: {
      const o = decodeJsonObj(body, { code: isStr, text: isStr });
      return { kind: "error", code: o.code as string, text: o.text as string };
    }
    case Tag.Ping:
    case Tag.Echo: {
      if (body.length !== 12) throw new DecodeError("ping body must be 12 bytes");
      const view = decodeView(body);
      return {
        kind: tag === Tag.Ping ? "ping" : "echo",
        seq: view.getUint32(0, true),
        tSendUs: view.getBigUint64(4, true),
      };
    }
    default:
      throw new DecodeError(`unknown tag ${tag}`);
  }
}

/**
 * Incremental frame splitter over a byte stream.  Feed arbitrary chunks,
 * get complete messages back.  A malformed length or body poisons the
 * decoder: the stream offset can no longer be trusted, so every later
 * feed throws too.
 */
export class FrameDecoder {
  private buf = new Uint8Array(0);
  private dead = false;

  constructor(private readonly maxFrame: number = MAX_FRAME) {}

  get pending(): number {
    return this.buf.length;
  }

  feed(data: Uint8Array): Message[] {
    if (this.dead) throw new DecodeError("decoder is poisoned");
    if (data.length > 0) {
      const joined = new Uint8Array(this.buf.length + data.length);
      joined.set(this.buf, 0);
      joined.set(data, this.buf.length);
      this.buf = joined;
    }
    const out: Message[] = [];
    for (;;) {
      if (this.buf.length < 4) return out;
      const payload = new DataView(
        this.buf.buffer,
        this.buf.byteOffset,
        4,
      ).getUint32(0, true);
      if (payload < 1 || payload > this.maxFrame) {
        this.dead = true;
        throw new DecodeError(`bad frame length ${payload}`);
      }
      if (this.buf.length < 4 + payload) return out;
      const tag = this.buf[4]!;
      const body = this.buf.subarray(5, 4 + payload);
      try {
        out.push(decodeBody(tag, body));
      } catch (exc) {
        this.dead = true;
        throw exc instanceof DecodeError
          ? exc
          : new DecodeError(`decode failure: ${exc}`);
      }
      this.buf = this.buf.subarray(4 + payload);
    }
  }
}
