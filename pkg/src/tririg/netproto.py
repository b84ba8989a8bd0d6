"""Wire codec for the teleoperation service.

Every message travels as one frame: a 4-byte little-endian payload length,
one tag byte, then a type-specific body.  The length counts the tag byte plus
the body.  Control messages carry UTF-8 JSON objects; streaming messages
(PoseUpdate, StateUpdate, FrameMsg, Ping, Echo) carry packed little-endian
binary.  Decoding is total: any input either yields a message or raises
DecodeError, never anything else.

The codec is transport-agnostic; it holds no sockets and no numpy.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

PROTOCOL_VERSION = 1
MAX_FRAME = 1 << 20  # payload cap, frames beyond this are a protocol violation

TAG_HELLO = 1
TAG_ANCHOR_REQUEST = 2
TAG_POSE_UPDATE = 3
TAG_REANCHOR = 4
TAG_STATE_UPDATE = 5
TAG_FRAME_MSG = 6
TAG_RECORD_CONTROL = 7
TAG_ERROR = 8
TAG_PING = 9
TAG_ECHO = 10

# device order is part of the wire format
WIRE_DEVICE_ORDER = ("head", "left_hand", "right_hand")

# per device: 3 floats position, 4 floats quaternion (w, x, y, z),
# 1 float trigger, unsigned 64-bit microsecond timestamp
_DEVICE_STRUCT = struct.Struct("<8fQ")
POSE_UPDATE_BODY_SIZE = len(WIRE_DEVICE_ORDER) * _DEVICE_STRUCT.size

_PING_STRUCT = struct.Struct("<IQ")


class DecodeError(ValueError):
    """Malformed frame or body; the session should answer Error and close."""


@dataclass(frozen=True)
class Hello:
    protocol_version: int
    camera_set: tuple[str, ...]
    role: str


@dataclass(frozen=True)
class AnchorRequest:
    pass


@dataclass(frozen=True)
class DeviceSample:
    """One tracked device at one instant, in wire units."""

    t: tuple[float, float, float]
    q: tuple[float, float, float, float]
    trigger: float
    timestamp_us: int


@dataclass(frozen=True)
class PoseUpdate:
    # samples follow WIRE_DEVICE_ORDER
    devices: tuple[DeviceSample, DeviceSample, DeviceSample]


@dataclass(frozen=True)
class ReAnchor:
    pass


@dataclass(frozen=True)
class StateUpdate:
    time_step: int
    qpos: tuple[float, ...]
    stage_flags: tuple[bool, ...]


@dataclass(frozen=True)
class FrameMsg:
    camera_id: str
    time_step: int
    width: int
    height: int
    pixels: bytes

    def __post_init__(self):
        if len(self.pixels) != self.width * self.height:
            raise ValueError("pixel buffer does not match width*height")


@dataclass(frozen=True)
class RecordControl:
    action: str  # "start" | "stop"
    task: str | None = None
    seed: int | None = None


@dataclass(frozen=True)
class Error:
    code: str
    text: str = ""


@dataclass(frozen=True)
class Ping:
    seq: int
    t_send_us: int


@dataclass(frozen=True)
class Echo:
    seq: int
    t_send_us: int


WireMessage = (Hello | AnchorRequest | PoseUpdate | ReAnchor | StateUpdate
               | FrameMsg | RecordControl | Error | Ping | Echo)


# ---------------------------------------------------------------------------
# encoding

def _f32(x: float) -> float:
    return struct.unpack("<f", struct.pack("<f", x))[0]


def _json_body(obj: dict) -> bytes:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True).encode("utf-8")


def encode_body(msg: WireMessage) -> tuple[int, bytes]:
    """(tag, body) for one message.  Raises TypeError on non-messages."""
    if isinstance(msg, Hello):
        return TAG_HELLO, _json_body({
            "protocol_version": msg.protocol_version,
            "camera_set": list(msg.camera_set),
            "role": msg.role,
        })
    if isinstance(msg, AnchorRequest):
        return TAG_ANCHOR_REQUEST, b"{}"
    if isinstance(msg, PoseUpdate):
        if len(msg.devices) != len(WIRE_DEVICE_ORDER):
            raise ValueError("PoseUpdate must carry all three devices")
        parts = [
            _DEVICE_STRUCT.pack(*d.t, *d.q, d.trigger, d.timestamp_us)
            for d in msg.devices
        ]
        return TAG_POSE_UPDATE, b"".join(parts)
    if isinstance(msg, ReAnchor):
        return TAG_REANCHOR, b"{}"
    if isinstance(msg, StateUpdate):
        nq, nf = len(msg.qpos), len(msg.stage_flags)
        if nq > 255 or nf > 255:
            raise ValueError("StateUpdate too wide")
        body = struct.pack("<IB", msg.time_step, nq)
        body += struct.pack(f"<{nq}f", *msg.qpos)
        body += struct.pack("<B", nf)
        body += bytes(1 if f else 0 for f in msg.stage_flags)
        return TAG_STATE_UPDATE, body
    if isinstance(msg, FrameMsg):
        cam = msg.camera_id.encode("utf-8")
        if len(cam) > 255:
            raise ValueError("camera id too long")
        head = struct.pack("<B", len(cam)) + cam
        head += struct.pack("<IHH", msg.time_step, msg.width, msg.height)
        return TAG_FRAME_MSG, head + msg.pixels
    if isinstance(msg, RecordControl):
        return TAG_RECORD_CONTROL, _json_body({
            "action": msg.action, "task": msg.task, "seed": msg.seed,
        })
    if isinstance(msg, Error):
        return TAG_ERROR, _json_body({"code": msg.code, "text": msg.text})
    if isinstance(msg, Ping):
        return TAG_PING, _PING_STRUCT.pack(msg.seq, msg.t_send_us)
    if isinstance(msg, Echo):
        return TAG_ECHO, _PING_STRUCT.pack(msg.seq, msg.t_send_us)
    raise TypeError(f"not a wire message: {type(msg).__name__}")


def encode_message(msg: WireMessage) -> bytes:
    """Full frame: length prefix + tag + body."""
    tag, body = encode_body(msg)
    if 1 + len(body) > MAX_FRAME:
        raise ValueError("message exceeds frame cap")
    return struct.pack("<IB", 1 + len(body), tag) + body


# ---------------------------------------------------------------------------
# decoding

def _decode_json_obj(body: bytes, fields: dict[str, tuple]) -> dict:
    """Strict JSON object: exactly the given keys, values of the given types.
    bool is rejected where int is expected."""
    try:
        obj = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"bad JSON body: {exc}") from None
    if not isinstance(obj, dict):
        raise DecodeError("JSON body is not an object")
    if set(obj) != set(fields):
        raise DecodeError(f"JSON keys {sorted(obj)} != {sorted(fields)}")
    for key, types in fields.items():
        val = obj[key]
        if isinstance(val, bool) and bool not in types:
            raise DecodeError(f"field {key!r} has wrong type")
        if not isinstance(val, types):
            raise DecodeError(f"field {key!r} has wrong type")
    return obj


def _decode_hello(body: bytes) -> Hello:
    obj = _decode_json_obj(body, {
        "protocol_version": (int,), "camera_set": (list,), "role": (str,),
    })
    cams = obj["camera_set"]
    if not all(isinstance(c, str) for c in cams):
        raise DecodeError("camera_set entries must be strings")
    return Hello(obj["protocol_version"], tuple(cams), obj["role"])


def _decode_pose_update(body: bytes) -> PoseUpdate:
    if len(body) != POSE_UPDATE_BODY_SIZE:
        raise DecodeError(
            f"PoseUpdate body must be {POSE_UPDATE_BODY_SIZE} bytes, got {len(body)}")
    samples = []
    for k in range(len(WIRE_DEVICE_ORDER)):
        vals = _DEVICE_STRUCT.unpack_from(body, k * _DEVICE_STRUCT.size)
        samples.append(DeviceSample(
            t=vals[0:3], q=vals[3:7], trigger=vals[7], timestamp_us=vals[8]))
    return PoseUpdate(tuple(samples))


def _decode_state_update(body: bytes) -> StateUpdate:
    if len(body) < 5:
        raise DecodeError("StateUpdate body truncated")
    time_step, nq = struct.unpack_from("<IB", body, 0)
    off = 5
    if len(body) < off + 4 * nq + 1:
        raise DecodeError("StateUpdate qpos truncated")
    qpos = struct.unpack_from(f"<{nq}f", body, off)
    off += 4 * nq
    nf = body[off]
    off += 1
    if len(body) != off + nf:
        raise DecodeError("StateUpdate flag count mismatch")
    raw = body[off:]
    if any(b not in (0, 1) for b in raw):
        raise DecodeError("stage flags must be 0 or 1")
    return StateUpdate(time_step, qpos, tuple(b == 1 for b in raw))


def _decode_frame_msg(body: bytes) -> FrameMsg:
    if len(body) < 1:
        raise DecodeError("FrameMsg body truncated")
    clen = body[0]
    off = 1 + clen
    if len(body) < off + 8:
        raise DecodeError("FrameMsg header truncated")
    try:
        cam = body[1:off].decode("utf-8")
    except UnicodeDecodeError:
        raise DecodeError("camera id is not UTF-8") from None
    time_step, width, height = struct.unpack_from("<IHH", body, off)
    off += 8
    if len(body) != off + width * height:
        raise DecodeError("FrameMsg pixel count mismatch")
    return FrameMsg(cam, time_step, width, height, bytes(body[off:]))


def _decode_record_control(body: bytes) -> RecordControl:
    obj = _decode_json_obj(body, {
        "action": (str,), "task": (str, type(None)), "seed": (int, type(None)),
    })
    if obj["action"] not in ("start", "stop"):
        raise DecodeError(f"unknown record action {obj['action']!r}")
    return RecordControl(obj["action"], obj["task"], obj["seed"])


def _decode_ping(body: bytes, cls) -> Ping | Echo:
    if len(body) != _PING_STRUCT.size:
        raise DecodeError(f"{cls.__name__} body must be {_PING_STRUCT.size} bytes")
    return cls(*_PING_STRUCT.unpack(body))


def decode_body(tag: int, body: bytes) -> WireMessage:
    """Body bytes of one frame -> message.  Raises DecodeError, nothing else."""
    try:
        if tag == TAG_HELLO:
            return _decode_hello(body)
        if tag == TAG_ANCHOR_REQUEST:
            _decode_json_obj(body, {})
            return AnchorRequest()
        if tag == TAG_POSE_UPDATE:
            return _decode_pose_update(body)
        if tag == TAG_REANCHOR:
            _decode_json_obj(body, {})
            return ReAnchor()
        if tag == TAG_STATE_UPDATE:
            return _decode_state_update(body)
        if tag == TAG_FRAME_MSG:
            return _decode_frame_msg(body)
        if tag == TAG_RECORD_CONTROL:
            return _decode_record_control(body)
        if tag == TAG_ERROR:
            obj = _decode_json_obj(body, {"code": (str,), "text": (str,)})
            return Error(obj["code"], obj["text"])
        if tag == TAG_PING:
            return _decode_ping(body, Ping)
        if tag == TAG_ECHO:
            return _decode_ping(body, Echo)
    except DecodeError:
        raise
    except Exception as exc:  # decoding must be total
        raise DecodeError(f"malformed body for tag {tag}: {exc}") from None
    raise DecodeError(f"unknown message tag {tag}")


class FrameDecoder:
    """Incremental stream splitter.  feed() returns every complete message;
    partial frames wait in the buffer.  A bad length prefix or body raises
    DecodeError and poisons the decoder (the stream has lost sync)."""

    def __init__(self, max_frame: int = MAX_FRAME):
        self.max_frame = max_frame
        self._buf = bytearray()
        self._dead = False

    @property
    def pending(self) -> int:
        return len(self._buf)

    def feed(self, data: bytes) -> list[WireMessage]:
        if self._dead:
            raise DecodeError("decoder poisoned by an earlier error")
        self._buf.extend(data)
        out: list[WireMessage] = []
        while True:
            if len(self._buf) < 4:
                return out
            (plen,) = struct.unpack_from("<I", self._buf, 0)
            if plen < 1 or plen > self.max_frame:
                self._dead = True
                raise DecodeError(f"bad frame length {plen}")
            if len(self._buf) < 4 + plen:
                return out
            tag = self._buf[4]
            body = bytes(self._buf[5:4 + plen])
            del self._buf[:4 + plen]
            try:
                out.append(decode_body(tag, body))
            except DecodeError:
                self._dead = True
                raise
