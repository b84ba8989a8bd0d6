"""Blocking client for the teleoperation service, used by tests, the latency
probe, and scripted drivers.  A background thread collects inbound messages:
the latest StateUpdate, the latest frame per camera, record acknowledgements,
errors, and ping round-trip samples.
"""

from __future__ import annotations

import socket
import threading
import time
from dataclasses import dataclass

import numpy as np

from . import netproto as wire
from .netproto import DecodeError, FrameDecoder
from .teleop import DEVICE_IDS
from .transforms import Pose
from .ws import WSStream


class ClientError(ConnectionError):
    pass


class ServerRefused(ClientError):
    """The server answered the handshake with an Error message."""

    def __init__(self, err: wire.Error):
        super().__init__(f"{err.code}: {err.text}")
        self.code = err.code
        self.text = err.text


@dataclass
class _Rtt:
    seq: int
    sent_ns: int


class TeleopClient:
    def __init__(
        self,
        host: str,
        port: int,
        cameras: tuple[str, ...] = (),
        role: str = "operator",
        transport: str = "tcp",
        timeout: float = 5.0,
        protocol_version: int = wire.PROTOCOL_VERSION,
    ):
        self.host, self.port = host, port
        sock = socket.create_connection((host, port), timeout=timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.settimeout(timeout)
        if transport == "ws":
            self._ws = WSStream(sock, client_side=True)
            self._ws.handshake_client(f"{host}:{port}")
        elif transport == "tcp":
            self._ws = None
        else:
            raise ValueError(f"unknown transport {transport!r}")
        self._sock = sock
        self._decoder = FrameDecoder()
        self._lock = threading.Condition()
        self._closed = False

        self.server_hello: wire.Hello | None = None
        self.latest_state: wire.StateUpdate | None = None
        self.frames: dict[str, wire.FrameMsg] = {}
        self.errors: list[wire.Error] = []
        self.record_acks: list[wire.RecordControl] = []
        self.rtt_ms: list[float] = []
        self._pending_pings: dict[int, int] = {}
        self._seq = 0
        self._ts = {dev: 0 for dev in DEVICE_IDS}

        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self._send(wire.Hello(protocol_version, tuple(cameras), role))
        deadline = time.monotonic() + timeout
        with self._lock:
            while self.server_hello is None and not self.errors and not self._closed:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise ClientError("handshake timed out")
                self._lock.wait(remaining)
            if self.errors:
                raise ServerRefused(self.errors[0])
            if self.server_hello is None:
                raise ClientError("connection closed during handshake")

    # -- plumbing ------------------------------------------------------------

    def _send(self, msg) -> None:
        data = wire.encode_message(msg)
        if self._ws is not None:
            self._ws.send_binary(data)
        else:
            self._sock.sendall(data)

    def _read_loop(self) -> None:
        while not self._closed:
            try:
                if self._ws is not None:
                    data = self._ws.recv_binary()
                else:
                    data = self._sock.recv(65536)
            except OSError:
                data = b""
            if not data:
                break
            try:
                msgs = self._decoder.feed(data)
            except DecodeError:
                break
            now = time.monotonic_ns()
            with self._lock:
                for m in msgs:
                    self._collect(m, now)
                self._lock.notify_all()
        with self._lock:
            self._closed = True
            self._lock.notify_all()

    def _collect(self, m, now_ns: int) -> None:
        if isinstance(m, wire.Hello):
            self.server_hello = m
        elif isinstance(m, wire.StateUpdate):
            self.latest_state = m
        elif isinstance(m, wire.FrameMsg):
            self.frames[m.camera_id] = m
        elif isinstance(m, wire.Error):
            self.errors.append(m)
        elif isinstance(m, wire.RecordControl):
            self.record_acks.append(m)
        elif isinstance(m, wire.Echo):
            sent = self._pending_pings.pop(m.seq, None)
            if sent is not None:
                self.rtt_ms.append((now_ns - sent) / 1e6)

    # -- operator actions ------------------------------------------------------

    def send_poses(self, poses: dict[str, Pose], triggers: dict[str, float] | None = None,
                   timestamp_us: int | None = None) -> None:
        """One PoseUpdate carrying all three devices.  Missing devices repeat
        an identity pose with a fresh timestamp."""
        triggers = triggers or {}
        samples = []
        for dev in wire.WIRE_DEVICE_ORDER:
            p = poses.get(dev)
            if p is None:
                t, q = (0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0)
            else:
                t, q = tuple(float(v) for v in p.t), tuple(float(v) for v in p.q)
            if timestamp_us is None:
                self._ts[dev] += 1
                ts = self._ts[dev]
            else:
                ts = timestamp_us
                self._ts[dev] = max(self._ts[dev], ts)
            samples.append(wire.DeviceSample(t, q, float(triggers.get(dev, 0.0)), ts))
        self._send(wire.PoseUpdate(tuple(samples)))

    def anchor(self) -> None:
        self._send(wire.AnchorRequest())

    def reanchor(self) -> None:
        self._send(wire.ReAnchor())

    def record_start(self, task: str | None = None, seed: int | None = None) -> None:
        self._send(wire.RecordControl("start", task, seed))

    def record_stop(self) -> None:
        self._send(wire.RecordControl("stop"))

    def ping(self) -> int:
        with self._lock:
            self._seq += 1
            seq = self._seq
            self._pending_pings[seq] = time.monotonic_ns()
        self._send(wire.Ping(seq, time.monotonic_ns() // 1000))
        return seq

    # -- helpers ----------------------------------------------------------------

    def wait(self, pred, timeout: float = 5.0) -> bool:
        """Block until pred(self) is true under the lock, or time out."""
        deadline = time.monotonic() + timeout
        with self._lock:
            while not pred(self):
                remaining = deadline - time.monotonic()
                if remaining <= 0 or self._closed:
                    return bool(pred(self))
                self._lock.wait(remaining)
            return True

    def wait_state(self, min_step: int = 0, timeout: float = 5.0) -> wire.StateUpdate:
        ok = self.wait(lambda c: c.latest_state is not None
                       and c.latest_state.time_step >= min_step, timeout)
        if not ok:
            raise ClientError(f"no StateUpdate past step {min_step} within {timeout}s")
        return self.latest_state

    def latency_probe(self, n: int = 200, interval_s: float = 0.005,
                      timeout: float = 10.0) -> dict:
        """Ping/echo round trips; returns millisecond percentiles."""
        start = len(self.rtt_ms)
        for _ in range(n):
            self.ping()
            time.sleep(interval_s)
        self.wait(lambda c: len(c.rtt_ms) >= start + n, timeout)
        samples = np.asarray(self.rtt_ms[start:])
        if samples.size == 0:
            raise ClientError("no echo replies")
        return {
            "n": int(samples.size),
            "p50_ms": float(np.percentile(samples, 50)),
            "p99_ms": float(np.percentile(samples, 99)),
            "max_ms": float(samples.max()),
        }

    @property
    def closed(self) -> bool:
        return self._closed

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            if self._ws is not None:
                self._ws.close()
            else:
                self._sock.shutdown(socket.SHUT_RDWR)
                self._sock.close()
        except OSError:
            pass
        self._reader.join(timeout=2.0)
