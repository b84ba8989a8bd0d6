"""Streaming teleoperation service.

Each client session owns one simulator and one set of teleop anchors.  A
reader thread parses inbound frames; pose intent lands in per-device
latest-wins slots, control messages in a command queue.  A control-loop
thread ticks at a fixed rate, consuming the freshest pose per device,
solving IK, stepping the simulator, and queueing StateUpdates plus camera
frames.  A writer thread drains a bounded outbound queue (oldest frame
dropped first under backpressure).  The loop is the only owner of mutable
simulator state.

Two bindings share one port: a raw length-prefixed TCP stream, and a
WebSocket upgrade for browsers (detected by the "GET " preamble).
"""

from __future__ import annotations

import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import netproto as wire
from .episode import EpisodeRecorder, save_episode
from .kinematics import ik_dls, ik_regularized, tool_pose
from .netproto import DecodeError, FrameDecoder
from .policy import DEVICE_CHAIN
from .rig import AV, GRIPPER_INDEX, SLICES, RigModel, default_rig
from .simulator import SimConfig, Simulator
from .tasks import make_task
from .teleop import anchor_session, trigger_to_gripper
from .transforms import Pose
from .ws import WSError, WSStream


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 0  # 0 picks a free port
    dataset_dir: str | Path | None = None
    default_task: str = "peg_insertion"
    default_seed: int = 0
    tick_hz: float = 50.0
    frame_every: int = 2  # camera frames every Nth tick
    park_after_s: float = 2.0  # pose silence before the arms hold position
    outbound_limit: int = 256  # queued messages; oldest frame drops beyond this
    ik_iters: int = 60


@dataclass
class SessionStats:
    tick_late_ms: list = field(default_factory=list)
    missed_ticks: int = 0
    dropped_frames: int = 0
    rejected_poses: int = 0  # stale timestamps or non-finite values
    ticks: int = 0

    def jitter_percentiles(self) -> dict:
        if not self.tick_late_ms:
            return {"n": 0, "p50_ms": 0.0, "p99_ms": 0.0, "max_ms": 0.0}
        arr = np.asarray(self.tick_late_ms)
        return {
            "n": int(arr.size),
            "p50_ms": float(np.percentile(arr, 50)),
            "p99_ms": float(np.percentile(arr, 99)),
            "max_ms": float(arr.max()),
        }


class _TcpTransport:
    def __init__(self, sock: socket.socket):
        self._sock = sock

    def recv(self) -> bytes:
        try:
            return self._sock.recv(65536)
        except OSError:
            return b""

    def sendall(self, data: bytes) -> None:
        self._sock.sendall(data)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class _WsTransport:
    def __init__(self, ws: WSStream):
        self._ws = ws

    def recv(self) -> bytes:
        try:
            return self._ws.recv_binary()
        except (WSError, OSError):
            return b""

    def sendall(self, data: bytes) -> None:
        self._ws.send_binary(data)

    def close(self) -> None:
        try:
            self._ws.close()
        except OSError:
            pass


@dataclass
class _Slot:
    pose: Pose
    trigger: float
    timestamp_us: int


class Session:
    """One connected operator: reader + control loop + writer."""

    def __init__(self, server: "TeleopServer", transport, session_id: int):
        self.server = server
        self.cfg = server.cfg
        self.rig = server.rig
        self.transport = transport
        self.session_id = session_id
        self.stats = SessionStats()
        self.cameras: tuple[str, ...] = ()
        self.role = ""
        self.last_episode_path: Path | None = None

        self._decoder = FrameDecoder()
        self._running = True
        self._hello_done = threading.Event()
        self._pose_lock = threading.Lock()
        self._slots: dict[str, _Slot] = {}
        self._last_ts: dict[str, int] = {}
        self._last_pose_time = None  # monotonic seconds of last accepted pose
        self._commands: deque = deque()
        self._out: deque = deque()  # (is_frame, bytes)
        self._out_cond = threading.Condition()

        self._sim: Simulator | None = None
        self._state = None
        self._anchors = None
        self._recorder: EpisodeRecorder | None = None
        self._episode_count = 0

        self._threads = [
            threading.Thread(target=self._reader, daemon=True, name=f"s{session_id}-rd"),
            threading.Thread(target=self._writer, daemon=True, name=f"s{session_id}-wr"),
        ]
        self._loop_thread = threading.Thread(
            target=self._loop, daemon=True, name=f"s{session_id}-tick")

    def start(self) -> None:
        for t in self._threads:
            t.start()

    # -- outbound ------------------------------------------------------------

    def _enqueue(self, msg, is_frame: bool = False) -> None:
        data = wire.encode_message(msg)
        with self._out_cond:
            if len(self._out) >= self.cfg.outbound_limit:
                # shed display traffic first, never control messages
                for i, (f, _) in enumerate(self._out):
                    if f:
                        del self._out[i]
                        self.stats.dropped_frames += 1
                        break
                else:
                    self._out.popleft()
            self._out.append((is_frame, data))
            self._out_cond.notify()

    def _writer(self) -> None:
        while True:
            with self._out_cond:
                while self._running and not self._out:
                    self._out_cond.wait(timeout=0.2)
                if not self._running and not self._out:
                    return
                if not self._out:
                    continue
                _, data = self._out.popleft()
            try:
                self.transport.sendall(data)
            except OSError:
                self.stop()
                return

    def _fail(self, code: str, text: str) -> None:
        """Protocol-level refusal: tell the client why, then close."""
        try:
            self._enqueue(wire.Error(code, text))
            time.sleep(0.05)  # give the writer a chance to flush
        finally:
            self.stop()

    # -- inbound -------------------------------------------------------------

    def _reader(self) -> None:
        while self._running:
            data = self.transport.recv()
            if not data:
                self.stop()
                return
            try:
                msgs = self._decoder.feed(data)
            except DecodeError as exc:
                self._fail("decode", str(exc))
                return
            for msg in msgs:
                if not self._dispatch(msg):
                    return

    def _dispatch(self, msg) -> bool:
        if isinstance(msg, wire.Ping):
            # probes are control-plane: answered even before Hello or while parked
            self._enqueue(wire.Echo(msg.seq, msg.t_send_us))
            return True
        if not self._hello_done.is_set():
            if isinstance(msg, wire.Hello):
                return self._handle_hello(msg)
            self._fail("protocol", f"{type(msg).__name__} before Hello")
            return False
        if isinstance(msg, wire.PoseUpdate):
            self._handle_pose(msg)
            return True
        if isinstance(msg, (wire.AnchorRequest, wire.ReAnchor, wire.RecordControl)):
            self._commands.append(msg)
            return True
        self._fail("protocol", f"unexpected {type(msg).__name__} from client")
        return False

    def _handle_hello(self, msg: wire.Hello) -> bool:
        if msg.protocol_version != wire.PROTOCOL_VERSION:
            self._fail("version",
                       f"server speaks {wire.PROTOCOL_VERSION}, client {msg.protocol_version}")
            return False
        unknown = [c for c in msg.camera_set if c not in self.rig.cameras]
        if unknown:
            self._fail("camera", f"unknown cameras: {', '.join(unknown)}")
            return False
        self.cameras = tuple(msg.camera_set)
        self.role = msg.role
        self._sim = Simulator(self.rig, make_task(self.cfg.default_task), SimConfig())
        self._state = self._sim.reset(self.cfg.default_seed)
        self._hello_done.set()
        self._enqueue(wire.Hello(wire.PROTOCOL_VERSION, self.cameras, "server"))
        self._loop_thread.start()
        return True

    def _handle_pose(self, msg: wire.PoseUpdate) -> None:
        now = time.monotonic()
        accepted = False
        for dev, sample in zip(wire.WIRE_DEVICE_ORDER, msg.devices):
            vals = (*sample.t, *sample.q, sample.trigger)
            if not all(np.isfinite(v) for v in vals):
                self.stats.rejected_poses += 1
                continue
            qn = float(np.linalg.norm(sample.q))
            if qn < 1e-6:
                self.stats.rejected_poses += 1
                continue
            # timestamps must strictly increase per device; stale intent is dropped
            if sample.timestamp_us <= self._last_ts.get(dev, -1):
                self.stats.rejected_poses += 1
                continue
            self._last_ts[dev] = sample.timestamp_us
            pose = Pose(np.array(sample.t), np.array(sample.q) / qn)
            trig = min(1.0, max(0.0, float(sample.trigger)))
            with self._pose_lock:
                self._slots[dev] = _Slot(pose, trig, sample.timestamp_us)
            accepted = True
        if accepted:
            self._last_pose_time = now

    # -- control loop ----------------------------------------------------------

    def _snapshot_slots(self) -> dict[str, _Slot]:
        with self._pose_lock:
            return dict(self._slots)

    def _make_anchors(self, slots: dict[str, _Slot]) -> bool:
        present = {d: s.pose for d, s in slots.items() if d in DEVICE_CHAIN}
        if not present:
            return False
        robot = {
            dev: tool_pose(self.rig.chains[chain],
                           self.rig.arm_q(self._state.qpos, chain))
            for dev, chain in DEVICE_CHAIN.items() if dev in present
        }
        self._anchors = anchor_session(present, robot)
        return True

    def _handle_command(self, msg) -> None:
        if isinstance(msg, (wire.AnchorRequest, wire.ReAnchor)):
            if not self._make_anchors(self._snapshot_slots()):
                self._enqueue(wire.Error("anchor", "no pose stream to anchor to"))
            return
        if isinstance(msg, wire.RecordControl):
            if msg.action == "start":
                if self._recorder is not None:
                    self._enqueue(wire.Error("record", "already recording"))
                    return
                task = msg.task if msg.task is not None else self.cfg.default_task
                seed = msg.seed if msg.seed is not None else self.cfg.default_seed
                try:
                    self._sim = Simulator(self.rig, make_task(task), SimConfig())
                except Exception as exc:
                    self._enqueue(wire.Error("record", str(exc)))
                    return
                self._state = self._sim.reset(seed)
                self._recorder = EpisodeRecorder(
                    self.rig, self._sim, seed, camera_set=self.cameras or None)
                # the reset moved the arms home, so motion restarts from the
                # operator's current device pose
                slots = self._snapshot_slots()
                if not self._make_anchors(slots):
                    self._anchors = None
                self._enqueue(wire.RecordControl("start", task, seed))
            else:
                if self._recorder is None:
                    self._enqueue(wire.Error("record", "not recording"))
                    return
                ep = self._recorder.finalize(self._state)
                self._recorder = None
                if self.server.dataset_dir is None:
                    self._enqueue(wire.Error("record", "server has no dataset directory"))
                    return
                name = f"{ep.manifest.task}_seed{ep.manifest.seed}_c{self.session_id}_{self._episode_count:03d}.tri"
                self._episode_count += 1
                path = self.server.dataset_dir / name
                save_episode(ep, path)
                self.last_episode_path = path
                self._enqueue(wire.RecordControl("stop", ep.manifest.task, ep.manifest.seed))

    def _tick_action(self, slots: dict[str, _Slot]) -> np.ndarray:
        action = np.array(self._state.qpos)
        if self._anchors is None:
            return action
        g = self.rig.gripper
        for dev, chain_name in DEVICE_CHAIN.items():
            anchor = self._anchors.get(dev)
            slot = slots.get(dev)
            if anchor is None or slot is None:
                continue
            target = anchor.map_pose(slot.pose)
            chain = self.rig.chains[chain_name]
            q_now = self.rig.arm_q(self._state.qpos, chain_name)
            if chain_name == AV:
                sol, _ = ik_dls(chain, q_now, target, max_iters=self.cfg.ik_iters)
            else:
                sol, _ = ik_regularized(chain, q_now, target, w_center=1e-6,
                                        w_disp=0.0025, max_iters=self.cfg.ik_iters)
                action[GRIPPER_INDEX[chain_name]] = trigger_to_gripper(
                    slot.trigger, g.open_value, g.closed_value)
            action[SLICES[chain_name]] = sol
        return action

    def _loop(self) -> None:
        from .camera import render

        period = 1.0 / self.cfg.tick_hz
        deadline = time.monotonic() + period
        tick = 0
        while self._running:
            now = time.monotonic()
            delay = deadline - now
            if delay > 0:
                time.sleep(delay)
                now = time.monotonic()
            late = max(0.0, now - deadline)
            self.stats.tick_late_ms.append(late * 1000.0)
            try:
                while self._commands:
                    self._handle_command(self._commands.popleft())
                slots = self._snapshot_slots()
                parked = (self._last_pose_time is None
                          or now - self._last_pose_time > self.cfg.park_after_s)
                action = self._tick_action(slots) if not parked else np.array(self._state.qpos)
                if self._recorder is not None:
                    self._recorder.add(self._state, action)
                self._state = self._sim.step(self._state, action)
                self._enqueue(wire.StateUpdate(
                    self._state.time_step,
                    tuple(float(v) for v in np.asarray(self._state.qpos, np.float32)),
                    tuple(self._state.stage_flags),
                ))
                if self.cameras and tick % self.cfg.frame_every == 0:
                    frames = render(self.rig, self._state, self.cameras)
                    for cid in self.cameras:
                        f = frames[cid]
                        h, w = f.pixels.shape
                        self._enqueue(wire.FrameMsg(
                            cid, self._state.time_step, w, h, f.pixels.tobytes()),
                            is_frame=True)
            except Exception as exc:
                self._fail("internal", f"{type(exc).__name__}: {exc}")
                return
            self.stats.ticks += 1
            tick += 1
            deadline += period
            if late > period:
                # fell behind; resync rather than sprinting through stale ticks
                missed = int(late // period)
                self.stats.missed_ticks += missed
                deadline += missed * period

    def stop(self) -> None:
        if not self._running:
            return
        self._running = False
        with self._out_cond:
            self._out_cond.notify_all()
        self.transport.close()


class TeleopServer:
    """Accepts raw-TCP and WebSocket clients on one port."""

    def __init__(self, rig: RigModel | None = None, cfg: ServerConfig | None = None):
        self.rig = rig if rig is not None else default_rig()
        self.cfg = cfg or ServerConfig()
        self.dataset_dir = Path(self.cfg.dataset_dir) if self.cfg.dataset_dir else None
        if self.dataset_dir is not None:
            self.dataset_dir.mkdir(parents=True, exist_ok=True)
        self.sessions: list[Session] = []
        self._listener: socket.socket | None = None
        self._accept_thread: threading.Thread | None = None
        self._running = False
        self._next_id = 0

    @property
    def port(self) -> int:
        return self._listener.getsockname()[1]

    def _warmup(self) -> None:
        """Pay the render-kernel load once, before any session ticks."""
        from .camera import render

        sim = Simulator(self.rig, make_task(self.cfg.default_task), SimConfig())
        render(self.rig, sim.reset(self.cfg.default_seed), tuple(self.rig.cameras))

    def start(self) -> tuple[str, int]:
        self._warmup()
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((self.cfg.host, self.cfg.port))
        self._listener.listen(16)
        self._running = True
        self._accept_thread = threading.Thread(target=self._accept, daemon=True,
                                               name="teleop-accept")
        self._accept_thread.start()
        return self._listener.getsockname()[:2]

    def _accept(self) -> None:
        while self._running:
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self._admit, args=(sock,), daemon=True).start()

    def _admit(self, sock: socket.socket) -> None:
        """Sniff the first bytes: an HTTP GET means a WebSocket upgrade,
        anything else is the raw length-prefixed stream."""
        try:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            while True:
                head = sock.recv(4, socket.MSG_PEEK)
                if not head:
                    sock.close()
                    return
                if len(head) >= 4:
                    break
                time.sleep(0.005)  # first packet arrived split; peek again
            if head[:4] == b"GET ":
                ws = WSStream(sock, client_side=False)
                ws.handshake_server()
                transport = _WsTransport(ws)
            else:
                transport = _TcpTransport(sock)
        except (WSError, OSError):
            sock.close()
            return
        session = Session(self, transport, self._next_id)
        self._next_id += 1
        self.sessions.append(session)
        session.start()

    def stop(self) -> None:
        self._running = False
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        for s in list(self.sessions):
            s.stop()
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)


def serve_forever(rig: RigModel | None = None, cfg: ServerConfig | None = None) -> None:
    server = TeleopServer(rig, cfg)
    host, port = server.start()
    print(f"teleop service listening on {host}:{port} (TCP + WebSocket)")
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
