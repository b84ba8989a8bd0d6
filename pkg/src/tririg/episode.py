"""Binary episode store.

File layout (all little-endian):

    8 bytes   magic b"TRIEPIS1"
    4 bytes   u32 manifest length
    N bytes   manifest JSON (canonical: sorted keys, compact separators)
    records   step_count fixed-width records:
                u32 time_step, u8 stage bitmask,
                21 f32 joint positions, 21 f32 action targets,
                n_obj * 7 f32 object poses (t xyz, quat wxyz),
                per camera in manifest order: h*w raw u8 pixels
    8 bytes   footer magic b"TRIFEND1"
    4 bytes   u32 crc32 over everything before the footer magic

Everything that persists is float32; states are quantized through float32
before rendering or storage, so a replay that feeds the recorded actions back
through the simulator reproduces every record bit for bit, and re-rendering
from stored records reproduces every frame bit for bit.  No timestamps or
other machine state are written anywhere.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, replace as dc_replace
from pathlib import Path

import numpy as np

from .camera import Frame, render
from .rig import AV_CAMERA_IDS, QPOS_DIM, RigModel
from .simulator import SimConfig, SimState, Simulator
from .tasks import make_task
from .transforms import Pose

MAGIC = b"TRIEPIS1"
FOOTER_MAGIC = b"TRIFEND1"
FORMAT_VERSION = 1


class EpisodeFormatError(ValueError):
    """Corrupt, truncated, or incompatible episode data."""


def _f32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float32)


def quantize_pose(p: Pose) -> Pose:
    return Pose(_f32(p.t).astype(np.float64), _f32(p.q).astype(np.float64))


def quantize_state(state: SimState) -> SimState:
    """The float32 view of a state: what gets stored and what gets rendered."""
    objs = tuple(dc_replace(o, pose=quantize_pose(o.pose)) for o in state.objects)
    q = _f32(state.qpos).astype(np.float64)
    return SimState(state.time_step, q, objs, state.stage_flags)


@dataclass(frozen=True)
class EpisodeManifest:
    task: str
    seed: int
    task_params: dict
    camera_set: tuple[str, ...]
    width: int
    height: int
    av_arm_present: bool
    object_ids: tuple[str, ...]
    stage_names: tuple[str, ...]
    final_stage_flags: tuple[bool, ...]
    step_count: int
    chain_checksums: dict
    rate_hz: float = 50.0
    dt: float = 0.02
    vmax: float = 2.0
    noise_std: tuple[float, float] = (0.0, 0.0)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "task": self.task,
            "seed": self.seed,
            "task_params": self.task_params,
            "camera_set": list(self.camera_set),
            "width": self.width,
            "height": self.height,
            "av_arm_present": self.av_arm_present,
            "object_ids": list(self.object_ids),
            "stage_names": list(self.stage_names),
            "final_stage_flags": list(self.final_stage_flags),
            "step_count": self.step_count,
            "chain_checksums": dict(self.chain_checksums),
            "rate_hz": self.rate_hz,
            "dt": self.dt,
            "vmax": self.vmax,
            "noise_std": list(self.noise_std),
        }

    @staticmethod
    def from_dict(d: dict) -> "EpisodeManifest":
        try:
            if d["format_version"] != FORMAT_VERSION:
                raise EpisodeFormatError(f"unsupported format version {d['format_version']}")
            return EpisodeManifest(
                task=d["task"],
                seed=int(d["seed"]),
                task_params=d["task_params"],
                camera_set=tuple(d["camera_set"]),
                width=int(d["width"]),
                height=int(d["height"]),
                av_arm_present=bool(d["av_arm_present"]),
                object_ids=tuple(d["object_ids"]),
                stage_names=tuple(d["stage_names"]),
                final_stage_flags=tuple(bool(v) for v in d["final_stage_flags"]),
                step_count=int(d["step_count"]),
                chain_checksums=d["chain_checksums"],
                rate_hz=float(d["rate_hz"]),
                dt=float(d["dt"]),
                vmax=float(d["vmax"]),
                noise_std=tuple(float(v) for v in d["noise_std"]),
            )
        except KeyError as exc:
            raise EpisodeFormatError(f"manifest missing key {exc}") from exc


def _record_dtype(n_obj: int, n_cams: int, h: int, w: int) -> np.dtype:
    return np.dtype([
        ("time_step", "<u4"),
        ("flags", "u1"),
        ("qpos", "<f4", (QPOS_DIM,)),
        ("action", "<f4", (QPOS_DIM,)),
        ("obj", "<f4", (n_obj, 7)),
        ("frames", "u1", (n_cams, h, w)),
    ])


@dataclass
class Episode:
    manifest: EpisodeManifest
    time_steps: np.ndarray          # (T,) u32
    stage_masks: np.ndarray         # (T,) u8, bit i = stage i latched before the action
    qpos: np.ndarray                # (T, 21) f32
    actions: np.ndarray             # (T, 21) f32
    object_poses: np.ndarray        # (T, n_obj, 7) f32
    frames: dict[str, np.ndarray]   # camera -> (T, h, w) u8

    @property
    def n_steps(self) -> int:
        return int(self.manifest.step_count)

    def object_pose(self, step: int, object_id: str) -> Pose:
        k = self.manifest.object_ids.index(object_id)
        row = self.object_poses[step, k].astype(np.float64)
        return Pose(row[:3], row[3:])

    def equals(self, other: "Episode") -> bool:
        if self.manifest != other.manifest:
            return False
        for a, b in (
            (self.time_steps, other.time_steps),
            (self.stage_masks, other.stage_masks),
            (self.qpos, other.qpos),
            (self.actions, other.actions),
            (self.object_poses, other.object_poses),
        ):
            if not np.array_equal(a, b):
                return False
        if set(self.frames) != set(other.frames):
            return False
        return all(np.array_equal(self.frames[c], other.frames[c]) for c in self.frames)


def _flags_to_mask(flags) -> int:
    mask = 0
    for i, f in enumerate(flags):
        if f:
            mask |= 1 << i
    return mask


class EpisodeRecorder:
    """Accumulates (state, action) pairs at the simulation rate, rendering the
    chosen cameras from the float32-quantized state."""

    def __init__(
        self,
        rig: RigModel,
        sim: Simulator,
        seed: int,
        camera_set=None,
        noise_std: tuple[float, float] = (0.0, 0.0),
        av_arm_present: bool = True,
    ):
        from .rig import CAMERA_IDS

        self.rig = rig
        self.sim = sim
        self.seed = seed
        self.camera_set = tuple(camera_set) if camera_set is not None else CAMERA_IDS
        self.noise_std = tuple(noise_std)
        self.av_arm_present = av_arm_present
        intr = {rig.cameras[c].intrinsics for c in self.camera_set}
        if len(intr) != 1:
            raise EpisodeFormatError("mixed camera resolutions in one episode")
        self._intr = next(iter(intr))
        self._rows: list[tuple] = []
        self._closed = False

    def add(self, state: SimState, action) -> dict[str, Frame]:
        """Record the pre-action state and the action about to be applied.
        Returns the rendered frames (reusable by live streaming)."""
        if self._closed:
            raise EpisodeFormatError("recorder already finalized")
        qstate = quantize_state(state)
        frames = render(self.rig, qstate, self.camera_set, self.av_arm_present)
        self._rows.append((
            state.time_step,
            _flags_to_mask(state.stage_flags),
            _f32(state.qpos),
            _f32(action),
            np.stack([
                np.concatenate([_f32(o.pose.t), _f32(o.pose.q)]) for o in state.objects
            ]) if state.objects else np.zeros((0, 7), np.float32),
            {c: frames[c].pixels for c in self.camera_set},
        ))
        return frames

    def finalize(self, final_state: SimState) -> Episode:
        if self._closed:
            raise EpisodeFormatError("recorder already finalized")
        self._closed = True
        task = self.sim.task
        T = len(self._rows)
        n_obj = len(task.object_order)
        manifest = EpisodeManifest(
            task=task.name,
            seed=self.seed,
            task_params=task.params,
            camera_set=self.camera_set,
            width=self._intr.width,
            height=self._intr.height,
            av_arm_present=self.av_arm_present,
            object_ids=task.object_order,
            stage_names=task.stage_names,
            final_stage_flags=tuple(final_state.stage_flags),
            step_count=T,
            chain_checksums=self.rig.checksums(),
            dt=self.sim.config.dt,
            vmax=self.sim.config.vmax,
            noise_std=self.noise_std,
        )
        h, w = self._intr.height, self._intr.width
        ep = Episode(
            manifest=manifest,
            time_steps=np.array([r[0] for r in self._rows], dtype=np.uint32),
            stage_masks=np.array([r[1] for r in self._rows], dtype=np.uint8),
            qpos=np.stack([r[2] for r in self._rows]) if T else np.zeros((0, QPOS_DIM), np.float32),
            actions=np.stack([r[3] for r in self._rows]) if T else np.zeros((0, QPOS_DIM), np.float32),
            object_poses=np.stack([r[4] for r in self._rows]) if T else np.zeros((0, n_obj, 7), np.float32),
            frames={
                c: (np.stack([r[5][c] for r in self._rows]) if T else np.zeros((0, h, w), np.uint8))
                for c in self.camera_set
            },
        )
        self._rows.clear()
        return ep


# ---------------------------------------------------------------------------
# file IO


def _manifest_bytes(manifest: EpisodeManifest) -> bytes:
    return json.dumps(manifest.to_dict(), sort_keys=True, separators=(",", ":")).encode()


def save_episode(ep: Episode, path: str | Path) -> None:
    m = ep.manifest
    T = m.step_count
    n_obj = len(m.object_ids)
    n_cams = len(m.camera_set)
    rec = np.zeros(T, dtype=_record_dtype(n_obj, n_cams, m.height, m.width))
    rec["time_step"] = ep.time_steps
    rec["flags"] = ep.stage_masks
    rec["qpos"] = ep.qpos
    rec["action"] = ep.actions
    rec["obj"] = ep.object_poses
    for k, c in enumerate(m.camera_set):
        rec["frames"][:, k] = ep.frames[c]
    mb = _manifest_bytes(m)
    body = MAGIC + len(mb).to_bytes(4, "little") + mb + rec.tobytes()
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as f:
        f.write(body)
        f.write(FOOTER_MAGIC)
        f.write(crc.to_bytes(4, "little"))


def load_episode(path: str | Path) -> Episode:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 4 + len(FOOTER_MAGIC) + 4:
        raise EpisodeFormatError(f"{path}: too short to be an episode file")
    if blob[: len(MAGIC)] != MAGIC:
        raise EpisodeFormatError(f"{path}: bad magic; not an episode file")
    if blob[-12:-4] != FOOTER_MAGIC:
        raise EpisodeFormatError(f"{path}: missing footer; file was not finalized")
    crc_stored = int.from_bytes(blob[-4:], "little")
    body = blob[:-12]
    if (zlib.crc32(body) & 0xFFFFFFFF) != crc_stored:
        raise EpisodeFormatError(f"{path}: checksum mismatch; file is corrupt")
    mlen = int.from_bytes(blob[8:12], "little")
    try:
        manifest = EpisodeManifest.from_dict(json.loads(blob[12 : 12 + mlen]))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise EpisodeFormatError(f"{path}: unreadable manifest: {exc}") from exc
    n_obj = len(manifest.object_ids)
    n_cams = len(manifest.camera_set)
    dtype = _record_dtype(n_obj, n_cams, manifest.height, manifest.width)
    payload = body[12 + mlen :]
    expect = manifest.step_count * dtype.itemsize
    if len(payload) != expect:
        raise EpisodeFormatError(
            f"{path}: record section is {len(payload)} bytes, expected {expect}"
        )
    rec = np.frombuffer(payload, dtype=dtype)
    return Episode(
        manifest=manifest,
        time_steps=rec["time_step"].copy(),
        stage_masks=rec["flags"].copy(),
        qpos=rec["qpos"].copy(),
        actions=rec["action"].copy(),
        object_poses=rec["obj"].copy(),
        frames={c: rec["frames"][:, k].copy() for k, c in enumerate(manifest.camera_set)},
    )


# ---------------------------------------------------------------------------
# derived episodes


def slice_cameras(ep: Episode, camera_set) -> Episode:
    camera_set = tuple(camera_set)
    missing = [c for c in camera_set if c not in ep.manifest.camera_set]
    if missing:
        raise EpisodeFormatError(f"cameras not in episode: {missing}")
    # preserve manifest order, keep only the requested subset
    kept = tuple(c for c in ep.manifest.camera_set if c in camera_set)
    return Episode(
        manifest=dc_replace(ep.manifest, camera_set=kept),
        time_steps=ep.time_steps,
        stage_masks=ep.stage_masks,
        qpos=ep.qpos,
        actions=ep.actions,
        object_poses=ep.object_poses,
        frames={c: ep.frames[c] for c in kept},
    )


def _check_rig(ep: Episode, rig: RigModel, what: str) -> None:
    if ep.manifest.chain_checksums != rig.checksums():
        raise EpisodeFormatError(
            f"{what}: rig geometry differs from the one this episode was recorded with"
        )


def _object_prototypes(ep: Episode) -> list:
    # shapes and sizes are fixed by the task definition; only poses were sampled,
    # and those come from the stored records
    task = make_task(ep.manifest.task, ep.manifest.task_params)
    proto = {o.object_id: o for o in task.sample_scene(np.random.default_rng(ep.manifest.seed))}
    return [proto[oid] for oid in ep.manifest.object_ids]


def _state_from_record(ep: Episode, protos: list, step: int) -> SimState:
    objs = []
    for k, p in enumerate(protos):
        row = ep.object_poses[step, k].astype(np.float64)
        objs.append(dc_replace(p, pose=Pose(row[:3], row[3:]), attached_to=None, grasp_offset=None))
    return SimState(
        time_step=int(ep.time_steps[step]),
        qpos=ep.qpos[step].astype(np.float64),
        objects=tuple(objs),
        stage_flags=tuple(bool(ep.stage_masks[step] >> i & 1) for i in range(len(ep.manifest.stage_names))),
    )


def rerender_episode(ep: Episode, rig: RigModel, camera_set, av_arm_present: bool) -> Episode:
    """Fresh frames for any camera subset straight from the stored records.
    With av_arm_present=False the camera arm is absent from the rendered world
    (and its cameras cannot be requested)."""
    from .camera import CameraError

    _check_rig(ep, rig, "rerender")
    camera_set = tuple(camera_set)
    for c in camera_set:
        if c not in rig.cameras:
            raise CameraError(f"unknown camera {c!r}")
        if not av_arm_present and c in AV_CAMERA_IDS:
            raise CameraError(f"camera {c!r} requires the camera arm")
    frames = {c: np.empty((ep.n_steps, ep.manifest.height, ep.manifest.width), np.uint8) for c in camera_set}
    protos = _object_prototypes(ep)
    for t in range(ep.n_steps):
        state = _state_from_record(ep, protos, t)
        out = render(rig, state, camera_set, av_arm_present)
        for c in camera_set:
            frames[c][t] = out[c].pixels
    return Episode(
        manifest=dc_replace(ep.manifest, camera_set=camera_set, av_arm_present=av_arm_present),
        time_steps=ep.time_steps,
        stage_masks=ep.stage_masks,
        qpos=ep.qpos,
        actions=ep.actions,
        object_poses=ep.object_poses,
        frames=frames,
    )


@dataclass
class ReplayReport:
    ok: bool
    steps_checked: int
    first_divergence: tuple[int, str, str] | None = None  # (step, field, detail)


def replay_episode(ep: Episode, rig: RigModel) -> ReplayReport:
    """Re-run the simulator from (task, seed) feeding the recorded actions;
    every stored record must match bit for bit."""
    _check_rig(ep, rig, "replay")
    m = ep.manifest
    sim = Simulator(rig, make_task(m.task, m.task_params), SimConfig(dt=m.dt, vmax=m.vmax))
    state = sim.reset(m.seed)
    for t in range(ep.n_steps):
        if state.time_step != int(ep.time_steps[t]):
            return ReplayReport(False, t, (t, "time_step", f"{state.time_step} != {ep.time_steps[t]}"))
        if _flags_to_mask(state.stage_flags) != int(ep.stage_masks[t]):
            return ReplayReport(False, t, (t, "stage_flags", f"{state.stage_flags}"))
        live = _f32(state.qpos)
        if not np.array_equal(live, ep.qpos[t]):
            k = int(np.argmax(live != ep.qpos[t]))
            return ReplayReport(False, t, (t, "qpos", f"joint {k}: {live[k]} != {ep.qpos[t][k]}"))
        for k, obj in enumerate(state.objects):
            row = np.concatenate([_f32(obj.pose.t), _f32(obj.pose.q)])
            if not np.array_equal(row, ep.object_poses[t, k]):
                return ReplayReport(
                    False, t, (t, f"object {obj.object_id}", f"{row} != {ep.object_poses[t, k]}")
                )
        state = sim.step(state, ep.actions[t].astype(np.float64))
    if tuple(state.stage_flags) != m.final_stage_flags:
        return ReplayReport(
            False, ep.n_steps,
            (ep.n_steps, "final_stage_flags", f"{state.stage_flags} != {m.final_stage_flags}"),
        )
    return ReplayReport(True, ep.n_steps)


def export_frame(ep: Episode, camera_id: str, step: int, path: str | Path) -> None:
    """Write one stored frame as an image file (format from the extension)."""
    from PIL import Image

    if camera_id not in ep.frames:
        raise EpisodeFormatError(f"camera {camera_id!r} not in episode")
    if not 0 <= step < ep.n_steps:
        raise EpisodeFormatError(f"step {step} out of range 0..{ep.n_steps - 1}")
    Image.fromarray(ep.frames[camera_id][step], mode="L").save(path)
