"""Demonstration and policy layer.

Four pieces that close the data loop:

  * ScriptedOperator: a waypoint choreographer that emits device-pose streams
    (head + both hands + triggers), standing in for a human demonstrator.
  * run_teleop_episode: the full control path device -> anchor -> IK -> sim,
    optionally recording an episode.
  * NNPolicy: nearest-neighbor baseline over z-normalized observation keys
    (joints + downsampled frames), returning stored 50-step action chunks.
  * run_policy_episode / evaluate harness: chunked execution with temporal
    ensembling and the seven-camera-configuration success table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .episode import Episode, EpisodeRecorder, quantize_state, rerender_episode, slice_cameras
from .kinematics import KinematicChain, ik_dls, ik_regularized, tool_pose
from .rig import (
    AV,
    AV_CAMERA_IDS,
    CAMERA_IDS,
    GRIPPER_INDEX,
    LEFT,
    QPOS_DIM,
    RIGHT,
    SLICES,
    RigModel,
)
from .simulator import SimConfig, Simulator, SimState
from .tasks import TaskDef, make_task
from .teleop import (
    FRAME_ADAPTER_Q,
    HEAD,
    LEFT_HAND,
    RIGHT_HAND,
    Anchor,
    DevicePose,
    adapt_motion,
    anchor_session,
    trigger_to_gripper,
)
from .transforms import Pose, quat_conjugate, quat_from_rotvec, quat_mul

CHUNK_SIZE = 50
QUERY_PERIOD = 25
ENSEMBLE_M = 0.1
DEFAULT_NOISE_STD = (0.005, 0.01)  # meters, radians

DEVICE_CHAIN = {HEAD: AV, LEFT_HAND: LEFT, RIGHT_HAND: RIGHT}

# tool z points straight down at the table (a half turn about x)
DOWN_Q = np.array([0.0, 1.0, 0.0, 0.0])

CAMERA_GROUPS = {
    "av": ("av_left", "av_right"),
    "static": ("static_top", "static_low"),
    "wrist": ("wrist_left", "wrist_right"),
}
# the seven non-empty combinations of the three camera groups
CAMERA_CONFIGS = (
    "av",
    "static",
    "wrist",
    "av+static",
    "av+wrist",
    "static+wrist",
    "av+static+wrist",
)


def config_cameras(config: str) -> tuple[str, ...]:
    groups = config.split("+")
    for g in groups:
        if g not in CAMERA_GROUPS:
            raise KeyError(f"unknown camera group {g!r}; groups are {sorted(CAMERA_GROUPS)}")
    cams = [c for g in groups for c in CAMERA_GROUPS[g]]
    return tuple(c for c in CAMERA_IDS if c in cams)


def config_has_av(config: str) -> bool:
    return "av" in config.split("+")


class OperatorError(RuntimeError):
    """The choreographer could not produce a kinematically valid plan."""


@dataclass
class Segment:
    """One leg of a choreography: each named tool glides to its target pose
    over `ticks` steps while triggers ramp to their end values."""

    name: str
    ticks: int
    targets: dict[str, Pose] = field(default_factory=dict)   # chain -> end tool pose
    triggers: dict[str, float] = field(default_factory=dict)  # chain -> end trigger
    precision: float = 1.0  # noise amplitude multiplier while this leg runs


def _smoothstep(a: float) -> float:
    a = min(1.0, max(0.0, a))
    return a * a * (3.0 - 2.0 * a)


def _pose_between(p0: Pose, p1: Pose, alpha: float) -> Pose:
    from .transforms import pose_lerp

    return pose_lerp(p0, p1, _smoothstep(alpha))


def _above(p: np.ndarray, dz: float, q=DOWN_Q) -> Pose:
    return Pose(np.asarray(p, dtype=np.float64) + np.array([0.0, 0.0, dz]), q)


class ScriptedOperator:
    """Plans tool-space waypoints for one sampled scene, then plays them back
    as device poses.  The inversion through the anchor algebra means the
    downstream mapping reconstructs exactly the planned tool targets, so the
    whole teleop path is exercised rather than bypassed."""

    def __init__(
        self,
        rig: RigModel,
        task: TaskDef,
        state0: SimState,
        seed: int,
        noise_std: tuple[float, float] = DEFAULT_NOISE_STD,
        scale: float = 1.0,
    ):
        self.rig = rig
        self.task = task
        self.noise_std = (float(noise_std[0]), float(noise_std[1]))
        self.scale = float(scale)
        self._rng = np.random.default_rng([int(seed), 211])
        q0 = state0.qpos
        self._start_tools = {
            name: tool_pose(rig.chains[name], rig.arm_q(q0, name)) for name in (LEFT, RIGHT, AV)
        }
        self._start_q = {name: rig.arm_q(q0, name).copy() for name in (LEFT, RIGHT, AV)}
        objects = {o.object_id: o for o in state0.objects}
        planner = getattr(self, "_plan_" + task.name, None)
        if planner is None:
            raise OperatorError(f"no choreography for task {task.name!r}")
        self._segments: list[Segment] = planner(objects)
        self._validate_plan()
        self._build_tracks()
        # one OU tremor state per device, translation and rotation-vector parts;
        # starts at zero so the anchoring tick is noise-free
        self._ou = {d: np.zeros(6) for d in DEVICE_CHAIN}

    # ---------------------------------------------------------------- plans

    def _plan_peg_insertion(self, objects) -> list[Segment]:
        p = self.task.params
        peg, block = objects["peg"], objects["socket_block"]
        gp_peg = peg.grasp_point_world()
        gp_block = block.grasp_point_world()
        grasp_l = Pose(gp_block, DOWN_Q)
        grasp_r = Pose(gp_peg, DOWN_Q)
        offset_r = grasp_r.inverse() @ peg.pose  # peg-in-tool, fixed at attach
        entry = block.pose.apply(np.array(self.task.socket.entry_local))

        def tool_for_tip(tip_z: float) -> Pose:
            # peg stays vertical: center rides hl above the tip, tool rides
            # grasp_offset above the center
            center = np.array([entry[0], entry[1], tip_z + p["peg_hl"]])
            return Pose(center, np.array([1.0, 0, 0, 0])) @ offset_r.inverse()

        av_watch = _look_pose(self._start_tools[AV].t, entry)
        return [
            Segment("reach", 50, {LEFT: _above(gp_block, 0.07), RIGHT: _above(gp_peg, 0.07)}),
            Segment("descend", 30, {LEFT: grasp_l, RIGHT: grasp_r}, precision=0.6),
            Segment("close", 30, {}, {LEFT_HAND: 1.0, RIGHT_HAND: 1.0}, precision=0.4),
            Segment("lift", 30, {RIGHT: _above(gp_peg, 0.12)}),
            Segment("transport", 70, {RIGHT: tool_for_tip(entry[2] + 0.02), AV: av_watch}),
            Segment("align", 30, {RIGHT: tool_for_tip(entry[2] + 0.005)}, precision=0.3),
            Segment("insert", 40,
                    {RIGHT: tool_for_tip(entry[2] - p["socket_depth"] - 0.008)}, precision=0.2),
            Segment("settle", 30, {}, precision=0.2),
        ]

    def _plan_slot_insertion(self, objects) -> list[Segment]:
        p = self.task.params
        stick, block = objects["stick"], objects["slot_block"]
        gp_stick = stick.grasp_point_world()
        gp_block = block.grasp_point_world()
        grasp_l = Pose(gp_block, DOWN_Q)
        grasp_r = Pose(gp_stick, DOWN_Q)
        offset_r = grasp_r.inverse() @ stick.pose
        entry = block.pose.apply(np.array(self.task.socket.entry_local))

        def tool_for_tip(tip_z: float) -> Pose:
            center = np.array([entry[0], entry[1], tip_z + p["stick_hl"]])
            return Pose(center, np.array([1.0, 0, 0, 0])) @ offset_r.inverse()

        av_watch = _look_pose(self._start_tools[AV].t, entry)
        return [
            Segment("reach", 50, {LEFT: _above(gp_block, 0.07), RIGHT: _above(gp_stick, 0.07)}),
            Segment("descend", 30, {LEFT: grasp_l, RIGHT: grasp_r}, precision=0.6),
            Segment("close", 30, {}, {LEFT_HAND: 1.0, RIGHT_HAND: 1.0}, precision=0.4),
            Segment("lift", 30, {RIGHT: _above(gp_stick, 0.14)}),
            Segment("transport", 70, {RIGHT: tool_for_tip(entry[2] + 0.02), AV: av_watch}),
            Segment("align", 30, {RIGHT: tool_for_tip(entry[2] + 0.005)}, precision=0.3),
            Segment("insert", 40,
                    {RIGHT: tool_for_tip(entry[2] - p["socket_depth"] - 0.008)}, precision=0.2),
            Segment("settle", 30, {}, precision=0.2),
        ]

    def _plan_thread_needle(self, objects) -> list[Segment]:
        p = self.task.params
        needle, plate = objects["needle"], objects["plate"]
        gp = needle.grasp_point_world()
        grasp_r = Pose(gp, DOWN_Q)
        offset_r = grasp_r.inverse() @ needle.pose
        entry = plate.pose.apply(np.array(self.task.socket.entry_local))
        # reoriented so the needle's bottom tip leads along +x, straight into
        # the hole whose opening faces -x (toward the camera arm)
        lead_q = quat_from_rotvec(np.array([0.0, -math.pi / 2, 0.0]))

        def tool_for_tip(tip_x: float) -> Pose:
            center = np.array([tip_x - p["needle_hl"], entry[1], entry[2]])
            return Pose(center, lead_q) @ offset_r.inverse()

        lift = Pose(np.array([gp[0], gp[1], entry[2] + 0.06]), DOWN_Q)
        # camera-arm vantage: slightly above the hole axis on the -x side,
        # looking down the axis at the entry
        av_pos = entry + np.array([-0.22, 0.0, 0.06])
        av_watch = _look_pose(av_pos, entry)
        return [
            Segment("reach", 50, {RIGHT: _above(gp, 0.07)}),
            Segment("descend", 30, {RIGHT: grasp_r}, precision=0.6),
            Segment("close", 30, {}, {RIGHT_HAND: 1.0}, precision=0.4),
            Segment("lift", 30, {RIGHT: lift}),
            Segment("transport", 80, {RIGHT: tool_for_tip(entry[0] - 0.02), AV: av_watch}),
            Segment("align", 40, {RIGHT: tool_for_tip(entry[0] + 0.005)}, precision=0.25),
            Segment("insert", 40,
                    {RIGHT: tool_for_tip(entry[0] + p["hole_depth"] + 0.006)}, precision=0.2),
            Segment("settle", 40, {}, precision=0.2),
        ]

    # ------------------------------------------------------------- plumbing

    def _validate_plan(self) -> None:
        """Every segment-end tool pose must be reachable; the plan is rejected
        before a single tick is emitted if IK cannot hold it."""
        q = {name: self._start_q[name].copy() for name in (LEFT, RIGHT, AV)}
        for seg in self._segments:
            for chain_name, target in seg.targets.items():
                chain = self.rig.chains[chain_name]
                if chain_name == AV:
                    sol, rep = ik_dls(chain, q[chain_name], target, max_iters=400)
                else:
                    sol, rep = ik_regularized(
                        chain, q[chain_name], target,
                        w_center=1e-6, w_disp=0.0025, max_iters=400,
                    )
                if not rep.converged:
                    raise OperatorError(
                        f"waypoint {seg.name!r} unreachable for {chain_name}: "
                        f"pos {rep.pos_err:.4f} m rot {rep.rot_err:.4f} rad"
                    )
                q[chain_name] = sol

    def _build_tracks(self) -> None:
        """Per-tick robot-frame tool targets and trigger values."""
        poses = dict(self._start_tools)
        trig = {LEFT_HAND: 0.0, RIGHT_HAND: 0.0}
        self._pose_track: dict[str, list[Pose]] = {LEFT: [], RIGHT: [], AV: []}
        self._trig_track: dict[str, list[float]] = {LEFT_HAND: [], RIGHT_HAND: []}
        self._precision_track: list[float] = []
        for seg in self._segments:
            start_poses = dict(poses)
            start_trig = dict(trig)
            end_poses = {**start_poses, **seg.targets}
            end_trig = {**start_trig, **seg.triggers}
            for k in range(seg.ticks):
                a = (k + 1) / seg.ticks
                for chain_name in (LEFT, RIGHT, AV):
                    self._pose_track[chain_name].append(
                        _pose_between(start_poses[chain_name], end_poses[chain_name], a)
                    )
                for dev in (LEFT_HAND, RIGHT_HAND):
                    s = _smoothstep(a)
                    self._trig_track[dev].append(start_trig[dev] * (1 - s) + end_trig[dev] * s)
                self._precision_track.append(seg.precision)
            poses = end_poses
            trig = end_trig

    @property
    def total_ticks(self) -> int:
        return len(self._precision_track)

    def robot_targets(self, t: int) -> tuple[dict[str, Pose], dict[str, float]]:
        """Noiseless planned tool poses and triggers at tick t (for tests)."""
        poses = {c: self._pose_track[c][t] for c in (LEFT, RIGHT, AV)}
        trigs = {d: self._trig_track[d][t] for d in (LEFT_HAND, RIGHT_HAND)}
        return poses, trigs

    def device_poses(self, t: int) -> dict[str, DevicePose]:
        """Device-frame pose stream: the planned robot targets pushed back
        through the anchor algebra (device_init = identity), plus tremor."""
        adapter_inv = quat_conjugate(FRAME_ADAPTER_Q)
        out = {}
        sig_t, sig_r = self.noise_std
        prec = self._precision_track[min(t, self.total_ticks - 1)]
        for dev, chain_name in DEVICE_CHAIN.items():
            target = self._pose_track[chain_name][min(t, self.total_ticks - 1)]
            rel_robot = self._start_tools[chain_name].inverse() @ target
            device_pose = adapt_motion(rel_robot, adapter_inv, 1.0 / self.scale)
            if (sig_t > 0.0 or sig_r > 0.0) and t > 0:
                n = self._ou[dev]
                theta = 0.15
                gain = math.sqrt(2.0 * theta - theta * theta)
                drive = np.concatenate([
                    self._rng.normal(0.0, sig_t * prec, 3),
                    self._rng.normal(0.0, sig_r * prec, 3),
                ])
                n[:] = (1.0 - theta) * n + gain * drive
                device_pose = Pose(
                    device_pose.t + n[:3],
                    quat_mul(quat_from_rotvec(n[3:]), device_pose.q),
                )
            trigger = self._trig_track[dev][min(t, self.total_ticks - 1)] if dev != HEAD else 0.0
            out[dev] = DevicePose(device_pose, trigger, timestamp_us=(t + 1) * 20_000)
        return out


def _look_pose(position: np.ndarray, target: np.ndarray) -> Pose:
    from .rig import look_at

    return look_at(position, target)


# ---------------------------------------------------------------------------
# teleop episode driver


@dataclass
class TeleopResult:
    success: bool
    stage_flags: tuple[bool, ...]
    ticks: int
    episode: Episode | None
    final_state: SimState


def run_teleop_episode(
    rig: RigModel,
    task_name: str,
    seed: int,
    *,
    noise_std: tuple[float, float] = DEFAULT_NOISE_STD,
    record_cameras: tuple[str, ...] | None = None,
    task_params: dict | None = None,
    sim_config: SimConfig | None = None,
    ik_iters: int = 60,
) -> TeleopResult:
    """One scripted demonstration through the full teleoperation path:
    device stream -> session anchors -> per-chain IK -> simulator step."""
    sim = Simulator(rig, make_task(task_name, task_params), sim_config or SimConfig())
    state = sim.reset(seed)
    op = ScriptedOperator(rig, sim.task, state, seed, noise_std)
    d0 = op.device_poses(0)
    anchors = anchor_session(
        {dev: dp.pose for dev, dp in d0.items()},
        {dev: tool_pose(rig.chains[chain], rig.arm_q(state.qpos, chain))
         for dev, chain in DEVICE_CHAIN.items()},
    )
    recorder = None
    if record_cameras is not None:
        recorder = EpisodeRecorder(rig, sim, seed, record_cameras, noise_std=noise_std)
    gspec = rig.gripper
    for t in range(op.total_ticks):
        dps = op.device_poses(t)
        action = np.array(state.qpos)
        for dev, chain_name in DEVICE_CHAIN.items():
            target = anchors[dev].map_pose(dps[dev].pose)
            chain = rig.chains[chain_name]
            q_now = rig.arm_q(state.qpos, chain_name)
            if chain_name == AV:
                sol, _ = ik_dls(chain, q_now, target, max_iters=ik_iters)
            else:
                # light centering so tracking bias stays well under task tolerances
                sol, _ = ik_regularized(
                    chain, q_now, target, w_center=1e-6, w_disp=0.0025, max_iters=ik_iters,
                )
                action[GRIPPER_INDEX[chain_name]] = trigger_to_gripper(
                    dps[dev].trigger, gspec.open_value, gspec.closed_value,
                )
            action[SLICES[chain_name]] = sol
        if recorder is not None:
            recorder.add(state, action)
        state = sim.step(state, action)
    episode = recorder.finalize(state) if recorder is not None else None
    return TeleopResult(
        success=all(state.stage_flags),
        stage_flags=tuple(state.stage_flags),
        ticks=op.total_ticks,
        episode=episode,
        final_state=state,
    )


# ---------------------------------------------------------------------------
# nearest-neighbor baseline


@dataclass
class Observation:
    qpos: np.ndarray                 # (21,) float32
    frames: dict[str, np.ndarray]    # camera -> (h, w) uint8
    time_step: int = 0


def downsample_frame(pixels: np.ndarray) -> np.ndarray:
    """8x8 block-averaged view of a frame, scaled to [0, 1]."""
    h, w = pixels.shape
    return pixels.reshape(8, h // 8, 8, w // 8).mean(axis=(1, 3)) / 255.0


def observation_features(qpos, frames: dict[str, np.ndarray], camera_set) -> np.ndarray:
    parts = [np.asarray(qpos, dtype=np.float64)]
    for cam in camera_set:
        parts.append(downsample_frame(frames[cam]).ravel())
    return np.concatenate(parts)


class NNPolicy:
    """Nearest stored observation wins; returns that demonstration's next 50
    actions.  Episode ids are positions in the training list; distance ties
    resolve to the lowest (episode, step), which argmin's first-match rule
    gives for free since rows are laid out in that order."""

    def __init__(self, camera_set, chunk_size: int = CHUNK_SIZE):
        self.camera_set = tuple(c for c in CAMERA_IDS if c in camera_set)
        if len(self.camera_set) != len(camera_set):
            raise ValueError(f"unknown cameras in {camera_set!r}")
        self.chunk_size = int(chunk_size)
        self._mean: np.ndarray | None = None
        self._std: np.ndarray | None = None
        self._keys: np.ndarray | None = None      # (N, D) normalized
        self._index: np.ndarray | None = None     # (N, 2) episode, step
        self._actions: list[np.ndarray] = []      # per episode (T, 21) f32

    @classmethod
    def fit(cls, episodes, camera_set=None, chunk_size: int = CHUNK_SIZE) -> "NNPolicy":
        episodes = list(episodes)
        if not episodes:
            raise ValueError("need at least one episode")
        if camera_set is None:
            camera_set = episodes[0].manifest.camera_set
        policy = cls(camera_set, chunk_size)
        for k, ep in enumerate(episodes):
            missing = [c for c in policy.camera_set if c not in ep.manifest.camera_set]
            if missing:
                raise ValueError(f"episode {k} lacks cameras {missing}")
        rows, index = [], []
        for k, ep in enumerate(episodes):
            T = ep.n_steps
            feats = [ep.qpos.astype(np.float64)]
            for cam in policy.camera_set:
                fr = ep.frames[cam]
                h, w = fr.shape[1:]
                feats.append(
                    fr.reshape(T, 8, h // 8, 8, w // 8).mean(axis=(2, 4)).reshape(T, 64) / 255.0
                )
            rows.append(np.concatenate(feats, axis=1))
            index.append(np.stack([np.full(T, k), np.arange(T)], axis=1))
            policy._actions.append(ep.actions)
        X = np.concatenate(rows, axis=0)
        policy._mean = X.mean(axis=0)
        std = X.std(axis=0)
        std[std < 1e-8] = 1.0
        policy._std = std
        policy._keys = (X - policy._mean) / policy._std
        policy._index = np.concatenate(index, axis=0)
        return policy

    def _normalize(self, features: np.ndarray) -> np.ndarray:
        return (features - self._mean) / self._std

    def nearest(self, obs: Observation, exclude_episode: int | None = None) -> tuple[int, int]:
        f = self._normalize(observation_features(obs.qpos, obs.frames, self.camera_set))
        d2 = np.einsum("nd,nd->n", self._keys, self._keys) - 2.0 * (self._keys @ f) + f @ f
        if exclude_episode is not None:
            d2 = np.where(self._index[:, 0] == exclude_episode, np.inf, d2)
        k = int(np.argmin(d2))
        return int(self._index[k, 0]), int(self._index[k, 1])

    def predict(self, obs: Observation) -> np.ndarray:
        """Action chunk (chunk_size, 21) float32."""
        ep, step = self.nearest(obs)
        acts = self._actions[ep][step : step + self.chunk_size]
        if len(acts) < self.chunk_size:
            pad = np.repeat(acts[-1:], self.chunk_size - len(acts), axis=0)
            acts = np.concatenate([acts, pad], axis=0)
        return acts


def ensemble_weights(n_live: int, m: float = ENSEMBLE_M) -> np.ndarray:
    """Exponential decay over chunk age, oldest chunk first, normalized."""
    w = np.exp(-m * np.arange(n_live))
    return w / w.sum()


@dataclass
class RolloutResult:
    success: bool
    stage_flags: tuple[bool, ...]
    ticks: int
    final_state: SimState
    qpos_trace: np.ndarray | None = None  # (T, 21) f32, populated on request


def run_policy_episode(
    rig: RigModel,
    policy: NNPolicy,
    task_name: str,
    seed: int,
    *,
    ensemble: bool = True,
    m: float = ENSEMBLE_M,
    query_period: int = QUERY_PERIOD,
    max_ticks: int = 450,
    av_arm_present: bool = True,
    task_params: dict | None = None,
    early_stop: bool = True,
    keep_trace: bool = False,
) -> RolloutResult:
    """Chunked-policy rollout.  With ensembling, a fresh chunk is queried every
    query_period steps and the applied action is the weight-averaged prediction
    of all live chunks; without, chunks run back to back verbatim."""
    from .camera import render

    sim = Simulator(rig, make_task(task_name, task_params), SimConfig())
    state = sim.reset(seed)
    period = query_period if ensemble else policy.chunk_size
    live: list[tuple[int, np.ndarray]] = []
    trace = [] if keep_trace else None
    t = 0
    for t in range(max_ticks):
        if t % period == 0:
            qstate = quantize_state(state)
            frames = render(rig, qstate, policy.camera_set, av_arm_present)
            obs = Observation(
                qpos=np.asarray(qstate.qpos, dtype=np.float32),
                frames={c: frames[c].pixels for c in policy.camera_set},
                time_step=state.time_step,
            )
            live.append((t, policy.predict(obs)))
        live = [(s, c) for s, c in live if s + policy.chunk_size > t]
        preds = np.stack([chunk[t - s] for s, chunk in live])
        w = ensemble_weights(len(preds), m)
        action = (w[:, None] * preds.astype(np.float64)).sum(axis=0)
        if trace is not None:
            trace.append(np.asarray(state.qpos, dtype=np.float32))
        state = sim.step(state, action)
        if early_stop and all(state.stage_flags):
            break
    return RolloutResult(
        success=all(state.stage_flags),
        stage_flags=tuple(state.stage_flags),
        ticks=t + 1,
        final_state=state,
        qpos_trace=np.stack(trace) if trace else None,
    )


# ---------------------------------------------------------------------------
# evaluation harness


@dataclass
class EvalRow:
    config: str
    cameras: tuple[str, ...]
    av_arm_present: bool
    n_rollouts: int
    stage_names: tuple[str, ...]
    stage_counts: tuple[int, ...]
    variant: int = 0

    @property
    def stage_pct(self) -> tuple[float, ...]:
        return tuple(100.0 * c / self.n_rollouts for c in self.stage_counts)


@dataclass
class SuccessTable:
    task: str
    n_rollouts: int
    rows: list[EvalRow]

    def to_json_dict(self) -> dict:
        return {
            "task": self.task,
            "n_rollouts": self.n_rollouts,
            "rows": [
                {
                    "config": r.config,
                    "cameras": list(r.cameras),
                    "av_arm_present": r.av_arm_present,
                    "variant": r.variant,
                    "stages": {n: c for n, c in zip(r.stage_names, r.stage_counts)},
                    "stage_pct": {n: p for n, p in zip(r.stage_names, r.stage_pct)},
                }
                for r in self.rows
            ],
        }

    def format_text(self) -> str:
        width = max(len(r.config) for r in self.rows)
        lines = [f"task {self.task}, {self.n_rollouts} rollouts per configuration"]
        for r in self.rows:
            cells = " | ".join(
                f"{name} {pct:5.1f}" for name, pct in zip(r.stage_names, r.stage_pct)
            )
            lines.append(f"{r.config:<{width}} | {cells}")
        return "\n".join(lines)


def evaluate_policy(
    rig: RigModel,
    policy: NNPolicy,
    task_name: str,
    seeds,
    *,
    av_arm_present: bool = True,
    ensemble: bool = True,
    query_period: int = QUERY_PERIOD,
    max_ticks: int = 450,
    task_params: dict | None = None,
) -> tuple[int, ...]:
    """Latched-stage success counts over fresh-seeded rollouts."""
    counts = None
    for seed in seeds:
        res = run_policy_episode(
            rig, policy, task_name, int(seed),
            ensemble=ensemble, query_period=query_period, max_ticks=max_ticks,
            av_arm_present=av_arm_present, task_params=task_params,
        )
        if counts is None:
            counts = [0] * len(res.stage_flags)
        for i, f in enumerate(res.stage_flags):
            counts[i] += int(f)
    return tuple(counts)


def evaluate_configs(
    rig: RigModel,
    episodes: list[Episode],
    task_name: str,
    n_rollouts: int,
    *,
    base_seed: int = 10_000,
    configs=CAMERA_CONFIGS,
    chunk_size: int = CHUNK_SIZE,
    query_period: int = QUERY_PERIOD,
    max_ticks: int = 450,
    variants: int = 1,
) -> SuccessTable:
    """The camera-configuration ablation: train the baseline per configuration
    (camera-arm-absent rerenders for configurations without the stereo pair,
    matching how such data would be collected) and roll out n_rollouts fresh
    seeds each.  `variants` > 1 evaluates ensembled and unensembled execution
    and keeps the better row, preserving a best-of-K selection protocol."""
    non_av_cams = tuple(c for c in CAMERA_IDS if c not in AV_CAMERA_IDS)
    stripped: list[Episode] | None = None
    seeds = [base_seed + i for i in range(n_rollouts)]
    rows = []
    for config in configs:
        cams = config_cameras(config)
        has_av = config_has_av(config)
        if has_av:
            train = [slice_cameras(ep, cams) for ep in episodes]
        else:
            if stripped is None:
                stripped = [
                    rerender_episode(ep, rig, non_av_cams, av_arm_present=False)
                    for ep in episodes
                ]
            train = [slice_cameras(ep, cams) for ep in stripped]
        policy = NNPolicy.fit(train, cams, chunk_size)
        best = None
        for v in range(max(1, variants)):
            stage_names = episodes[0].manifest.stage_names
            counts = evaluate_policy(
                rig, policy, task_name, seeds,
                av_arm_present=has_av, ensemble=(v == 0),
                query_period=query_period, max_ticks=max_ticks,
            )
            row = EvalRow(
                config=config,
                cameras=cams,
                av_arm_present=has_av,
                n_rollouts=n_rollouts,
                stage_names=tuple(stage_names),
                stage_counts=counts,
                variant=v,
            )
            if best is None or row.stage_counts[-1] > best.stage_counts[-1]:
                best = row
        rows.append(best)
    return SuccessTable(task=task_name, n_rollouts=n_rollouts, rows=rows)


def neighbor_ablation_probe(episodes, n_queries: int = 100, seed: int = 0) -> int:
    """How many of n_queries stored observations pick a different neighbor
    when the stereo-pair frames are removed from the key (own episode always
    excluded).  A nonzero count means the keys carry viewpoint information."""
    full = NNPolicy.fit(episodes, CAMERA_IDS)
    no_av = NNPolicy.fit(episodes, tuple(c for c in CAMERA_IDS if c not in AV_CAMERA_IDS))
    rng = np.random.default_rng(seed)
    differing = 0
    for _ in range(n_queries):
        k = int(rng.integers(len(episodes)))
        ep = episodes[k]
        step = int(rng.integers(ep.n_steps))
        obs = Observation(
            qpos=ep.qpos[step],
            frames={c: ep.frames[c][step] for c in ep.manifest.camera_set},
            time_step=step,
        )
        if full.nearest(obs, exclude_episode=k) != no_av.nearest(obs, exclude_episode=k):
            differing += 1
    return differing
