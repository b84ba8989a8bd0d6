"""Fixed-timestep kinematic world: joints track targets under a rate limit,
grasping is a proximity rule, success stages latch monotonically.

No dynamics: objects move only while rigidly attached to a gripper.  States
are immutable; step() maps state to state, so independent rollouts can share
one Simulator.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .kinematics import tool_pose
from .rig import GRIPPER_INDEX, QPOS_DIM, SLICES, RigModel
from .tasks import SceneObject, TaskDef


class SimError(ValueError):
    """Bad action vector or inconsistent state."""


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.02      # 50 Hz
    vmax: float = 2.0     # rad/s per joint, also limits gripper travel


@dataclass(frozen=True)
class SimState:
    time_step: int
    qpos: np.ndarray  # (21,) read-only
    objects: tuple[SceneObject, ...]
    stage_flags: tuple[bool, ...]

    def __post_init__(self):
        q = np.array(self.qpos, dtype=np.float64).reshape(QPOS_DIM)
        q.setflags(write=False)
        object.__setattr__(self, "qpos", q)

    def object_map(self) -> dict[str, SceneObject]:
        return {o.object_id: o for o in self.objects}


class Simulator:
    def __init__(self, rig: RigModel, task: TaskDef, config: SimConfig = SimConfig()):
        self.rig = rig
        self.task = task
        self.config = config
        lo = np.full(QPOS_DIM, -np.inf)
        hi = np.full(QPOS_DIM, np.inf)
        for name, sl in SLICES.items():
            lo[sl] = rig.chains[name].limits_lo
            hi[sl] = rig.chains[name].limits_hi
        g = rig.gripper
        for idx in GRIPPER_INDEX.values():
            lo[idx] = min(g.open_value, g.closed_value)
            hi[idx] = max(g.open_value, g.closed_value)
        self._lo, self._hi = lo, hi

    def reset(self, seed: int) -> SimState:
        rng = np.random.default_rng(seed)
        objects = self.task.sample_scene(rng)
        if tuple(o.object_id for o in objects) != self.task.object_order:
            raise SimError("scene sampler does not match task object order")
        return SimState(
            time_step=0,
            qpos=self.rig.start_qpos.copy(),
            objects=objects,
            stage_flags=tuple(False for _ in self.task.stage_names),
        )

    def step(self, state: SimState, targets) -> SimState:
        targets = np.asarray(targets, dtype=np.float64)
        if targets.shape != (QPOS_DIM,):
            raise SimError(f"action must have shape ({QPOS_DIM},), got {targets.shape}")
        if not np.all(np.isfinite(targets)):
            raise SimError("action contains non-finite values")
        # actions are carried as float32 everywhere they persist; quantizing
        # here makes a replay from recorded actions bit-identical
        targets = targets.astype(np.float32).astype(np.float64)
        targets = np.clip(targets, self._lo, self._hi)

        limit = self.config.vmax * self.config.dt
        qnew = state.qpos + np.clip(targets - state.qpos, -limit, limit)

        objects = {o.object_id: o for o in state.objects}
        tools = {c: tool_pose(self.rig.chains[c], qnew[SLICES[c]]) for c in self.rig.manipulators}

        # attached objects ride the gripper rigidly
        for oid, obj in objects.items():
            if obj.attached_to is not None:
                objects[oid] = replace(obj, pose=tools[obj.attached_to] @ obj.grasp_offset)

        g = self.rig.gripper
        direction = 1.0 if g.closed_value >= g.open_value else -1.0
        held = {o.attached_to for o in objects.values() if o.attached_to}
        for chain in self.rig.manipulators:
            grip = qnew[GRIPPER_INDEX[chain]] * direction
            mine = [o for o in objects.values() if o.attached_to == chain]
            if mine and grip <= g.release_threshold * direction:
                for o in mine:
                    objects[o.object_id] = replace(o, attached_to=None, grasp_offset=None)
                held.discard(chain)
            elif not mine and chain not in held and grip >= g.attach_threshold * direction:
                tool = tools[chain]
                best = None
                for o in objects.values():
                    if not o.graspable or o.attached_to is not None:
                        continue
                    d = float(np.linalg.norm(o.grasp_point_world() - tool.t))
                    if d <= g.grasp_radius and (best is None or d < best[1]):
                        best = (o.object_id, d)
                if best is not None:
                    o = objects[best[0]]
                    objects[best[0]] = replace(
                        o, attached_to=chain, grasp_offset=tool.inverse() @ o.pose
                    )
                    held.add(chain)

        preds = self.task.stage_predicates(objects)
        flags: list[bool] = []
        for old, p in zip(state.stage_flags, preds):
            # latched, or true now with every earlier stage already reached
            # (possibly reached this same step: the cascade)
            flags.append(bool(old or (p and all(flags))))
        flags = tuple(flags)

        return SimState(
            time_step=state.time_step + 1,
            qpos=qnew,
            objects=tuple(objects[oid] for oid in self.task.object_order),
            stage_flags=flags,
        )

    def stage_status(self, state: SimState) -> tuple[bool, ...]:
        return state.stage_flags

    def tool_poses(self, state: SimState) -> dict[str, "Pose"]:
        from .rig import AV

        out = {}
        for name in (*self.rig.manipulators, AV):
            out[name] = tool_pose(self.rig.chains[name], state.qpos[SLICES[name]])
        return out
