"""Task library: scene sampling and staged success predicates.

Three tabletop tasks, each a list of objects plus ordered stages.  Insertion
is judged purely geometrically: the insertable's tip must sit deeper than the
socket depth along the socket axis, within the socket radius of the
centerline, with the two axes aligned within tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .transforms import Pose

SPHERE = "sphere"
BOX = "box"
CYLINDER = "cylinder"
CAPSULE = "capsule"

IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class SceneObject:
    """size meaning: sphere (r,-,-), box (hx,hy,hz), cylinder/capsule (r,hl,-),
    where hl is the half-length along local z."""

    object_id: str
    shape: str
    size: tuple[float, float, float]
    pose: Pose
    graspable: bool = True
    grasp_point: tuple[float, float, float] = (0.0, 0.0, 0.0)  # local
    attached_to: str | None = None
    grasp_offset: Pose | None = None  # tool^-1 @ object, frozen at attach

    def grasp_point_world(self) -> np.ndarray:
        return self.pose.apply(np.asarray(self.grasp_point))


@dataclass(frozen=True)
class SocketSpec:
    """A receptacle carved into a host object.  axis_local points outward."""

    object_id: str
    entry_local: tuple[float, float, float]
    axis_local: tuple[float, float, float]
    depth: float
    radius: float
    align_tol: float = math.radians(15.0)


@dataclass(frozen=True)
class InsertableSpec:
    """tip_local is the end that enters first; axis_local points base-to-tip."""

    object_id: str
    tip_local: tuple[float, float, float]
    axis_local: tuple[float, float, float]


def insertion_met(objects: dict[str, SceneObject], ins: InsertableSpec, sock: SocketSpec) -> bool:
    obj = objects[ins.object_id]
    host = objects[sock.object_id]
    entry = host.pose.apply(np.asarray(sock.entry_local))
    outward = host.pose.rotate(np.asarray(sock.axis_local))
    tip = obj.pose.apply(np.asarray(ins.tip_local))
    rel = tip - entry
    depth_in = float(-outward @ rel)
    if depth_in < sock.depth:
        return False
    radial = rel + depth_in * outward  # component orthogonal to the axis
    if float(np.linalg.norm(radial)) > sock.radius:
        return False
    tip_axis = obj.pose.rotate(np.asarray(ins.axis_local))
    cosang = float(np.clip(tip_axis @ -outward, -1.0, 1.0))
    return math.acos(cosang) <= sock.align_tol


def grasp_met(objects: dict[str, SceneObject], object_id: str, chain: str | None = None) -> bool:
    att = objects[object_id].attached_to
    return att is not None and (chain is None or att == chain)


@dataclass(frozen=True)
class TaskDef:
    name: str
    stage_names: tuple[str, ...]
    params: dict
    object_order: tuple[str, ...]

    def sample_scene(self, rng: np.random.Generator) -> tuple[SceneObject, ...]:
        raise NotImplementedError

    def stage_predicates(self, objects: dict[str, SceneObject]) -> tuple[bool, ...]:
        raise NotImplementedError


def _uniform_xy(rng: np.random.Generator, rect) -> tuple[float, float]:
    x = float(rng.uniform(rect[0][0], rect[0][1]))
    y = float(rng.uniform(rect[1][0], rect[1][1]))
    return x, y


@dataclass(frozen=True)
class PegInsertion(TaskDef):
    """Right arm inserts a peg into a socket block steadied by the left arm."""

    socket: SocketSpec = field(default=None)
    insertable: InsertableSpec = field(default=None)

    def __post_init__(self):
        p = self.params
        object.__setattr__(self, "socket", SocketSpec(
            "socket_block", (0.0, 0.0, p["block_hz"]), (0.0, 0.0, 1.0),
            p["socket_depth"], p["socket_radius"], math.radians(p["align_tol_deg"])))
        object.__setattr__(self, "insertable", InsertableSpec(
            "peg", (0.0, 0.0, -p["peg_hl"]), (0.0, 0.0, -1.0)))

    def sample_scene(self, rng):
        p = self.params
        px, py = _uniform_xy(rng, p["peg_rect"])
        sx, sy = _uniform_xy(rng, p["block_rect"])
        peg = SceneObject(
            "peg", CYLINDER, (p["peg_radius"], p["peg_hl"], 0.0),
            Pose(np.array([px, py, p["peg_hl"]]), IDENTITY_Q),
            grasp_point=(0.0, 0.0, p["peg_hl"] - 0.02),
        )
        # rim grasp on the near top edge keeps the socket entry clear for the peg
        block = SceneObject(
            "socket_block", BOX, (p["block_hx"], p["block_hx"], p["block_hz"]),
            Pose(np.array([sx, sy, p["block_hz"]]), IDENTITY_Q),
            grasp_point=(0.0, p["block_hx"], p["block_hz"]),
        )
        return (peg, block)

    def stage_predicates(self, objects):
        grasp = grasp_met(objects, "peg") and grasp_met(objects, "socket_block")
        insert = insertion_met(objects, self.insertable, self.socket)
        return (grasp, insert)


@dataclass(frozen=True)
class SlotInsertion(TaskDef):
    """Right arm drops a stick into a deep slot block."""

    socket: SocketSpec = field(default=None)
    insertable: InsertableSpec = field(default=None)

    def __post_init__(self):
        p = self.params
        object.__setattr__(self, "socket", SocketSpec(
            "slot_block", (0.0, 0.0, p["block_hz"]), (0.0, 0.0, 1.0),
            p["socket_depth"], p["socket_radius"], math.radians(p["align_tol_deg"])))
        object.__setattr__(self, "insertable", InsertableSpec(
            "stick", (0.0, 0.0, -p["stick_hl"]), (0.0, 0.0, -1.0)))

    def sample_scene(self, rng):
        p = self.params
        px, py = _uniform_xy(rng, p["stick_rect"])
        sx, sy = _uniform_xy(rng, p["block_rect"])
        stick = SceneObject(
            "stick", CYLINDER, (p["stick_radius"], p["stick_hl"], 0.0),
            Pose(np.array([px, py, p["stick_hl"]]), IDENTITY_Q),
            grasp_point=(0.0, 0.0, p["stick_hl"] - 0.02),
        )
        block = SceneObject(
            "slot_block", BOX, (p["block_hx"], p["block_hx"], p["block_hz"]),
            Pose(np.array([sx, sy, p["block_hz"]]), IDENTITY_Q),
            grasp_point=(0.0, p["block_hx"], p["block_hz"]),
        )
        return (stick, block)

    def stage_predicates(self, objects):
        grasp = grasp_met(objects, "stick")
        insert = insertion_met(objects, self.insertable, self.socket)
        return (grasp, insert)


@dataclass(frozen=True)
class ThreadNeedle(TaskDef):
    """Thread a needle through a plate hole that faces away from the static
    cameras; only the camera arm can look straight down the hole axis."""

    socket: SocketSpec = field(default=None)
    insertable: InsertableSpec = field(default=None)

    def __post_init__(self):
        p = self.params
        object.__setattr__(self, "socket", SocketSpec(
            "plate", (-p["plate_hx"], 0.0, 0.0), (-1.0, 0.0, 0.0),
            p["hole_depth"], p["hole_radius"], math.radians(p["align_tol_deg"])))
        object.__setattr__(self, "insertable", InsertableSpec(
            "needle", (0.0, 0.0, -p["needle_hl"]), (0.0, 0.0, -1.0)))

    def sample_scene(self, rng):
        p = self.params
        nx, ny = _uniform_xy(rng, p["needle_rect"])
        plx, ply = _uniform_xy(rng, p["plate_rect"])
        needle = SceneObject(
            "needle", CAPSULE, (p["needle_radius"], p["needle_hl"], 0.0),
            Pose(np.array([nx, ny, p["needle_hl"] + p["needle_radius"]]), IDENTITY_Q),
            grasp_point=(0.0, 0.0, p["needle_hl"] - 0.02),
        )
        plate = SceneObject(
            "plate", BOX, (p["plate_hx"], p["plate_hy"], p["plate_hz"]),
            Pose(np.array([plx, ply, p["plate_z"]]), IDENTITY_Q),
            graspable=False,
        )
        return (needle, plate)

    def stage_predicates(self, objects):
        grasp = grasp_met(objects, "needle")
        thread = insertion_met(objects, self.insertable, self.socket)
        return (grasp, thread)


# Sampling rectangles sit inside the band both arms can cover with the tool
# pointing straight down: near edges bounded by elbow fold, far edges by the
# two-link reach during cross-table transport.
DEFAULT_PARAMS: dict[str, dict] = {
    "peg_insertion": {
        "peg_radius": 0.012, "peg_hl": 0.06,
        "block_hx": 0.045, "block_hz": 0.05,
        "socket_depth": 0.04, "socket_radius": 0.018, "align_tol_deg": 15.0,
        "peg_rect": [[0.10, 0.18], [-0.15, -0.08]],
        "block_rect": [[0.08, 0.14], [0.05, 0.09]],
    },
    "slot_insertion": {
        "stick_radius": 0.012, "stick_hl": 0.06,
        "block_hx": 0.05, "block_hz": 0.05,
        "socket_depth": 0.05, "socket_radius": 0.018, "align_tol_deg": 15.0,
        "stick_rect": [[0.10, 0.18], [-0.15, -0.08]],
        "block_rect": [[0.08, 0.14], [0.05, 0.09]],
    },
    "thread_needle": {
        "needle_radius": 0.004, "needle_hl": 0.06,
        "plate_hx": 0.015, "plate_hy": 0.06, "plate_hz": 0.06, "plate_z": 0.14,
        "hole_depth": 0.03, "hole_radius": 0.006, "align_tol_deg": 15.0,
        "needle_rect": [[0.10, 0.18], [-0.15, -0.08]],
        "plate_rect": [[0.10, 0.16], [0.06, 0.11]],
    },
}

_TASK_CLASSES = {
    "peg_insertion": (PegInsertion, ("Grasp", "Insert"), ("peg", "socket_block")),
    "slot_insertion": (SlotInsertion, ("Grasp", "Insert"), ("stick", "slot_block")),
    "thread_needle": (ThreadNeedle, ("Grasp", "Thread"), ("needle", "plate")),
}

TASK_NAMES = tuple(_TASK_CLASSES)


def make_task(name: str, param_overrides: dict | None = None) -> TaskDef:
    if name not in _TASK_CLASSES:
        raise KeyError(f"unknown task {name!r}; choose from {TASK_NAMES}")
    cls, stages, order = _TASK_CLASSES[name]
    params = dict(DEFAULT_PARAMS[name])
    if param_overrides:
        params.update(param_overrides)
    return cls(name=name, stage_names=stages, params=params, object_order=order)
