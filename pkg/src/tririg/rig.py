"""The trimanual rig: two 6-DoF manipulator arms plus a 7-DoF camera arm.

Chain geometry ships as JSON under tririg/data/ and is loaded here.  This
module also fixes the flat 21-value joint vector layout used everywhere:

    [0:6]   left arm        [6]  left gripper
    [7:13]  right arm       [13] right gripper
    [14:21] camera arm

Grippers are scalar actuators, not chain joints: 0.0 open, 0.8 closed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .kinematics import KinematicChain, chain_checksum, chain_from_dict, load_chain
from .transforms import Pose, quat_from_matrix

import json

LEFT = "left_arm"
RIGHT = "right_arm"
AV = "av_arm"

QPOS_DIM = 21
SLICES = {LEFT: slice(0, 6), RIGHT: slice(7, 13), AV: slice(14, 21)}
GRIPPER_INDEX = {LEFT: 6, RIGHT: 13}

# canonical camera order; wire protocol and episode files index into this
CAMERA_IDS = ("static_top", "static_low", "wrist_left", "wrist_right", "av_left", "av_right")
AV_CAMERA_IDS = ("av_left", "av_right")
STEREO_BASELINE = 0.063


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int = 96
    height: int = 96
    fx: float = 96.0
    fy: float = 96.0
    cx: float = 48.0
    cy: float = 48.0


@dataclass(frozen=True)
class CameraDef:
    """mount == "world": offset is the world pose.  Otherwise offset is
    relative to the named chain's tool frame.  Camera frame: +z optical axis,
    +x image right, +y image down."""

    camera_id: str
    mount: str
    offset: Pose
    intrinsics: CameraIntrinsics = CameraIntrinsics()


@dataclass(frozen=True)
class GripperSpec:
    open_value: float = 0.0
    closed_value: float = 0.8
    attach_threshold: float = 0.5   # attach when at or above, object in range
    release_threshold: float = 0.3  # detach when at or below
    grasp_radius: float = 0.02      # tool point to object grasp point, meters


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera pose at `position` with optical axis through `target`."""
    position = np.asarray(position, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - position
    z = z / np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    n = np.linalg.norm(x)
    if n < 1e-9:  # looking straight along up: pick any horizontal right
        x = np.array([0.0, -1.0, 0.0] if z[2] > 0 else [0.0, 1.0, 0.0])
        n = 1.0
    x = x / n
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=1)
    return Pose(position, quat_from_matrix(R))


@dataclass(frozen=True)
class RigModel:
    chains: dict[str, KinematicChain]
    cameras: dict[str, CameraDef]
    gripper: GripperSpec
    start_qpos: np.ndarray
    link_radius: float = 0.028  # render radius of arm segments

    def __post_init__(self) -> None:
        q = np.array(self.start_qpos, dtype=np.float64).reshape(QPOS_DIM)
        q.setflags(write=False)
        object.__setattr__(self, "start_qpos", q)

    def arm_q(self, qpos: np.ndarray, chain_name: str) -> np.ndarray:
        return np.asarray(qpos)[SLICES[chain_name]]

    def gripper_value(self, qpos: np.ndarray, chain_name: str) -> float:
        return float(np.asarray(qpos)[GRIPPER_INDEX[chain_name]])

    def checksums(self) -> dict[str, str]:
        return {name: chain_checksum(c) for name, c in sorted(self.chains.items())}

    @property
    def manipulators(self) -> tuple[str, ...]:
        return (LEFT, RIGHT)


# Start joints were solved offline (scripts/make_chains.py) for a ready pose:
# tools above the table pointing down, camera arm looking at the work area.
START_QPOS = np.array([
    0.6430559284, -0.1964616396, 1.6680031595, 0.0000103753, 1.6700441661, 2.2138445479, 0.0000000000,
    -0.6430365282, -0.1963425436, 1.6677668641, -0.0000115803, 1.6701682105, -2.2138247125, 0.0000000000,
    0.0290518950, 0.2440493375, 0.5555645077, -0.0877050530, 1.7105254431, -1.5595277207, -0.0696884236,
])

_CAMERA_DEFS = (
    CameraDef("static_top", "world", look_at((0.42, 0.0, 0.62), (0.13, 0.0, 0.08))),
    CameraDef("static_low", "world", look_at((0.55, 0.0, 0.14), (0.10, 0.0, 0.10))),
    CameraDef("wrist_left", LEFT, Pose(np.array([0.0, -0.045, -0.03]), np.array([1.0, 0.0, 0.0, 0.0]))),
    CameraDef("wrist_right", RIGHT, Pose(np.array([0.0, -0.045, -0.03]), np.array([1.0, 0.0, 0.0, 0.0]))),
    CameraDef("av_left", AV, Pose(np.array([-STEREO_BASELINE / 2, 0.0, 0.0]), np.array([1.0, 0.0, 0.0, 0.0]))),
    CameraDef("av_right", AV, Pose(np.array([STEREO_BASELINE / 2, 0.0, 0.0]), np.array([1.0, 0.0, 0.0, 0.0]))),
)


def _load_shipped_chain(name: str) -> KinematicChain:
    blob = resources.files("tririg.data").joinpath(f"{name}.json").read_text()
    return chain_from_dict(json.loads(blob))


def default_rig(start_qpos: np.ndarray | None = None) -> RigModel:
    chains = {name: _load_shipped_chain(name) for name in (LEFT, RIGHT, AV)}
    return RigModel(
        chains=chains,
        cameras={c.camera_id: c for c in _CAMERA_DEFS},
        gripper=GripperSpec(),
        start_qpos=START_QPOS if start_qpos is None else start_qpos,
    )


def camera_world_pose(rig: RigModel, cam: CameraDef, qpos: np.ndarray) -> Pose:
    if cam.mount == "world":
        return cam.offset
    from .kinematics import tool_pose  # local import to avoid cycle at module load

    chain = rig.chains[cam.mount]
    return tool_pose(chain, rig.arm_q(qpos, cam.mount)).compose(cam.offset)
