"""Mapping tracked operator devices onto robot tool targets.

All control is relative to a session anchor: the robot tool moves by the
device's motion since anchoring, re-expressed in the robot frame.  Devices
report poses in a y-up tracking frame; the frame adapter is the fixed rotation
into the z-up robot frame and enters as a conjugation, so device motions and
robot motions correspond one to one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .transforms import Pose, quat_conjugate, quat_mul, quat_normalize, quat_rotate, quat_slerp

HEAD = "head"
LEFT_HAND = "left_hand"
RIGHT_HAND = "right_hand"
DEVICE_IDS = (HEAD, LEFT_HAND, RIGHT_HAND)

# device frame: x right, y up, z toward the operator.  robot frame: z up.
# maps x -> x, y -> z, z -> -y (rotation of +90 degrees about x).
FRAME_ADAPTER_Q = quat_normalize(np.array([np.cos(np.pi / 4), np.sin(np.pi / 4), 0.0, 0.0]))


@dataclass(frozen=True)
class DevicePose:
    pose: Pose
    trigger: float = 0.0  # 0 open .. 1 fully squeezed
    timestamp_us: int = 0


def adapt_motion(rel: Pose, adapter_q: np.ndarray = FRAME_ADAPTER_Q, scale: float = 1.0) -> Pose:
    """Re-express a relative device motion in the robot frame (conjugation),
    scaling only the translational part."""
    q = quat_mul(quat_mul(adapter_q, rel.q), quat_conjugate(adapter_q))
    return Pose(scale * quat_rotate(adapter_q, rel.t), q)


@dataclass(frozen=True)
class Anchor:
    """Frozen correspondence between one device and one robot tool."""

    device_init: Pose
    robot_init: Pose
    adapter_q: np.ndarray = field(default_factory=lambda: FRAME_ADAPTER_Q.copy())
    scale: float = 1.0

    def map_pose(self, device_pose: Pose) -> Pose:
        rel = self.device_init.inverse() @ device_pose
        return self.robot_init @ adapt_motion(rel, self.adapter_q, self.scale)


def anchor_session(
    device_poses: dict[str, Pose],
    robot_poses: dict[str, Pose],
    scale: float = 1.0,
    adapter_q: np.ndarray = FRAME_ADAPTER_Q,
) -> dict[str, Anchor]:
    """One anchor per device present in both mappings; anchoring is the only
    absolute handshake, everything afterwards is relative."""
    common = set(device_poses) & set(robot_poses)
    if not common:
        raise ValueError("no devices to anchor")
    return {
        d: Anchor(device_poses[d], robot_poses[d], adapter_q, scale)
        for d in sorted(common)
    }


def trigger_to_gripper(trigger: float, open_value: float, closed_value: float) -> float:
    trigger = min(1.0, max(0.0, float(trigger)))
    return open_value + trigger * (closed_value - open_value)


class TrackingFilter:
    """Optional exponential smoothing of mapped targets.  alpha = 1 passes
    targets through unchanged; smaller alpha trails the raw target."""

    def __init__(self, alpha: float = 1.0):
        if not 0.0 < alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        self.alpha = alpha
        self._last: Pose | None = None

    def reset(self) -> None:
        self._last = None

    def __call__(self, target: Pose) -> Pose:
        if self.alpha >= 1.0 or self._last is None:
            self._last = target
            return target
        a = self.alpha
        out = Pose(
            self._last.t + a * (target.t - self._last.t),
            quat_slerp(self._last.q, target.q, a),
        )
        self._last = out
        return out
