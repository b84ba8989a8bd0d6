"""Regenerate the shipped chain JSON files and solve the ready pose.

Writes src/tririg/data/{left_arm,right_arm,av_arm}.json and prints the start
joint vector to paste into tririg.rig.START_QPOS.
"""

import math
from pathlib import Path

import numpy as np

from tririg.kinematics import Joint, KinematicChain, ik_dls, save_chain, tool_pose
from tririg.rig import look_at
from tririg.transforms import Pose

DATA = Path(__file__).resolve().parent.parent / "src" / "tririg" / "data"

Z = (0.0, 0.0, 1.0)
Y = (0.0, 1.0, 0.0)


def _j(name, dz, axis, lo, hi, center=None):
    return Joint(name, Pose(np.array([0.0, 0.0, dz]), np.array([1.0, 0.0, 0.0, 0.0])),
                 np.asarray(axis, dtype=float), lo, hi, center)


def manipulator(name: str, base_t, base_yaw: float) -> KinematicChain:
    joints = (
        _j("waist", 0.08, Z, -3.1, 3.1),
        _j("shoulder", 0.04, Y, -1.9, 1.9),
        _j("elbow", 0.25, Y, -2.5, 2.5, center=0.0),
        _j("forearm_roll", 0.08, Z, -3.1, 3.1),
        _j("wrist_pitch", 0.17, Y, -1.8, 2.1, center=0.0),
        _j("wrist_roll", 0.05, Z, -3.1, 3.1),
    )
    return KinematicChain(
        name=name,
        base_pose=Pose.from_axis_angle(Z, base_yaw, base_t),
        joints=joints,
        tool_offset=Pose(np.array([0.0, 0.0, 0.08]), np.array([1.0, 0.0, 0.0, 0.0])),
    )


def camera_arm() -> KinematicChain:
    joints = (
        _j("waist", 0.08, Z, -3.1, 3.1),
        _j("shoulder", 0.04, Y, -1.9, 1.9),
        _j("elbow", 0.25, Y, -2.5, 2.5, center=0.0),
        _j("forearm_roll", 0.08, Z, -3.1, 3.1),
        _j("wrist_pitch", 0.17, Y, -1.8, 2.1, center=0.0),
        _j("wrist_roll", 0.05, Z, -3.1, 3.1),
        _j("head_nod", 0.05, Y, -1.6, 1.6),
    )
    return KinematicChain(
        name="av_arm",
        base_pose=Pose(np.array([-0.42, 0.0, 0.0]), np.array([1.0, 0.0, 0.0, 0.0])),
        joints=joints,
        tool_offset=Pose(np.array([0.0, 0.0, 0.07]), np.array([1.0, 0.0, 0.0, 0.0])),
    )


def solve(chain, target, q0, tries=40):
    """Converged solution closest to joint centers among seeds near q0."""
    rng = np.random.default_rng(0)
    q0 = np.asarray(q0, dtype=float)
    best = None
    for k in range(tries):
        start = q0 if k == 0 else chain.clamp(q0 + rng.uniform(-0.4, 0.4, chain.dof))
        q, rep = ik_dls(chain, start, target, max_iters=400)
        if rep.converged:
            cost = float(np.sum((q - chain.joint_centers) ** 2))
            if best is None or cost < best[1]:
                best = (q, cost)
    if best is None:
        raise SystemExit(f"no IK solution for {chain.name}")
    return best[0]


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    left = manipulator("left_arm", (0.0, 0.30, 0.0), -math.pi / 2)
    right = manipulator("right_arm", (0.0, -0.30, 0.0), math.pi / 2)
    av = camera_arm()
    for c in (left, right, av):
        save_chain(c, DATA / f"{c.name}.json")
        print("wrote", DATA / f"{c.name}.json")

    down = np.array([0.0, 1.0, 0.0, 0.0])  # tool z points down
    ready = np.array([0.0, 0.8, 1.2, 0.0, 1.14, 0.0])  # elbow-forward seed
    ql = solve(left, Pose(np.array([0.12, 0.14, 0.26]), down), ready)
    qr = solve(right, Pose(np.array([0.12, -0.14, 0.26]), down), ready)
    qa = solve(av, look_at((-0.08, 0.0, 0.40), (0.14, 0.0, 0.10)), np.array([0.0, 0.3, 0.9, 0.0, 0.6, 0.0, 0.0]))

    for name, chain, q in (("left", left, ql), ("right", right, qr), ("av", av, qa)):
        tp = tool_pose(chain, q)
        print(f"{name}: q={np.array2string(q, precision=6)}")
        print(f"   tool t={tp.t} q={tp.q}")

    qpos = np.zeros(21)
    qpos[0:6] = ql
    qpos[7:13] = qr
    qpos[14:21] = qa
    print("START_QPOS = np.array([")
    for i in range(0, 21, 7):
        print("    " + ", ".join(f"{v:.10f}" for v in qpos[i:i + 7]) + ",")
    print("])")


if __name__ == "__main__":
    main()
