"""Test fixture: keyboard plan for grasping a task's objects.

Key presses move a tracked device in 0.005 m steps along its own axes, and the
server maps device motion into the robot frame through the session anchor.
This inverts that mapping for a fresh scene: for each hand, the number of key
steps per device axis that brings its tool onto the nearest object's grasp
point, plus a lift for the hand holding the task's insertable object.  Step
counts quantize the reach to under 5 mm of error, well inside the 20 mm
grasp radius.

Prints one JSON line; consumed by the web console integration test.
"""

import argparse
import json

import numpy as np

from tririg.kinematics import tool_pose
from tririg.policy import DEVICE_CHAIN
from tririg.rig import SLICES, default_rig
from tririg.simulator import SimConfig, Simulator
from tririg.tasks import make_task
from tririg.teleop import anchor_session
from tririg.transforms import Pose, quat_conjugate, quat_rotate

KEY_STEP_M = 0.005
LIFT_M = 0.08


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--task", default="peg_insertion")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rig = default_rig()
    task = make_task(args.task)
    sim = Simulator(rig, task, SimConfig())
    state = sim.reset(args.seed)

    hands = [d for d, c in DEVICE_CHAIN.items() if c in rig.manipulators]
    identity = Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))
    robot = {d: tool_pose(rig.chains[DEVICE_CHAIN[d]],
                          state.qpos[SLICES[DEVICE_CHAIN[d]]]) for d in hands}
    anchors = anchor_session({d: identity for d in hands}, robot)

    def to_device(dev: str, d_world: np.ndarray) -> np.ndarray:
        # target = robot_init * adapt(device_delta): invert rotations only
        a = anchors[dev]
        return quat_rotate(quat_conjugate(a.adapter_q),
                           quat_rotate(quat_conjugate(a.robot_init.q), d_world))

    graspable = [o for o in state.objects if o.graspable]
    # greedy nearest assignment, hands and objects each used once
    pairs = sorted(
        ((float(np.linalg.norm(o.grasp_point_world() - robot[d].t)), d, o)
         for d in hands for o in graspable),
        key=lambda x: x[0],
    )
    assigned: dict[str, object] = {}
    used: set[str] = set()
    for _, d, o in pairs:
        if d in assigned or o.object_id in used:
            continue
        assigned[d] = o
        used.add(o.object_id)

    plan: dict = {"task": args.task, "seed": args.seed,
                  "key_step_m": KEY_STEP_M, "hands": {}}
    for d, o in assigned.items():
        reach = to_device(d, o.grasp_point_world() - robot[d].t)
        plan["hands"][d] = {
            "object": o.object_id,
            "reach_steps": [int(v) for v in np.round(reach / KEY_STEP_M)],
        }

    insertable = getattr(task, "insertable", None)
    lift_hand = None
    if insertable is not None:
        for d, o in assigned.items():
            if o.object_id == insertable.object_id:
                lift_hand = d
    if lift_hand is None:
        lift_hand = sorted(assigned)[0]
    lift = to_device(lift_hand, np.array([0.0, 0.0, LIFT_M]))
    plan["lift_hand"] = lift_hand
    plan["lift_steps"] = [int(v) for v in np.round(lift / KEY_STEP_M)]

    print(json.dumps(plan, sort_keys=True), flush=True)


if __name__ == "__main__":
    main()
