/**
 * Keyboard and mouse input integrated into per-device poses.
 *
 * Devices live in the tracking frame (x right, y up, z toward the operator),
 * same as a handheld controller would report.  Keys nudge the selected
 * device's position, mouse drags rotate it, trigger keys squeeze the selected
 * hand's gripper.  Every event applies a bounded delta, and integration is a
 * pure fold over the event sequence: replaying the same events from the same
 * start yields bit-identical poses, which is what makes captured sessions
 * reproducible.
 */

import type { DeviceId, DeviceSample } from "./protocol.js";
import { WIRE_DEVICE_ORDER } from "./protocol.js";

/** Per-event bounds; no single gesture may exceed these. */
export const TRANSLATION_CLAMP_M = 0.02;
export const ROTATION_CLAMP_RAD = 0.05;

/** Default step sizes, well inside the clamps. */
export const KEY_STEP_M = 0.005;
export const KEY_STEP_RAD = 0.03;
export const DRAG_RAD_PER_PX = 0.003;

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number]; // w, x, y, z

export type InputEvent =
  | { type: "key"; code: string }
  | { type: "drag"; dxPx: number; dyPx: number }
  | { type: "trigger"; value: number }
  | { type: "select_next_device" }
  | { type: "select_device"; device: DeviceId };

export interface DevicePoseState {
  t: Vec3;
  q: Quat;
}

export function quatMul(a: Quat, b: Quat): Quat {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

export function quatNormalize(q: Quat): Quat {
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
}

export function axisAngle(axis: Vec3, angle: number): Quat {
  const n = Math.hypot(axis[0], axis[1], axis[2]);
  const s = Math.sin(angle / 2) / n;
  return [Math.cos(angle / 2), axis[0] * s, axis[1] * s, axis[2] * s];
}

function clampVec(v: Vec3, maxNorm: number): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]);
  if (n <= maxNorm || n === 0) return v;
  const s = maxNorm / n;
  return [v[0] * s, v[1] * s, v[2] * s];
}

function clampAngle(a: number, maxAbs: number): number {
  return Math.max(-maxAbs, Math.min(maxAbs, a));
}

// forward is toward the scene, which is -z in the tracking frame
const KEY_TRANSLATIONS: Record<string, Vec3> = {
  KeyW: [0, 0, -1],
  KeyS: [0, 0, 1],
  KeyA: [-1, 0, 0],
  KeyD: [1, 0, 0],
  KeyR: [0, 1, 0],
  KeyF: [0, -1, 0],
};

// keyboard-only rotation: yaw about the tracking y axis
const KEY_ROTATIONS: Record<string, number> = {
  KeyQ: 1,
  KeyE: -1,
};

export interface IntegratorOptions {
  stepM?: number;
  stepRad?: number;
  dragRadPerPx?: number;
}

export class InputIntegrator {
  selected: DeviceId = "head";
  readonly poses: Record<DeviceId, DevicePoseState>;
  readonly triggers: Record<DeviceId, number>;
  private readonly stepM: number;
  private readonly stepRad: number;
  private readonly dragRadPerPx: number;

  constructor(opts: IntegratorOptions = {}) {
    this.stepM = opts.stepM ?? KEY_STEP_M;
    this.stepRad = opts.stepRad ?? KEY_STEP_RAD;
    this.dragRadPerPx = opts.dragRadPerPx ?? DRAG_RAD_PER_PX;
    this.poses = {
      head: { t: [0, 0, 0], q: [1, 0, 0, 0] },
      left_hand: { t: [0, 0, 0], q: [1, 0, 0, 0] },
      right_hand: { t: [0, 0, 0], q: [1, 0, 0, 0] },
    };
    this.triggers = { head: 0, left_hand: 0, right_hand: 0 };
  }

  apply(ev: InputEvent): void {
    switch (ev.type) {
      case "select_next_device": {
        const i = WIRE_DEVICE_ORDER.indexOf(this.selected);
        this.selected = WIRE_DEVICE_ORDER[(i + 1) % WIRE_DEVICE_ORDER.length]!;
        return;
      }
      case "select_device":
        this.selected = ev.device;
        return;
      case "key": {
        const pose = this.poses[this.selected];
        const dir = KEY_TRANSLATIONS[ev.code];
        if (dir) {
          const d = clampVec(
            [dir[0] * this.stepM, dir[1] * this.stepM, dir[2] * this.stepM],
            TRANSLATION_CLAMP_M,
          );
          pose.t = [pose.t[0] + d[0], pose.t[1] + d[1], pose.t[2] + d[2]];
          return;
        }
        const yaw = KEY_ROTATIONS[ev.code];
        if (yaw !== undefined) {
          const angle = clampAngle(yaw * this.stepRad, ROTATION_CLAMP_RAD);
          pose.q = quatNormalize(quatMul(axisAngle([0, 1, 0], angle), pose.q));
        }
        return;
      }
      case "drag": {
        const pose = this.poses[this.selected];
        const yaw = clampAngle(ev.dxPx * this.dragRadPerPx, ROTATION_CLAMP_RAD);
        const pitch = clampAngle(ev.dyPx * this.dragRadPerPx, ROTATION_CLAMP_RAD);
        let q = pose.q;
        if (yaw !== 0) q = quatMul(axisAngle([0, 1, 0], yaw), q);
        if (pitch !== 0) q = quatMul(axisAngle([1, 0, 0], pitch), q);
        pose.q = quatNormalize(q);
        return;
      }
      case "trigger": {
        if (this.selected === "head") return; // no gripper on the camera arm
        this.triggers[this.selected] = Math.max(0, Math.min(1, ev.value));
        return;
      }
    }
  }

  /** Snapshot of all three devices in wire order. */
  samples(timestampUs: bigint): [DeviceSample, DeviceSample, DeviceSample] {
    const mk = (d: DeviceId): DeviceSample => ({
      t: [...this.poses[d].t],
      q: [...this.poses[d].q],
      trigger: this.triggers[d],
      timestampUs,
    });
    return [mk("head"), mk("left_hand"), mk("right_hand")];
  }
}
