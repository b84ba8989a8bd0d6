/**
 * Web console entry point.
 *
 * Everything runs on the browser's single event loop: input events mutate the
 * integrator, a 20 ms interval streams the latest integrated poses, socket
 * messages update the session view, and a requestAnimationFrame loop paints
 * whatever is newest.  Nothing blocks, and a slow frame just gets skipped in
 * favor of the next one.
 */

import { InputIntegrator } from "./input.js";
import type { DeviceId } from "./protocol.js";
import { WIRE_DEVICE_ORDER } from "./protocol.js";
import { drawFrame, thumbnailOrder } from "./render.js";
import { Session } from "./session.js";
import { WsTransport } from "./transport.js";

const CAMERAS = ["av_left", "av_right", "static_top", "static_low", "wrist_left", "wrist_right"];
const PRIMARY_CAMERA = "av_left";
const POSE_PERIOD_MS = 20;
const TASKS = ["peg_insertion", "slot_insertion", "thread_needle"];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const urlInput = el<HTMLInputElement>("server-url");
const connectBtn = el<HTMLButtonElement>("connect");
const disconnectBtn = el<HTMLButtonElement>("disconnect");
const anchorBtn = el<HTMLButtonElement>("anchor");
const reanchorBtn = el<HTMLButtonElement>("reanchor");
const recordStartBtn = el<HTMLButtonElement>("record-start");
const recordStopBtn = el<HTMLButtonElement>("record-stop");
const taskSelect = el<HTMLSelectElement>("task");
const seedInput = el<HTMLInputElement>("seed");
const statusLine = el<HTMLElement>("status");
const errorLine = el<HTMLElement>("error");
const deviceLine = el<HTMLElement>("device");
const mainCanvas = el<HTMLCanvasElement>("main-view");
const thumbStrip = el<HTMLElement>("thumbs");

for (const t of TASKS) {
  const opt = document.createElement("option");
  opt.value = t;
  opt.textContent = t;
  taskSelect.appendChild(opt);
}

let session: Session | null = null;
let integrator = new InputIntegrator();
let poseTimer: ReturnType<typeof setInterval> | null = null;
let pingTimer: ReturnType<typeof setInterval> | null = null;
let poseTick = 0;
const thumbCanvases = new Map<string, HTMLCanvasElement>();

function connect(): void {
  disconnect();
  // a fresh connection means a fresh tracking origin and a fresh anchor
  integrator = new InputIntegrator();
  poseTick = 0;
  session = new Session(new WsTransport(urlInput.value), {
    cameras: CAMERAS,
    role: "console",
    onChange: refreshStatus,
  });
  poseTimer = setInterval(() => {
    if (!session || session.state !== "connected") return;
    poseTick += 1;
    // constant poses are still valid input: no events means the rig holds still
    session.sendPoses(integrator.samples(BigInt(poseTick) * 20000n));
  }, POSE_PERIOD_MS);
  pingTimer = setInterval(() => {
    if (session && session.state === "connected") session.ping();
  }, 1000);
  refreshStatus();
}

function disconnect(): void {
  if (poseTimer !== null) clearInterval(poseTimer);
  if (pingTimer !== null) clearInterval(pingTimer);
  poseTimer = null;
  pingTimer = null;
  session?.close();
  session = null;
  refreshStatus();
}

connectBtn.onclick = connect;
disconnectBtn.onclick = disconnect;
anchorBtn.onclick = () => session?.anchor();
reanchorBtn.onclick = () => session?.reanchor();
recordStartBtn.onclick = () => {
  const seed = Number.parseInt(seedInput.value, 10);
  session?.recordStart(taskSelect.value, Number.isFinite(seed) ? seed : 0);
};
recordStopBtn.onclick = () => session?.recordStop();

// ---------------------------------------------------------------------------
// input: keyboard steps, mouse drags, trigger hold

window.addEventListener("keydown", (ev) => {
  if (ev.repeat && ev.code === "Tab") return;
  if (ev.target instanceof HTMLInputElement || ev.target instanceof HTMLSelectElement) return;
  if (ev.code === "Tab") {
    ev.preventDefault();
    integrator.apply({ type: "select_next_device" });
    refreshStatus();
    return;
  }
  if (ev.code === "Space") {
    ev.preventDefault();
    integrator.apply({ type: "trigger", value: 1 });
    return;
  }
  if (ev.code.startsWith("Digit")) {
    const i = Number(ev.code.slice(5)) - 1;
    const device = WIRE_DEVICE_ORDER[i] as DeviceId | undefined;
    if (device) {
      integrator.apply({ type: "select_device", device });
      refreshStatus();
    }
    return;
  }
  integrator.apply({ type: "key", code: ev.code });
});

window.addEventListener("keyup", (ev) => {
  if (ev.code === "Space") integrator.apply({ type: "trigger", value: 0 });
});

let dragging = false;
let lastX = 0;
let lastY = 0;
mainCanvas.addEventListener("mousedown", (ev) => {
  dragging = true;
  lastX = ev.clientX;
  lastY = ev.clientY;
});
window.addEventListener("mouseup", () => {
  dragging = false;
});
window.addEventListener("mousemove", (ev) => {
  if (!dragging) return;
  integrator.apply({ type: "drag", dxPx: ev.clientX - lastX, dyPx: ev.clientY - lastY });
  lastX = ev.clientX;
  lastY = ev.clientY;
});

// ---------------------------------------------------------------------------
// painting

function refreshStatus(): void {
  const s = session;
  if (!s) {
    statusLine.textContent = "disconnected";
    errorLine.textContent = "";
    return;
  }
  const bits: string[] = [s.state];
  if (s.displayStep >= 0) bits.push(`step ${s.displayStep}`);
  if (s.lastState) {
    const stages = s.lastState.stageFlags.map((f) => (f ? "+" : "-")).join("");
    if (stages) bits.push(`stages ${stages}`);
  }
  if (s.recording) bits.push(`REC ${s.recordSteps}`);
  const rtt = s.rttMs[s.rttMs.length - 1];
  if (rtt !== undefined) bits.push(`rtt ${rtt.toFixed(1)} ms`);
  statusLine.textContent = bits.join(" | ");
  const err = s.refusal ?? s.lastError;
  errorLine.textContent = err ? `${err.code}: ${err.text}` : "";
  deviceLine.textContent = `controlling: ${integrator.selected}`;
}

function thumbCanvas(camera: string): HTMLCanvasElement {
  let canvas = thumbCanvases.get(camera);
  if (!canvas) {
    canvas = document.createElement("canvas");
    canvas.title = camera;
    const label = document.createElement("figcaption");
    label.textContent = camera;
    const fig = document.createElement("figure");
    fig.appendChild(canvas);
    fig.appendChild(label);
    thumbStrip.appendChild(fig);
    thumbCanvases.set(camera, canvas);
  }
  return canvas;
}

function paint(): void {
  if (session) {
    const primary = session.frames.get(PRIMARY_CAMERA);
    if (primary) {
      mainCanvas.width = primary.width;
      mainCanvas.height = primary.height;
      const ctx = mainCanvas.getContext("2d");
      if (ctx) drawFrame(ctx, primary);
    }
    for (const cam of thumbnailOrder(session.frames.keys(), PRIMARY_CAMERA)) {
      const frame = session.frames.get(cam)!;
      const canvas = thumbCanvas(cam);
      canvas.width = frame.width;
      canvas.height = frame.height;
      const ctx = canvas.getContext("2d");
      if (ctx) drawFrame(ctx, frame);
    }
  }
  requestAnimationFrame(paint);
}

refreshStatus();
requestAnimationFrame(paint);
