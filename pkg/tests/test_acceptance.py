"""Release gate: every hard guarantee of the library, checked end to end.

Each test prints one PASS/FAIL summary line (run with -s to see them live).
The thresholds here are contracts, not aspirations; a red line in this file
means the library no longer does what its documentation promises.

Several checks are deliberately expensive (minute-scale dataset recording,
a 60 s served session).  Run this file alone when iterating elsewhere.
"""

import json
import math
import threading
import time
from dataclasses import replace as dc_replace
from pathlib import Path

import numpy as np

from test_kinematics import fd_jacobian, random_q
from tririg import netproto as wire
from tririg.cli import main as cli_main
from tririg.episode import (
    _manifest_bytes,
    load_episode,
    replay_episode,
    rerender_episode,
    slice_cameras,
)
from tririg.kinematics import ik_dls, ik_regularized, jacobian, tool_pose
from tririg.policy import (
    CAMERA_CONFIGS,
    neighbor_ablation_probe,
    run_teleop_episode,
)
from tririg.rig import AV, CAMERA_IDS, LEFT, RIGHT, default_rig
from tririg.server import ServerConfig, TeleopServer
from tririg.client import TeleopClient
from tririg.tasks import TASK_NAMES
from tririg.teleop import DEVICE_IDS, Anchor, adapt_motion
from tririg.transforms import Pose

CHAIN_NAMES = (LEFT, RIGHT, AV)
IDQ = np.array([1.0, 0.0, 0.0, 0.0])


def report(name: str, ok: bool, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"{name}: {detail}"


def _rand_pose(rng: np.random.Generator, span: float = 0.5) -> Pose:
    q = rng.normal(size=4)
    return Pose(rng.uniform(-span, span, 3), q / np.linalg.norm(q))


# ---------------------------------------------------------------------------
# kinematics


def test_jacobian_agrees_with_finite_differences(rig):
    rng = np.random.default_rng(2)
    worst = 0.0
    t0 = time.perf_counter()
    for i in range(1000):
        chain = rig.chains[CHAIN_NAMES[i % 3]]
        q = random_q(chain, rng)
        J = jacobian(chain, q)
        rel = np.max(np.abs(J - fd_jacobian(chain, q))) / max(1.0, np.max(np.abs(J)))
        worst = max(worst, rel)
    dt = time.perf_counter() - t0
    report("jacobian vs central differences", worst < 1e-5 and dt < 30.0,
           f"1000 samples over all chains, max rel err {worst:.2e}, {dt:.1f}s")


def test_damped_ik_convergence_budget(rig):
    # targets generated by FK are reachable by construction; solver starts
    # from a clamped +-0.3 rad perturbation of the generating configuration
    rng = np.random.default_rng(2026)
    lam = 0.02  # solver default, restated so the step bound below is explicit
    solved = 0
    bound_violations = 0
    out_of_limits = 0
    for i in range(100):
        chain = rig.chains[CHAIN_NAMES[i % 3]]
        q_true = random_q(chain, rng)
        target = tool_pose(chain, q_true)
        q0 = chain.clamp(q_true + rng.uniform(-0.3, 0.3, chain.dof))
        q, rep = ik_dls(chain, q0, target, lam=lam, max_iters=200)
        if rep.converged and rep.pos_err <= 1e-4 and rep.rot_err <= 1e-3:
            solved += 1
        for raw, err in zip(rep.raw_step_norms, rep.err_norms):
            if raw > err / (2 * lam) + 1e-12:
                bound_violations += 1
        if not (np.all(q >= chain.limits_lo) and np.all(q <= chain.limits_hi)):
            out_of_limits += 1
    ok = solved >= 99 and bound_violations == 0 and out_of_limits == 0
    report("damped IK convergence", ok,
           f"{solved}/100 targets to 1e-4 m / 1e-3 rad within 200 iters, "
           f"{bound_violations} step-bound violations, {out_of_limits} limit escapes")


def test_regularized_ik_reduction_and_limits(rig):
    # with no centering pull and w_disp = lam^2 the regularized normal
    # equations are exactly the damped ones, so iterates must coincide
    rng = np.random.default_rng(31)
    worst = 0.0
    length_mismatches = 0
    for lam in (0.02, 0.05):
        for name in (LEFT, AV):
            chain = rig.chains[name]
            for _ in range(15):
                q0 = random_q(chain, rng)
                target = tool_pose(chain, random_q(chain, rng))
                _, rd = ik_dls(chain, q0, target, lam=lam, max_iters=30)
                _, rr = ik_regularized(chain, q0, target, w_center=0.0,
                                       w_disp=lam * lam, max_iters=30)
                if len(rd.q_iterates) != len(rr.q_iterates):
                    length_mismatches += 1
                    continue
                for qa, qb in zip(rd.q_iterates, rr.q_iterates):
                    worst = max(worst, float(np.max(np.abs(qa - qb))))
    escapes = 0
    for i in range(60):
        chain = rig.chains[CHAIN_NAMES[i % 3]]
        target = tool_pose(chain, random_q(chain, rng))
        q, rep = ik_regularized(chain, random_q(chain, rng), target, max_iters=80)
        for qi in rep.q_iterates + [q]:
            if not (np.all(qi >= chain.limits_lo) and np.all(qi <= chain.limits_hi)):
                escapes += 1
    ok = worst < 1e-10 and length_mismatches == 0 and escapes == 0
    report("regularized IK reduces to damped IK", ok,
           f"60 trajectory pairs, max iterate deviation {worst:.1e}, "
           f"{length_mismatches} length mismatches; 60 regularized solves, "
           f"{escapes} limit escapes")


# ---------------------------------------------------------------------------
# teleop mapping


def test_pose_mapping_algebra():
    rng = np.random.default_rng(1012)
    worst_ident = 0.0
    worst_equiv = 0.0
    for _ in range(1000):
        di, ri, motion = _rand_pose(rng), _rand_pose(rng), _rand_pose(rng)
        anchor = Anchor(di, ri, scale=float(rng.uniform(0.5, 2.0)))
        out = anchor.map_pose(di)
        worst_ident = max(
            worst_ident,
            float(np.max(np.abs(out.t - ri.t))),
            float(min(np.linalg.norm(out.q - ri.q), np.linalg.norm(out.q + ri.q))),
        )
        got = anchor.map_pose(di @ motion)
        want = ri @ adapt_motion(motion, anchor.adapter_q, anchor.scale)
        worst_equiv = max(
            worst_equiv,
            float(np.max(np.abs(got.t - want.t))),
            float(min(np.linalg.norm(got.q - want.q), np.linalg.norm(got.q + want.q))),
        )
    ok = worst_ident < 1e-12 and worst_equiv < 1e-12
    report("pose mapping algebra", ok,
           f"1000 anchors: anchored-identity err {worst_ident:.1e}, "
           f"motion-equivariance err {worst_equiv:.1e}")


# ---------------------------------------------------------------------------
# stereo geometry


def test_stereo_disparity_law(rig):
    from test_camera import _INTR, _centroid_u, render_prims
    from tririg.camera import camera_world_pose
    from tririg.rig import STEREO_BASELINE
    from tririg.simulator import Simulator
    from tririg.tasks import make_task

    state = Simulator(rig, make_task("peg_insertion")).reset(0)
    cam_l = camera_world_pose(rig, rig.cameras["av_left"], state.qpos)
    cam_r = camera_world_pose(rig, rig.cameras["av_right"], state.qpos)
    axis = cam_l.rotation_matrix()[:, 2]
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(100):
        z = float(rng.uniform(0.20, 0.38))
        sphere = ("sphere", Pose(cam_l.t + z * axis, IDQ), (0.012, 0, 0))
        disparity = _centroid_u(render_prims(cam_l, [sphere])) \
            - _centroid_u(render_prims(cam_r, [sphere]))
        worst = max(worst, abs(disparity - _INTR.fx * STEREO_BASELINE / z))
    report("stereo disparity law", worst < 0.5,
           f"100 depths in [0.20, 0.38] m, max |disparity - fx*b/z| = {worst:.3f} px")


# ---------------------------------------------------------------------------
# wire protocol


def _codec_samples():
    dev = wire.DeviceSample((0.5, -0.25, 1.0), (1.0, 0.0, 0.0, 0.0), 0.75, 41)
    return [
        wire.Hello(1, tuple(CAMERA_IDS), "operator"),
        wire.AnchorRequest(),
        wire.PoseUpdate((dev, dc_replace(dev, timestamp_us=42),
                         dc_replace(dev, trigger=0.0))),
        wire.ReAnchor(),
        wire.StateUpdate(7, (0.5, -1.5, 0.25), (True, False)),
        wire.FrameMsg("av_left", 3, 4, 2, bytes(range(8))),
        wire.RecordControl("start", "peg_insertion", 5),
        wire.RecordControl("stop"),
        wire.Error("record", "already recording"),
        wire.Ping(9, 123456),
        wire.Echo(9, 123456),
    ]


def test_message_codec_roundtrip_and_fuzz():
    # round trip: every message type survives encode -> decode unchanged
    # (float fields use f32-exact values so equality is meaningful)
    bad_roundtrips = 0
    for msg in _codec_samples():
        tag, body = wire.encode_body(msg)
        if wire.decode_body(tag, body) != msg:
            bad_roundtrips += 1

    crashes = 0
    handled = 0

    # 600k random tag/body pairs: decode must accept or raise DecodeError
    rng = np.random.default_rng(99)
    pool = rng.integers(0, 256, size=600_000 + 64, dtype=np.uint8).tobytes()
    lengths = rng.integers(0, 64, size=600_000)
    tags = rng.integers(0, 16, size=600_000)
    for i in range(600_000):
        body = pool[i:i + int(lengths[i])]
        try:
            wire.decode_body(int(tags[i]), body)
        except wire.DecodeError:
            handled += 1
        except Exception:
            crashes += 1

    # 200k single-bit corruptions of valid frames through the stream decoder
    encoded = [wire.encode_message(m) for m in _codec_samples()]
    for i in range(200_000):
        buf = bytearray(encoded[i % len(encoded)])
        buf[i % len(buf)] ^= 1 << (i % 8)
        try:
            wire.FrameDecoder().feed(bytes(buf))
        except wire.DecodeError:
            handled += 1
        except Exception:
            crashes += 1

    # 200k well-formed frames fed through one decoder in arbitrary chunks:
    # every single one must come back out
    stream = bytearray()
    sent = 0
    samples = _codec_samples()
    for i in range(200_000):
        stream += wire.encode_message(samples[i % len(samples)])
        sent += 1
    decoder = wire.FrameDecoder()
    got = 0
    view = memoryview(bytes(stream))
    cuts = np.sort(rng.integers(0, len(view), size=4000))
    prev = 0
    try:
        for cut in list(cuts) + [len(view)]:
            got += len(decoder.feed(bytes(view[prev:cut])))
            prev = int(cut)
    except Exception:
        crashes += 1
    ok = bad_roundtrips == 0 and crashes == 0 and got == sent
    report("wire codec robustness", ok,
           f"{len(encoded)} message types round-trip clean; 1000000-frame fuzz: "
           f"{crashes} crashes, {handled} malformed frames rejected, "
           f"{got}/{sent} valid frames recovered from a fragmented stream")


# ---------------------------------------------------------------------------
# episode store


def test_slice_and_rerender_soundness(rig):
    # the threading task stages the bore so only the stereo pair looks into
    # it, with the camera arm reaching through every static view
    res = run_teleop_episode(rig, "thread_needle", seed=0, noise_std=(0.0, 0.0),
                             record_cameras=CAMERA_IDS)
    ep = res.episode
    statics = ("static_top", "static_low")

    sub = slice_cameras(ep, statics)
    non_frame_ok = (
        sub.time_steps.tobytes() == ep.time_steps.tobytes()
        and sub.stage_masks.tobytes() == ep.stage_masks.tobytes()
        and sub.qpos.tobytes() == ep.qpos.tobytes()
        and sub.actions.tobytes() == ep.actions.tobytes()
        and sub.object_poses.tobytes() == ep.object_poses.tobytes()
        and _manifest_bytes(dc_replace(sub.manifest, camera_set=ep.manifest.camera_set))
        == _manifest_bytes(ep.manifest)
        and set(sub.frames) == set(statics)
        and all(sub.frames[c].tobytes() == ep.frames[c].tobytes() for c in statics)
    )

    wo = rerender_episode(ep, rig, statics, av_arm_present=False)
    frames_with_arm = 0
    brighter_after_removal = 0
    for cam in statics:
        w, o = ep.frames[cam], wo.frames[cam]
        for t in range(ep.n_steps):
            if (o[t] != w[t]).any():
                frames_with_arm += 1
            brighter_after_removal += int((o[t] > w[t]).any())
    total = 2 * ep.n_steps
    ok = (res.success and non_frame_ok
          and frames_with_arm == total and brighter_after_removal == 0)
    report("camera slice / rerender soundness", ok,
           f"slice preserved all non-frame bytes; camera-arm removal changed "
           f"{frames_with_arm}/{total} static frames and never brightened one")


# ---------------------------------------------------------------------------
# scripted operator


def test_scripted_operator_success(rig):
    results = {}
    for task in TASK_NAMES:
        clean = sum(
            run_teleop_episode(rig, task, seed, noise_std=(0.0, 0.0)).success
            for seed in range(50)
        )
        noisy = sum(
            run_teleop_episode(rig, task, seed).success for seed in range(50)
        )
        results[task] = (clean, noisy)
    ok = all(c == 50 and n >= 45 for c, n in results.values())
    report("scripted operator success", ok,
           "; ".join(f"{t}: {c}/50 clean, {n}/50 at default tremor"
                     for t, (c, n) in results.items()))


# ---------------------------------------------------------------------------
# policy evaluation protocol


def test_camera_ablation_protocol(rig, tmp_path):
    ds = tmp_path / "needle"
    out = tmp_path / "eval"
    assert cli_main(["record", "--task", "thread_needle", "--episodes", "10",
                     "--out", str(ds)]) == 0
    assert cli_main(["eval", str(ds), "--rollouts", "50", "--out", str(out)]) == 0

    table = json.loads((out / "eval_thread_needle.json").read_text())
    rows = table["rows"]
    table_ok = (
        table["task"] == "thread_needle"
        and table["n_rollouts"] == 50
        and tuple(r["config"] for r in rows) == CAMERA_CONFIGS
        and (out / "eval_thread_needle.txt").read_text().count("\n") == len(rows) + 1
    )

    episodes = [load_episode(f) for f in sorted(ds.glob("*.tri"))]
    flips = neighbor_ablation_probe(episodes)
    ok = table_ok and flips >= 1
    report("camera ablation protocol", ok,
           f"{len(rows)} configurations x 50 rollouts tabulated; removing the "
           f"stereo pair from the key changed {flips}/100 neighbor selections")


# ---------------------------------------------------------------------------
# recording determinism


def test_dataset_recording_determinism(tmp_path):
    t0 = time.perf_counter()
    dirs = (tmp_path / "a", tmp_path / "b")
    for d in dirs:
        assert cli_main(["record", "--task", "peg_insertion", "--episodes", "50",
                         "--noise-std", "0", "--out", str(d)]) == 0
    names = sorted(p.name for p in dirs[0].iterdir())
    identical = (
        names == sorted(p.name for p in dirs[1].iterdir())
        and all((dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes()
                for n in names)
    )
    rig = default_rig()
    clean = 0
    for f in sorted(dirs[0].glob("*.tri")):
        clean += bool(replay_episode(load_episode(f), rig).ok)
    dt = time.perf_counter() - t0
    ok = identical and clean == 50 and dt < 300.0
    report("recording determinism", ok,
           f"50 episodes recorded twice byte-identical ({len(names)} files), "
           f"{clean}/50 replays bit-clean, {dt:.0f}s total")


# ---------------------------------------------------------------------------
# served session


def test_served_session_realtime_budget(rig, tmp_path):
    srv = TeleopServer(rig, ServerConfig(dataset_dir=tmp_path))
    host, port = srv.start()
    c = TeleopClient(host, port, cameras=CAMERA_IDS)
    stop = threading.Event()

    def pump():
        # deadline-paced 50 Hz device stream with a small lateral orbit so
        # the per-tick IK does real work for the whole minute
        t0 = time.perf_counter()
        k = 0
        while not stop.is_set():
            k += 1
            x = 0.01 * math.sin(k * 0.04)
            y = 0.01 * math.cos(k * 0.04)
            c.send_poses(
                {d: Pose(np.array([x, y, 0.0]), IDQ) for d in DEVICE_IDS},
                timestamp_us=k * 20000,
            )
            time.sleep(max(0.0, t0 + k * 0.02 - time.perf_counter()))

    try:
        c.send_poses({d: Pose(np.zeros(3), IDQ) for d in DEVICE_IDS},
                     timestamp_us=1)
        c.anchor()
        sender = threading.Thread(target=pump, daemon=True)
        start = time.perf_counter()
        sender.start()
        time.sleep(10.0)
        probe = c.latency_probe(n=200, interval_s=0.01)
        time.sleep(max(0.0, start + 60.0 - time.perf_counter()))
        stop.set()
        sender.join(timeout=5.0)
        stats = srv.sessions[-1].stats.jitter_percentiles()
        cameras_seen = set(c.frames)
        ok = (
            stats["n"] >= 2800
            and stats["p99_ms"] < 5.0
            and probe["p99_ms"] < 5.0
            and cameras_seen == set(CAMERA_IDS)
        )
        report("served session real-time budget", ok,
               f"{stats['n']} ticks over 60 s, tick jitter p99 "
               f"{stats['p99_ms']:.2f} ms (max {stats['max_ms']:.2f}), loopback "
               f"probe p99 {probe['p99_ms']:.2f} ms, {len(cameras_seen)} cameras "
               f"streaming")
    finally:
        stop.set()
        c.close()
        srv.stop()
