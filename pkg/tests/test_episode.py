import dataclasses
import json

import numpy as np
import pytest
from PIL import Image

from tririg.camera import CameraError
from tririg.episode import (
    FOOTER_MAGIC,
    MAGIC,
    Episode,
    EpisodeFormatError,
    EpisodeManifest,
    EpisodeRecorder,
    export_frame,
    load_episode,
    replay_episode,
    rerender_episode,
    save_episode,
    slice_cameras,
    _record_dtype,
)
from tririg.kinematics import chain_from_dict, chain_to_dict
from tririg.rig import CAMERA_IDS, RigModel
from tririg.simulator import Simulator
from tririg.tasks import make_task


@pytest.fixture()
def saved(tmp_path, peg_episode):
    p = tmp_path / "ep.tri"
    save_episode(peg_episode, p)
    return p


# ---------------------------------------------------------------------------
# round trips

def test_roundtrip_deep_equality(saved, peg_episode):
    assert load_episode(saved).equals(peg_episode)


def test_reserialization_is_byte_exact(tmp_path, saved, peg_episode):
    p2 = tmp_path / "again.tri"
    save_episode(load_episode(saved), p2)
    assert saved.read_bytes() == p2.read_bytes()


def test_file_size_arithmetic(saved, peg_episode):
    m = peg_episode.manifest
    manifest_len = len(json.dumps(m.to_dict(), sort_keys=True,
                                  separators=(",", ":")).encode())
    rec = _record_dtype(len(m.object_ids), len(m.camera_set), m.height, m.width)
    want = len(MAGIC) + 4 + manifest_len + m.step_count * rec.itemsize + len(FOOTER_MAGIC) + 4
    assert saved.stat().st_size == want


def test_manifest_roundtrip_and_validation(peg_episode):
    m = peg_episode.manifest
    assert EpisodeManifest.from_dict(m.to_dict()) == m
    broken = m.to_dict()
    del broken["seed"]
    with pytest.raises(EpisodeFormatError):
        EpisodeManifest.from_dict(broken)
    wrong = m.to_dict()
    wrong["format_version"] = 99
    with pytest.raises(EpisodeFormatError):
        EpisodeManifest.from_dict(wrong)


def test_rate_is_fixed_at_50hz(peg_episode):
    assert peg_episode.manifest.rate_hz == 50.0
    assert peg_episode.manifest.dt == 0.02


# ---------------------------------------------------------------------------
# fault injection on the file

def _flip_byte(path, offset):
    raw = bytearray(path.read_bytes())
    raw[offset] ^= 0x40
    path.write_bytes(bytes(raw))


def test_corrupt_payload_is_rejected(tmp_path, saved):
    _flip_byte(saved, saved.stat().st_size // 2)
    with pytest.raises(EpisodeFormatError):
        load_episode(saved)


def test_truncated_file_is_rejected(saved):
    raw = saved.read_bytes()
    saved.write_bytes(raw[:-20])
    with pytest.raises(EpisodeFormatError):
        load_episode(saved)


def test_bad_magic_is_rejected(saved):
    _flip_byte(saved, 0)
    with pytest.raises(EpisodeFormatError):
        load_episode(saved)


def test_missing_footer_is_rejected(saved):
    raw = saved.read_bytes()
    # overwrite footer magic in place, keeping the length intact
    patched = raw[:- 12] + b"XXXXXXXX" + raw[-4:]
    saved.write_bytes(patched)
    with pytest.raises(EpisodeFormatError):
        load_episode(saved)


# ---------------------------------------------------------------------------
# slicing

def test_identity_slice(peg_episode):
    assert slice_cameras(peg_episode, CAMERA_IDS).equals(peg_episode)


def test_slice_preserves_every_non_frame_field(peg_episode):
    sub = slice_cameras(peg_episode, ("static_top", "static_low"))
    assert sub.manifest.camera_set == ("static_top", "static_low")
    assert sub.manifest.step_count == peg_episode.manifest.step_count
    assert np.array_equal(sub.qpos, peg_episode.qpos)
    assert np.array_equal(sub.actions, peg_episode.actions)
    assert np.array_equal(sub.object_poses, peg_episode.object_poses)
    assert np.array_equal(sub.stage_masks, peg_episode.stage_masks)
    assert set(sub.frames) == {"static_top", "static_low"}
    for c in sub.frames:
        assert np.array_equal(sub.frames[c], peg_episode.frames[c])


def test_slice_composition(peg_episode):
    once = slice_cameras(peg_episode, ("static_top",))
    twice = slice_cameras(slice_cameras(peg_episode, ("static_top", "wrist_left")),
                          ("static_top",))
    assert once.equals(twice)


def test_slice_refuses_missing_camera(peg_episode):
    sub = slice_cameras(peg_episode, ("static_top",))
    with pytest.raises(EpisodeFormatError):
        slice_cameras(sub, ("wrist_left",))


def test_slice_keeps_canonical_order(peg_episode):
    sub = slice_cameras(peg_episode, ("av_left", "static_top"))
    assert sub.manifest.camera_set == ("static_top", "av_left")


# ---------------------------------------------------------------------------
# rerendering

def test_rerender_reproduces_recorded_frames(rig, peg_episode):
    again = rerender_episode(peg_episode, rig, CAMERA_IDS, av_arm_present=True)
    assert again.equals(peg_episode)


def test_rerender_without_av_arm(rig, peg_episode):
    cams = ("static_top", "static_low", "wrist_left", "wrist_right")
    bare = rerender_episode(peg_episode, rig, cams, av_arm_present=False)
    assert not bare.manifest.av_arm_present
    assert np.array_equal(bare.qpos, peg_episode.qpos)
    changed = False
    for c in ("static_top", "static_low"):
        a = peg_episode.frames[c].astype(int)
        b = bare.frames[c].astype(int)
        diff = a != b
        if diff.any():
            changed = True
            assert (b[diff] < a[diff]).all()  # removal only reveals farther surfaces
    assert changed


def test_rerender_refuses_av_cameras_without_arm(rig, peg_episode):
    with pytest.raises(CameraError):
        rerender_episode(peg_episode, rig, ("av_left",), av_arm_present=False)
    with pytest.raises(CameraError):
        rerender_episode(peg_episode, rig, ("sky_cam",), av_arm_present=True)


def test_rerender_refuses_foreign_rig(rig, peg_episode):
    blob = chain_to_dict(rig.chains["left_arm"])
    blob["joints"][2]["limits"] = [-1.0, 1.0]
    chains = dict(rig.chains)
    chains["left_arm"] = chain_from_dict(blob)
    other = RigModel(chains=chains, cameras=rig.cameras, gripper=rig.gripper,
                     start_qpos=rig.start_qpos)
    with pytest.raises(EpisodeFormatError):
        rerender_episode(peg_episode, other, CAMERA_IDS, av_arm_present=True)
    with pytest.raises(EpisodeFormatError):
        replay_episode(peg_episode, other)


# ---------------------------------------------------------------------------
# replay

def test_replay_is_clean(rig, peg_episode):
    rep = replay_episode(peg_episode, rig)
    assert rep.ok and rep.first_divergence is None
    assert rep.steps_checked == peg_episode.n_steps


def test_replay_of_sliced_episode_is_clean(rig, peg_episode):
    rep = replay_episode(slice_cameras(peg_episode, ("static_top",)), rig)
    assert rep.ok


def test_corrupted_action_diverges(rig, peg_episode):
    t = 40
    actions = peg_episode.actions.copy()
    actions[t, 8] += np.float32(0.05)
    broken = dataclasses.replace(peg_episode, actions=actions)
    rep = replay_episode(broken, rig)
    assert not rep.ok
    assert rep.first_divergence[0] > t  # effect lands after the corrupted step


def test_corrupted_qpos_reports_the_step(rig, peg_episode):
    t = 25
    qpos = peg_episode.qpos.copy()
    qpos[t, 3] += np.float32(1e-3)
    broken = dataclasses.replace(peg_episode, qpos=qpos)
    rep = replay_episode(broken, rig)
    assert not rep.ok
    assert rep.first_divergence[0] == t
    assert rep.first_divergence[1] == "qpos"


def test_empty_episode_is_consistent(rig, tmp_path):
    sim = Simulator(rig, make_task("peg_insertion"))
    state = sim.reset(5)
    rec = EpisodeRecorder(rig, sim, 5)
    ep = rec.finalize(state)
    assert ep.n_steps == 0
    p = tmp_path / "empty.tri"
    save_episode(ep, p)
    back = load_episode(p)
    assert back.equals(ep)
    assert replay_episode(back, rig).ok


# ---------------------------------------------------------------------------
# recorder contract

def test_recorder_rejects_use_after_finalize(rig):
    sim = Simulator(rig, make_task("peg_insertion"))
    state = sim.reset(0)
    rec = EpisodeRecorder(rig, sim, 0, camera_set=("static_top",))
    rec.add(state, state.qpos)
    rec.finalize(state)
    with pytest.raises(EpisodeFormatError):
        rec.add(state, state.qpos)
    with pytest.raises(EpisodeFormatError):
        rec.finalize(state)


def test_recorder_frames_match_state_records(rig):
    # the recorder must render the exact state it stores, so a stored frame
    # equals a fresh render of the stored record
    from tririg.camera import render
    from tririg.episode import quantize_state

    sim = Simulator(rig, make_task("slot_insertion"))
    state = sim.reset(3)
    rec = EpisodeRecorder(rig, sim, 3, camera_set=("static_low",))
    rec.add(state, state.qpos)
    ep = rec.finalize(sim.step(state, state.qpos))
    fresh = render(rig, quantize_state(state), ("static_low",))["static_low"]
    assert np.array_equal(ep.frames["static_low"][0], fresh.pixels)


def test_export_frame(tmp_path, peg_episode):
    out = tmp_path / "frame.png"
    export_frame(peg_episode, "av_left", 10, out)
    img = np.asarray(Image.open(out))
    assert np.array_equal(img, peg_episode.frames["av_left"][10])
