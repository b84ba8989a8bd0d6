import json
import subprocess
import sys

import numpy as np
import pytest

from tririg import cli
from tririg.cli import CliError, main, resolve_port
from tririg.episode import load_episode, save_episode


@pytest.fixture(scope="module")
def cli_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_ds")
    rc = main(["record", "--task", "peg_insertion", "--episodes", "2",
               "--noise-std", "0", "--cameras", "static_top", "--out", str(out)])
    assert rc == 0
    return out


def test_no_command_is_user_error(capsys):
    assert main([]) == 1
    assert "error:" in capsys.readouterr().err


def test_unknown_command_is_user_error():
    assert main(["fly"]) == 1


def test_unknown_task_refused_before_any_work(tmp_path):
    out = tmp_path / "d"
    assert main(["record", "--task", "stacking", "--episodes", "1",
                 "--out", str(out)]) == 1
    assert not out.exists()


def test_unknown_camera_refused_before_any_work(tmp_path, capsys):
    out = tmp_path / "d"
    assert main(["record", "--task", "peg_insertion", "--episodes", "1",
                 "--cameras", "static_top,skycam", "--out", str(out)]) == 1
    assert "skycam" in capsys.readouterr().err
    assert not out.exists()


def test_record_writes_episodes_and_summary(cli_dataset):
    files = sorted(p.name for p in cli_dataset.glob("*.tri"))
    assert files == ["peg_insertion_00000.tri", "peg_insertion_00001.tri"]
    summary = json.loads((cli_dataset / "summary.json").read_text())
    assert summary["count"] == 2
    assert summary["noise_std"] == [0.0, 0.0]
    assert all(e["success"] for e in summary["episodes"])
    ep = load_episode(cli_dataset / files[0])
    assert set(ep.frames) == {"static_top"}


def test_record_rerun_is_byte_identical(cli_dataset, tmp_path):
    out2 = tmp_path / "again"
    rc = main(["record", "--task", "peg_insertion", "--episodes", "2",
               "--noise-std", "0", "--cameras", "static_top", "--out", str(out2)])
    assert rc == 0
    for name in ("peg_insertion_00000.tri", "peg_insertion_00001.tri", "summary.json"):
        assert (out2 / name).read_bytes() == (cli_dataset / name).read_bytes()


def test_record_zero_episodes_valid_empty_dataset(tmp_path):
    out = tmp_path / "empty"
    assert main(["record", "--task", "peg_insertion", "--episodes", "0",
                 "--out", str(out)]) == 0
    assert list(out.glob("*.tri")) == []
    assert json.loads((out / "summary.json").read_text())["count"] == 0


def test_explicit_seeds_name_the_files(tmp_path):
    out = tmp_path / "seeded"
    rc = main(["record", "--task", "peg_insertion", "--seeds", "5", "--noise-std",
               "0", "--cameras", "static_top", "--out", str(out)])
    assert rc == 0
    assert [p.name for p in sorted(out.glob("*.tri"))] == ["peg_insertion_00005.tri"]


def test_seed_count_mismatch_is_user_error(tmp_path):
    assert main(["record", "--task", "peg_insertion", "--episodes", "3",
                 "--seeds", "1,2", "--out", str(tmp_path / "x")]) == 1


def test_replay_clean_episode_exits_zero(cli_dataset, capsys):
    assert main(["replay", str(cli_dataset / "peg_insertion_00000.tri")]) == 0
    assert "clean" in capsys.readouterr().out


def test_replay_corrupt_file_exits_one(cli_dataset, tmp_path, capsys):
    raw = bytearray((cli_dataset / "peg_insertion_00000.tri").read_bytes())
    raw[len(raw) // 2] ^= 0x40
    bad = tmp_path / "bad.tri"
    bad.write_bytes(bytes(raw))
    assert main(["replay", str(bad)]) == 1
    assert "error:" in capsys.readouterr().err


def test_replay_divergence_reports_step(cli_dataset, tmp_path, capsys):
    ep = load_episode(cli_dataset / "peg_insertion_00000.tri")
    actions = np.array(ep.actions)
    actions[30, 2] += 0.03
    import dataclasses
    tampered = dataclasses.replace(ep, actions=actions)
    path = tmp_path / "tampered.tri"
    save_episode(tampered, path)
    assert main(["replay", str(path)]) == 1
    err = capsys.readouterr().err
    assert "diverged" in err and "step" in err


def test_render_export_writes_png(cli_dataset, tmp_path, capsys):
    png = tmp_path / "view.png"
    rc = main(["render-export", str(cli_dataset / "peg_insertion_00001.tri"),
               "--camera", "static_top", "--step", "0", "--out", str(png)])
    assert rc == 0 and png.exists()
    from PIL import Image
    img = np.asarray(Image.open(png))
    ep = load_episode(cli_dataset / "peg_insertion_00001.tri")
    assert np.array_equal(img, ep.frames["static_top"][0])


def test_render_export_unknown_camera(cli_dataset, tmp_path):
    assert main(["render-export", str(cli_dataset / "peg_insertion_00000.tri"),
                 "--camera", "av_left", "--out", str(tmp_path / "x.png")]) == 1


def test_config_file_supplies_defaults(tmp_path):
    cfg = tmp_path / "run.json"
    out = tmp_path / "via_config"
    cfg.write_text(json.dumps({
        "task": "slot_insertion", "episodes": 1, "noise_std": 0,
        "cameras": ["static_top"], "out": str(out),
    }))
    assert main(["record", "--config", str(cfg)]) == 0
    assert [p.name for p in out.glob("*.tri")] == ["slot_insertion_00000.tri"]


def test_flag_overrides_config(tmp_path):
    cfg = tmp_path / "run.json"
    out = tmp_path / "flag_wins"
    cfg.write_text(json.dumps({
        "task": "slot_insertion", "episodes": 1, "noise_std": 0,
        "cameras": ["static_top"],
    }))
    assert main(["record", "--config", str(cfg), "--task", "peg_insertion",
                 "--out", str(out)]) == 0
    assert [p.name for p in out.glob("*.tri")] == ["peg_insertion_00000.tri"]


def test_bad_config_file_is_user_error(tmp_path):
    cfg = tmp_path / "broken.json"
    cfg.write_text("{not json")
    assert main(["record", "--config", str(cfg), "--episodes", "1"]) == 1
    assert main(["record", "--config", str(tmp_path / "absent.json"),
                 "--episodes", "1"]) == 1


def test_port_resolution_order(monkeypatch):
    monkeypatch.delenv("TRIRIG_PORT", raising=False)
    assert resolve_port(1234, {"port": 99}) == 1234
    assert resolve_port(None, {"port": 99}) == 99
    assert resolve_port(None, {}) == 8765
    monkeypatch.setenv("TRIRIG_PORT", "7777")
    assert resolve_port(None, {"port": 99}) == 7777  # env beats config
    assert resolve_port(4321, {}) == 4321  # flag beats env
    monkeypatch.setenv("TRIRIG_PORT", "not-a-port")
    with pytest.raises(CliError):
        resolve_port(None, {})


def test_internal_failure_exits_two(tmp_path, monkeypatch, capsys):
    import tririg.policy

    def boom(*a, **kw):
        raise RuntimeError("solver blew up")

    monkeypatch.setattr(tririg.policy, "run_teleop_episode", boom)
    rc = main(["record", "--task", "peg_insertion", "--episodes", "1",
               "--out", str(tmp_path / "d")])
    assert rc == 2
    assert "internal error" in capsys.readouterr().err


def test_eval_writes_table_and_is_deterministic(tmp_path, needle_dataset, capsys):
    ds = tmp_path / "needle"
    ds.mkdir()
    for i, ep in enumerate(needle_dataset):
        save_episode(ep, ds / f"thread_needle_{i:05d}.tri")
    argv = ["eval", str(ds), "--rollouts", "1", "--configs", "av,static",
            "--out", str(tmp_path / "r1")]
    assert main(argv) == 0
    out = capsys.readouterr().out
    blob = json.loads((tmp_path / "r1" / "eval_thread_needle.json").read_text())
    assert [r["config"] for r in blob["rows"]] == ["av", "static"]
    assert blob["n_rollouts"] == 1
    text = (tmp_path / "r1" / "eval_thread_needle.txt").read_text()
    assert "av" in text and "static" in text and text.strip() in out
    argv2 = ["eval", str(ds), "--rollouts", "1", "--configs", "av,static",
             "--out", str(tmp_path / "r2")]
    assert main(argv2) == 0
    assert ((tmp_path / "r1" / "eval_thread_needle.json").read_bytes()
            == (tmp_path / "r2" / "eval_thread_needle.json").read_bytes())


def test_eval_refuses_missing_cameras_by_name(tmp_path, peg_episode, capsys):
    from tririg.episode import slice_cameras

    ds = tmp_path / "static_only"
    ds.mkdir()
    save_episode(slice_cameras(peg_episode, ("static_top", "static_low")),
                 ds / "ep.tri")
    assert main(["eval", str(ds), "--rollouts", "1", "--configs", "av"]) == 1
    err = capsys.readouterr().err
    assert "av_left" in err and "av_right" in err


def test_eval_empty_dataset_is_user_error(tmp_path):
    empty = tmp_path / "none"
    empty.mkdir()
    assert main(["eval", str(empty)]) == 1
    assert main(["eval", str(tmp_path / "missing")]) == 1


def test_console_entry_point_help():
    proc = subprocess.run([sys.executable, "-m", "tririg.cli", "--help"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    for word in ("record", "eval", "serve", "replay", "render-export"):
        assert word in proc.stdout
