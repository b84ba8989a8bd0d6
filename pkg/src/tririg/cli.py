"""Command line entry point.

Subcommands: record (scripted demonstration datasets), eval (camera-ablation
study of the nearest-neighbor baseline), serve (live teleoperation endpoint),
replay (bitwise verification of an episode file), render-export (one stored
frame as an image).

Flags win over the optional JSON config file (--config), which wins over
defaults; the port additionally honors the TRIRIG_PORT environment variable
when no flag is given.  All validation happens before any work starts.
Exit codes: 0 success, 1 user error, 2 internal failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


class CliError(Exception):
    """User-facing problem: bad flags, bad files, refused work."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; route through CliError
    # so usage problems report as user errors (exit 1)
    def error(self, message):
        raise CliError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="tririg", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", metavar="command")

    def common(sp):
        sp.add_argument("--config", type=Path, default=None,
                        help="JSON file with defaults for any flag")

    rec = sub.add_parser("record", help="generate scripted demonstration episodes")
    rec.add_argument("--task", default=None)
    rec.add_argument("--episodes", type=int, default=None)
    rec.add_argument("--seeds", default=None, help="comma-separated ints")
    rec.add_argument("--cameras", default=None, help="comma-separated camera ids")
    rec.add_argument("--noise-std", dest="noise_std", default=None,
                     help="single value or trans,rot pair")
    rec.add_argument("--out", type=Path, default=None)
    common(rec)

    ev = sub.add_parser("eval", help="camera-ablation evaluation of the NN baseline")
    ev.add_argument("dataset", type=Path)
    ev.add_argument("--task", default=None)
    ev.add_argument("--rollouts", type=int, default=None)
    ev.add_argument("--configs", default=None,
                    help="comma-separated camera configurations (default: all seven)")
    ev.add_argument("--chunk-size", dest="chunk_size", type=int, default=None)
    ev.add_argument("--query-period", dest="query_period", type=int, default=None)
    ev.add_argument("--variants", type=int, default=None)
    ev.add_argument("--out", type=Path, default=None)
    common(ev)

    srv = sub.add_parser("serve", help="run the teleoperation service")
    srv.add_argument("--port", type=int, default=None)
    srv.add_argument("--host", default=None)
    srv.add_argument("--task", default=None)
    srv.add_argument("--out", type=Path, default=None, help="dataset directory")
    common(srv)

    rep = sub.add_parser("replay", help="verify an episode bit for bit")
    rep.add_argument("episode", type=Path)
    common(rep)

    rx = sub.add_parser("render-export", help="export one stored frame")
    rx.add_argument("episode", type=Path)
    rx.add_argument("--camera", default=None)
    rx.add_argument("--step", type=int, default=None)
    rx.add_argument("--out", type=Path, default=None)
    common(rx)
    return p


# ---------------------------------------------------------------------------
# config resolution

def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise CliError("config file must hold a JSON object")
    return obj


def _get(args, cfg: dict, key: str, default=None):
    """Flag beats config file beats default."""
    val = getattr(args, key, None)
    if val is not None:
        return val
    if key in cfg:
        return cfg[key]
    return default


def resolve_port(flag: int | None, cfg: dict, default: int = 8765) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("TRIRIG_PORT")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"TRIRIG_PORT is not an integer: {env!r}") from None
    if "port" in cfg:
        return int(cfg["port"])
    return default


def _parse_noise(value) -> tuple[float, float]:
    if isinstance(value, (list, tuple)):
        vals = [float(v) for v in value]
    else:
        try:
            vals = [float(v) for v in str(value).split(",")]
        except ValueError:
            raise CliError(f"bad --noise-std {value!r}") from None
    if len(vals) == 1:
        vals = [vals[0], vals[0]]
    if len(vals) != 2 or any(v < 0 for v in vals):
        raise CliError("--noise-std takes one value or a trans,rot pair, both >= 0")
    return (vals[0], vals[1])


def _parse_seeds(value) -> list[int]:
    if isinstance(value, list):
        items = value
    else:
        items = str(value).split(",")
    try:
        return [int(v) for v in items]
    except (TypeError, ValueError):
        raise CliError(f"bad --seeds {value!r}") from None


def _parse_cameras(value, rig) -> tuple[str, ...]:
    cams = tuple(value) if isinstance(value, (list, tuple)) else tuple(
        c.strip() for c in str(value).split(",") if c.strip())
    unknown = [c for c in cams if c not in rig.cameras]
    if unknown:
        raise CliError(f"unknown cameras: {', '.join(unknown)}; "
                       f"valid ids: {', '.join(rig.cameras)}")
    return cams


def _check_task(name: str) -> str:
    from .tasks import TASK_NAMES

    if name not in TASK_NAMES:
        raise CliError(f"unknown task {name!r}; valid tasks: {', '.join(TASK_NAMES)}")
    return name


# ---------------------------------------------------------------------------
# subcommands

def _cmd_record(args) -> int:
    from .episode import save_episode
    from .policy import DEFAULT_NOISE_STD, run_teleop_episode
    from .rig import CAMERA_IDS, default_rig

    cfg = _load_config(args.config)
    rig = default_rig()
    task = _check_task(_get(args, cfg, "task", "peg_insertion"))
    episodes = _get(args, cfg, "episodes")
    seeds_raw = _get(args, cfg, "seeds")
    if seeds_raw is not None:
        seeds = _parse_seeds(seeds_raw)
        if episodes is not None and int(episodes) != len(seeds):
            raise CliError(f"--episodes {episodes} does not match {len(seeds)} seeds")
    else:
        if episodes is None:
            raise CliError("record needs --episodes or --seeds")
        if int(episodes) < 0:
            raise CliError("--episodes must be >= 0")
        seeds = list(range(int(episodes)))
    cameras = _parse_cameras(_get(args, cfg, "cameras", list(CAMERA_IDS)), rig)
    noise = _parse_noise(_get(args, cfg, "noise_std", list(DEFAULT_NOISE_STD)))
    out = Path(_get(args, cfg, "out", "dataset"))

    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for seed in seeds:
        res = run_teleop_episode(rig, task, seed, noise_std=noise,
                                 record_cameras=cameras)
        name = f"{task}_{seed:05d}.tri"
        save_episode(res.episode, out / name)
        entries.append({
            "file": name,
            "seed": seed,
            "steps": res.episode.n_steps,
            "success": res.success,
            "stages": list(res.stage_flags),
        })
        print(f"{name}: {res.episode.n_steps} steps, "
              f"{'success' if res.success else 'FAILED'}", file=sys.stderr)
    summary = {
        "task": task,
        "noise_std": list(noise),
        "cameras": list(cameras),
        "count": len(entries),
        "episodes": entries,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(entries)} episodes to {out}")
    return 0


def _load_dataset(dataset: Path):
    from .episode import load_episode

    if not dataset.is_dir():
        raise CliError(f"dataset directory not found: {dataset}")
    files = sorted(dataset.glob("*.tri"))
    if not files:
        raise CliError(f"no .tri episodes in {dataset}")
    return [load_episode(f) for f in files]


def _cmd_eval(args) -> int:
    from .policy import CAMERA_CONFIGS, CHUNK_SIZE, config_cameras, evaluate_configs
    from .rig import default_rig

    cfg = _load_config(args.config)
    rig = default_rig()
    rollouts = int(_get(args, cfg, "rollouts", 50))
    if rollouts < 1:
        raise CliError("--rollouts must be >= 1")
    configs_raw = _get(args, cfg, "configs")
    if configs_raw is None:
        configs = CAMERA_CONFIGS
    else:
        configs = tuple(c.strip() for c in str(configs_raw).split(",") if c.strip()) \
            if not isinstance(configs_raw, (list, tuple)) else tuple(configs_raw)
        bad = [c for c in configs if c not in CAMERA_CONFIGS]
        if bad:
            raise CliError(f"unknown configurations: {', '.join(bad)}; "
                           f"valid: {', '.join(CAMERA_CONFIGS)}")
    chunk = int(_get(args, cfg, "chunk_size", CHUNK_SIZE))
    period = int(_get(args, cfg, "query_period", 25))
    variants = int(_get(args, cfg, "variants", 1))
    out = Path(_get(args, cfg, "out", args.dataset))

    episodes = _load_dataset(args.dataset)
    task = _get(args, cfg, "task", episodes[0].manifest.task)
    _check_task(task)
    wrong = [i for i, ep in enumerate(episodes) if ep.manifest.task != task]
    if wrong:
        raise CliError(f"dataset mixes tasks; episode index {wrong[0]} "
                       f"is {episodes[wrong[0]].manifest.task!r}, expected {task!r}")
    have = set(episodes[0].frames)
    needed = sorted({c for name in configs for c in config_cameras(name)})
    missing = [c for c in needed if c not in have]
    if missing:
        raise CliError(f"dataset lacks cameras required by the requested "
                       f"configurations: {', '.join(missing)}")

    table = evaluate_configs(rig, episodes, task, rollouts, configs=configs,
                             chunk_size=chunk, query_period=period, variants=variants)
    out.mkdir(parents=True, exist_ok=True)
    text = table.format_text()
    (out / f"eval_{task}.json").write_text(
        json.dumps(table.to_json_dict(), indent=2, sort_keys=True) + "\n")
    (out / f"eval_{task}.txt").write_text(text + "\n")
    print(text)
    return 0


def _cmd_serve(args) -> int:
    from .server import ServerConfig, serve_forever

    cfg = _load_config(args.config)
    port = resolve_port(args.port, cfg)
    host = _get(args, cfg, "host", "127.0.0.1")
    task = _check_task(_get(args, cfg, "task", "peg_insertion"))
    out = _get(args, cfg, "out")
    serve_forever(cfg=ServerConfig(host=host, port=port, dataset_dir=out,
                                   default_task=task))
    return 0


def _cmd_replay(args) -> int:
    from .episode import EpisodeFormatError, load_episode, replay_episode
    from .rig import default_rig

    try:
        ep = load_episode(args.episode)
    except FileNotFoundError:
        raise CliError(f"episode file not found: {args.episode}") from None
    except EpisodeFormatError as exc:
        raise CliError(f"unreadable episode: {exc}") from None
    report = replay_episode(ep, default_rig())
    if report.ok:
        print(f"replay clean: {report.steps_checked} steps bit-identical")
        return 0
    step, fld, detail = report.first_divergence
    raise CliError(f"replay diverged at step {step} ({fld}): {detail}")


def _cmd_render_export(args) -> int:
    from .episode import EpisodeFormatError, export_frame, load_episode

    cfg = _load_config(args.config)
    camera = _get(args, cfg, "camera")
    if camera is None:
        raise CliError("render-export needs --camera")
    step = int(_get(args, cfg, "step", 0))
    out = Path(_get(args, cfg, "out", f"{camera}_{step:05d}.png"))
    try:
        ep = load_episode(args.episode)
        export_frame(ep, camera, step, out)
    except FileNotFoundError:
        raise CliError(f"episode file not found: {args.episode}") from None
    except EpisodeFormatError as exc:
        raise CliError(str(exc)) from None
    print(f"wrote {out}")
    return 0


_COMMANDS = {
    "record": _cmd_record,
    "eval": _cmd_eval,
    "serve": _cmd_serve,
    "replay": _cmd_replay,
    "render-export": _cmd_render_export,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise CliError("no command given; try --help")
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # anything else is a bug, not user error
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
