"""Test fixture: run a teleoperation server and report per-session stats.

Prints one JSON line {"host", "port", "dataset_dir"} once the server is
listening.  Each "stats" line on stdin gets one JSON line back with every
session's tick statistics and last saved episode.  EOF (or "quit") prints a
final stats line and exits.
"""

import json
import sys
import tempfile

from tririg.kinematics import tool_pose
from tririg.rig import AV, SLICES
from tririg.server import ServerConfig, TeleopServer


def av_tool_position(server: TeleopServer, session) -> list | None:
    state = session._sim and session._state
    if state is None:
        return None
    t = tool_pose(server.rig.chains[AV], state.qpos[SLICES[AV]]).t
    return [float(v) for v in t]


def stats_line(server: TeleopServer) -> str:
    out = []
    for s in server.sessions:
        jp = s.stats.jitter_percentiles()
        out.append({
            "id": s.session_id,
            "role": s.role,
            "ticks": s.stats.ticks,
            "jitter": jp,
            "missed_ticks": s.stats.missed_ticks,
            "dropped_frames": s.stats.dropped_frames,
            "rejected_poses": s.stats.rejected_poses,
            "episode": str(s.last_episode_path) if s.last_episode_path else None,
            "av_tool": av_tool_position(server, s),
        })
    return json.dumps({"sessions": out}, sort_keys=True)


def main() -> None:
    dataset_dir = tempfile.mkdtemp(prefix="console_episodes_")
    server = TeleopServer(cfg=ServerConfig(dataset_dir=dataset_dir))
    host, port = server.start()
    print(json.dumps({"host": host, "port": port, "dataset_dir": dataset_dir}), flush=True)
    try:
        for line in sys.stdin:
            cmd = line.strip()
            if cmd == "stats":
                print(stats_line(server), flush=True)
            elif cmd == "quit":
                break
    finally:
        print(stats_line(server), flush=True)
        server.stop()


if __name__ == "__main__":
    main()
