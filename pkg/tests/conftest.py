import numpy as np
import pytest

from tririg.camera import warmup
from tririg.rig import CAMERA_IDS, default_rig


@pytest.fixture(scope="session")
def rig():
    r = default_rig()
    warmup(r)  # compile render kernels outside any timed assertion
    return r


@pytest.fixture(scope="session")
def peg_episode(rig):
    """One clean six-camera demonstration, shared by store/policy tests."""
    from tririg.policy import run_teleop_episode

    res = run_teleop_episode(rig, "peg_insertion", seed=0, noise_std=(0.0, 0.0),
                             record_cameras=CAMERA_IDS)
    assert res.success
    return res.episode


@pytest.fixture(scope="session")
def needle_dataset(rig):
    """Small noisy thread_needle dataset for neighbor / ablation tests."""
    from tririg.policy import run_teleop_episode

    episodes = []
    for seed in range(4):
        res = run_teleop_episode(rig, "thread_needle", seed=seed,
                                 record_cameras=CAMERA_IDS)
        episodes.append(res.episode)
    return episodes
