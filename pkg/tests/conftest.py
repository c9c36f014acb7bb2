import numpy as np
import pytest

from uwbcorr import Anchor, Box, ChannelConfig, Environment, generate_dataset


@pytest.fixture(scope="session")
def small_env():
    """Well-conditioned 4-anchor room with one central obstacle."""
    anchors = (
        Anchor(1, [0.5, 0.5, 2.5]),
        Anchor(2, [9.5, 0.5, 2.8]),
        Anchor(3, [9.5, 9.5, 2.6]),
        Anchor(4, [0.5, 9.5, 2.9]),
    )
    return Environment(
        anchors=anchors,
        obstacles=(Box([4.0, 4.0, 0.0], [6.0, 6.0, 2.0]),),
        extent=(10.0, 10.0, 3.0),
    )


@pytest.fixture(scope="session")
def open_env(small_env):
    """Same room without obstacles: every link is line-of-sight."""
    return Environment(anchors=small_env.anchors, obstacles=(), extent=small_env.extent)


@pytest.fixture(scope="session")
def small_dataset(small_env):
    rng = np.random.default_rng(11)
    points = [np.array([x, y, 1.0]) for x, y in rng.uniform(1.0, 9.0, size=(12, 2))]
    return generate_dataset(small_env, points, 0.0, 21, ChannelConfig())


@pytest.fixture(scope="session")
def clean_dataset(open_env):
    """LOS-only, noise-free, single-tap channels: exact timestamps."""
    rng = np.random.default_rng(13)
    points = [np.array([x, y, 1.0]) for x, y in rng.uniform(1.0, 9.0, size=(10, 2))]
    cfg = ChannelConfig(snr_db=None, multipath=False)
    return generate_dataset(open_env, points, 0.0, 22, cfg)
