"""Shared fixtures: small synthetic scenes sized for fast unit tests."""

import numpy as np
import pytest

from mocapfuse import synth


def small_scene(motion=None, **overrides):
    """A reduced-resolution scene that renders in milliseconds."""
    kw = dict(
        camera_count=4,
        camera_distance_mm=2800.0,
        camera_height_mm=1500.0,
        image_width=320,
        image_height=240,
        focal_px=300.0,
        sigma_px=4.0,
        heatmap_scale=1.0,
    )
    kw.update(overrides)
    if motion is None:
        motion = synth.MotionProgram(curves={}, hold_frames=0, name="still")
    return synth.SceneSpec(motion=motion, **kw)


@pytest.fixture(scope="session")
def still_spec():
    return small_scene()


@pytest.fixture(scope="session")
def still_rig(still_spec):
    return synth.build_rig(still_spec)


@pytest.fixture(scope="session")
def still_provider(still_spec, still_rig):
    return synth.SyntheticProvider(still_spec, still_rig, n_frames=200)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
