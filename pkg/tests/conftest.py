import numpy as np
import pytest

from videomotion.body import build_default_body
from videomotion.motion import generate_procedural_motion


@pytest.fixture(scope="session")
def body():
    return build_default_body(seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def random_motion(rng, frames=16, scale=0.4, fps=30.0):
    """Unstructured random motion respecting FramePose invariants."""
    from videomotion.body import canonicalize_axis_angle
    from videomotion.motion import MotionSequence
    theta = canonicalize_axis_angle(
        rng.normal(0.0, scale, size=(frames, 21, 3))).reshape(frames, 63)
    beta = rng.uniform(-1.5, 1.5, size=(1, 10)).repeat(frames, axis=0)
    phi = canonicalize_axis_angle(rng.normal(0.0, scale, size=(frames, 3)))
    tau = rng.normal(0.0, 0.5, size=(frames, 3))
    return MotionSequence(theta.astype(np.float32), beta.astype(np.float32),
                          phi.astype(np.float32), tau.astype(np.float32), fps)
