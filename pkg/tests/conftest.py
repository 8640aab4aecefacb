import numpy as np
import pytest

from vipose.geometry import Pose, Twist, pseudo_exp


def random_twist(rng, max_angle=np.pi, max_trans=0.5):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    return Twist(rng.uniform(-max_trans, max_trans, 3), axis * angle)


def random_pose(rng, **kw):
    return pseudo_exp(random_twist(rng, **kw))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
