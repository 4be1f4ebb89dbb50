import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_transform(rng):
    from scipy.spatial.transform import Rotation

    from gtf.types import RigidTransform

    R = Rotation.random(random_state=rng).as_matrix()
    return RigidTransform.from_matrix(R, rng.uniform(-100, 100, 3))
