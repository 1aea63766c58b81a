import numpy as np
import pytest

from savdet.harness.synth import random_face_spec, synth_face


@pytest.fixture(scope="session")
def face():
    """One deterministic synthetic face: (image, landmarks)."""
    return synth_face(random_face_spec(7))


@pytest.fixture(scope="session")
def many_faces():
    return [synth_face(random_face_spec(s)) for s in range(30)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
