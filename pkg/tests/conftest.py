import numpy as np
import pytest

from hypersample.geometry import CameraIntrinsics, Pose


def random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def random_pose(rng, scale=1.0) -> Pose:
    return Pose(random_rotation(rng), rng.uniform(-scale, scale, 3))


def small_rotation(rng, max_angle=0.2) -> np.ndarray:
    from scipy.spatial.transform import Rotation

    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return Rotation.from_rotvec(axis * rng.uniform(0, max_angle)).as_matrix()


def random_intrinsics(rng, w=None, h=None) -> CameraIntrinsics:
    w = w or int(rng.integers(4, 65))
    h = h or int(rng.integers(4, 65))
    f = rng.uniform(0.5, 2.0) * max(w, h)
    return CameraIntrinsics(f, f * rng.uniform(0.8, 1.2), rng.uniform(0, w - 1), rng.uniform(0, h - 1), w, h)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
