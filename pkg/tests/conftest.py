import numpy as np
import pytest

from manifold_zo import SPD, Grassmann, Sphere, Stiefel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def all_manifolds():
    return [
        Sphere(10),
        Sphere(6, radius=2.5),
        Stiefel(5, 2),
        Stiefel(15, 5),
        Grassmann(6, 2),
        SPD(3, metric="euclidean"),
        SPD(3, metric="affine-invariant"),
    ]


def manifold_ids():
    return [m.name for m in all_manifolds()]
