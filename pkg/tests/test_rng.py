import numpy as np
import pytest

from manifold_zo.rng import NormalStream, key_indices, key_normals, key_uniforms, pairwise_sum


def test_stream_is_deterministic():
    a = NormalStream(7, (1, 2)).normals(0, 64)
    b = NormalStream(7, (1, 2)).normals(0, 64)
    assert np.array_equal(a, b)


def test_stream_paths_are_independent():
    a = NormalStream(7, (1, 2)).normals(0, 64)
    b = NormalStream(7, (1, 3)).normals(0, 64)
    c = NormalStream(8, (1, 2)).normals(0, 64)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


@pytest.mark.parametrize("split", [1, 3, 4, 37, 99])
def test_stream_slices_match_serial(split):
    full = NormalStream(42, (5,)).normals(0, 100)
    head = NormalStream(42, (5,)).normals(0, split)
    tail = NormalStream(42, (5,)).normals(split, 100 - split)
    assert np.array_equal(full, np.concatenate([head, tail]))


def test_stream_normals_are_standard():
    z = NormalStream(0, ()).normals(0, 200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01


def test_key_variates_are_reproducible_and_distinct():
    keys = np.arange(1000, dtype=np.uint64)
    a = key_normals(3, keys)
    b = key_normals(3, keys)
    assert np.array_equal(a, b)
    assert len(np.unique(a)) == len(keys)
    assert not np.array_equal(a, key_normals(4, keys))


def test_key_uniforms_in_unit_interval():
    u = key_uniforms(11, np.arange(100_000, dtype=np.uint64))
    assert u.min() > 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.005


def test_key_indices_uniform():
    idx = key_indices(5, np.arange(120_000, dtype=np.uint64), 6)
    assert idx.min() >= 0 and idx.max() < 6
    counts = np.bincount(idx, minlength=6)
    assert counts.min() > 0.9 * 20_000


def test_pairwise_sum_matches_reference():
    rng = np.random.default_rng(0)
    terms = rng.standard_normal((1000, 4, 3))
    assert np.allclose(pairwise_sum(terms), terms.sum(axis=0), atol=1e-12)


def test_pairwise_sum_is_a_fixed_tree():
    rng = np.random.default_rng(1)
    terms = rng.standard_normal((129, 2, 2))

    def reference(block):
        if block.shape[0] == 1:
            return block[0]
        half = block.shape[0] // 2
        merged = block[0 : 2 * half : 2] + block[1 : 2 * half : 2]
        if block.shape[0] % 2:
            merged = np.concatenate([merged, block[-1:]], axis=0)
        return reference(merged)

    assert np.array_equal(pairwise_sum(terms), reference(terms))
