import numpy as np
import pytest

from manifold_zo import ZeroOrderOracle


def _quad(xs):
    return np.einsum("...ij,...ij->...", xs, xs)


def test_deterministic_ignores_keys_and_counts():
    o = ZeroOrderOracle(_quad)
    x = np.ones((3, 1))
    assert o.eval(x, 0) == o.eval(x, 12345) == 3.0
    assert o.calls == 2
    o.eval_batch(np.ones((5, 3, 1)), np.arange(5))
    assert o.calls == 7
    assert not o.stochastic


def test_additive_noise_reproducible_by_key():
    o = ZeroOrderOracle(_quad, mode="additive-noise", seed=9, noise_sd=0.5)
    x = np.ones((3, 1))
    a = o.eval(x, 7)
    b = o.eval(x, 7)
    c = o.eval(x, 8)
    assert a == b
    assert a != c
    assert o.stochastic


def test_additive_noise_statistics():
    o = ZeroOrderOracle(_quad, mode="additive-noise", seed=2, noise_sd=0.25)
    x = np.ones((4, 1))
    keys = np.arange(100_000, dtype=np.uint64)
    vals = o.eval_batch(x, keys)
    noise = vals - 4.0
    assert abs(noise.std() - 0.25) < 0.03 * 0.25
    assert abs(noise.mean()) < 4 * 0.25 / np.sqrt(len(keys))


def test_zero_noise_is_deterministic_mode():
    o = ZeroOrderOracle(_quad, mode="additive-noise", seed=2, noise_sd=0.0)
    x = np.ones((2, 1))
    assert o.eval(x, 1) == o.eval(x, 2) == 2.0
    assert not o.stochastic


def test_finite_sum_key_selects_terms():
    terms = np.array([1.0, 2.0, 4.0])

    def term_batch(xs, idx):
        return terms[idx]

    o = ZeroOrderOracle(_quad, mode="finite-sum", seed=0, num_terms=3, term_batch=term_batch)
    keys = np.arange(60_000, dtype=np.uint64)
    vals = o.eval_batch(np.ones((1, 1)), keys)
    assert set(np.unique(vals)) == {1.0, 2.0, 4.0}
    # uniform index selection recovers the mean of the summands
    assert abs(vals.mean() - terms.mean()) < 0.02
    assert o.stochastic


def test_single_term_finite_sum_counts_as_deterministic():
    o = ZeroOrderOracle(_quad, mode="finite-sum", seed=0, num_terms=1,
                        term_batch=lambda xs, idx: _quad(xs))
    assert not o.stochastic
    assert o.eval(np.ones((2, 1)), 3) == 2.0


def test_bad_configuration_raises():
    with pytest.raises(ValueError):
        ZeroOrderOracle(_quad, mode="nonsense")
    with pytest.raises(ValueError):
        ZeroOrderOracle(_quad, mode="finite-sum", num_terms=0, term_batch=lambda x, i: 0)
    o = ZeroOrderOracle(_quad)
    with pytest.raises(ValueError):
        o.eval_batch(np.ones((3, 2, 1)), np.arange(4))
