import numpy as np
import pytest

cvxpy = pytest.importorskip("cvxpy")

from manifold_zo import Sphere, Stiefel, solve_prox_tangent
from manifold_zo.prox import prox_objective
from manifold_zo.rng import NormalStream


def cvx_reference(x, g, t, lam):
    """Independent convex solve of the tangent prox subproblem."""
    v = cvxpy.Variable(x.shape)
    objective = (
        cvxpy.sum(cvxpy.multiply(g, v))
        + cvxpy.sum_squares(v) / (2 * t)
        + lam * cvxpy.norm1(x + v)
    )
    constraints = [x.T @ v + v.T @ x == 0]
    prob = cvxpy.Problem(cvxpy.Minimize(objective), constraints)
    prob.solve(
        solver=cvxpy.CLARABEL,
        tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12,
    )
    return np.asarray(v.value)


def _instance(seed, n=4, p=2):
    man = Stiefel(n, p)
    gen = NormalStream(seed, (0,)).generator()
    x = man.random_point(gen)
    g = gen.standard_normal((n, p))
    return man, x, g


def test_zero_weight_closed_form():
    man, x, g = _instance(0)
    res = solve_prox_tangent(man, x, g, 0.5, 0.0)
    assert np.allclose(res.v, -0.5 * man.proj(x, g), atol=1e-14)
    assert res.kkt_residual <= 1e-12
    assert not res.fallback_used


@pytest.mark.parametrize("seed", range(10))
def test_matches_convex_reference(seed):
    man, x, g = _instance(seed)
    res = solve_prox_tangent(man, x, g, 0.5, 0.1)
    ref = cvx_reference(x, g, 0.5, 0.1)
    assert not res.fallback_used
    assert res.kkt_residual <= 1e-8
    assert np.abs(res.v - ref).max() < 1e-5


def test_nonexpansiveness():
    man = Stiefel(4, 2)
    gen = NormalStream(3, (0,)).generator()
    t = 0.5
    for _ in range(100):
        x = man.random_point(gen)
        g1 = gen.standard_normal((4, 2))
        g2 = gen.standard_normal((4, 2))
        v1 = solve_prox_tangent(man, x, g1, t, 0.1).v
        v2 = solve_prox_tangent(man, x, g2, t, 0.1).v
        lhs = float(np.linalg.norm(v1 - v2))
        rhs = t * float(np.linalg.norm(g1 - g2)) + 2e-8
        assert lhs <= rhs


def test_solution_beats_feasible_perturbations():
    man, x, g = _instance(11)
    t, lam = 0.5, 0.3
    res = solve_prox_tangent(man, x, g, t, lam)
    base = prox_objective(x, g, t, lam, res.v)
    gen = NormalStream(4, (0,)).generator()
    for _ in range(1000):
        delta = man.sample_tangent_gaussian(x, gen)
        delta *= 1e-3 / float(man.norm(x, delta))
        assert base <= prox_objective(x, g, t, lam, res.v + delta) + 1e-12


def test_feasibility_of_solution():
    man, x, g = _instance(5)
    res = solve_prox_tangent(man, x, g, 0.3, 0.4)
    assert float(np.linalg.norm(x.T @ res.v + res.v.T @ x)) <= 1e-8


def test_fallback_path_is_feasible_and_flagged():
    man, x, g = _instance(7)
    res = solve_prox_tangent(man, x, g, 0.5, 0.1, max_newton=0)
    assert res.fallback_used
    assert float(np.linalg.norm(x.T @ res.v + res.v.T @ x)) <= 1e-6
    ref = cvx_reference(x, g, 0.5, 0.1)
    # subgradient fallback is coarse but must be in the neighborhood
    assert np.abs(res.v - ref).max() < 1e-2


def test_input_validation():
    man, x, g = _instance(1)
    with pytest.raises(ValueError):
        solve_prox_tangent(man, x, g, -1.0, 0.1)
    with pytest.raises(ValueError):
        solve_prox_tangent(man, x, g, 0.5, -0.1)
    with pytest.raises(ValueError):
        solve_prox_tangent(Sphere(4), x, g, 0.5, 0.1)
