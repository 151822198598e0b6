"""Tangent-constrained proximal subproblem on the Stiefel manifold.

Solves, for a point X in St(n, p), gradient g, step t and weight lam:

    min_{v in T_X}  <g, v> + ||v||^2 / (2t) + lam ||X + v||_1

by dualizing the tangent constraint X^T v + v^T X = 0 with a symmetric
multiplier and driving the constraint residual to zero with a semismooth
Newton method (conjugate-gradient solves on the generalized Jacobian,
backtracking on the residual norm).  A projected subgradient fallback
guarantees a feasible answer when Newton stalls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .manifolds import Stiefel, _sym

__all__ = ["ProxResult", "solve_prox_tangent", "prox_objective"]

TOL_KKT = 1e-8
MAX_NEWTON = 100
FALLBACK_ITERS = 5000


@dataclass
class ProxResult:
    v: np.ndarray
    dual: np.ndarray
    kkt_residual: float
    iterations: int
    fallback_used: bool = False


def prox_objective(x: np.ndarray, g: np.ndarray, t: float, lam: float, v: np.ndarray) -> float:
    return float(np.sum(g * v) + np.sum(v * v) / (2.0 * t) + lam * np.abs(x + v).sum())


def _soft(z: np.ndarray, c: float) -> np.ndarray:
    return np.sign(z) * np.maximum(np.abs(z) - c, 0.0)


def _constraint(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    return x.T @ v + v.T @ x


def _cg(op, rhs: np.ndarray, ridge: float, tol: float, max_iter: int = 200) -> np.ndarray:
    sol = np.zeros_like(rhs)
    r = rhs.copy()
    p = r.copy()
    rs = float(np.sum(r * r))
    target = tol * math.sqrt(rs) if rs > 0 else 0.0
    for _ in range(max_iter):
        if math.sqrt(rs) <= target:
            break
        ap = op(p) + ridge * p
        denom = float(np.sum(p * ap))
        if denom <= 0:
            break
        alpha = rs / denom
        sol += alpha * p
        r -= alpha * ap
        rs_new = float(np.sum(r * r))
        p = r + (rs_new / rs) * p
        rs = rs_new
    return sol


def _subgradient_fallback(x, g, t, lam, man: Stiefel, iters: int) -> np.ndarray:
    v = man.proj(x, -t * g)
    best_v, best_obj = v, prox_objective(x, g, t, lam, v)
    for k in range(iters):
        sub = g + v / t + lam * np.sign(x + v)
        v = man.proj(x, v - (2.0 * t / (k + 2)) * sub)
        obj = prox_objective(x, g, t, lam, v)
        if obj < best_obj:
            best_v, best_obj = v, obj
    return best_v


def solve_prox_tangent(
    manifold: Stiefel,
    x: np.ndarray,
    g: np.ndarray,
    t: float,
    lam: float,
    tol: float = TOL_KKT,
    max_newton: int = MAX_NEWTON,
) -> ProxResult:
    """Minimize <g,v> + ||v||^2/(2t) + lam ||x+v||_1 over the tangent space."""
    if not isinstance(manifold, Stiefel):
        raise ValueError("the proximal subproblem is defined on the Stiefel manifold")
    if t <= 0:
        raise ValueError("prox step must be positive")
    if lam < 0:
        raise ValueError("l1 weight must be nonnegative")
    p = manifold.p

    if lam == 0.0:
        v = -t * manifold.proj(x, g)
        res = float(np.linalg.norm(_constraint(x, v)))
        return ProxResult(v=v, dual=np.zeros((p, p)), kkt_residual=res, iterations=0)

    c = t * lam

    def v_of(gamma):
        return _soft(x - t * (g + x @ gamma), c) - x

    gamma = np.zeros((p, p))
    v = v_of(gamma)
    e = _constraint(x, v)
    res = float(np.linalg.norm(e))
    for it in range(max_newton):
        if res <= tol:
            return ProxResult(v=v, dual=gamma, kkt_residual=res, iterations=it)
        mask = (np.abs(x - t * (g + x @ gamma)) > c).astype(float)
        if not mask.any():
            break

        def jac(delta):
            w = mask * (x @ delta)
            return x.T @ w + w.T @ x

        rhs = e / t
        ridge = 1e-10 * max(1.0, float(np.abs(rhs).max()))
        delta = _cg(jac, rhs, ridge=ridge, tol=min(0.1, res))
        if not np.isfinite(delta).all() or not delta.any():
            break
        step = 1.0
        improved = False
        for _ in range(30):
            cand = _sym(gamma + step * delta)
            v_new = v_of(cand)
            e_new = _constraint(x, v_new)
            res_new = float(np.linalg.norm(e_new))
            if res_new < res:
                gamma, v, e, res = cand, v_new, e_new, res_new
                improved = True
                break
            step *= 0.5
        if not improved:
            break

    if res <= tol:
        return ProxResult(v=v, dual=gamma, kkt_residual=res, iterations=max_newton)

    v = _subgradient_fallback(x, g, t, lam, manifold, FALLBACK_ITERS)
    res = float(np.linalg.norm(_constraint(x, v)))
    return ProxResult(v=v, dual=gamma, kkt_residual=res, iterations=max_newton, fallback_used=True)
