"""Cubic-regularized Newton subproblem via Lanczos and a secular equation.

Minimizes  m(eta) = <g, eta> + <eta, H eta>/2 + w ||eta||^3 / 6  over the
tangent space, where H is any self-adjoint operator given by its action
(typically the rank-structured zeroth-order Hessian estimate).  A Krylov
basis with full reorthogonalization reduces the problem to a tridiagonal
one, whose global minimizer is found from the optimality system

    (T + lam I) y = -||g|| e_1,   lam = w ||y|| / 2,   T + lam I >= 0

by safeguarded Newton/bisection on lam; the hard case (gradient orthogonal
to the most negative eigenspace) is handled by augmenting with the
estimated eigenvector, and a Cauchy-point fallback flags instances where
the certificates still fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .manifolds import Manifold
from .rng import NormalStream

__all__ = ["CubicSolution", "solve_cubic", "lanczos_basis"]

TOL_CUBIC = 1e-7
SECULAR_TOL = 1e-10


@dataclass
class CubicSolution:
    step: np.ndarray
    multiplier: float
    krylov_dim: int
    residual: float
    shifted_min_eig: float
    model_value: float
    basis_defect: float
    hard_case: bool = False
    cauchy_fallback: bool = False


def lanczos_basis(apply_fn, manifold: Manifold, x: np.ndarray, v0: np.ndarray, max_dim: int):
    """Lanczos tridiagonalization with full (twice) reorthogonalization.

    Returns the stacked orthonormal basis (k, *ambient) and the diagonal /
    off-diagonal of the reduced tridiagonal matrix.
    """
    nrm = float(manifold.norm(x, v0))
    if nrm == 0.0:
        raise ValueError("Lanczos start vector is zero")
    basis = [v0 / nrm]
    alphas: list[float] = []
    betas: list[float] = []
    for j in range(max_dim):
        w = apply_fn(basis[j])
        alphas.append(float(manifold.inner(x, basis[j], w)))
        stacked = np.stack(basis)
        for _ in range(2):
            coeff = manifold.inner(x, stacked, w)
            w = w - np.einsum("k,k...->...", coeff, stacked)
        beta = float(manifold.norm(x, w))
        if j + 1 == max_dim or beta <= 1e-12 * max(1.0, max(abs(a) for a in alphas)):
            break
        betas.append(beta)
        basis.append(w / beta)
    return np.stack(basis), np.asarray(alphas), np.asarray(betas)


def _solve_secular(theta: np.ndarray, bhat: np.ndarray, weight: float):
    """Global minimizer of  b^T y + y^T diag(theta) y / 2 + w ||y||^3 / 6.

    Works in the eigenbasis of the reduced matrix.  Returns (y, lam, hard),
    where lam is the multiplier with (theta + lam) y = -b, lam = w ||y|| / 2
    and theta_min + lam >= 0; the largest admissible root is taken.
    """
    tmin = float(theta[0])
    lam_floor = max(0.0, -tmin)
    eig_gap = 1e-10 * max(1.0, float(np.abs(theta).max()))
    on_min = theta <= tmin + eig_gap
    b_scale = float(np.linalg.norm(bhat))
    # components that vanish on the bottom eigenspace would be 0/0 at the
    # floor; drop them from the smooth part explicitly
    negligible = np.abs(bhat) <= 1e-13 * max(1.0, b_scale)
    smooth = np.where(on_min & negligible, 0.0, bhat)
    live = smooth != 0.0
    hard_possible = bool(np.all(negligible[on_min]))

    def y_of(lam):
        out = np.zeros_like(smooth)
        with np.errstate(divide="ignore"):
            out[live] = -smooth[live] / (theta[live] + lam)
        return out

    def ynorm(lam):
        return float(np.linalg.norm(y_of(lam)))

    def gap_fn(lam):
        return lam - 0.5 * weight * ynorm(lam)

    if tmin < 0.0 and hard_possible and gap_fn(lam_floor) >= 0.0:
        # hard case: pseudo-inverse solution plus eigenvector augmentation
        lam = lam_floor
        y = y_of(lam)
        extra = (2.0 * lam / weight) ** 2 - float(np.dot(y, y))
        y[int(np.argmax(on_min))] += math.sqrt(max(extra, 0.0))
        return y, lam, True

    lo = lam_floor  # gap_fn(lo) <= 0 (possibly -inf at a pole)
    hi = max(1.0, 2.0 * lam_floor)
    for _ in range(200):
        if gap_fn(hi) > 0.0:
            break
        hi *= 2.0
    if gap_fn(lo) >= -SECULAR_TOL:
        return y_of(lo), lo, False
    lam = 0.5 * (lo + hi)
    for _ in range(300):
        g = gap_fn(lam)
        if abs(g) <= SECULAR_TOL:
            break
        if g > 0.0:
            hi = lam
        else:
            lo = lam
        r = ynorm(lam)
        if r > 0.0 and np.isfinite(r):
            drdlam = -float(np.sum(smooth[live] ** 2 / (theta[live] + lam) ** 3)) / r
            newton = lam - g / (1.0 - 0.5 * weight * drdlam)
        else:
            newton = 0.5 * (lo + hi)
        lam = newton if lo < newton < hi else 0.5 * (lo + hi)
    return y_of(lam), float(lam), False


def _cauchy_point(apply_fn, manifold, x, g, gnorm, weight):
    h = float(manifold.inner(x, g, apply_fn(g))) / gnorm**2
    s = (-h + math.sqrt(h * h + 2.0 * weight * gnorm)) / weight
    return -(s / gnorm) * g


def solve_cubic(
    apply_fn,
    manifold: Manifold,
    x: np.ndarray,
    g: np.ndarray,
    weight: float,
    krylov_dim: int = 50,
    tol: float = TOL_CUBIC,
    seed: int = 0,
) -> CubicSolution:
    """Solve the cubic model over T_xM; see the module docstring.

    ``apply_fn`` must be self-adjoint on the tangent space at x.
    """
    if weight <= 0:
        raise ValueError("cubic weight must be positive")
    q = max(1, min(krylov_dim, manifold.dim))
    gnorm = float(manifold.norm(x, g))
    if gnorm > 0.0:
        v0 = g
    else:
        z = NormalStream(seed, (7,)).normals(0, manifold.normals_per_sample)
        v0 = manifold.sample_tangent(x, z)
    basis, alphas, betas = lanczos_basis(apply_fn, manifold, x, v0, q)
    k = basis.shape[0]
    tmat = np.diag(alphas)
    if k > 1:
        tmat += np.diag(betas, 1) + np.diag(betas, -1)
    theta, svec = np.linalg.eigh(tmat)

    b = np.zeros(k)
    b[0] = gnorm
    bhat = svec.T @ b
    y_eig, lam, hard = _solve_secular(theta, bhat, weight)
    y = svec @ y_eig
    eta = manifold.proj(x, np.einsum("k,k...->...", y, basis))

    def model(v):
        hv = apply_fn(v)
        n = float(manifold.norm(x, v))
        return float(manifold.inner(x, g, v) + 0.5 * manifold.inner(x, v, hv)) + weight * n**3 / 6.0

    def certificates(v, mult):
        r = apply_fn(v) + mult * v + g
        proj_coeff = manifold.inner(x, basis, r)
        res = float(np.linalg.norm(proj_coeff))
        return res, float(theta[0] + mult)

    residual, shifted = certificates(eta, lam)
    gram = np.einsum("iab,jab->ij", basis, basis)
    defect = float(np.linalg.norm(gram - np.eye(k)))

    ok = residual <= tol * max(1.0, gnorm) and shifted >= -tol
    cauchy = False
    if not ok and gnorm > 0.0:
        eta_c = _cauchy_point(apply_fn, manifold, x, g, gnorm, weight)
        if model(eta_c) < model(eta):
            eta = eta_c
            lam = 0.5 * weight * float(manifold.norm(x, eta))
            residual, shifted = certificates(eta, lam)
            cauchy = True

    return CubicSolution(
        step=eta,
        multiplier=float(lam),
        krylov_dim=k,
        residual=residual,
        shifted_min_eig=shifted,
        model_value=model(eta),
        basis_defect=defect,
        hard_case=hard,
        cauchy_fallback=cauchy,
    )
