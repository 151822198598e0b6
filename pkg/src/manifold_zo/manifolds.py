"""Embedded manifolds used by the zeroth-order solvers.

Points and tangent vectors are plain numpy arrays in ambient coordinates
(vectors are stored n-by-1 so every ambient object is a matrix).  All maps
accept an arbitrary batch of tangents / points via leading axes, which the
estimators rely on to evaluate large Monte-Carlo batches in one shot.

The tangent Gaussian sampler draws an ambient standard normal and projects
it onto the tangent space, so the metric covariance is the orthogonal
projector onto the tangent space.  Under the affine-invariant metric on the
positive-definite cone the same construction is carried out in a
metric-orthonormal basis of symmetric matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FeasibilityError",
    "Manifold",
    "Euclidean",
    "Sphere",
    "Stiefel",
    "Grassmann",
    "SPD",
    "TheoryConstants",
    "curvature_factor",
]

TOL_FEAS = 1e-9
EIG_FLOOR = 1e-12


class FeasibilityError(ValueError):
    """A point or tangent vector violates its manifold constraint."""


def frob(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Frobenius inner product over the trailing two axes."""
    return np.einsum("...ij,...ij->...", a, b)


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _qr_positive(m: np.ndarray) -> np.ndarray:
    """Q factor of the thin QR with the diagonal of R forced positive."""
    q, r = np.linalg.qr(m)
    d = np.sign(np.einsum("...ii->...i", r))
    d[d == 0] = 1.0
    return q * d[..., None, :]


def _exact_at_zero(x: np.ndarray, eta: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Overwrite retraction output with x wherever eta is exactly zero."""
    if eta.ndim == 2:
        return x.copy() if not eta.any() else out
    zero = ~eta.reshape(eta.shape[:-2] + (-1,)).any(axis=-1)
    if zero.any():
        out = out.copy()
        out[zero] = x
    return out


def _eig_apply(a: np.ndarray, fun, floor: float | None = None) -> np.ndarray:
    """Apply a scalar function to the eigenvalues of symmetric ``a``."""
    w, v = np.linalg.eigh(_sym(a))
    if floor is not None:
        w = np.maximum(w, floor)
    fw = fun(w)
    return _sym(np.einsum("...ik,...k,...jk->...ij", v, fw, v))


def spd_sqrt_pair(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Matrix square root and inverse square root of an SPD matrix."""
    w, v = np.linalg.eigh(_sym(x))
    w = np.maximum(w, EIG_FLOOR)
    s = np.sqrt(w)
    sqrt = _sym(np.einsum("...ik,...k,...jk->...ij", v, s, v))
    isqrt = _sym(np.einsum("...ik,...k,...jk->...ij", v, 1.0 / s, v))
    return sqrt, isqrt


def spd_logm(a: np.ndarray) -> np.ndarray:
    return _eig_apply(a, np.log, floor=EIG_FLOOR)


def spd_expm(a: np.ndarray) -> np.ndarray:
    return _eig_apply(a, np.exp)


class Manifold:
    """Common contract for the embedded manifolds below.

    Subclasses set ``ambient_shape`` (trailing shape of every point and
    tangent), ``dim`` (intrinsic dimension) and ``normals_per_sample`` (how
    many scalar normals one tangent Gaussian sample consumes).
    """

    name: str = "manifold"
    ambient_shape: tuple[int, int]
    dim: int
    normals_per_sample: int
    retraction: str = ""
    tol_feas: float = TOL_FEAS

    # -- feasibility ---------------------------------------------------

    def point_residual(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def tangent_residual(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Distance (Frobenius) between ``v`` and its tangent projection."""
        return np.sqrt(np.maximum(frob(v - self.proj(x, v), v - self.proj(x, v)), 0.0))

    def check_point(self, x: np.ndarray) -> None:
        self._check_shape(x)
        res = float(np.max(self.point_residual(x)))
        if not np.isfinite(res) or res > self.tol_feas:
            raise FeasibilityError(f"{self.name}: point residual {res:.3e} exceeds {self.tol_feas:.1e}")

    def check_tangent(self, x: np.ndarray, v: np.ndarray) -> None:
        self._check_shape(v)
        res = float(np.max(self.tangent_residual(x, v)))
        if not np.isfinite(res) or res > self.tol_feas:
            raise FeasibilityError(f"{self.name}: tangent residual {res:.3e} exceeds {self.tol_feas:.1e}")

    def _check_shape(self, a: np.ndarray) -> None:
        if a.shape[-2:] != self.ambient_shape:
            raise ValueError(
                f"{self.name}: expected trailing shape {self.ambient_shape}, got {a.shape}"
            )

    # -- metric ----------------------------------------------------------

    def inner(self, x: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return frob(a, b)

    def norm(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        return np.sqrt(np.maximum(self.inner(x, a, a), 0.0))

    # -- core maps -------------------------------------------------------

    def proj(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def retract(self, x: np.ndarray, eta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_tangent(self, x: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        """Map ``(..., normals_per_sample)`` i.i.d. normals to tangent samples."""
        raise NotImplementedError

    def sample_tangent_gaussian(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.sample_tangent(x, rng.standard_normal(self.normals_per_sample))

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    # -- optional maps ----------------------------------------------------

    def log(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{self.name} has no logarithm map")

    def dist(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{self.name} has no distance")

    def transport(self, x: np.ndarray, eta: np.ndarray, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{self.name} has no parallel transport")

    def project_ball(self, x: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
        """Project onto the geodesic ball of the given radius around ``center``."""
        d = float(self.dist(center, x))
        if d <= radius:
            return x
        eta = self.log(center, x)
        return self.retract_exp(center, (radius / d) * eta)

    def retract_exp(self, x: np.ndarray, eta: np.ndarray) -> np.ndarray:
        """Exponential map, where available (defaults to the retraction)."""
        return self.retract(x, eta)

    def rhess_from_euclidean(
        self, x: np.ndarray, egrad: np.ndarray, ehess_eta: np.ndarray, eta: np.ndarray
    ) -> np.ndarray:
        """Riemannian Hessian action from ambient gradient and Hessian action."""
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.name, "retraction": self.retraction, "dim": self.dim}

    def _debug_feasible(self, x: np.ndarray) -> None:
        res = float(np.max(self.point_residual(x)))
        assert res <= 100 * self.tol_feas, f"{self.name}: retraction left the manifold ({res:.3e})"


class Euclidean(Manifold):
    """Flat space with the identity retraction; the trivial sanity case."""

    def __init__(self, rows: int, cols: int = 1):
        self.name = f"euclidean({rows}x{cols})"
        self.ambient_shape = (rows, cols)
        self.dim = rows * cols
        self.normals_per_sample = rows * cols
        self.retraction = "identity"

    def point_residual(self, x):
        return np.zeros(x.shape[:-2])

    def proj(self, x, v):
        self._check_shape(v)
        return v

    def retract(self, x, eta):
        return x + eta

    def sample_tangent(self, x, coeffs):
        return np.asarray(coeffs).reshape(coeffs.shape[:-1] + self.ambient_shape)

    def random_point(self, rng):
        return rng.standard_normal(self.ambient_shape)

    def rhess_from_euclidean(self, x, egrad, ehess_eta, eta):
        return ehess_eta


class Sphere(Manifold):
    """Sphere of radius R in R^n, points stored as n-by-1 matrices."""

    def __init__(self, n: int, radius: float = 1.0):
        if n < 2:
            raise ValueError("sphere needs ambient dimension >= 2")
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.n = n
        self.radius = float(radius)
        self.name = f"sphere({n})"
        self.ambient_shape = (n, 1)
        self.dim = n - 1
        self.normals_per_sample = n
        self.retraction = "exp"

    def point_residual(self, x):
        return np.abs(np.sqrt(frob(x, x)) - self.radius)

    def proj(self, x, v):
        self._check_shape(v)
        return v - x * (frob(x, v) / self.radius**2)[..., None, None]

    def retract(self, x, eta):
        r = self.radius
        theta = np.sqrt(np.maximum(frob(eta, eta), 0.0)) / r
        c1 = np.cos(theta)
        # r*sin(t/r)/t -> 1 as t -> 0, so eta = 0 returns x exactly
        safe = np.where(theta > 0, theta, 1.0)
        c2 = np.where(theta > 0, np.sin(theta) / safe, 1.0)
        out = c1[..., None, None] * x + c2[..., None, None] * eta
        if __debug__:
            self._debug_feasible(out)
        return out

    retract_exp = retract

    def log(self, x, y):
        r = self.radius
        c = np.clip(frob(x, y) / r**2, -1.0, 1.0)
        theta = float(np.arccos(c))
        if theta < 1e-16:
            return np.zeros_like(x)
        if theta > np.pi - 1e-8:
            raise ValueError("logarithm undefined for (nearly) antipodal sphere points")
        w = y - c * x
        wn = math.sqrt(float(frob(w, w)))
        return (r * theta / wn) * w

    def dist(self, x, y):
        c = np.clip(frob(x, y) / self.radius**2, -1.0, 1.0)
        return self.radius * np.arccos(c)

    def transport(self, x, eta, w):
        """Parallel transport of ``w`` along the geodesic t -> Exp_x(t*eta)."""
        nrm = math.sqrt(float(frob(eta, eta)))
        if nrm == 0.0:
            return w.copy()
        theta = nrm / self.radius
        u = eta / nrm
        xhat = x / self.radius
        a = float(frob(u, w))
        return w + a * ((math.cos(theta) - 1.0) * u - math.sin(theta) * xhat)

    def sample_tangent(self, x, coeffs):
        v = np.asarray(coeffs).reshape(coeffs.shape[:-1] + self.ambient_shape)
        return self.proj(x, v)

    def random_point(self, rng):
        v = rng.standard_normal(self.ambient_shape)
        return self.radius * v / np.linalg.norm(v)

    def rhess_from_euclidean(self, x, egrad, ehess_eta, eta):
        return self.proj(x, ehess_eta) - (frob(x, egrad) / self.radius**2) * eta

    def describe(self):
        return {"kind": "sphere", "n": self.n, "radius": self.radius,
                "retraction": self.retraction, "dim": self.dim}


class Stiefel(Manifold):
    """Matrices with orthonormal columns, St(n, p)."""

    def __init__(self, n: int, p: int, retraction: str = "qr"):
        if not 1 <= p <= n:
            raise ValueError("need 1 <= p <= n")
        if retraction not in ("qr", "polar"):
            raise ValueError(f"unknown Stiefel retraction {retraction!r}")
        self.n, self.p = n, p
        self.name = f"stiefel({n},{p})"
        self.ambient_shape = (n, p)
        self.dim = n * p - p * (p + 1) // 2
        self.normals_per_sample = n * p
        self.retraction = retraction

    def point_residual(self, x):
        g = np.swapaxes(x, -1, -2) @ x - np.eye(self.p)
        return np.sqrt(np.maximum(frob(g, g), 0.0))

    def proj(self, x, v):
        self._check_shape(v)
        return v - x @ _sym(np.swapaxes(x, -1, -2) @ v)

    def retract(self, x, eta):
        m = x + eta
        if self.retraction == "qr":
            out = _qr_positive(m)
        else:
            u, _, vt = np.linalg.svd(m, full_matrices=False)
            out = u @ vt
        out = _exact_at_zero(x, eta, out)
        if __debug__:
            self._debug_feasible(out)
        return out

    def sample_tangent(self, x, coeffs):
        v = np.asarray(coeffs).reshape(coeffs.shape[:-1] + self.ambient_shape)
        return self.proj(x, v)

    def random_point(self, rng):
        return _qr_positive(rng.standard_normal(self.ambient_shape))

    def rhess_from_euclidean(self, x, egrad, ehess_eta, eta):
        return self.proj(x, ehess_eta - eta @ _sym(np.swapaxes(x, -1, -2) @ egrad))

    def describe(self):
        return {"kind": "stiefel", "n": self.n, "p": self.p,
                "retraction": self.retraction, "dim": self.dim}


class Grassmann(Manifold):
    """Subspaces of dimension p in R^n, stored as orthonormal representatives.

    The horizontal space (I - XX^T)-projection plays the role of the tangent
    projection; representatives are never canonicalized.
    """

    def __init__(self, n: int, p: int, retraction: str = "qr"):
        if not 1 <= p <= n:
            raise ValueError("need 1 <= p <= n")
        if retraction not in ("qr", "polar", "exp"):
            raise ValueError(f"unknown Grassmann retraction {retraction!r}")
        self.n, self.p = n, p
        self.name = f"grassmann({n},{p})"
        self.ambient_shape = (n, p)
        self.dim = p * (n - p)
        self.normals_per_sample = n * p
        self.retraction = retraction

    def point_residual(self, x):
        g = np.swapaxes(x, -1, -2) @ x - np.eye(self.p)
        return np.sqrt(np.maximum(frob(g, g), 0.0))

    def proj(self, x, v):
        self._check_shape(v)
        return v - x @ (np.swapaxes(x, -1, -2) @ v)

    def retract(self, x, eta):
        if self.retraction == "exp":
            out = self._exp(x, eta)
        elif self.retraction == "polar":
            u, _, vt = np.linalg.svd(x + eta, full_matrices=False)
            out = u @ vt
        else:
            out = _qr_positive(x + eta)
        out = _exact_at_zero(x, eta, out)
        if __debug__:
            self._debug_feasible(out)
        return out

    def _exp(self, x, eta):
        u, s, vt = np.linalg.svd(eta, full_matrices=False)
        cos = np.cos(s)[..., None, :]
        sin = np.sin(s)[..., None, :]
        v = np.swapaxes(vt, -1, -2)
        return (x @ (v * cos) + u * sin) @ vt

    def retract_exp(self, x, eta):
        return _exact_at_zero(x, eta, self._exp(x, eta))

    def sample_tangent(self, x, coeffs):
        v = np.asarray(coeffs).reshape(coeffs.shape[:-1] + self.ambient_shape)
        return self.proj(x, v)

    def random_point(self, rng):
        return _qr_positive(rng.standard_normal(self.ambient_shape))

    def rhess_from_euclidean(self, x, egrad, ehess_eta, eta):
        return self.proj(x, ehess_eta - eta @ (np.swapaxes(x, -1, -2) @ egrad))

    def describe(self):
        return {"kind": "grassmann", "n": self.n, "p": self.p,
                "retraction": self.retraction, "dim": self.dim}


class SPD(Manifold):
    """Symmetric positive-definite d-by-d matrices.

    ``metric="euclidean"`` pairs with the second-order retraction
    X + eta + eta X^{-1} eta / 2 (positivity-preserving for every step);
    ``metric="affine-invariant"`` uses geodesics, log maps and distances of
    the affine-invariant metric, as needed by the Karcher-mean pipeline.
    """

    def __init__(self, d: int, metric: str = "euclidean", retraction: str | None = None):
        if metric not in ("euclidean", "affine-invariant"):
            raise ValueError(f"unknown SPD metric {metric!r}")
        self.d = d
        self.metric = metric
        self.name = f"spd({d},{metric})"
        self.ambient_shape = (d, d)
        self.dim = d * (d + 1) // 2
        self.normals_per_sample = d * d if metric == "euclidean" else self.dim
        if retraction is None:
            retraction = "second-order" if metric == "euclidean" else "exp"
        if retraction not in ("second-order", "exp"):
            raise ValueError(f"unknown SPD retraction {retraction!r}")
        self.retraction = retraction
        self._basis_idx = self._sym_basis_indices(d)

    @staticmethod
    def _sym_basis_indices(d: int):
        diag = [(i, i) for i in range(d)]
        off = [(i, j) for i in range(d) for j in range(i + 1, d)]
        rows = np.array([ij[0] for ij in diag + off])
        cols = np.array([ij[1] for ij in diag + off])
        return rows, cols, len(diag)

    def point_residual(self, x):
        asym = x - np.swapaxes(x, -1, -2)
        res = np.sqrt(np.maximum(frob(asym, asym), 0.0))
        wmin = np.linalg.eigvalsh(_sym(x))[..., 0]
        return np.where(wmin > 0, res, np.maximum(res, 1.0))

    def proj(self, x, v):
        self._check_shape(v)
        return _sym(v)

    def inner(self, x, a, b):
        if self.metric == "euclidean":
            return frob(a, b)
        xinv = _eig_apply(x, lambda w: 1.0 / w, floor=EIG_FLOOR)
        return np.einsum("...ij,...jk,...kl,...li->...", xinv, a, xinv, b)

    def retract(self, x, eta):
        if self.retraction == "second-order":
            xinv = _eig_apply(x, lambda w: 1.0 / w, floor=EIG_FLOOR)
            out = _sym(x + eta + 0.5 * (eta @ xinv @ eta))
        else:
            out = self.retract_exp(x, eta)
        if __debug__:
            self._debug_feasible(out)
        return out

    def retract_exp(self, x, eta):
        xs, xis = spd_sqrt_pair(x)
        s = _sym(xis @ eta @ xis)
        return _exact_at_zero(x, eta, _sym(xs @ spd_expm(s) @ xs))

    def log(self, x, y):
        xs, xis = spd_sqrt_pair(x)
        m = _sym(xis @ y @ xis)
        return _sym(xs @ spd_logm(m) @ xs)

    def dist(self, x, y):
        _, xis = spd_sqrt_pair(x)
        l = spd_logm(_sym(xis @ y @ xis))
        return np.sqrt(np.maximum(frob(l, l), 0.0))

    def transport(self, x, eta, w):
        """Parallel transport of ``w`` to Exp_x(eta) (affine-invariant metric)."""
        y = self.retract_exp(x, eta)
        xs, xis = spd_sqrt_pair(x)
        e = xs @ _eig_apply(_sym(xis @ y @ xis), np.sqrt, floor=EIG_FLOOR) @ xis
        return _sym(e @ w @ np.swapaxes(e, -1, -2))

    def sample_tangent(self, x, coeffs):
        coeffs = np.asarray(coeffs)
        if self.metric == "euclidean":
            v = coeffs.reshape(coeffs.shape[:-1] + self.ambient_shape)
            return _sym(v)
        s = self._sym_from_coeffs(coeffs)
        xs, _ = spd_sqrt_pair(x)
        return _sym(xs @ s @ xs)

    def _sym_from_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        """Symmetric matrix with the given coordinates in an orthonormal basis."""
        rows, cols, ndiag = self._basis_idx
        s = np.zeros(coeffs.shape[:-1] + self.ambient_shape)
        s[..., rows[:ndiag], cols[:ndiag]] = coeffs[..., :ndiag]
        off = coeffs[..., ndiag:] / math.sqrt(2.0)
        s[..., rows[ndiag:], cols[ndiag:]] = off
        s[..., cols[ndiag:], rows[ndiag:]] = off
        return s

    def random_point(self, rng):
        c = rng.standard_normal((self.d, self.d))
        return _sym(c @ c.T / self.d + 0.5 * np.eye(self.d))

    def rhess_from_euclidean(self, x, egrad, ehess_eta, eta):
        if self.metric != "euclidean":
            raise NotImplementedError("Hessian conversion only under the euclidean metric")
        return _sym(ehess_eta)

    def describe(self):
        return {"kind": "spd", "d": self.d, "metric": self.metric,
                "retraction": self.retraction, "dim": self.dim}


def curvature_factor(curvature_lb: float, diameter: float) -> float:
    """zeta(rho, D) = D sqrt(|rho|) / tanh(D sqrt(|rho|)); 1 in the flat limit."""
    c = diameter * math.sqrt(abs(curvature_lb))
    if c == 0.0:
        return 1.0
    return c / math.tanh(c)


@dataclass
class TheoryConstants:
    """Problem constants the step rules and estimator bounds depend on."""

    L_g: float = 0.0
    L_H: float = 0.0
    sigma: float = 0.0
    G: float = 0.0
    curvature_lb: float = 0.0
    diameter: float = 0.0
    zeta: float = field(init=False)

    def __post_init__(self):
        for name in ("L_g", "L_H", "sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        self.zeta = curvature_factor(self.curvature_lb, self.diameter)

    def to_dict(self) -> dict:
        return {
            "L_g": self.L_g, "L_H": self.L_H, "sigma": self.sigma, "G": self.G,
            "curvature_lb": self.curvature_lb, "diameter": self.diameter, "zeta": self.zeta,
        }
