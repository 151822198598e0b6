"""Benchmark objectives with analytic monitoring derivatives.

Each factory builds a :class:`BenchmarkProblem` holding a vectorized
objective (what the zeroth-order oracle serves), the analytic Riemannian
gradient (used only for stopping criteria and reporting, never by the
solvers), and, where cheap, the analytic Hessian action.  Every constructed
gradient is validated against central finite differences of the pullback
f(R_x(.)) before the problem is returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .manifolds import SPD, Grassmann, Manifold, Sphere, Stiefel, _sym, frob, spd_sqrt_pair, spd_logm
from .oracles import ZeroOrderOracle
from .rng import NormalStream, key_indices

__all__ = [
    "BenchmarkProblem",
    "make_procrustes",
    "make_kpca",
    "make_sparse_pca",
    "make_karcher",
    "make_rayleigh",
    "with_noise",
    "karcher_mean_reference",
]

_INIT_STREAM = 91


def _combine(a: int, b: int) -> int:
    return int(key_indices(int(a), np.asarray([b], dtype=np.uint64), 2**62)[0])


@dataclass
class BenchmarkProblem:
    """An objective bound to a manifold, with monitoring-only derivatives."""

    name: str
    manifold: Manifold
    value_batch: Callable[[np.ndarray], np.ndarray]
    euclidean_grad: Callable[[np.ndarray], np.ndarray] | None = None
    riemannian_grad_fn: Callable[[np.ndarray], np.ndarray] | None = None
    ehess_action: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    l1_weight: float = 0.0
    num_terms: int | None = None
    term_batch: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    term_grad: Callable[[np.ndarray, int], np.ndarray] | None = None
    noise_sd: float = 0.0
    noise_seed: int = 0
    spec: dict = field(default_factory=dict)

    # -- monitoring oracle (analytic; never counted as zeroth-order calls) --

    def value(self, x: np.ndarray) -> float:
        """Clean smooth part f(x)."""
        return float(self.value_batch(x[None])[0])

    def monitor_value(self, x: np.ndarray) -> float:
        """f(x) plus the nonsmooth part, when the problem has one."""
        v = self.value(x)
        if self.l1_weight:
            v += self.l1_weight * float(np.abs(x).sum())
        return v

    def grad(self, x: np.ndarray) -> np.ndarray:
        if self.riemannian_grad_fn is not None:
            return self.riemannian_grad_fn(x)
        return self.manifold.proj(x, self.euclidean_grad(x))

    def grad_norm(self, x: np.ndarray) -> float:
        return float(self.manifold.norm(x, self.grad(x)))

    def hess_action(self, x: np.ndarray, eta: np.ndarray) -> np.ndarray:
        if self.ehess_action is None:
            raise NotImplementedError(f"{self.name} has no analytic Hessian")
        return self.manifold.rhess_from_euclidean(
            x, self.euclidean_grad(x), self.ehess_action(x, eta), eta
        )

    @property
    def has_hessian(self) -> bool:
        return self.ehess_action is not None

    # -- zeroth-order side -------------------------------------------------

    def make_oracle(self, run_seed: int = 0) -> ZeroOrderOracle:
        """Fresh oracle for one run; realizations depend on (problem, run) seeds."""
        seed = _combine(self.noise_seed, run_seed)
        if self.num_terms is not None:
            return ZeroOrderOracle(
                self.value_batch, mode="finite-sum", seed=seed,
                num_terms=self.num_terms, term_batch=self.term_batch,
            )
        if self.noise_sd > 0.0:
            return ZeroOrderOracle(
                self.value_batch, mode="additive-noise", seed=seed, noise_sd=self.noise_sd
            )
        return ZeroOrderOracle(self.value_batch)

    def sigma_sq_at(self, x: np.ndarray) -> float:
        """Exact E_xi ||grad F(x, xi) - grad f(x)||^2 at one point.

        Zero for deterministic and additive-noise oracles (the noise does not
        depend on x, so per-realization gradients coincide with grad f).
        """
        if self.num_terms is None or self.term_grad is None or self.num_terms == 1:
            return 0.0
        g = self.grad(x)
        total = 0.0
        for i in range(self.num_terms):
            d = self.term_grad(x, i) - g
            total += float(self.manifold.inner(x, d, d))
        return total / self.num_terms

    def initial_point(self, seed: int) -> np.ndarray:
        return self.manifold.random_point(NormalStream(seed, (_INIT_STREAM,)).generator())


def _check_gradient(problem: BenchmarkProblem, seed: int, npoints: int = 10,
                    step: float = 1e-6, rtol: float = 1e-5) -> None:
    man = problem.manifold
    rng = NormalStream(seed, (17,)).generator()
    for _ in range(npoints):
        x = man.random_point(rng)
        eta = man.sample_tangent_gaussian(x, rng)
        eta = eta / float(man.norm(x, eta))
        dd = float(man.inner(x, problem.grad(x), eta))
        fp = problem.value(man.retract_exp(x, step * eta))
        fm = problem.value(man.retract_exp(x, -step * eta))
        fd = (fp - fm) / (2 * step)
        if abs(fd - dd) > rtol * max(abs(dd), 1e-8):
            raise ValueError(
                f"{problem.name}: analytic gradient fails finite differences "
                f"(directional {dd:.6e} vs fd {fd:.6e})"
            )


def make_procrustes(n: int, p: int, l: int | None = None, seed: int = 0,
                    retraction: str = "qr") -> BenchmarkProblem:
    """Matrix regression ||AX - B||_F^2 over St(n, p) with a planted optimum.

    B = A X* for a random feasible X*, so the optimal value is exactly 0.
    """
    if l is None:
        l = n
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((l, n))
    xstar = np.linalg.qr(rng.standard_normal((n, p)))[0]
    b = a @ xstar
    gram = a.T @ a

    def value_batch(xs):
        r = a @ xs - b
        return np.einsum("...ij,...ij->...", r, r)

    problem = BenchmarkProblem(
        name=f"procrustes({n},{p},{l})",
        manifold=Stiefel(n, p, retraction=retraction),
        value_batch=value_batch,
        euclidean_grad=lambda x: 2.0 * (a.T @ (a @ x) - a.T @ b),
        ehess_action=lambda x, eta: 2.0 * (gram @ eta),
        spec={"kind": "procrustes", "n": n, "p": p, "l": l, "seed": seed},
    )
    problem.optimum = xstar
    _check_gradient(problem, seed)
    return problem


def make_kpca(n: int, p: int, seed: int = 0, retraction: str = "qr") -> BenchmarkProblem:
    """Rayleigh-quotient minimization -Tr(X^T H X)/2 over Gr(n, p).

    H = A A^T with a row-normalized Gaussian A in R^{n x p}.  The finite-sum
    oracle splits H into n rank-one terms (columns of its symmetric square
    root) with an n-factor so the uniform-index expectation recovers f.
    """
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, p))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    h = a @ a.T
    w, v = np.linalg.eigh(h)
    factors = v * np.sqrt(np.maximum(w, 0.0))  # n columns s_i with sum s_i s_i^T = H
    s_rows = factors.T
    man = Grassmann(n, p, retraction=retraction)

    def value_batch(xs):
        return -0.5 * np.einsum("...ip,ij,...jp->...", xs, h, xs)

    def term_batch(xs, idx):
        rows = s_rows[idx]  # (B, n)
        proj = np.einsum("bi,bip->bp", rows, xs)
        return -0.5 * n * np.einsum("bp,bp->b", proj, proj)

    def term_grad_fn(x, i):
        s = s_rows[i][:, None]
        return man.proj(x, -n * (s @ (s.T @ x)))

    problem = BenchmarkProblem(
        name=f"kpca({n},{p})",
        manifold=man,
        value_batch=value_batch,
        euclidean_grad=lambda x: -(h @ x),
        ehess_action=lambda x, eta: -(h @ eta),
        num_terms=n,
        term_batch=term_batch,
        term_grad=term_grad_fn,
        spec={"kind": "kpca", "n": n, "p": p, "seed": seed},
    )
    problem.gram = h
    _check_gradient(problem, seed)
    return problem


def make_sparse_pca(mrows: int, n: int, p: int, l1_weight: float = 0.0,
                    seed: int = 0, retraction: str = "qr") -> BenchmarkProblem:
    """Sparse PCA: -Tr(X^T A^T A X)/2 + lambda ||X||_1 over St(n, p)."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((mrows, n))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    gram = a.T @ a

    def value_batch(xs):
        return -0.5 * np.einsum("...ip,ij,...jp->...", xs, gram, xs)

    problem = BenchmarkProblem(
        name=f"sparse_pca({mrows},{n},{p})",
        manifold=Stiefel(n, p, retraction=retraction),
        value_batch=value_batch,
        euclidean_grad=lambda x: -(gram @ x),
        ehess_action=lambda x, eta: -(gram @ eta),
        l1_weight=float(l1_weight),
        spec={"kind": "sparse_pca", "mrows": mrows, "n": n, "p": p,
              "l1_weight": float(l1_weight), "seed": seed},
    )
    _check_gradient(problem, seed)
    return problem


def _random_spd(rng: np.random.Generator, d: int) -> np.ndarray:
    c = rng.standard_normal((d, d))
    return _sym(c @ c.T / d + 0.1 * np.eye(d))


def make_karcher(dim: int, count: int, seed: int = 0,
                 matrices: np.ndarray | None = None) -> BenchmarkProblem:
    """Karcher mean of SPD matrices under the affine-invariant metric.

    f(X) = (1/2n) sum_i dist(X, A_i)^2, with dist the affine-invariant
    geodesic distance; the gradient is -(1/n) sum_i Log_X(A_i).
    """
    rng = np.random.default_rng(seed)
    if matrices is not None:
        mats = np.asarray(matrices, dtype=float)
        if mats.shape != (count, dim, dim):
            raise ValueError("matrices must have shape (count, dim, dim)")
    else:
        mats = np.stack([_random_spd(rng, dim) for _ in range(count)])
    man = SPD(dim, metric="affine-invariant")

    def _dists_sq(xs, amats):
        # xs (B,d,d), amats (B,d,d) -> squared AI distances (B,)
        _, xis = spd_sqrt_pair(xs)
        logs = spd_logm(_sym(xis @ amats @ xis))
        return frob(logs, logs)

    def value_batch(xs):
        xs = np.asarray(xs)
        lead = xs.shape[:-2]
        flat = xs.reshape((-1, dim, dim))
        _, xis = spd_sqrt_pair(flat)
        m = _sym(xis[:, None] @ mats[None] @ xis[:, None])  # (B, n, d, d)
        logs = spd_logm(m)
        vals = frob(logs, logs).sum(axis=-1) / (2.0 * count)
        return vals.reshape(lead)

    def term_batch(xs, idx):
        return 0.5 * _dists_sq(np.asarray(xs), mats[idx])

    def grad_fn(x):
        xs, xis = spd_sqrt_pair(x)
        logs = spd_logm(_sym(np.einsum("ij,njk,kl->nil", xis, mats, xis)))
        return -_sym(xs @ logs.mean(axis=0) @ xs)

    def term_grad_fn(x, i):
        return -man.log(x, mats[i])

    problem = BenchmarkProblem(
        name=f"karcher({dim},{count})",
        manifold=man,
        value_batch=value_batch,
        riemannian_grad_fn=grad_fn,
        num_terms=count,
        term_batch=term_batch,
        term_grad=term_grad_fn,
        spec={"kind": "karcher", "dim": dim, "count": count, "seed": seed},
    )
    problem.matrices = mats
    _check_gradient(problem, seed)
    return problem


def make_rayleigh(n: int, seed: int = 0, radius: float = 1.0) -> BenchmarkProblem:
    """Quadratic -x^T A x / 2 on the sphere; minimized at the top eigenvector."""
    rng = np.random.default_rng(seed)
    a = _sym(rng.standard_normal((n, n)))

    def value_batch(xs):
        return -0.5 * np.einsum("...ik,ij,...jk->...", xs, a, xs)

    problem = BenchmarkProblem(
        name=f"rayleigh({n})",
        manifold=Sphere(n, radius=radius),
        value_batch=value_batch,
        euclidean_grad=lambda x: -(a @ x),
        ehess_action=lambda x, eta: -(a @ eta),
        spec={"kind": "rayleigh", "n": n, "radius": radius, "seed": seed},
    )
    problem.matrix = a
    _check_gradient(problem, seed)
    return problem


def make_quadratic_sphere(n: int, seed: int = 0, radius: float = 1.0) -> BenchmarkProblem:
    """Quadratic x^T A x / 2 on the sphere (estimator test bed)."""
    rng = np.random.default_rng(seed)
    a = _sym(rng.standard_normal((n, n)))

    def value_batch(xs):
        return 0.5 * np.einsum("...ik,ij,...jk->...", xs, a, xs)

    problem = BenchmarkProblem(
        name=f"sphere_quadratic({n})",
        manifold=Sphere(n, radius=radius),
        value_batch=value_batch,
        euclidean_grad=lambda x: a @ x,
        ehess_action=lambda x, eta: a @ eta,
        spec={"kind": "sphere_quadratic", "n": n, "radius": radius, "seed": seed},
    )
    problem.matrix = a
    _check_gradient(problem, seed)
    return problem


def with_noise(problem: BenchmarkProblem, noise_sd: float, seed: int = 0) -> BenchmarkProblem:
    """Additive-Gaussian noisy version of a deterministic problem.

    Only the oracle changes; monitoring functions are untouched.
    """
    if problem.num_terms is not None:
        raise ValueError("with_noise applies to deterministic objectives only")
    if noise_sd < 0:
        raise ValueError("noise_sd must be nonnegative")
    spec = dict(problem.spec)
    spec.update({"noise_sd": float(noise_sd), "noise_seed": int(seed)})
    return replace(problem, noise_sd=float(noise_sd), noise_seed=int(seed), spec=spec)


def karcher_mean_reference(mats: np.ndarray, tol: float = 1e-12, max_iter: int = 500) -> np.ndarray:
    """First-order fixed-point solver for the Karcher mean (monitoring oracle)."""
    man = SPD(mats.shape[-1], metric="affine-invariant")
    x = _sym(mats.mean(axis=0))
    for _ in range(max_iter):
        xs, xis = spd_sqrt_pair(x)
        logs = spd_logm(_sym(np.einsum("ij,njk,kl->nil", xis, mats, xis)))
        step = _sym(xs @ logs.mean(axis=0) @ xs)
        x = man.retract_exp(x, step)
        if float(man.norm(x, step)) <= tol:
            break
    return x


PROBLEM_KINDS = {
    "procrustes": make_procrustes,
    "kpca": make_kpca,
    "sparse_pca": make_sparse_pca,
    "karcher": make_karcher,
    "rayleigh": make_rayleigh,
    "sphere_quadratic": make_quadratic_sphere,
}
