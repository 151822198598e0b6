"""Gradient and Hessian estimators from tangent-space Gaussian smoothing.

A gradient estimate averages forward differences of the oracle along
tangent Gaussian directions; a Hessian estimate is a rank-structured
operator built from central second differences.  Both are deterministic
functions of (oracle, point, parameters, seed): directions come from
counter-addressed streams keyed by (seed, iteration) and per-sample oracle
keys encode (tag, iteration, sample index), so batches can be fanned out
and still reproduce a serial run bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .manifolds import Manifold, TheoryConstants
from .oracles import ZeroOrderOracle
from .rng import NormalStream, pairwise_sum

__all__ = [
    "GradientEstimate",
    "HessianOperator",
    "estimate_gradient",
    "estimate_hessian",
    "operator_norm",
    "estimator_diagnostics",
    "DiagnosticsReport",
]

MU_FLOOR = 1e-12
# ~64 eps: forward differences below this are dominated by roundoff
CANCELLATION_LIMIT = 64 * np.finfo(float).eps

# stream / oracle-key tags keep subsystems on disjoint randomness
_GRAD_TAG = 1
_HESS_TAG = 2
_OPNORM_TAG = 3


def _sample_keys(tag: int, iteration: int, count: int) -> np.ndarray:
    if iteration >= 1 << 28 or count > 1 << 28:
        raise ValueError("iteration/sample counts exceed the key layout")
    base = (np.uint64(tag) << np.uint64(56)) | (np.uint64(iteration) << np.uint64(28))
    return base + np.arange(count, dtype=np.uint64)


def tangent_samples(
    manifold: Manifold, x: np.ndarray, count: int, seed: int, iteration: int, tag: int
) -> np.ndarray:
    """Standard tangent Gaussian samples, addressed by (seed, tag, iteration)."""
    k = manifold.normals_per_sample
    z = NormalStream(seed, (tag, iteration)).normals(0, count * k).reshape(count, k)
    return manifold.sample_tangent(x, z)


@dataclass
class GradientEstimate:
    """Averaged zeroth-order gradient estimate (a tangent vector)."""

    vector: np.ndarray
    smoothing: float
    samples: int
    oracle_calls: int
    cancellation_fraction: float = 0.0


def _validate(smoothing: float, count: int) -> None:
    if not smoothing > 0:
        raise ValueError("smoothing parameter must be positive")
    if smoothing < MU_FLOOR:
        raise ValueError(f"smoothing parameter below the {MU_FLOOR:.0e} floor")
    if count < 1:
        raise ValueError("sample count must be >= 1")


def _gradient_terms(
    oracle: ZeroOrderOracle,
    manifold: Manifold,
    x: np.ndarray,
    smoothing: float,
    samples: int,
    seed: int,
    iteration: int,
):
    """Per-sample difference coefficients and directions of the estimator."""
    u = tangent_samples(manifold, x, samples, seed, iteration, _GRAD_TAG)
    keys = _sample_keys(_GRAD_TAG, iteration, samples)
    displaced = oracle.eval_batch(manifold.retract(x, smoothing * u), keys)
    if oracle.stochastic:
        base = oracle.eval_batch(x, keys)
    else:
        base = oracle.eval(x, int(keys[0]))
    coeffs = (displaced - base) / smoothing
    cancel = float(np.mean(np.abs(displaced - base) < CANCELLATION_LIMIT * np.abs(base)))
    return coeffs, u, cancel


def estimate_gradient(
    oracle: ZeroOrderOracle,
    manifold: Manifold,
    x: np.ndarray,
    smoothing: float,
    samples: int,
    seed: int,
    iteration: int = 0,
) -> GradientEstimate:
    """Average of `samples` forward-difference gradient estimates at x.

    The baseline F(x, xi_i) shares its realization xi_i with the displaced
    evaluation; for non-stochastic oracles the baseline is evaluated once
    and reused, so the call count is samples + 1 (2 * samples otherwise).
    """
    _validate(smoothing, samples)
    before = oracle.calls
    coeffs, u, cancel = _gradient_terms(oracle, manifold, x, smoothing, samples, seed, iteration)
    vector = pairwise_sum(coeffs[:, None, None] * u) / samples
    return GradientEstimate(
        vector=vector,
        smoothing=smoothing,
        samples=samples,
        oracle_calls=oracle.calls - before,
        cancellation_fraction=cancel,
    )


@dataclass
class HessianOperator:
    """Structured symmetric operator (1/b) sum_i c_i (u_i u_i^T - P) on T_xM.

    Applied matrix-free: no ambient-squared arrays are ever formed.
    """

    manifold: Manifold
    x: np.ndarray
    directions: np.ndarray  # (b, *ambient)
    coeffs: np.ndarray  # (b,)
    smoothing: float
    oracle_calls: int = 0

    @property
    def samples(self) -> int:
        return self.directions.shape[0]

    def apply(self, eta: np.ndarray) -> np.ndarray:
        dots = self.manifold.inner(self.x, self.directions, eta)
        lead = np.einsum("b,b...->...", self.coeffs * dots, self.directions) / self.samples
        return lead - float(self.coeffs.mean()) * self.manifold.proj(self.x, eta)

    def __call__(self, eta: np.ndarray) -> np.ndarray:
        return self.apply(eta)


def estimate_hessian(
    oracle: ZeroOrderOracle,
    manifold: Manifold,
    x: np.ndarray,
    smoothing: float,
    samples: int,
    seed: int,
    iteration: int = 0,
) -> HessianOperator:
    """Averaged second-difference Hessian estimator as a linear operator.

    Each term consumes F at R_x(mu u_i), R_x(-mu u_i) and x with one shared
    realization xi_i (3 calls per term; the x evaluation is shared across
    terms for non-stochastic oracles, giving 2 * samples + 1 calls).
    """
    _validate(smoothing, samples)
    before = oracle.calls
    u = tangent_samples(manifold, x, samples, seed, iteration, _HESS_TAG)
    keys = _sample_keys(_HESS_TAG, iteration, samples)
    plus = oracle.eval_batch(manifold.retract(x, smoothing * u), keys)
    minus = oracle.eval_batch(manifold.retract(x, -smoothing * u), keys)
    if oracle.stochastic:
        base = oracle.eval_batch(x, keys)
    else:
        base = oracle.eval(x, int(keys[0]))
    coeffs = (plus + minus - 2.0 * base) / (2.0 * smoothing**2)
    return HessianOperator(
        manifold=manifold,
        x=x,
        directions=u,
        coeffs=coeffs,
        smoothing=smoothing,
        oracle_calls=oracle.calls - before,
    )


def operator_norm(
    apply_fn,
    manifold: Manifold,
    x: np.ndarray,
    seed: int = 0,
    max_iters: int = 200,
    tol: float = 1e-8,
) -> float:
    """Operator norm of a self-adjoint operator on T_xM by power iteration."""
    v = tangent_samples(manifold, x, 1, seed, 0, _OPNORM_TAG)[0]
    nv = float(manifold.norm(x, v))
    if nv == 0.0:
        return 0.0
    v = v / nv
    estimate = 0.0
    for _ in range(max_iters):
        w = apply_fn(v)
        nw = float(manifold.norm(x, w))
        if nw == 0.0:
            return 0.0
        if abs(nw - estimate) <= tol * nw:
            return nw
        estimate = nw
        v = w / nw
    return estimate


@dataclass
class DiagnosticsReport:
    """Empirical estimator statistics next to their theoretical bounds."""

    checks: list = field(default_factory=list)

    def add(self, name: str, empirical: float, mc_radius: float, bound: float, **extra) -> None:
        entry = {
            "check": name,
            "empirical": float(empirical),
            "mc_radius": float(mc_radius),
            "bound": float(bound),
            "passed": bool(empirical <= bound + mc_radius),
        }
        entry.update(extra)
        self.checks.append(entry)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": self.checks}


def estimator_diagnostics(
    problem,
    constants: TheoryConstants,
    smoothing: float,
    single_sample_trials: int = 100_000,
    averaged_samples: int | None = None,
    averaged_trials: int = 0,
    hessian_samples: int | None = None,
    hessian_trials: int = 0,
    x: np.ndarray | None = None,
    seed: int = 0,
) -> DiagnosticsReport:
    """Check the gradient/Hessian estimators against their error bounds.

    Runs on a benchmark problem whose analytic gradient (and Hessian, for
    the Hessian check) is available, at a single probe point.
    """
    manifold = problem.manifold
    if x is None:
        x = problem.initial_point(seed)
    d = manifold.dim
    grad = problem.grad(x)
    gnorm2 = float(manifold.inner(x, grad, grad))
    sigma_sq = problem.sigma_sq_at(x)
    oracle = problem.make_oracle(seed)
    report = DiagnosticsReport()

    if single_sample_trials:
        coeffs, u, cancel = _gradient_terms(
            oracle, manifold, x, smoothing, single_sample_trials, seed, iteration=0
        )
        terms = coeffs[:, None, None] * u
        mean_vec = pairwise_sum(terms) / single_sample_trials
        bias = float(manifold.norm(x, mean_vec - grad))
        spread = terms - mean_vec
        var_trace = float(np.mean(manifold.inner(x, spread, spread)))
        bias_radius = 4.0 * math.sqrt(var_trace / single_sample_trials)
        report.add(
            "gradient-bias",
            bias,
            bias_radius,
            0.5 * smoothing * constants.L_g * (d + 3) ** 1.5,
            trials=single_sample_trials,
            smoothing=smoothing,
            cancellation_fraction=cancel,
        )

        norms_sq = manifold.inner(x, terms, terms)
        second = float(norms_sq.mean())
        second_radius = 4.0 * float(norms_sq.std(ddof=1)) / math.sqrt(single_sample_trials)
        report.add(
            "gradient-second-moment",
            second,
            second_radius,
            0.5 * smoothing**2 * constants.L_g**2 * (d + 6) ** 3 + 2.0 * (d + 4) * gnorm2,
            trials=single_sample_trials,
            smoothing=smoothing,
        )

    if averaged_trials and averaged_samples:
        devs = np.empty(averaged_trials)
        for t in range(averaged_trials):
            est = estimate_gradient(
                oracle, manifold, x, smoothing, averaged_samples, seed, iteration=t + 1
            )
            diff = est.vector - grad
            devs[t] = float(manifold.inner(x, diff, diff))
        bound = (
            smoothing**2 * constants.L_g**2 * (d + 6) ** 3
            + 8.0 * (d + 4) * (sigma_sq + gnorm2) / averaged_samples
        )
        report.add(
            "averaged-deviation",
            float(devs.mean()),
            4.0 * float(devs.std(ddof=1)) / math.sqrt(averaged_trials),
            bound,
            trials=averaged_trials,
            samples=averaged_samples,
            smoothing=smoothing,
            sigma_sq=sigma_sq,
        )

    if hessian_trials and hessian_samples and problem.has_hessian:
        devs = np.empty(hessian_trials)
        for t in range(hessian_trials):
            op = estimate_hessian(
                oracle, manifold, x, smoothing, hessian_samples, seed, iteration=t + 1
            )
            delta = lambda eta: op.apply(eta) - problem.hess_action(x, eta)
            devs[t] = operator_norm(delta, manifold, x, seed=seed + t) ** 2
        bound = (
            (d + 16) ** 4 * constants.L_g / (math.sqrt(2.0) * hessian_samples)
            + smoothing**2 * constants.L_H**2 * (d + 6) ** 5 / 18.0
        )
        report.add(
            "hessian-deviation",
            float(devs.mean()),
            4.0 * float(devs.std(ddof=1)) / math.sqrt(hessian_trials),
            bound,
            trials=hessian_trials,
            samples=hessian_samples,
            smoothing=smoothing,
        )

    return report
