"""Derivative-free solvers producing reproducible run traces.

Four optimizers consume function values only:

* ``gradient_descent``       -- deterministic objectives, smoothed-gradient steps
* ``stochastic_gradient_descent`` -- sampled objectives, averaged estimator
* ``ball_projected_sgd``     -- geodesically convex setting: exponential steps
                                projected back into a geodesic ball
* ``proximal_gradient``      -- composite f + lam ||.||_1 on Stiefel, with the
                                tangent prox subproblem per iteration
* ``cubic_newton``           -- second-order: estimated Hessian operator and a
                                cubic-regularized Krylov subproblem step

Analytic derivatives of the benchmark problems are used only for stopping
criteria and reporting (the "monitoring oracle"); they are never counted
against the zeroth-order call budget.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .cubic import solve_cubic
from .estimators import estimate_gradient, estimate_hessian, operator_norm
from .manifolds import FeasibilityError, TheoryConstants
from .problems import BenchmarkProblem
from .prox import solve_prox_tangent
from .rng import NormalStream

__all__ = [
    "SolverConfig",
    "StopRule",
    "IterationRecord",
    "RunTrace",
    "gradient_descent",
    "stochastic_gradient_descent",
    "ball_projected_sgd",
    "proximal_gradient",
    "cubic_newton",
    "estimate_constants",
    "SOLVERS",
]

STOP_MAX_ITER = "max-iter"
STOP_GRAD_NORM = "grad-norm"
STOP_PROX_STEP = "prox-step-norm"


@dataclass
class StopRule:
    kind: str = STOP_MAX_ITER
    threshold: float = 0.0

    def __post_init__(self):
        if self.kind not in (STOP_MAX_ITER, STOP_GRAD_NORM, STOP_PROX_STEP):
            raise ValueError(f"unknown stop rule {self.kind!r}")


@dataclass
class SolverConfig:
    smoothing: float
    max_iters: int
    gradient_samples: int = 1
    hessian_samples: int = 1
    step_size: float | None = None
    step_rule: str = "fixed"  # fixed | theory-gd | theory-sgd
    prox_step: float | None = None
    cubic_weight: float | None = None
    krylov_dim: int = 50
    seed: int = 0
    stop: StopRule = field(default_factory=StopRule)
    monitor_every: int = 1
    backtracking: bool = False
    max_backtracks: int = 20

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.gradient_samples < 1 or self.hessian_samples < 1:
            raise ValueError("sample counts must be >= 1")
        if self.step_rule not in ("fixed", "theory-gd", "theory-sgd"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.monitor_every < 1:
            raise ValueError("monitor_every must be >= 1")


@dataclass
class IterationRecord:
    iteration: int
    f: float
    grad_norm: float
    step_norm: float
    calls: int
    flags: str = ""


@dataclass
class RunTrace:
    solver: str
    manifold: dict
    records: list[IterationRecord] = field(default_factory=list)
    reason: str = STOP_MAX_ITER
    wall_time: float = 0.0
    total_calls: int = 0
    final_point: np.ndarray | None = None
    constants: dict | None = None
    extras: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return self.records[-1].iteration if self.records else 0

    @property
    def stopped_at(self) -> int | None:
        """Iteration index at which the threshold stop fired, if it did."""
        return self.iterations if self.reason not in (STOP_MAX_ITER, "aborted") else None

    def summary(self) -> dict:
        return {
            "solver": self.solver,
            "manifold": self.manifold,
            "reason": self.reason,
            "iterations": self.iterations,
            "total_calls": self.total_calls,
            "wall_time": self.wall_time,
            "constants": self.constants,
            "extras": {k: v for k, v in self.extras.items() if not isinstance(v, np.ndarray)},
        }


def resolve_step(config: SolverConfig, constants: TheoryConstants | None, dim: int) -> float:
    if config.step_rule == "fixed":
        if config.step_size is None:
            raise ValueError("fixed step rule needs step_size")
        return float(config.step_size)
    if constants is None or constants.L_g <= 0:
        raise ValueError("theory step rules need constants with L_g > 0")
    if config.step_rule == "theory-gd":
        if config.gradient_samples >= 8 * (dim + 4):
            return 1.0 / constants.L_g
        return 1.0 / (2.0 * (dim + 4) * constants.L_g)
    return 1.0 / constants.L_g  # theory-sgd


class _Recorder:
    """Accumulates per-iteration records and handles monitored stops."""

    def __init__(self, problem, config, oracle, solver_name, constants):
        self.problem = problem
        self.config = config
        self.oracle = oracle
        self.trace = RunTrace(
            solver=solver_name,
            manifold=problem.manifold.describe(),
            constants=constants.to_dict() if constants is not None else None,
        )
        self._start = time.perf_counter()

    def monitored(self, k: int) -> bool:
        return k % self.config.monitor_every == 0 or k == self.config.max_iters

    def record(self, k: int, x, step_norm: float, flags: str = "") -> tuple[float, float]:
        if self.monitored(k):
            f = self.problem.monitor_value(x)
            gn = self.problem.grad_norm(x)
        else:
            f, gn = math.nan, math.nan
        self.trace.records.append(
            IterationRecord(k, f, gn, step_norm, self.oracle.calls, flags)
        )
        return f, gn

    def should_stop(self, k: int, stat: float) -> bool:
        stop = self.config.stop
        if stop.kind == STOP_MAX_ITER or not self.monitored(k) or math.isnan(stat):
            return False
        return stat <= stop.threshold

    def finish(self, x, reason: str) -> RunTrace:
        t = self.trace
        t.reason = reason
        t.final_point = x
        t.total_calls = self.oracle.calls
        t.wall_time = time.perf_counter() - self._start
        return t


def _check_feasible(problem, x) -> None:
    if __debug__:
        problem.manifold.check_point(x)


_ABORTABLE = (FeasibilityError, np.linalg.LinAlgError, FloatingPointError)


def gradient_descent(
    problem: BenchmarkProblem,
    config: SolverConfig,
    constants: TheoryConstants | None = None,
    x0: np.ndarray | None = None,
) -> RunTrace:
    """Smoothed-gradient descent for deterministic smooth objectives."""
    if problem.l1_weight:
        raise ValueError("gradient_descent requires a smooth objective")
    if problem.num_terms is not None or problem.noise_sd > 0:
        raise ValueError("gradient_descent requires a deterministic objective")
    return _sgd_loop(problem, config, constants, x0, name="gd")


def stochastic_gradient_descent(
    problem: BenchmarkProblem,
    config: SolverConfig,
    constants: TheoryConstants | None = None,
    x0: np.ndarray | None = None,
) -> RunTrace:
    """Averaged-estimator descent for sampled objectives."""
    if problem.l1_weight:
        raise ValueError("stochastic_gradient_descent requires a smooth objective")
    if problem.num_terms is None and problem.noise_sd <= 0:
        raise ValueError("stochastic_gradient_descent needs a sampled objective")
    return _sgd_loop(problem, config, constants, x0, name="sgd")


def ball_projected_sgd(
    problem: BenchmarkProblem,
    config: SolverConfig,
    center: np.ndarray,
    radius: float,
    constants: TheoryConstants | None = None,
    x0: np.ndarray | None = None,
) -> RunTrace:
    """Projected variant for geodesically convex problems.

    Steps use the exponential map and are projected back into the geodesic
    ball of the given radius around ``center``.
    """
    problem.manifold.dist(center, center)  # fails early without exp/log support
    return _sgd_loop(
        problem, config, constants, x0, name="sgd-ball", center=center, radius=float(radius)
    )


def _sgd_loop(problem, config, constants, x0, name, center=None, radius=None):
    man = problem.manifold
    oracle = problem.make_oracle(config.seed)
    step = resolve_step(config, constants, man.dim)
    x = x0 if x0 is not None else problem.initial_point(config.seed)
    man.check_point(x)
    rec = _Recorder(problem, config, oracle, name, constants)
    _, gn = rec.record(0, x, 0.0)
    if rec.should_stop(0, gn):
        return rec.finish(x, STOP_GRAD_NORM)
    try:
        for k in range(config.max_iters):
            est = estimate_gradient(
                oracle, man, x, config.smoothing, config.gradient_samples, config.seed, iteration=k
            )
            eta = -step * est.vector
            if center is not None:
                x = man.project_ball(man.retract_exp(x, eta), center, radius)
            else:
                x = man.retract(x, eta)
            _check_feasible(problem, x)
            _, gn = rec.record(k + 1, x, float(man.norm(x, eta)))
            if rec.should_stop(k + 1, gn):
                return rec.finish(x, STOP_GRAD_NORM)
    except _ABORTABLE as exc:
        rec.trace.extras["error"] = f"{type(exc).__name__}: {exc}"
        return rec.finish(x, "aborted")
    return rec.finish(x, STOP_MAX_ITER)


def proximal_gradient(
    problem: BenchmarkProblem,
    config: SolverConfig,
    constants: TheoryConstants | None = None,
    x0: np.ndarray | None = None,
) -> RunTrace:
    """Zeroth-order proximal gradient for f + lam ||.||_1 on Stiefel.

    Per iteration the tangent prox subproblem is solved at the estimated
    gradient; the monitored stationarity statistic is the norm of the
    subproblem solution at the analytic gradient.
    """
    man = problem.manifold
    if config.prox_step is not None:
        t = float(config.prox_step)
    elif constants is not None and constants.L_g > 0:
        t = 1.0 / constants.L_g
    else:
        raise ValueError("proximal_gradient needs prox_step or constants with L_g > 0")
    step = config.step_size if config.step_size is not None else 1.0
    lam = problem.l1_weight
    oracle = problem.make_oracle(config.seed)
    x = x0 if x0 is not None else problem.initial_point(config.seed)
    man.check_point(x)

    rec = _Recorder(problem, config, oracle, "prox-gd", constants)

    def monitor_stat(xk):
        return float(man.norm(xk, solve_prox_tangent(man, xk, problem.grad(xk), t, lam).v))

    stat = monitor_stat(x) if rec.monitored(0) else math.nan
    f0 = problem.monitor_value(x) if rec.monitored(0) else math.nan
    rec.trace.records.append(IterationRecord(0, f0, stat, 0.0, oracle.calls))
    if rec.should_stop(0, stat):
        return rec.finish(x, STOP_PROX_STEP)
    try:
        for k in range(config.max_iters):
            est = estimate_gradient(
                oracle, man, x, config.smoothing, config.gradient_samples, config.seed, iteration=k
            )
            sol = solve_prox_tangent(man, x, est.vector, t, lam)
            flags = "prox_fallback" if sol.fallback_used else ""
            eta = step
            x_new = man.retract(x, eta * sol.v)
            if config.backtracking:
                p_old = _oracle_composite(problem, oracle, x, k)
                for _ in range(config.max_backtracks):
                    if _oracle_composite(problem, oracle, x_new, k) < p_old:
                        break
                    eta *= 0.5
                    x_new = man.retract(x, eta * sol.v)
            x = x_new
            _check_feasible(problem, x)
            if rec.monitored(k + 1):
                f = problem.monitor_value(x)
                stat = monitor_stat(x)
            else:
                f, stat = math.nan, math.nan
            rec.trace.records.append(
                IterationRecord(k + 1, f, stat, float(man.norm(x, sol.v)), oracle.calls, flags)
            )
            if rec.should_stop(k + 1, stat):
                return rec.finish(x, STOP_PROX_STEP)
    except _ABORTABLE as exc:
        rec.trace.extras["error"] = f"{type(exc).__name__}: {exc}"
        return rec.finish(x, "aborted")
    return rec.finish(x, STOP_MAX_ITER)


def _oracle_composite(problem, oracle, x, iteration):
    """f via the oracle plus the analytic nonsmooth part (counted calls)."""
    val = oracle.eval(x, int(iteration))
    if problem.l1_weight:
        val += problem.l1_weight * float(np.abs(x).sum())
    return val


def cubic_newton(
    problem: BenchmarkProblem,
    config: SolverConfig,
    constants: TheoryConstants | None = None,
    x0: np.ndarray | None = None,
) -> RunTrace:
    """Cubic-regularized Newton steps from estimated gradients and Hessians.

    The iterate with the smallest subproblem step norm is kept as the
    second-order candidate point (``extras["candidate"]``).
    """
    if problem.l1_weight:
        raise ValueError("cubic_newton requires a smooth objective")
    man = problem.manifold
    if config.cubic_weight is not None:
        weight = float(config.cubic_weight)
    elif constants is not None and constants.L_H > 0:
        weight = constants.L_H
    else:
        raise ValueError("cubic_newton needs cubic_weight or constants with L_H > 0")
    oracle = problem.make_oracle(config.seed)
    x = x0 if x0 is not None else problem.initial_point(config.seed)
    man.check_point(x)
    rec = _Recorder(problem, config, oracle, "cubic-newton", constants)
    _, gn = rec.record(0, x, 0.0)
    if rec.should_stop(0, gn):
        return rec.finish(x, STOP_GRAD_NORM)
    best = (math.inf, 0, x)
    try:
        for k in range(config.max_iters):
            est = estimate_gradient(
                oracle, man, x, config.smoothing, config.gradient_samples, config.seed, iteration=k
            )
            hess = estimate_hessian(
                oracle, man, x, config.smoothing, config.hessian_samples, config.seed, iteration=k
            )
            sol = solve_cubic(
                hess.apply, man, x, est.vector, weight,
                krylov_dim=config.krylov_dim, seed=config.seed,
            )
            flags = []
            if sol.hard_case:
                flags.append("hard_case")
            if sol.cauchy_fallback:
                flags.append("cauchy_fallback")
            eta = man.proj(x, sol.step)
            step_norm = float(man.norm(x, eta))
            if step_norm < best[0]:
                best = (step_norm, k, x)
            x = man.retract(x, eta)
            _check_feasible(problem, x)
            _, gn = rec.record(k + 1, x, step_norm, "|".join(flags))
            if rec.should_stop(k + 1, gn):
                break
        else:
            rec.trace.extras.update(min_step_norm=best[0], min_step_iteration=best[1], candidate=best[2])
            return rec.finish(x, STOP_MAX_ITER)
        rec.trace.extras.update(min_step_norm=best[0], min_step_iteration=best[1], candidate=best[2])
        return rec.finish(x, STOP_GRAD_NORM)
    except _ABORTABLE as exc:
        rec.trace.extras["error"] = f"{type(exc).__name__}: {exc}"
        rec.trace.extras.update(min_step_norm=best[0], min_step_iteration=best[1], candidate=best[2])
        return rec.finish(x, "aborted")


def estimate_constants(
    problem: BenchmarkProblem,
    seed: int = 0,
    num_pairs: int = 100,
    safety: float = 1.5,
    sigma_points: int = 5,
) -> TheoryConstants:
    """Sample-based smoothness constants for theory step rules and bounds.

    Maximizes finite-curvature ratios of the pullback over random
    (point, direction) pairs and applies a safety factor.
    """
    man = problem.manifold
    rng = NormalStream(seed, (23,)).generator()
    l_g = 0.0
    l_h = 0.0
    grad_bound = 0.0
    sigma_sq = 0.0
    for i in range(num_pairs):
        x = man.random_point(rng)
        eta = man.sample_tangent_gaussian(x, rng)
        nrm = float(man.norm(x, eta))
        if nrm == 0.0:
            continue
        scale = 10.0 ** rng.uniform(-3, 0)
        eta = eta * (scale / nrm)
        g = problem.grad(x)
        grad_bound = max(grad_bound, float(man.norm(x, g)))
        f0 = problem.value(x)
        f1 = problem.value(man.retract(x, eta))
        lin = f0 + float(man.inner(x, g, eta))
        l_g = max(l_g, 2.0 * abs(f1 - lin) / scale**2)
        if problem.has_hessian:
            quad = lin + 0.5 * float(man.inner(x, eta, problem.hess_action(x, eta)))
            l_h = max(l_h, 6.0 * abs(f1 - quad) / scale**3)
            if i < sigma_points:
                # random directions underestimate the spectral norm; probe it
                l_g = max(l_g, operator_norm(lambda e: problem.hess_action(x, e), man, x,
                                             seed=seed + i))
        if i < sigma_points:
            sigma_sq = max(sigma_sq, problem.sigma_sq_at(x))
    return TheoryConstants(
        L_g=safety * l_g, L_H=safety * l_h, sigma=math.sqrt(sigma_sq), G=grad_bound
    )


SOLVERS = {
    "gd": gradient_descent,
    "sgd": stochastic_gradient_descent,
    "sgd-ball": ball_projected_sgd,
    "prox-gd": proximal_gradient,
    "cubic-newton": cubic_newton,
}
