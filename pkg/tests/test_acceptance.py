"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they complete.  Several criteria are Monte-Carlo reproductions at
full scale; the whole module takes on the order of ten minutes on one core.
"""

import json
import math
import time

import numpy as np
import pytest

from manifold_zo import (
    SolverConfig,
    StopRule,
    ball_projected_sgd,
    cubic_newton,
    estimate_constants,
    estimate_gradient,
    estimator_diagnostics,
    gradient_descent,
    karcher_mean_reference,
    make_karcher,
    make_kpca,
    make_procrustes,
    make_rayleigh,
    make_sparse_pca,
    proximal_gradient,
    solve_prox_tangent,
    solve_cubic,
    stochastic_gradient_descent,
    with_noise,
)
from manifold_zo.cli import main as cli_main
from manifold_zo.manifolds import Euclidean
from manifold_zo.problems import make_quadratic_sphere
from manifold_zo.rng import NormalStream


def _report(num: int, name: str, ok: bool, detail: str, started: float) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"\n[ACCEPTANCE {num:02d}] {name}: {status} ({detail}; {time.time() - started:.1f}s)")
    assert ok, f"criterion {num} ({name}): {detail}"


def _median(values):
    return float(np.median(values))


def test_criterion_01_table1_procrustes_regimes():
    started = time.time()
    regimes = [
        # (n, p, l, eps, step, window)
        (15, 5, 5, 1e-3, 1e-2, (200, 900)),
        (25, 15, 9, 1e-3, 1e-2, (600, 1200)),
        (50, 20, 20, 1e-2, 5e-3, (180, 340)),
    ]
    details = []
    ok = True
    for n, p, l, eps, step, window in regimes:
        stopped = []
        for seed in range(20):
            prob = make_procrustes(n, p, l=l, seed=11)
            cfg = SolverConfig(
                smoothing=1e-8, max_iters=2200, gradient_samples=n * p,
                step_size=step, seed=seed, stop=StopRule("grad-norm", eps),
            )
            trace = gradient_descent(prob, cfg)
            stopped.append(trace.stopped_at if trace.stopped_at is not None else cfg.max_iters + 1)
        med = _median(stopped)
        inside = window[0] <= med <= window[1]
        ok = ok and inside
        details.append(f"({n},{p}): median {med:.0f} in {window}")
    _report(1, "Table-1 ZO-RGD Procrustes", ok, "; ".join(details), started)


def test_criterion_02_gradient_bias_bound():
    started = time.time()
    prob = make_quadratic_sphere(10, seed=0)
    man = prob.manifold
    x = prob.initial_point(0)
    grad = prob.grad(x)
    consts = estimate_constants(prob, seed=0)
    d = man.dim
    trials = 1_000_000
    details = []
    ok = True
    for mu in (1e-2, 1e-3):
        est = estimate_gradient(prob.make_oracle(0), man, x, mu, trials, seed=2)
        bias = float(np.linalg.norm(est.vector - grad))
        bound = 0.5 * mu * consts.L_g * (d + 3) ** 1.5
        mc_sd = math.sqrt(2 * (d + 4) * float(np.sum(grad * grad)) / trials)
        passed = bias <= bound + 4 * mc_sd
        ok = ok and passed
        details.append(f"mu={mu:g}: bias {bias:.4f} <= {bound:.4f}+{4 * mc_sd:.4f}")
    _report(2, "gradient estimator bias bound", ok, "; ".join(details), started)


def test_criterion_03_second_moment_and_averaged_bounds():
    started = time.time()
    ok = True
    details = []
    cases = [
        ("sphere", make_quadratic_sphere(10, seed=1)),
        ("stiefel", make_procrustes(4, 2, seed=1)),
    ]
    for label, prob in cases:
        d = prob.manifold.dim
        consts = estimate_constants(prob, seed=0)
        for i, m in enumerate((8 * (d + 4), 16 * (d + 4))):
            report = estimator_diagnostics(
                prob, consts, smoothing=1e-3,
                single_sample_trials=300_000 if i == 0 else 0,
                averaged_samples=m, averaged_trials=400,
                seed=3,
            )
            ok = ok and report.passed
            for chk in report.checks:
                details.append(
                    f"{label} m={m} {chk['check']}: {chk['empirical']:.3f} "
                    f"<= {chk['bound']:.3f}+{chk['mc_radius']:.3f}"
                )
    _report(3, "second-moment and averaged-estimator bounds", ok,
            " | ".join(details[:4]) + " ...", started)


def test_criterion_04_hessian_deviation_bound():
    started = time.time()
    prob = make_quadratic_sphere(4, seed=2)
    consts = estimate_constants(prob, seed=0)
    ok = True
    details = []
    for b, trials in ((1000, 30), (10000, 15)):
        report = estimator_diagnostics(
            prob, consts, smoothing=1e-3,
            single_sample_trials=0,
            hessian_samples=b, hessian_trials=trials,
            seed=4,
        )
        chk = report.checks[0]
        ok = ok and chk["passed"]
        details.append(f"b={b}: E|dev|^2 {chk['empirical']:.3f} <= {chk['bound']:.1f}+{chk['mc_radius']:.3f}")
    _report(4, "Hessian estimator deviation bound", ok, "; ".join(details), started)


def test_criterion_05_prox_subproblem_correctness():
    from test_prox import cvx_reference

    started = time.time()
    from manifold_zo import Stiefel

    man = Stiefel(4, 2)
    gen = NormalStream(5, (0,)).generator()
    t, lam = 0.5, 0.1
    worst = 0.0
    for _ in range(100):
        x = man.random_point(gen)
        g = gen.standard_normal((4, 2))
        res = solve_prox_tangent(man, x, g, t, lam)
        ref = cvx_reference(x, g, t, lam)
        worst = max(worst, float(np.abs(res.v - ref).max()))
    match_ok = worst < 1e-5

    worst_gap = 0.0
    for _ in range(100):
        x = man.random_point(gen)
        g1 = gen.standard_normal((4, 2))
        g2 = gen.standard_normal((4, 2))
        v1 = solve_prox_tangent(man, x, g1, t, lam).v
        v2 = solve_prox_tangent(man, x, g2, t, lam).v
        gap = float(np.linalg.norm(v1 - v2)) - t * float(np.linalg.norm(g1 - g2))
        worst_gap = max(worst_gap, gap)
    nonexp_ok = worst_gap <= 2e-8
    _report(5, "prox subproblem vs convex reference", match_ok and nonexp_ok,
            f"max deviation {worst:.2e}, non-expansiveness slack {worst_gap:.2e}", started)


def test_criterion_06_cubic_subproblem_certificates():
    from test_cubic import brute_force_model_min

    started = time.time()
    gen = NormalStream(6, (0,)).generator()
    ok = True
    worst_model_gap = 0.0
    for trial in range(100):
        d = int(gen.integers(2, 11))
        man = Euclidean(d)
        x = np.zeros((d, 1))
        diag = gen.uniform(-2.0, 4.0, size=d)
        weight = float(10.0 ** gen.uniform(-0.5, 1.0))
        if trial == 0:
            # engineered hard case: no gradient, negative curvature
            d, man, x = 4, Euclidean(4), np.zeros((4, 1))
            diag = np.array([1.0, 0.5, -2.0, 3.0])
            g = np.zeros((4, 1))
            weight = 4.0
        else:
            g = gen.standard_normal((d, 1))
        op = lambda eta: diag[:, None] * eta
        sol = solve_cubic(op, man, x, g, weight, seed=trial)
        gnorm = float(np.linalg.norm(g))
        cert = (
            sol.residual <= 1e-7 * max(1.0, gnorm)
            and sol.shifted_min_eig >= -1e-7
            and (sol.cauchy_fallback or abs(sol.multiplier - 0.5 * weight * float(np.linalg.norm(sol.step))) <= 1e-8)
        )
        best = brute_force_model_min(diag, g.ravel(), weight, starts=25, seed=trial)
        gap = abs(sol.model_value - best)
        worst_model_gap = max(worst_model_gap, gap)
        ok = ok and cert and gap <= 1e-4
    _report(6, "cubic subproblem certificates and global model value", ok,
            f"worst model gap {worst_model_gap:.2e}", started)


def test_criterion_07_rscrn_desk_scale():
    started = time.time()
    stopped = []
    for seed in range(10):
        prob = make_procrustes(6, 4, l=60, seed=11)
        cfg = SolverConfig(
            smoothing=1e-6, max_iters=200, gradient_samples=1000, hessian_samples=10000,
            cubic_weight=300.0, seed=seed, stop=StopRule("grad-norm", 1e-3),
        )
        trace = cubic_newton(prob, cfg)
        stopped.append(trace.stopped_at if trace.stopped_at is not None else cfg.max_iters + 1)
    med = _median(stopped)
    procrustes_ok = med <= 200

    prob = make_rayleigh(10, seed=21)
    w, v = np.linalg.eigh(prob.matrix)
    man = prob.manifold
    escapes = 0
    for seed in range(10):
        x0 = v[:, [-2]].copy()
        pert = man.sample_tangent_gaussian(x0, NormalStream(seed, (77,)).generator())
        x0 = man.retract(x0, 1e-6 * pert / float(man.norm(x0, pert)))
        cfg = SolverConfig(smoothing=1e-5, max_iters=100, gradient_samples=200,
                           hessian_samples=2000, cubic_weight=30.0, seed=seed)
        trace = cubic_newton(prob, cfg, x0=x0)
        align = abs(float((trace.final_point.T @ v[:, [-1]])[0, 0]))
        escapes += align >= 0.99
    saddle_ok = escapes >= 9
    _report(7, "RSCRN desk scale and saddle escape", procrustes_ok and saddle_ok,
            f"median iterations {med:.0f} <= 200; escapes {escapes}/10", started)


def test_criterion_08_sparse_pca_and_kpca_reproduction():
    started = time.time()
    # ZO-ManPG on sparse PCA: monitored subproblem norm reaches 1e-2
    sp = make_sparse_pca(50, 100, 10, l1_weight=0.5, seed=13)
    consts = estimate_constants(sp, seed=0, num_pairs=60)  # prox step 1/L_g
    hits = 0
    for seed in range(20):
        cfg = SolverConfig(smoothing=1e-6, max_iters=500, gradient_samples=200,
                           seed=seed, stop=StopRule("prox-step-norm", 1e-2),
                           monitor_every=5)
        trace = proximal_gradient(sp, cfg, constants=consts)
        hits += trace.stopped_at is not None
    manpg_ok = hits >= 16

    # ZO-RSGD on kPCA: larger gradient batch dominates on the final norm
    wins = 0
    for seed in range(20):
        finals = {}
        for m in (20, 40):
            kp = make_kpca(100, 50, seed=17)
            cfg = SolverConfig(smoothing=1e-6, max_iters=300, gradient_samples=m,
                               step_size=0.1, seed=seed, monitor_every=1)
            trace = stochastic_gradient_descent(kp, cfg)
            finals[m] = float(np.mean([r.grad_norm for r in trace.records[-10:]]))
        wins += finals[40] <= finals[20]
    kpca_ok = wins >= 16
    _report(8, "sparse PCA / kPCA qualitative reproduction",
            manpg_ok and kpca_ok,
            f"ManPG threshold hits {hits}/20; batch dominance {wins}/20", started)


def test_criterion_09_karcher_mean():
    started = time.time()
    # two-matrix closed-form midpoint
    prob2 = make_karcher(3, 2, seed=6)
    man = prob2.manifold
    a1, a2 = prob2.matrices
    midpoint = man.retract_exp(a1, 0.5 * man.log(a1, a2))
    ref2 = karcher_mean_reference(prob2.matrices, tol=1e-13)
    midpoint_ok = float(np.abs(ref2 - midpoint).max()) < 1e-6

    # desk-scale run vs first-order reference
    prob = make_karcher(3, 500, seed=19)
    ref = karcher_mean_reference(prob.matrices)
    f_ref = prob.value(ref)
    center = np.mean(prob.matrices, axis=0)
    radius = 2.0 * max(float(prob.manifold.dist(center, a)) for a in prob.matrices)
    cfg = SolverConfig(smoothing=1e-5, max_iters=200, gradient_samples=50, step_size=0.5,
                       seed=0, monitor_every=20)
    trace = ball_projected_sgd(prob, cfg, center, radius)
    gap = prob.value(trace.final_point) / f_ref - 1.0
    run_ok = gap <= 0.01
    _report(9, "Karcher mean reproduction", midpoint_ok and run_ok,
            f"midpoint dev {float(np.abs(ref2 - midpoint).max()):.1e}; final f gap {gap:.4%}", started)


def test_criterion_10_determinism_and_accounting(tmp_path):
    started = time.time()
    cfg = {
        "name": "det",
        "problem": {"kind": "procrustes", "n": 6, "p": 3, "seed": 5},
        "solver": {"id": "gd", "smoothing": 1e-5, "gradient_samples": 18, "step_size": 1e-2,
                   "max_iters": 40, "stop": {"kind": "grad-norm", "threshold": 1e-4}},
        "seeds": [0, 1, 2, 3],
    }
    path = tmp_path / "det.json"
    path.write_text(json.dumps(cfg))
    outs = []
    for jobs, sub in ((1, "a"), (3, "b")):
        out = tmp_path / sub
        assert cli_main(["run", str(path), "--out", str(out), "--jobs", str(jobs)]) == 0
        outs.append({s: (out / f"det_{s}.csv").read_bytes() for s in cfg["seeds"]})
    identical = all(outs[0][s] == outs[1][s] for s in cfg["seeds"])

    # closed-form oracle accounting for the four solvers
    m, b, iters = 11, 7, 6
    acc_ok = True
    prob = make_procrustes(6, 3, seed=5)
    tr = gradient_descent(prob, SolverConfig(smoothing=1e-5, max_iters=iters,
                                             gradient_samples=m, step_size=1e-2, seed=0))
    acc_ok &= tr.total_calls == iters * (m + 1)
    noisy = with_noise(prob, 1e-3, seed=1)
    tr = stochastic_gradient_descent(noisy, SolverConfig(smoothing=1e-5, max_iters=iters,
                                                         gradient_samples=m, step_size=1e-2, seed=0))
    acc_ok &= tr.total_calls == iters * 2 * m
    sp = make_sparse_pca(6, 8, 2, l1_weight=0.2, seed=5)
    tr = proximal_gradient(sp, SolverConfig(smoothing=1e-5, max_iters=iters,
                                            gradient_samples=m, prox_step=0.3, seed=0))
    acc_ok &= tr.total_calls == iters * (m + 1)
    tr = cubic_newton(prob, SolverConfig(smoothing=1e-4, max_iters=iters, gradient_samples=m,
                                         hessian_samples=b, cubic_weight=100.0, seed=0))
    acc_ok &= tr.total_calls == iters * ((m + 1) + (2 * b + 1))

    _report(10, "determinism across jobs and exact call accounting",
            identical and acc_ok,
            f"byte-identical traces: {identical}; closed-form calls hold: {acc_ok}", started)
