"""Command-line front end: reproducible experiment runs from JSON configs.

Subcommands:

* ``manifold-zo run <config.json>``              -- execute a seed sweep,
  writing one trace CSV per run plus an aggregate JSON summary
* ``manifold-zo check-estimators <config.json>`` -- estimator diagnostics
  against the theoretical bounds (exit 0 iff every check passes)
* ``manifold-zo bench <config.json>``            -- kernel timings

Outputs land in ``--out``, else ``$MANIFOLD_ZO_OUT``, else the working
directory.  Trace CSVs are byte-identical across reruns and across
``--jobs`` settings; timestamps appear only in summary metadata.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import statistics
import sys
import time
from datetime import datetime, timezone

import numpy as np

from .estimators import estimate_gradient, estimate_hessian, estimator_diagnostics
from .manifolds import TheoryConstants
from .problems import PROBLEM_KINDS, with_noise
from .prox import solve_prox_tangent
from .cubic import solve_cubic
from .solvers import (
    SOLVERS,
    SolverConfig,
    StopRule,
    ball_projected_sgd,
    estimate_constants,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(ValueError):
    pass


def _expect(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    _expect(isinstance(cfg, dict), "config must be a JSON object")
    return cfg


def _build_problem(spec: dict):
    _expect(isinstance(spec, dict), "problem must be an object")
    kind = spec.get("kind")
    _expect(kind in PROBLEM_KINDS, f"unknown problem kind {kind!r}")
    kwargs = {k: v for k, v in spec.items() if k not in ("kind", "noise_sd", "noise_seed")}
    try:
        problem = PROBLEM_KINDS[kind](**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad problem parameters for {kind!r}: {exc}")
    noise_sd = spec.get("noise_sd", 0.0)
    if noise_sd:
        problem = with_noise(problem, float(noise_sd), int(spec.get("noise_seed", 0)))
    return problem


def _build_constants(spec, problem) -> TheoryConstants | None:
    if spec is None:
        return None
    _expect(isinstance(spec, dict), "constants must be an object")
    if spec.get("estimate"):
        return estimate_constants(
            problem, seed=int(spec.get("seed", 0)), num_pairs=int(spec.get("pairs", 100))
        )
    known = {k: float(v) for k, v in spec.items() if k in ("L_g", "L_H", "sigma", "G",
                                                           "curvature_lb", "diameter")}
    return TheoryConstants(**known)


def _build_solver_config(spec: dict, seed: int) -> tuple[str, SolverConfig]:
    _expect(isinstance(spec, dict), "solver must be an object")
    solver_id = spec.get("id")
    _expect(solver_id in SOLVERS, f"unknown solver id {solver_id!r}")
    stop_spec = spec.get("stop", {"kind": "max-iter"})
    _expect(isinstance(stop_spec, dict) and "kind" in stop_spec, "stop must have a kind")
    fields = dict(
        smoothing=spec.get("smoothing"),
        max_iters=spec.get("max_iters"),
        gradient_samples=spec.get("gradient_samples", 1),
        hessian_samples=spec.get("hessian_samples", 1),
        step_size=spec.get("step_size"),
        step_rule=spec.get("step_rule", "fixed"),
        prox_step=spec.get("prox_step"),
        cubic_weight=spec.get("cubic_weight"),
        krylov_dim=spec.get("krylov_dim", 50),
        monitor_every=spec.get("monitor_every", 1),
        backtracking=spec.get("backtracking", False),
        seed=seed,
    )
    _expect(fields["smoothing"] is not None, "solver.smoothing is required")
    _expect(fields["max_iters"] is not None, "solver.max_iters is required")
    try:
        config = SolverConfig(
            stop=StopRule(stop_spec["kind"], float(stop_spec.get("threshold", 0.0))),
            **{k: v for k, v in fields.items()},
        )
    except ValueError as exc:
        raise ConfigError(str(exc))
    return solver_id, config


def _validate_run_config(cfg: dict) -> None:
    for key in ("name", "problem", "solver", "seeds"):
        _expect(key in cfg, f"run config needs {key!r}")
    _expect(isinstance(cfg["seeds"], list) and cfg["seeds"], "seeds must be a nonempty list")
    _expect(all(isinstance(s, int) for s in cfg["seeds"]), "seeds must be integers")
    solver = cfg["solver"]
    _expect(isinstance(solver, dict), "solver must be an object")
    needs_constants = (
        solver.get("step_rule", "fixed") != "fixed"
        or (solver.get("id") == "prox-gd" and solver.get("prox_step") is None)
        or (solver.get("id") == "cubic-newton" and solver.get("cubic_weight") is None)
    )
    if needs_constants:
        _expect(cfg.get("constants") is not None,
                "this solver configuration requires a constants section")
    if solver.get("id") == "sgd-ball":
        _expect("ball" in cfg, "sgd-ball needs a ball section {center, radius}")


def _resolve_ball(cfg: dict, problem, seed: int):
    spec = cfg["ball"]
    center_kind = spec.get("center", "initial")
    if center_kind == "initial":
        center = problem.initial_point(seed)
    elif center_kind == "mean":
        _expect(hasattr(problem, "matrices"), "ball center 'mean' needs a matrix-mean problem")
        center = np.mean(problem.matrices, axis=0)
    else:
        raise ConfigError(f"unknown ball center {center_kind!r}")
    radius = spec.get("radius", "auto")
    if radius == "auto":
        _expect(hasattr(problem, "matrices"), "radius 'auto' needs a matrix-mean problem")
        radius = 2.0 * max(float(problem.manifold.dist(center, a)) for a in problem.matrices)
    return center, float(radius)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_trace_csv(trace, path: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("iter,f,grad_norm,step_norm,calls,flags\n")
        for r in trace.records:
            fh.write(
                f"{r.iteration},{_fmt(r.f)},{_fmt(r.grad_norm)},{_fmt(r.step_norm)},"
                f"{r.calls},{r.flags}\n"
            )


def _execute_run(payload: dict) -> dict:
    """One (solver, seed) run; executed possibly in a worker process."""
    cfg = payload["config"]
    seed = payload["seed"]
    problem = _build_problem(cfg["problem"])
    constants = None
    if payload["constants"] is not None:
        constants = TheoryConstants(**{
            k: payload["constants"][k]
            for k in ("L_g", "L_H", "sigma", "G", "curvature_lb", "diameter")
        })
    solver_id, config = _build_solver_config(cfg["solver"], seed)
    if solver_id == "sgd-ball":
        center, radius = _resolve_ball(cfg, problem, seed)
        trace = ball_projected_sgd(problem, config, center, radius, constants=constants)
    else:
        trace = SOLVERS[solver_id](problem, config, constants=constants)
    path = os.path.join(payload["out"], f"{cfg['name']}_{seed}.csv")
    write_trace_csv(trace, path)
    last = trace.records[-1]
    assert trace.total_calls == last.calls, "oracle accounting out of sync with the trace"
    return {
        "seed": seed,
        "iterations": trace.iterations,
        "stopped_at": trace.stopped_at,
        "reason": trace.reason,
        "total_calls": trace.total_calls,
        "wall_time": trace.wall_time,
        "final_f": last.f,
        "final_grad_norm": last.grad_norm,
        "error": trace.extras.get("error"),
        "trace_csv": path,
    }


def _median_iqr(values: list) -> tuple:
    if not values:
        return None, None
    med = statistics.median(values)
    qs = statistics.quantiles(values, n=4) if len(values) > 1 else [values[0]] * 3
    return med, [qs[0], qs[2]]


def cmd_run(cfg: dict, out_dir: str, jobs: int) -> int:
    _validate_run_config(cfg)
    problem = _build_problem(cfg["problem"])  # validates problem params early
    for seed in cfg["seeds"]:
        _build_solver_config(cfg["solver"], seed)  # validates solver params early
    constants = _build_constants(cfg.get("constants"), problem)
    start = time.perf_counter()
    payloads = [
        {"config": cfg, "seed": seed, "out": out_dir,
         "constants": constants.to_dict() if constants else None}
        for seed in cfg["seeds"]
    ]
    progress_path = os.path.join(out_dir, f"{cfg['name']}_progress.log")
    results = {}
    failed = False
    with open(progress_path, "a") as progress:
        if jobs <= 1:
            for payload in payloads:
                res = _execute_run(payload)
                results[res["seed"]] = res
                progress.write(f"{cfg['name']} seed={res['seed']} iters={res['iterations']} "
                               f"reason={res['reason']}\n")
                progress.flush()
        else:
            with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = {pool.submit(_execute_run, p): p["seed"] for p in payloads}
                for fut in concurrent.futures.as_completed(futures):
                    res = fut.result()
                    results[res["seed"]] = res
                    progress.write(f"{cfg['name']} seed={res['seed']} iters={res['iterations']} "
                                   f"reason={res['reason']}\n")
                    progress.flush()
    runs = [results[s] for s in cfg["seeds"]]
    failed = any(r["error"] for r in runs)
    stopped = [r["stopped_at"] for r in runs if r["stopped_at"] is not None]
    med, iqr = _median_iqr(stopped)
    summary = {
        "experiment": cfg["name"],
        "solver": cfg["solver"]["id"],
        "config": cfg,
        "constants": constants.to_dict() if constants else None,
        "runs": runs,
        "median_iters": med,
        "iqr_iters": iqr,
        "stopped_fraction": len(stopped) / len(runs),
        "total_calls": sum(r["total_calls"] for r in runs),
        "metadata": {
            "wall_time": time.perf_counter() - start,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        },
    }
    with open(os.path.join(out_dir, f"{cfg['name']}_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_check_estimators(cfg: dict, out_dir: str, jobs: int) -> int:
    _expect("checks" in cfg and isinstance(cfg["checks"], list) and cfg["checks"],
            "check config needs a nonempty checks list")
    name = cfg.get("name", "estimator_checks")
    reports = []
    all_pass = True
    for i, spec in enumerate(cfg["checks"]):
        _expect("problem" in spec, f"check {i} needs a problem")
        _expect("smoothing" in spec, f"check {i} needs smoothing")
        problem = _build_problem(spec["problem"])
        constants = _build_constants(spec.get("constants", {"estimate": True}), problem)
        report = estimator_diagnostics(
            problem,
            constants,
            smoothing=float(spec["smoothing"]),
            single_sample_trials=int(spec.get("single_sample_trials", 0)),
            averaged_samples=spec.get("averaged_samples"),
            averaged_trials=int(spec.get("averaged_trials", 0)),
            hessian_samples=spec.get("hessian_samples"),
            hessian_trials=int(spec.get("hessian_trials", 0)),
            seed=int(spec.get("seed", 0)),
        )
        all_pass = all_pass and report.passed
        reports.append({
            "problem": spec["problem"],
            "constants": constants.to_dict(),
            **report.to_dict(),
        })
    out = {"name": name, "passed": all_pass, "reports": reports}
    with open(os.path.join(out_dir, f"{name}_report.json"), "w") as fh:
        json.dump(out, fh, indent=2)
    return EXIT_OK if all_pass else 1


def _time_kernel(fn, repeats: int) -> dict:
    for _ in range(3):
        fn()
    times = []
    for _ in range(max(repeats, 30)):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    times.sort()
    n = len(times)
    return {
        "repeats": n,
        "median_s": times[n // 2],
        "q1_s": times[n // 4],
        "q3_s": times[(3 * n) // 4],
        "min_s": times[0],
    }


def cmd_bench(cfg: dict, out_dir: str, jobs: int) -> int:
    _expect("kernels" in cfg and isinstance(cfg["kernels"], list) and cfg["kernels"],
            "bench config needs a nonempty kernels list")
    name = cfg.get("name", "bench")
    repeats = int(cfg.get("repeats", 30))
    timings = []
    for i, spec in enumerate(cfg["kernels"]):
        kind = spec.get("kind")
        _expect("problem" in spec, f"kernel {i} needs a problem")
        problem = _build_problem(spec["problem"])
        man = problem.manifold
        seed = int(spec.get("seed", 0))
        x = problem.initial_point(seed)
        oracle = problem.make_oracle(seed)
        if kind == "gradient":
            mu, m = float(spec["smoothing"]), int(spec.get("samples", 1))
            fn = lambda: estimate_gradient(oracle, man, x, mu, m, seed)
        elif kind == "hessian":
            mu, b = float(spec["smoothing"]), int(spec.get("samples", 1))
            fn = lambda: estimate_hessian(oracle, man, x, mu, b, seed)
        elif kind == "prox":
            g = problem.grad(x)
            t = float(spec.get("prox_step", 1.0))
            fn = lambda: solve_prox_tangent(man, x, g, t, problem.l1_weight)
        elif kind == "cubic":
            mu, b = float(spec["smoothing"]), int(spec.get("samples", 1))
            hess = estimate_hessian(oracle, man, x, mu, b, seed)
            g = problem.grad(x)
            w = float(spec.get("cubic_weight", 1.0))
            fn = lambda: solve_cubic(hess.apply, man, x, g, w, seed=seed)
        else:
            raise ConfigError(f"unknown kernel kind {kind!r}")
        timings.append({"kind": kind, "problem": spec["problem"], **_time_kernel(fn, repeats)})
    with open(os.path.join(out_dir, f"{name}_bench.json"), "w") as fh:
        json.dump({"name": name, "timings": timings}, fh, indent=2)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="manifold-zo",
        description="Zeroth-order Riemannian optimization experiment harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd in ("run", "check-estimators", "bench"):
        p = sub.add_parser(cmd)
        p.add_argument("config", help="path to a JSON experiment config")
        p.add_argument("--out", default=None, help="output directory (default $MANIFOLD_ZO_OUT or .)")
        p.add_argument("--jobs", type=int, default=1, help="parallel (solver, seed) runs")
    args = parser.parse_args(argv)

    out_dir = args.out or os.environ.get("MANIFOLD_ZO_OUT") or "."
    handlers = {
        "run": cmd_run,
        "check-estimators": cmd_check_estimators,
        "bench": cmd_bench,
    }
    try:
        cfg = _load_config(args.config)
        os.makedirs(out_dir, exist_ok=True)
        return handlers[args.command](cfg, out_dir, max(1, args.jobs))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime abort; partial traces already flushed
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
