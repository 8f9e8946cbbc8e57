"""Command-line experiment runner.

Subcommands: ``solve`` (continuation run with artifacts), ``wasserstein``
(discrete distances between the configured densities), ``verify``
(quantitative estimate checks: ``split``, ``bbbb``, ``cl1``, ``guard``),
``sweep`` (several configs in a parallel worker pool, one directory
each) and ``report`` (render a finished run directory).

Exit codes: 0 success, 2 curvature-guard violation, 3 solver failure,
4 configuration error.  Diagnostics are written into the output
directory before every exit once that directory is known.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import build_ledger, build_pair, load_config
from .errors import (
    ConfigError,
    GuardViolated,
    MissingArtifacts,
    OtLabError,
    ValidationError,
)
from .estimates import (
    cl1_torus_check,
    dichotomy_split,
    gradient_l2_report,
    guard_check,
    min_hessian_eigenvalue,
    proof_gradient_constant,
)
from .fields import resample_density
from .geometry import TorusGrid
from .reporting import (
    HEATMAP_NAME,
    render_report,
    write_fields_csv,
    write_run_summary,
    write_slice_csvs,
    write_svg_heatmap,
    write_trace_csv,
)
from .solver import continuity_solve
from .transport import hessian_metric
from .wasserstein import density_to_atoms, exact_ot, sinkhorn

EXIT_OK = 0
EXIT_GUARD = 2
EXIT_SOLVER = 3
EXIT_CONFIG = 4


def _fail(message):
    print(f"error: {message}", file=sys.stderr)


def _grid_info(grid):
    return {"kind": grid.kind, "dimension": grid.dimension,
            "resolution": list(grid.resolution),
            "scale": getattr(grid, "scale", 1.0),
            "injectivity_radius": grid.injectivity_radius}


def _trace_summary(states):
    if not states:
        return None
    return {"length": len(states), "t_final": states[-1].t,
            "lambda_max": max(s.lambda_max for s in states),
            "grad_max": max(s.grad_max for s in states),
            "residual_final": states[-1].residual_inf,
            "min_eig_w": min(s.min_eig_w for s in states)}


def _error_info(err):
    return {"type": type(err).__name__, "message": str(err)}


class _Run:
    """One configured run: loads, executes, writes artifacts, exits."""

    def __init__(self, args, subcommand):
        self.subcommand = subcommand
        self.t_start = time.perf_counter()
        self.out_dir = None
        self.summary = {"subcommand": subcommand, "status": "failed",
                        "exit_code": EXIT_CONFIG}
        self.cfg = None
        self.base_dir = os.path.dirname(os.path.abspath(args.config))
        self.cfg = load_config(args.config, args.set or [])
        self.out_dir = self.cfg.outputs["directory"]
        os.makedirs(self.out_dir, exist_ok=True)
        self.summary["config"] = self.cfg.to_dict()

    def finish(self, exit_code, status):
        self.summary["exit_code"] = exit_code
        self.summary["status"] = status
        self.summary["timings"] = {
            "total_s": time.perf_counter() - self.t_start}
        if self.out_dir is not None:
            write_run_summary(self.out_dir, self.summary)
        return exit_code

    def build(self):
        pair = build_pair(self.cfg, base_dir=self.base_dir)
        ledger = build_ledger(self.cfg, pair)
        self.summary["grid"] = _grid_info(pair.grid)
        self.summary["ledger"] = ledger
        return pair, ledger

    def write_solution_artifacts(self, states, potential):
        formats = self.cfg.outputs["formats"]
        if "csv" in formats:
            write_trace_csv(os.path.join(self.out_dir, "trace.csv"),
                            states)
        if potential is None:
            return
        grid = potential.grid
        if "csv" in formats:
            write_fields_csv(os.path.join(self.out_dir, "fields.csv"),
                             potential)
        if "svg" in formats and grid.dimension == 2:
            wf = hessian_metric(potential)
            write_svg_heatmap(
                os.path.join(self.out_dir, HEATMAP_NAME), grid,
                {"u": potential.values, "lambda": wf.max_eig})
        elif "svg" in formats and grid.dimension == 3:
            write_slice_csvs(self.out_dir, potential)


def _run_or_config_error(args, subcommand, body):
    """Shared scaffolding: config errors exit 4, artifacts always land."""
    try:
        run = _Run(args, subcommand)
    except (ConfigError, ValidationError) as err:
        _fail(str(err))
        return EXIT_CONFIG
    try:
        return body(run)
    except (ConfigError, ValidationError) as err:
        _fail(str(err))
        run.summary["error"] = _error_info(err)
        return run.finish(EXIT_CONFIG, "config-error")


def cmd_solve(args):
    def body(run):
        pair, ledger = run.build()
        sink = []
        potential = None
        try:
            result = continuity_solve(pair, run.cfg.solver, ledger=ledger,
                                      trace_sink=sink)
        except GuardViolated as err:
            if err.state is not None:
                err.state.guard = err.report
                sink.append(err.state)
                potential = err.state.potential
            run.summary["error"] = _error_info(err)
            run.summary["guard"] = err.report
            run.summary["trace"] = _trace_summary(sink)
            run.summary["certificate"] = {
                "granted": False,
                "reason": f"guard violation: {err}"}
            # trace.csv rows are the accepted continuation states; the
            # seed (first sink entry) is summarized, not traced.
            run.write_solution_artifacts(sink[1:], potential)
            _fail(str(err))
            return run.finish(EXIT_GUARD, "guard-violation")
        except OtLabError as err:
            run.summary["error"] = _error_info(err)
            run.summary["trace"] = _trace_summary(sink)
            run.summary["certificate"] = {
                "granted": False, "reason": f"solver failure: {err}"}
            run.write_solution_artifacts(
                sink[1:], sink[-1].potential if sink else None)
            _fail(str(err))
            return run.finish(EXIT_SOLVER, "solver-failure")
        states = result.states
        run.summary["trace"] = _trace_summary(states)
        run.summary["certificate"] = result.certificate
        final = states[-1]
        if final.guard is not None:
            run.summary["guard"] = final.guard
        run.write_solution_artifacts(result.trace, result.potential)
        return run.finish(EXIT_OK, "ok")

    return _run_or_config_error(args, "solve", body)


def _distance_atoms(pair, spec):
    quantize = (spec or {}).get("quantize")
    mu, nu = pair.mu, pair.nu
    if quantize is not None and quantize < min(pair.grid.resolution):
        if not isinstance(pair.grid, TorusGrid):
            raise ConfigError("wasserstein.quantize needs a torus grid")
        coarse = TorusGrid(periods=pair.grid.periods,
                           resolution=(int(quantize),)
                           * pair.grid.dimension)
        mu = resample_density(mu, coarse)
        nu = resample_density(nu, coarse)
    return density_to_atoms(mu), density_to_atoms(nu)


def cmd_wasserstein(args):
    def body(run):
        pair, _ = run.build()
        spec = run.cfg.wasserstein or {"method": "exact",
                                       "epsilon": 0.01}
        src, tgt = _distance_atoms(pair, spec)
        distances = {"atoms": int(src.points.shape[0]),
                     "method": spec["method"]}
        if spec["method"] == "exact":
            plan2 = exact_ot(src, tgt, cost_exponent=2.0)
            plan1 = exact_ot(src, tgt, cost_exponent=1.0)
            w2 = float(np.sqrt(max(plan2.cost, 0.0)))
            w1 = float(plan1.cost)
            if w1 > w2 + 1e-9:
                raise ValidationError(
                    f"distance ordering failed: w1 = {w1!r} above "
                    f"w2 = {w2!r}")
            distances.update(w1=w1, w2=w2, w2_sq=w2 * w2,
                             lp_gap_w2=plan2.duality_gap,
                             lp_gap_w1=plan1.duality_gap)
        else:
            ent = sinkhorn(src, tgt, epsilon=spec["epsilon"])
            distances.update(
                epsilon=spec["epsilon"], cost=ent.cost,
                cost_debiased=ent.cost_debiased,
                w2_entropic=float(np.sqrt(max(ent.cost_debiased, 0.0))),
                marginal_violation=ent.marginal_violation,
                iterations=ent.iterations, converged=ent.converged,
                approximate=True)
        run.summary["distances"] = distances
        return run.finish(EXIT_OK, "ok")

    return _run_or_config_error(args, "wasserstein", body)


def _verify_split(run, pair, ledger):
    if ledger is None:
        raise ConfigError("verify split needs a ledger section")
    report = dichotomy_split(ledger.poly_c1, ledger.poly_c2,
                             ledger.grad_budget, ledger.poly_degree)
    run.summary["verify"] = {
        "split": dataclasses.asdict(report),
        "hessian_cap": ledger.hessian_cap,
        "split_valid": ledger.split_valid,
    }
    return EXIT_OK, "ok"


def _verify_bbbb(run, pair, ledger):
    result = continuity_solve(pair, run.cfg.solver, ledger=ledger)
    run.summary["trace"] = _trace_summary(result.states)
    u = result.potential
    spec = run.cfg.verify or {}
    bound = spec.get("semiconvexity")
    if bound is None:
        bound = abs(min(0.0, min_hessian_eigenvalue(u))) * 1.01 + 1e-12
    report = gradient_l2_report(u, pair.mu, semiconvexity=bound)
    mu_min = float(np.exp(np.min(pair.mu.log_values)))
    proof_c = proof_gradient_constant(bound, mu_min, u.grid.dimension)
    run.summary["verify"] = {
        "gradient_l2": dataclasses.asdict(report),
        "semiconvexity": bound,
        "proof_constant": proof_c,
        "bound_holds": bool(
            report.grad_sup ** report.exponent
            <= proof_c * report.l2_sq + 1e-30),
    }
    return EXIT_OK, "ok"


def _verify_cl1(run, pair, ledger):
    spec = run.cfg.verify or {}
    delta0 = spec.get("delta0")
    if delta0 is None and ledger is not None:
        delta0 = ledger.grad_budget
    if delta0 is None:
        raise ConfigError(
            "verify cl1 needs verify.delta0 or a ledger gradient budget")
    result = continuity_solve(pair, run.cfg.solver, ledger=ledger)
    run.summary["trace"] = _trace_summary(result.states)
    report = cl1_torus_check(pair, result.potential, 1.0, delta0)
    run.summary["verify"] = {"cl1": report, "delta0": delta0}
    return EXIT_OK, "ok"


def _verify_guard(run, pair, ledger):
    if ledger is None:
        raise ConfigError("verify guard needs a ledger section")
    spec = run.cfg.verify or {}
    lambdas = spec.get("lambdas")
    if not lambdas:
        raise ConfigError("verify guard needs verify.lambdas")
    reports = [guard_check(ledger, float(lam)) for lam in lambdas]
    run.summary["verify"] = {
        "guard": [{"lambda_max": r.lambda_max, "verdict": r.verdict,
                   "warning": r.warning,
                   "precondition_met": r.precondition_met,
                   "message": r.message} for r in reports],
    }
    violated = any(r.precondition_met and r.verdict != "ok"
                   for r in reports)
    if violated:
        return EXIT_GUARD, "guard-violation"
    return EXIT_OK, "ok"


_VERIFY_MODES = {"split": _verify_split, "bbbb": _verify_bbbb,
                 "cl1": _verify_cl1, "guard": _verify_guard}


def cmd_verify(args):
    def body(run):
        run.summary["subcommand"] = f"verify {args.mode}"
        pair, ledger = run.build()
        try:
            code, status = _VERIFY_MODES[args.mode](run, pair, ledger)
        except GuardViolated as err:
            run.summary["error"] = _error_info(err)
            run.summary["guard"] = err.report
            _fail(str(err))
            return run.finish(EXIT_GUARD, "guard-violation")
        except OtLabError as err:
            if isinstance(err, (ConfigError, ValidationError)):
                raise
            run.summary["error"] = _error_info(err)
            _fail(str(err))
            return run.finish(EXIT_SOLVER, "solver-failure")
        return run.finish(code, status)

    return _run_or_config_error(args, "verify", body)


def _sweep_worker(payload):
    path, overrides = payload
    args = argparse.Namespace(config=path, set=list(overrides))
    code = cmd_solve(args)
    out_dir = None
    try:
        out_dir = load_config(path, overrides).outputs["directory"]
    except ConfigError:
        pass
    return path, code, out_dir


def cmd_sweep(args):
    overrides = args.set or []
    directories = {}
    for path in args.configs:
        try:
            cfg = load_config(path, overrides)
        except (ConfigError, ValidationError) as err:
            _fail(f"{path}: {err}")
            return EXIT_CONFIG
        out = os.path.abspath(cfg.outputs["directory"])
        if out in directories:
            _fail(f"{path} and {directories[out]} share the output "
                  f"directory {out}; sweep runs must not share state")
            return EXIT_CONFIG
        directories[out] = path
    jobs = args.jobs or min(len(args.configs), os.cpu_count() or 1)
    payloads = [(path, overrides) for path in args.configs]
    if jobs == 1:
        results = [_sweep_worker(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_worker, payloads))
    for path, code, out_dir in results:
        print(f"{path}: exit {code} -> {out_dir}")
    codes = [code for _, code, _ in results]
    if EXIT_CONFIG in codes:
        return EXIT_CONFIG
    if EXIT_SOLVER in codes:
        return EXIT_SOLVER
    if EXIT_GUARD in codes:
        return EXIT_GUARD
    return EXIT_OK


def cmd_report(args):
    try:
        text = render_report(args.run_dir)
    except MissingArtifacts as err:
        _fail(str(err))
        return EXIT_CONFIG
    sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="otlab",
        description="Optimal-transport continuation runs with "
                    "quantitative curvature-bound verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_command(name, help_text, fn):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="TOML experiment config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted-path config override (repeatable)")
        p.set_defaults(fn=fn)
        return p

    add_config_command("solve", "run the continuation solver", cmd_solve)
    add_config_command("wasserstein",
                       "discrete transport distances for the "
                       "configured pair", cmd_wasserstein)
    p_verify = sub.add_parser("verify",
                              help="quantitative estimate checks")
    p_verify.add_argument("mode", choices=sorted(_VERIFY_MODES),
                          help="which estimate to check")
    p_verify.add_argument("config", help="TOML experiment config")
    p_verify.add_argument("--set", action="append", metavar="KEY=VALUE",
                          help="dotted-path config override (repeatable)")
    p_verify.set_defaults(fn=cmd_verify)

    p_sweep = sub.add_parser(
        "sweep", help="run several configs in a parallel worker pool")
    p_sweep.add_argument("configs", nargs="+",
                         help="TOML experiment configs, one run each")
    p_sweep.add_argument("--set", action="append", metavar="KEY=VALUE",
                         help="override applied to every run")
    p_sweep.add_argument("--jobs", type=int, default=None,
                         help="worker processes (default: one per config "
                              "up to the CPU count)")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_report = sub.add_parser(
        "report", help="render the summary of a run directory")
    p_report.add_argument("run_dir")
    p_report.set_defaults(fn=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
