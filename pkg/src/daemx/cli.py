"""Command-line interface: ``daemx simulate | estimate | observability | selftest``.

Every command prints one machine-readable ``SUMMARY {json}`` line on
standard output.  Exit status is 0 when all requested runs completed, 1
when some failed and 2 for invalid input; in the last case nothing is
written.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .canonical import canonicalize, pull_back
from .estimator import (DEFAULT_SWEEP, RegularityError, optimal_filter, suboptimal_filter,
                        worst_case_error_limit)
from .model import ModelError, TimeGrid, example_model, load_model, validate_model
from .ode import IntegrationError
from .simulate import (NOISE_KINDS, SIMULATION_COLUMNS, ExampleConfig, SimulationError,
                       generate_noise, observe, read_csv, simulate_example, simulation_table,
                       write_csv)

log = logging.getLogger("daemx")

BUILTIN_MODELS = ("example23", "example23-blind")


class UsageError(Exception):
    """Invalid input; maps to exit status 2."""


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", choices=BUILTIN_MODELS, default="example23")
    common.add_argument("--config", type=Path, help="YAML model file (overrides --model)")
    common.add_argument("--steps", type=int, help="number of grid steps")
    common.add_argument("--horizon", type=float, default=2.0, help="T for the builtin models")
    common.add_argument("--eps", type=_floats, help="comma-separated regularization parameters")
    common.add_argument("--ell", type=_floats, help="comma-separated direction (length m)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", type=Path, default=Path("daemx-out"),
                        help="output directory (DAEMX_OUT overrides)")
    common.add_argument("--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="daemx", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="generate truth and observations")
    s.add_argument("--noise", choices=NOISE_KINDS, default="uniform")
    e = sub.add_parser("estimate", parents=[common], help="run the optimal and suboptimal filters")
    e.add_argument("--obs", type=Path, help="observation CSV (default <out>/simulation.csv)")
    sub.add_parser("observability", parents=[common], help="eps sweep and observability verdict")
    sub.add_parser("selftest", parents=[common], help="oracle equivalence and invariant checks")
    return p


def _out_dir(args) -> Path:
    return Path(os.environ.get("DAEMX_OUT") or args.out)


def _load(args):
    if args.config is not None:
        if not args.config.is_file():
            raise UsageError(f"config file not found: {args.config}")
        model = load_model(args.config)
        if args.steps is not None:
            g = model.grid
            model = model.with_grid(TimeGrid(g.t0, g.t_end, args.steps))
    else:
        steps = 2000 if args.steps is None else args.steps
        model = example_model(args.horizon, steps, blind=args.model.endswith("blind"))
    problems = validate_model(model)
    if problems:
        raise UsageError("invalid model: " + "; ".join(problems[:5]))
    return model


def _ell(args, model) -> np.ndarray:
    if args.ell is None:
        ell = np.zeros(model.m)
        ell[0] = 1.0
        return ell
    if len(args.ell) != model.m:
        raise UsageError(f"--ell has {len(args.ell)} entries, model has m={model.m}")
    return np.array(args.ell)


def _eps_tag(eps: float) -> str:
    return f"{eps:.0e}".replace("+", "")


def _summary(payload: dict) -> None:
    print("SUMMARY " + json.dumps(payload, sort_keys=True, default=float))


def _write_all(outputs: dict[Path, tuple]) -> None:
    for path, (header, table) in outputs.items():
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(table, np.ndarray):
            write_csv(path, header, table)
        else:
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                w.writerows(table)


def cmd_simulate(args) -> int:
    if args.config is not None:
        raise UsageError("simulate supports the builtin example models only")
    cfg = ExampleConfig(T=args.horizon, n_steps=2000 if args.steps is None else args.steps,
                        noise_seed=args.seed, noise_kind=args.noise)
    model = cfg.model(blind=args.model.endswith("blind"))
    sim = simulate_example(cfg)
    eta = generate_noise(sim.grid, model.R, cfg.noise_seed, cfg.noise_kind)
    y = observe(sim.y_clean, eta) if not args.model.endswith("blind") else eta
    out = _out_dir(args) / "simulation.csv"
    _write_all({out: (SIMULATION_COLUMNS, simulation_table(sim, eta, y))})
    if not args.quiet:
        print(f"wrote {out} ({len(sim.grid)} rows)")
        print(f"constraint residual {sim.constraint_residual:.3e}, "
              f"input bound usage {sim.bound_usage:.4f}")
    _summary({"command": "simulate", "status": "ok", "rows": len(sim.grid), "file": str(out),
              "constraint_residual": sim.constraint_residual, "bound_usage": sim.bound_usage})
    return 0


def _read_observations(path: Path, model):
    if not path.is_file():
        raise UsageError(f"observation file not found: {path}")
    try:
        header, data = read_csv(path)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if data.shape[0] != len(model.grid):
        raise UsageError(f"{path}: {data.shape[0]} rows, model grid has {len(model.grid)} nodes")
    cols = ["y"] if model.p == 1 and "y" in header else [f"y{i + 1}" for i in range(model.p)]
    missing = [c for c in cols if c not in header]
    if missing:
        raise UsageError(f"{path}: missing column(s) {missing}")
    y = data[:, [header.index(c) for c in cols]]
    x1 = data[:, header.index("x1")] if "x1" in header else None
    return y, x1


def _run_table(rep, r: int):
    K = rep.K.K.reshape(len(rep.K.grid), -1)
    t = rep.K.grid.nodes
    if r == 1:
        header = ["t", "xhat", "K", "sigma_hat"]
    else:
        header = (["t"] + [f"xhat{i + 1}" for i in range(r)]
                  + [f"K{i + 1}{j + 1}" for i in range(r) for j in range(r)] + ["sigma_hat"])
    return header, np.column_stack([t, rep.xhat.values, K, rep.sigma_path])


def cmd_estimate(args) -> int:
    model = _load(args)
    ell = _ell(args, model)
    eps_list = args.eps or list(DEFAULT_SWEEP)
    out_dir = _out_dir(args)
    y, x1 = _read_observations(args.obs or out_dir / "simulation.csv", model)
    cm = canonicalize(model)
    red = cm.reduction
    outputs, runs, comp_cols, comp_vals = {}, [], ["t"], [model.grid.nodes]

    def track(rep):
        return pull_back(red, rep.xhat.values, "estimate")[:, 0]

    try:
        rep = optimal_filter(cm, y, ell)
        outputs[out_dir / "estimate_opt.csv"] = _run_table(rep, cm.r)
        comp_cols.append("xhat_opt")
        comp_vals.append(track(rep))
        runs.append({"run": "optimal", "status": "ok", "estimate": rep.estimate_value,
                     "sigma_hat": rep.sigma_hat})
    except RegularityError as exc:
        log.warning("%s; running the suboptimal filter only", exc)
        runs.append({"run": "optimal", "status": "skipped", "reason": str(exc)})
    except IntegrationError as exc:
        runs.append({"run": "optimal", "status": "failed", "reason": str(exc)})

    for eps in eps_list:
        tag = _eps_tag(eps)
        try:
            rep = suboptimal_filter(cm, y, ell, eps)
        except (IntegrationError, ValueError, np.linalg.LinAlgError) as exc:
            runs.append({"run": f"eps={tag}", "status": "failed", "reason": str(exc)})
            continue
        outputs[out_dir / f"estimate_eps_{tag}.csv"] = _run_table(rep, cm.r)
        comp_cols.append(f"xhat_sub_{tag}")
        comp_vals.append(track(rep))
        runs.append({"run": f"eps={tag}", "status": "ok", "eps": eps,
                     "estimate": rep.estimate_value, "sigma_hat": rep.sigma_hat})
    if x1 is not None:
        comp_cols.append("x1_true")
        comp_vals.append(x1)
    outputs[out_dir / "comparison.csv"] = (comp_cols, np.column_stack(comp_vals))
    _write_all(outputs)

    if not args.quiet:
        for run in runs:
            if run["status"] == "ok":
                print(f"{run['run']:>12}: estimate {run['estimate']:.10g}  "
                      f"sigma_hat {run['sigma_hat']:.10g}")
            else:
                print(f"{run['run']:>12}: {run['status']} ({run['reason']})")
    failed = [r for r in runs if r["status"] == "failed"]
    _summary({"command": "estimate", "status": "partial" if failed else "ok", "runs": runs})
    return 1 if failed else 0


def cmd_observability(args) -> int:
    model = _load(args)
    ell = _ell(args, model)
    eps_list = args.eps or list(DEFAULT_SWEEP)
    cm = canonicalize(model)
    try:
        rep = worst_case_error_limit(cm, ell, eps_list)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out_dir = _out_dir(args)
    table = np.array([[e, s, v] for (e, s), v in zip(rep.eps_sweep, rep.values)]).reshape(-1, 3)
    verdict_row = [",".join(f"{v:.17g}" for v in ell), rep.verdict, f"{rep.sigma_min:.17g}",
                   f"{rep.sigma_last:.17g}",
                   "" if rep.oracle_discrepancy is None else f"{rep.oracle_discrepancy:.17g}",
                   rep.rationale]
    _write_all({
        out_dir / "observability.csv": (["eps", "sigma_hat", "regularized_value"], table),
        out_dir / "observability_verdict.csv": (
            ["ell", "verdict", "sigma_min", "sigma_last", "oracle_discrepancy", "rationale"],
            [verdict_row]),
    })
    if not args.quiet:
        for (e, s), v in zip(rep.eps_sweep, rep.values):
            print(f"eps {e:.1e}  sigma_hat {s:.10g}  regularized {v:.10g}")
        for e, msg in rep.failures:
            print(f"eps {e:.1e}  failed: {msg}")
        print(f"verdict: {rep.verdict} ({rep.rationale})")
    _summary({"command": "observability", "status": "ok", "verdict": rep.verdict,
              "sigma_min": rep.sigma_min, "sigma_last": rep.sigma_last,
              "oracle_discrepancy": rep.oracle_discrepancy,
              "failures": [{"eps": e, "reason": m} for e, m in rep.failures]})
    return 0


def _selftest_checks():
    from .coeffs import remark_gap
    from .oracle import solve_regular_bvp, solve_regularized_bvp

    cm = canonicalize(example_model(2.0, 500))
    t = cm.grid.nodes
    y = np.sin(3 * t) + 0.3 * np.cos(7 * t)

    def rel(a, b):
        return abs(a - b) / max(abs(b), 1e-300)

    def sub_vs_oracle():
        est = suboptimal_filter(cm, y, [1, 0], 1e-3).estimate_value
        return rel(solve_regularized_bvp(cm, [1, 0], 1e-3).estimate(y), est) < 1e-6

    def opt_vs_oracle():
        rep = optimal_filter(cm, y, [1, 0])
        ref = solve_regular_bvp(cm, [1, 0])
        return rel(ref.estimate(y), rep.estimate_value) < 1e-6 and rel(ref.sigma, rep.sigma_hat) < 1e-6

    def riccati_psd():
        K = optimal_filter(cm, None, [1, 0]).K
        return K.symmetry_error <= 1e-9 and K.min_eigenvalue >= -1e-8

    def remark_limit():
        gaps = [np.max(remark_gap(cm, t, e)) for e in (1e-2, 1e-4, 1e-6)]
        return gaps[0] > gaps[1] > gaps[2]

    def sub_to_opt():
        xo = optimal_filter(cm, y, [1, 0]).xhat.values
        d = [np.max(np.abs(suboptimal_filter(cm, y, [1, 0], e, with_path=False).xhat.values - xo))
             for e in (1e-2, 1e-4, 1e-6)]
        return d[0] > d[1] > d[2]

    return [("suboptimal filter = regularized oracle", sub_vs_oracle),
            ("optimal filter = regular oracle", opt_vs_oracle),
            ("Riccati symmetric and PSD", riccati_psd),
            ("coefficient limits", remark_limit),
            ("suboptimal -> optimal", sub_to_opt)]


def cmd_selftest(args) -> int:
    results = []
    for name, check in _selftest_checks():
        t0 = time.perf_counter()
        try:
            ok = bool(check())
            err = None
        except Exception as exc:  # a crashing check is a failed check
            ok, err = False, f"{type(exc).__name__}: {exc}"
        results.append({"check": name, "passed": ok})
        if not args.quiet:
            extra = f" ({err})" if err else ""
            print(f"{'PASS' if ok else 'FAIL'}  {name}  [{time.perf_counter() - t0:.2f}s]{extra}")
    failed = sum(not r["passed"] for r in results)
    _summary({"command": "selftest", "status": "ok" if not failed else "failed",
              "checks": results})
    return 1 if failed else 0


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate,
            "observability": cmd_observability, "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="daemx: %(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ModelError, SimulationError) as exc:
        print(f"daemx: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
