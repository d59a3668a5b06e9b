"""Command-line front end: reproducible simulation, filtering, comparison,
oracle-equivalence and Euler-limit checks.

Exit status: 0 success, 1 usage error, 2 numerical failure.  Every run
writes a manifest.json with the full configuration so outputs can be
reproduced bit-exactly.  All files are written atomically (temp + rename).
The output directory can be overridden with the CUKF_OUTPUT_DIR
environment variable.
"""

import argparse
import contextlib
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .builtin import builtin_models, get_builtin
from .continuous import IntegratorConfig, cd_run, default_config, euler_limit_check
from .discrete import StateEstimate, run_filter
from .errors import FilterError
from .models import ContinuousDiscreteModel, DiscreteLinearModel, NonlinearModel
from .modelio import load_model
from .nonlinear import nl_run
from .simulate import (FilterSpec, innovation_whiteness, monte_carlo_compare,
                       mse, simulate_cd, simulate_discrete)
from .wls import dump_diagnostics, oracle_filter


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


@contextlib.contextmanager
def _atomic(path):
    """Yield a temp path in the target directory; rename into place on
    success so partially written outputs never appear."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _resolve_outdir(args):
    out = os.environ.get("CUKF_OUTPUT_DIR") or args.out
    os.makedirs(out, exist_ok=True)
    return out


def _load(name_or_path):
    if os.path.exists(name_or_path):
        return load_model(name_or_path)
    try:
        return get_builtin(name_or_path)
    except KeyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(1)


def _write_manifest(outdir, args, extra=None):
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg["version"] = __version__
    if extra:
        cfg.update(extra)
    path = os.path.join(outdir, "manifest.json")
    with _atomic(path) as tmp:
        with open(tmp, "w") as fh:
            json.dump(cfg, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


def _simulate_any(model, args):
    if isinstance(model, ContinuousDiscreteModel):
        return simulate_cd(model, x0=np.full(model.n, args.x0), seed=args.seed,
                           em_step=args.em_step, model_id=args.model)
    return simulate_discrete(model, x0=np.full(model.n, args.x0), N=args.N,
                             seed=args.seed, model_id=args.model)


def _cmd_models(args):
    for name in builtin_models():
        print(name)
    return 0


def _cmd_simulate(args):
    model = _load(args.model)
    outdir = _resolve_outdir(args)
    data = _simulate_any(model, args)
    path = os.path.join(outdir, "trajectory.csv")
    with _atomic(path) as tmp:
        data.to_csv(tmp)
    _write_manifest(outdir, args, {"clamped": data.clamped})
    print(f"wrote {path}")
    return 0


def _init_estimate(model, args):
    n = model.n
    rng = np.random.default_rng(np.random.SeedSequence(
        entropy=args.seed, spawn_key=(0xF117,)))
    xinit = rng.standard_normal(n)
    return StateEstimate(xhat=xinit, Sigma=args.init_sigma * np.eye(n), index=1)


def _cmd_filter(args):
    model = _load(args.model)
    if args.variant == "fixed-beta" and args.beta is None:
        print("error: --beta is required with --variant fixed-beta",
              file=sys.stderr)
        return 1
    outdir = _resolve_outdir(args)
    data = _simulate_any(model, args)
    init = _init_estimate(model, args)
    sidecar = None
    if isinstance(model, ContinuousDiscreteModel):
        cfg = (IntegratorConfig(step=args.step) if args.step
               else default_config(model))
        trace = cd_run(model, data.measurements, init, cfg)
        sidecar = os.path.join(outdir, "trace_summary.csv")
    elif isinstance(model, DiscreteLinearModel):
        if args.variant == "fixed-beta":
            from .models import with_fixed_noise
            run_model = with_fixed_noise(model, args.beta)
        else:
            run_model = model
        trace = run_filter(run_model, data.measurements, init,
                           variant=args.variant)
    else:
        trace = nl_run(model, data.measurements, init)
    path = os.path.join(outdir, "trace.csv")
    if sidecar is not None:
        with _atomic(path) as tmp, _atomic(sidecar) as tmp2:
            trace.to_csv(tmp, sidecar=tmp2)
    else:
        with _atomic(path) as tmp:
            trace.to_csv(tmp)
    _write_manifest(outdir, args, {"mse": mse(trace, data)})
    print(f"wrote {path}")
    return 0


def _cmd_compare(args):
    model = _load(args.model)
    if not isinstance(model, DiscreteLinearModel):
        print("error: compare needs a discrete linear model", file=sys.stderr)
        return 1
    if args.beta is None:
        print("error: --beta is required for the fixed-beta baseline",
              file=sys.stderr)
        return 1
    outdir = _resolve_outdir(args)
    filters = [
        FilterSpec(name="covariance-update", variant="covariance-update"),
        FilterSpec(name=f"fixed-beta={args.beta}", variant="fixed-beta",
                   beta=args.beta),
    ]
    report = monte_carlo_compare(model, filters, replicates=args.replicates,
                                 N=args.N, master_seed=args.seed, x0=args.x0,
                                 distribution=args.distribution)
    csv_path = os.path.join(outdir, "comparison.csv")
    txt_path = os.path.join(outdir, "comparison.txt")
    with _atomic(csv_path) as tmp:
        report.to_csv(tmp)
    with _atomic(txt_path) as tmp:
        with open(tmp, "w") as fh:
            fh.write(report.to_table() + "\n")
    _write_manifest(outdir, args)
    print(report.to_table())
    return 0


def _rel_delta(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def _cmd_oracle_check(args):
    model = _load(args.model)
    if isinstance(model, ContinuousDiscreteModel):
        print("error: oracle-check supports discrete models only",
              file=sys.stderr)
        return 1
    outdir = _resolve_outdir(args)
    args.N = args.horizon
    data = _simulate_any(model, args)
    init = _init_estimate(model, args)
    if isinstance(model, DiscreteLinearModel):
        trace = run_filter(model, data.measurements, init)
    else:
        trace = nl_run(model, data.measurements, init)
    sols = oracle_filter(model, data.measurements, init,
                         max_horizon=args.horizon)
    deltas = [(_rel_delta(s.xhat, trace.xhat_post[k]),
               _rel_delta(s.Sigma, trace.Sigma_post[k]))
              for k, s in enumerate(sols)]
    path = os.path.join(outdir, "oracle_deltas.csv")
    with _atomic(path) as tmp:
        dump_diagnostics(sols, tmp, deltas=deltas)
    worst = max(max(d) for d in deltas)
    _write_manifest(outdir, args, {"max_relative_delta": worst})
    print(f"max relative delta: {worst:.3e}")
    if worst > 1e-9:
        print("oracle-check FAILED (tolerance 1e-9)", file=sys.stderr)
        return 2
    return 0


def _cmd_limit_check(args):
    model = _load(args.model)
    outdir = _resolve_outdir(args)
    dyn = model.inner if isinstance(model, ContinuousDiscreteModel) else model
    n = dyn.n
    post = StateEstimate(xhat=np.full(n, args.x0),
                         Sigma=np.eye(n), index=args.t0)
    dts = [args.dt0 / 2 ** i for i in range(args.levels + 1)]
    rows = euler_limit_check(dyn, post, args.t0, args.t1, dts)
    path = os.path.join(outdir, "limit_check.csv")
    with _atomic(path) as tmp:
        with open(tmp, "w") as fh:
            fh.write("dt,mean_err,cov_err\n")
            for row in rows:
                fh.write(f"{row.dt!r},{row.mean_err!r},{row.cov_err!r}\n")
    _write_manifest(outdir, args)
    for a, b in zip(rows[1:], rows[:-1]):
        # rows sorted ascending in dt: ratio of coarse to fine error
        print(f"dt={a.dt:g}->{b.dt:g} cov ratio "
              f"{a.cov_err / max(b.cov_err, 1e-300):.3f}")
    print(f"wrote {path}")
    return 0


def _add_common(p, need_N=True):
    p.add_argument("--model", required=True,
                   help="builtin model name or model file path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0", type=float, default=1.0,
                   help="initial true state (all components)")
    p.add_argument("--out", default="out", help="output directory")
    if need_N:
        p.add_argument("--N", type=int, default=100,
                       help="number of measurements (discrete models)")
    p.add_argument("--em-step", type=float, default=0.01,
                   help="Euler-Maruyama step for continuous simulation")


def build_parser():
    parser = _Parser(prog="cukf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("models", help="list builtin models")
    p.set_defaults(func=_cmd_models)

    p = sub.add_parser("simulate", help="simulate a trajectory to CSV")
    _add_common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("filter", help="simulate then filter, trace to CSV")
    _add_common(p)
    p.add_argument("--variant", choices=["covariance-update", "fixed-beta"],
                   default="covariance-update")
    p.add_argument("--beta", type=float, default=None,
                   help="process noise gain for the fixed-beta variant")
    p.add_argument("--init-sigma", type=float, default=0.0, dest="init_sigma")
    p.add_argument("--step", type=float, default=None,
                   help="integrator step for continuous models")
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("compare",
                       help="Monte Carlo comparison against the fixed-beta baseline")
    _add_common(p)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--replicates", type=int, default=500)
    p.add_argument("--distribution", choices=["gaussian", "uniform"],
                   default="gaussian")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("oracle-check",
                       help="check filter against the trajectory-cost oracle")
    _add_common(p, need_N=False)
    p.add_argument("--horizon", type=int, default=20)
    p.add_argument("--init-sigma", type=float, default=0.0, dest="init_sigma")
    p.set_defaults(func=_cmd_oracle_check)

    p = sub.add_parser("limit-check",
                       help="Euler-refinement consistency of the covariance ODE")
    _add_common(p, need_N=False)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--t1", type=float, default=0.8)
    p.add_argument("--dt0", type=float, default=0.08,
                   help="coarsest step; halved --levels times")
    p.add_argument("--levels", type=int, default=3)
    p.set_defaults(func=_cmd_limit_check)
    return parser


def parse_and_dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        return args.func(args)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    except FilterError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main():
    raise SystemExit(parse_and_dispatch())
