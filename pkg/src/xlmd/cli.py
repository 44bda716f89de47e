"""Command line front end.

    xlmd run       one trajectory as CSV
    xlmd converge  sup errors against exact MD over an eps grid, fitted orders
    xlmd flowmap   scalar latent flow map against its leading-order prediction
    xlmd energy    drift of the conserved energy
    xlmd check     analytic derivatives against finite differences

Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import os
import sys
import warnings

import numpy as np

from . import analysis, dynamics, model as models
from .errors import BlowUp, DimensionMismatch, NotPositiveDefinite, StabilityError

DEFAULT_EPSILON = 1e-3


class UsageError(Exception):
    pass


def _positive_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0 or not np.isfinite(value):
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _nonnegative_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value >= 0 or not np.isfinite(value):
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return value


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") \
            from None


def _eps_grid(text):
    values = _float_list(text)
    if len(values) < 3 or any(not v > 0 for v in values):
        raise argparse.ArgumentTypeError("needs at least 3 positive values")
    if len(set(values)) < 3:
        raise argparse.ArgumentTypeError("needs at least 3 distinct values")
    return values


class _Parser(argparse.ArgumentParser):
    # one-line diagnostic, no usage dump
    def error(self, message):
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="xlmd", description=__doc__.split("\n\n")[0], formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, model_default="toy"):
        p.add_argument("--model", choices=[m.value for m in models.BuiltinModel],
                       default=model_default, help="built-in model")
        p.add_argument("--ic", choices=[k.value for k in dynamics.ICKind],
                       default="compatible", help="latent initial condition")
        p.add_argument("--dt", type=_positive_float, default=1e-5, help="time step")
        p.add_argument("--t-final", type=_nonnegative_float, default=5.0, help="final time")
        p.add_argument("--sample-stride", type=_positive_int, default=100,
                       help="write every n-th step")
        p.add_argument("--r0", type=_float_list, default=None,
                       help="initial positions, comma separated (model default)")
        p.add_argument("--p0", type=_float_list, default=None,
                       help="initial velocities, comma separated (model default)")
        p.add_argument("--out", default="-", help="output path, - for stdout")

    p = sub.add_parser("run", help="dump one trajectory", formatter_class=fmt)
    common(p)
    p.add_argument("--epsilon", type=_positive_float, default=DEFAULT_EPSILON,
                   help="fictitious latent mass")
    p.add_argument("--integrator", choices=[i.value for i in dynamics.Integrator],
                   default="xlmd")

    p = sub.add_parser("converge", help="convergence study over an eps grid",
                       formatter_class=fmt)
    common(p)
    p.add_argument("--eps-grid", type=_eps_grid, default=None,
                   help="comma-separated eps values (default: 9 points from 1e-2 to 1e-4)")
    p.add_argument("--epsilon", type=_positive_float, default=None,
                   help="not used by converge; pass --eps-grid")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker processes (default: eps points capped at CPU count)")
    p.add_argument("--plot-data", default=None, help="also write ascending-eps plot data here")

    p = sub.add_parser("flowmap", help="scalar latent flow map check", formatter_class=fmt)
    common(p, model_default="scalar1d")
    p.add_argument("--epsilon", type=_positive_float, default=DEFAULT_EPSILON)
    p.add_argument("--s", type=_nonnegative_float, default=0.5, help="start time")
    p.add_argument("--t", type=_nonnegative_float, default=2.0, help="end time")
    p.add_argument("--xi0", type=float, default=1.0, help="initial latent velocity")
    p.add_argument("--eta0", type=float, default=0.0, help="initial latent value")

    p = sub.add_parser("energy", help="conserved-energy drift", formatter_class=fmt)
    common(p)
    p.add_argument("--epsilon", type=_positive_float, default=DEFAULT_EPSILON)
    p.add_argument("--integrator", choices=[i.value for i in dynamics.Integrator],
                   default="exact")

    p = sub.add_parser("check", help="validate model derivatives", formatter_class=fmt)
    p.add_argument("--model", choices=[m.value for m in models.BuiltinModel], default="toy")
    p.add_argument("--r", type=_float_list, default=None,
                   help="evaluation point (model default initial position)")
    p.add_argument("--h", type=_positive_float, default=1e-4, help="finite-difference step")
    p.add_argument("--out", default="-")
    return parser


def parse_args(argv):
    """Parse ``argv`` into ``(command, namespace)``; usage errors exit with code 2."""
    args = build_parser().parse_args(argv)
    return args.command, args


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _fmt(v):
    return format(float(v), ".17g")


def _config_comments(command, args):
    lines = [f"xlmd {command}"]
    for key, value in sorted(vars(args).items()):
        if key in ("command", "out", "plot_data", "threads"):
            continue
        if isinstance(value, list):
            value = ",".join(_fmt(v) for v in value)
        elif isinstance(value, float):
            value = _fmt(value)
        lines.append(f"{key}={value}")
    return lines


def _vector(values, n, flag):
    if values is None:
        return None
    if len(values) != n:
        raise UsageError(f"{flag} needs {n} values, got {len(values)}")
    return np.array(values)


def _sim_config(args, model, eps):
    return dynamics.SimConfig(eps=eps, dt=args.dt, t_final=args.t_final, ic_kind=args.ic,
                              sample_stride=args.sample_stride,
                              r0=_vector(args.r0, model.d, "--r0"),
                              p0=_vector(args.p0, model.d, "--p0"))


def _cmd_run(args, model):
    config = _sim_config(args, model, args.epsilon)
    extended = args.integrator == "xlmd"
    with _output(args.out) as out:
        writer = dynamics.TrajectoryWriter(out, model, extended,
                                           comments=_config_comments("run", args))
        dynamics.simulate(model, config, args.integrator, sink=writer)
    return 0


def _cmd_converge(args, model):
    if args.epsilon is not None:
        raise UsageError("--epsilon is not used by converge; pass --eps-grid")
    grid = analysis.default_eps_grid() if args.eps_grid is None else np.array(args.eps_grid)
    threads = args.threads or min(len(grid), os.cpu_count() or 1)
    report = analysis.convergence_study(
        model, grid, args.ic, dt=args.dt, t_final=args.t_final,
        r0=_vector(args.r0, model.d, "--r0"), p0=_vector(args.p0, model.d, "--p0"),
        workers=threads)
    for rec in report.failed:
        print(f"xlmd: eps={rec.eps:g} blew up at step {rec.failed_step}; excluded from fit",
              file=sys.stderr)
    with _output(args.out) as out:
        report.write_csv(out, comments=_config_comments("converge", args))
    if args.plot_data:
        with _output(args.plot_data) as out:
            report.write_plot_data(out)
    return 0


def _cmd_flowmap(args, model):
    if model.d_prime != 1:
        raise UsageError(f"flowmap needs a scalar latent model, --model {args.model} "
                         f"has d'={model.d_prime}")
    if args.s > args.t:
        raise UsageError("--s must not exceed --t")
    config = _sim_config(args, model, args.epsilon)
    config.t_final = args.t
    traj = analysis.record_trajectory(model, config, dynamics.Integrator.XLMD)
    res = analysis.homogeneous_flow_map(model, traj, args.epsilon, args.s, args.t,
                                        args.eta0, args.xi0)
    with _output(args.out) as out:
        for line in _config_comments("flowmap", args):
            out.write(f"# {line}\n")
        w = csv.writer(out, lineterminator="\n")
        cols = ["t", "y", "ydot"]
        if res.predicted_path is not None:
            cols += ["y_pred", "ydot_pred", "res_y", "res_ydot"]
        w.writerow(cols)
        idx = list(range(0, len(res.taus), args.sample_stride))
        if idx[-1] != len(res.taus) - 1:
            idx.append(len(res.taus) - 1)
        for i in idx:
            row = [res.taus[i], *res.numeric_path[i]]
            if res.predicted_path is not None:
                row += [*res.predicted_path[i], *(res.numeric_path[i] - res.predicted_path[i])]
            w.writerow([_fmt(v) for v in row])
        if res.predicted_path is not None:
            sup = res.sup_residual()
            out.write(f"# sup_residual_y={_fmt(sup[0])}\n")
            out.write(f"# sup_residual_ydot={_fmt(sup[1])}\n")
    return 0


def _cmd_energy(args, model):
    config = _sim_config(args, model, args.epsilon)
    drift = analysis.energy_drift(model, config, args.integrator)
    with _output(args.out) as out:
        for line in _config_comments("energy", args):
            out.write(f"# {line}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["integrator", "epsilon", "dt", "t_final", "drift"])
        eps = args.epsilon if args.integrator == "xlmd" else float("nan")
        w.writerow([args.integrator, _fmt(eps), _fmt(args.dt), _fmt(args.t_final),
                    _fmt(drift)])
    return 0


def _cmd_check(args, model):
    r = _vector(args.r, model.d, "--r")
    if r is None:
        r = model.default_r0
    report = models.validate_derivatives(model, r, args.h)
    with _output(args.out) as out:
        for line in _config_comments("check", args):
            out.write(f"# {line}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["quantity", "max_abs_discrepancy", "tolerance", "status"])
        for c in report.checks:
            w.writerow([c.quantity, _fmt(c.discrepancy), _fmt(c.tolerance),
                        "pass" if c.passed else "fail"])
    if not report.passed:
        print("xlmd: derivative validation failed", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "run": _cmd_run,
    "converge": _cmd_converge,
    "flowmap": _cmd_flowmap,
    "energy": _cmd_energy,
    "check": _cmd_check,
}


def run_command(command, args) -> int:
    """Execute a parsed command and return its exit code."""
    model = models.builtin_model(args.model)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            return COMMANDS[command](args, model)
    except (UsageError, StabilityError, DimensionMismatch) as exc:
        print(f"xlmd {command}: error: {exc}", file=sys.stderr)
        return 2
    except (BlowUp, NotPositiveDefinite) as exc:
        print(f"xlmd {command}: numerical failure: {exc}", file=sys.stderr)
        return 1


def main(argv=None) -> int:
    command, args = parse_args(sys.argv[1:] if argv is None else argv)
    return run_command(command, args)


if __name__ == "__main__":
    sys.exit(main())
