"""``glbfed`` command line: fluid runs, simulations, exact solves, sweeps and figure data.

Every command writes CSV whose first line is ``# glbfed-csv v1``.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, exact, fluid
from .exact import StateSpaceTooLarge
from .model import FederationParams, FluidState, GlbfedError, ModulatedParams
from .simulator import HorizonTooShort, SimConfig, estimate_stationary

CSV_VERSION = "# glbfed-csv v1"
FIG2_NS = (20, 100, 500)
FIG_RHOS = (0.35, 0.5, 0.65)

EXIT_OK, EXIT_VALIDATION, EXIT_HORIZON, EXIT_STATE_SPACE = 0, 2, 3, 4

BOOL_FLAGS = {"modulated", "log", "gnuplot", "simulate"}


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".12g")
    return str(x)


class CsvOut:
    def __init__(self, stream):
        self.stream = stream
        self.writer = csv.writer(stream, lineterminator="\n")
        stream.write(CSV_VERSION + "\n")

    def row(self, values):
        self.writer.writerow([fmt(v) for v in values])

    def comment(self, values):
        self.stream.write("# " + ",".join(fmt(v) for v in values) + "\n")


def default_seed() -> int:
    return int(os.environ.get("GLBFED_SEED", "0"))


def _rate_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lam", type=float, help="per-datacenter arrival rate")
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--nu-s", type=float, default=0.01, help="cloudy -> sunny rate")
    p.add_argument("--nu-c", type=float, default=0.01, help="sunny -> cloudy rate")


def _sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--t-end", type=float)
    p.add_argument("--warmup", type=float)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)


def _modulated_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--modulated", action="store_true")
    p.add_argument("--nu-g", type=float, default=1e-5, help="bad -> good weather rate")
    p.add_argument("--nu-b", type=float, default=1e-5, help="good -> bad weather rate")
    p.add_argument("--nu-sg", type=float)
    p.add_argument("--nu-cg", type=float)
    p.add_argument("--nu-sb", type=float)
    p.add_argument("--nu-cb", type=float)


def _jobs_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="grid points evaluated concurrently")


def _pmap(fn, items, jobs: int) -> list:
    """Map in worker threads; results keep input order. The kernels release the GIL."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags override it")

    parser = argparse.ArgumentParser(prog="glbfed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["fluid"] = sub.add_parser("fluid", parents=[common], help="integrate the fluid model")
    _rate_flags(p)
    p.add_argument("--t-end", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--j0", type=float, default=0.0)
    p.add_argument("--s0", type=float, help="initial sunny fraction (default s*)")
    p.add_argument("--bs0", type=float, default=0.0)
    p.add_argument("--every", type=int, help="keep every k-th step (default: about 1000 rows)")

    p = subs["simulate"] = sub.add_parser("simulate", parents=[common], help="simulate the chain")
    _rate_flags(p)
    p.add_argument("--n", type=int)
    _sim_flags(p)
    _modulated_flags(p)

    p = subs["exact"] = sub.add_parser("exact", parents=[common], help="solve the truncated chain")
    _rate_flags(p)
    p.add_argument("--n", type=int)
    p.add_argument("--queue-cap", type=int)

    p = subs["sweep"] = sub.add_parser("sweep", parents=[common], help="run an engine over a grid")
    _rate_flags(p)
    p.add_argument("--n", type=int)
    p.add_argument("--param", choices=["rho", "nu-ratio", "eta", "n"])
    p.add_argument("--from", dest="start", type=float)
    p.add_argument("--to", dest="stop", type=float)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--log", action="store_true", help="geometric grid")
    p.add_argument("--engine", choices=["fluid", "sim", "exact"], default="fluid")
    _jobs_flag(p)
    p.add_argument("--queue-cap", type=int)
    _sim_flags(p)

    p = subs["figure"] = sub.add_parser("figure", parents=[common], help="write figure data")
    p.add_argument("name", choices=["fig2", "fig3", "fig4"])
    _jobs_flag(p)
    p.add_argument("--out", default=".")
    p.add_argument("--gnuplot", action="store_true", help="also write a gnuplot script")
    p.add_argument("--points", type=int, help="grid size (fig3: 25, fig4: 21)")
    p.add_argument("--simulate", action="store_true", help="fig4: add modulated simulation columns")
    p.add_argument("--n", type=int, default=200, help="fig4 simulation size")
    _sim_flags(p)
    return parser, subs


def read_config(path: str) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise GlbfedError(f"{path}:{lineno}: expected key = value")
        key, value = (x.strip() for x in line.split("=", 1))
        values[key] = value
    return values


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise GlbfedError(f"not a boolean: {text!r}")


def _dest(key: str) -> str:
    key = key.lstrip("-").replace("-", "_")
    return {"lambda": "lam", "from": "start", "to": "stop"}.get(key, key)


def parse_args(argv):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sp = subs[args.command]
        known = {a.dest for a in sp._actions}
        defaults = {}
        for key, value in read_config(args.config).items():
            dest = _dest(key)
            if dest not in known or dest in ("config", "help"):
                raise GlbfedError(f"unknown config key {key!r} for {args.command}")
            defaults[dest] = _parse_bool(value) if dest in BOOL_FLAGS else value
        sp.set_defaults(**defaults)
        args = parser.parse_args(argv)
    if getattr(args, "seed", None) is None and hasattr(args, "seed"):
        args.seed = default_seed()
    return args


def federation(args, n=None) -> FederationParams:
    if args.lam is None:
        raise GlbfedError("--lambda is required")
    return FederationParams(args.lam, args.mu, args.nu_s, args.nu_c, n)


def modulated(args, n=None) -> ModulatedParams:
    if args.lam is None:
        raise GlbfedError("--lambda is required")
    rates = [args.nu_sg, args.nu_cg, args.nu_sb, args.nu_cb]
    if any(r is None for r in rates):
        raise GlbfedError("--modulated needs --nu-sg --nu-cg --nu-sb --nu-cb")
    return ModulatedParams(args.lam, args.mu, args.nu_g, args.nu_b, *rates, n)


def _need_n(args) -> int:
    if args.n is None:
        raise GlbfedError("--n is required")
    return args.n


def _simulate(params, args):
    config = SimConfig(params, t_end=args.t_end, warmup=args.warmup, replications=args.reps,
                       seed=args.seed)
    return estimate_stationary(config)


def cmd_fluid(args, out) -> None:
    params = federation(args)
    s0 = params.s_star if args.s0 is None else args.s0
    t_end = fluid.default_horizon(params) if args.t_end is None else args.t_end
    dt = fluid.default_dt(params) if args.dt is None else args.dt
    every = args.every or max(1, math.ceil(t_end / dt / 1000))
    traj = fluid.integrate(FluidState(args.j0, s0, args.bs0), params, t_end, dt, every)
    w = CsvOut(out)
    w.row(["t", "j", "s", "b_s"])
    for row in zip(traj.grid, traj.j, traj.s, traj.b_s):
        w.row(row)
    fp = fluid.fixed_point(params)
    w.comment(["fixed_point", fp.j_star, fp.s_star, fp.b_s_star, fp.regime.value])


SIM_COLUMNS = ["n", "rho", "mean_bs_frac", "ci", "mean_s_frac", "mean_j_frac", "events"]


def _sim_row(params, est):
    return [params.n, params.rho, est.mean_bs_frac, est.ci_halfwidth_bs, est.mean_s_frac,
            est.mean_j_frac, est.events]


def cmd_simulate(args, out) -> None:
    n = _need_n(args)
    params = modulated(args, n) if args.modulated else federation(args, n)
    est = _simulate(params, args)
    w = CsvOut(out)
    w.row(SIM_COLUMNS)
    w.row(_sim_row(params, est))


EXACT_COLUMNS = ["n", "queue_cap", "expected_bs_frac", "residual"]


def _exact_row(params, queue_cap):
    chain = exact.build(params, queue_cap)
    exact.stationary(chain)
    return [params.n, chain.queue_cap, exact.expected_bs_frac(chain), chain.residual]


def cmd_exact(args, out) -> None:
    params = federation(args, _need_n(args))
    w = CsvOut(out)
    w.row(EXACT_COLUMNS)
    w.row(_exact_row(params, args.queue_cap))


def grid(start: float, stop: float, steps: int, log: bool) -> np.ndarray:
    if steps < 1:
        raise GlbfedError("--steps must be >= 1")
    if steps == 1:
        return np.array([start])
    if log:
        if start <= 0 or stop <= 0:
            raise GlbfedError("--log needs positive bounds")
        return np.geomspace(start, stop, steps)
    return np.linspace(start, stop, steps)


FLUID_COLUMNS = ["rho", "s_star", "b_s_star", "regime", "c_f", "c_nf", "relative_reduction"]


def cmd_sweep(args, out) -> None:
    if args.param is None or args.start is None or args.stop is None:
        raise GlbfedError("sweep needs --param --from --to")
    values = grid(args.start, args.stop, args.steps, args.log)
    if args.param == "n":
        values = np.round(values).astype(int)
    if args.engine == "exact" and args.param == "eta":
        raise GlbfedError("the exact engine does not model the weather chain")
    if args.param == "rho" and args.lam is None:
        args.lam = 0.5 * args.mu  # placeholder; the grid sets the load
    base = federation(args)

    def point(v):
        n = args.n
        if args.param == "rho":
            return FederationParams(v * base.mu, base.mu, base.nu_s, base.nu_c, n)
        if args.param == "nu-ratio":
            p = analysis.speed_params(base.rho, v, base.s_star, base.mu)
            return p.with_n(n) if n is not None else p
        if args.param == "eta":
            return analysis.eta_params(base.rho, v, mu=base.mu, n=n)
        return base.with_n(int(v))

    def row(v):
        params = point(v)
        if args.engine == "fluid":
            if isinstance(params, ModulatedParams):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    rep = analysis.modulated_costs(params)
                regime = "Modulated"
            else:
                rep = analysis.costs(params)
                regime = fluid.fixed_point(params).regime.value
            return [rep.rho, rep.s_star, rep.b_s_star, regime, rep.c_f, rep.c_nf,
                    rep.relative_reduction]
        if params.n is None:
            raise GlbfedError(f"--engine {args.engine} needs --n")
        if args.engine == "sim":
            return _sim_row(params, _simulate(params, args))
        return [params.rho] + _exact_row(params, args.queue_cap)

    rows = _pmap(row, values, args.jobs)
    w = CsvOut(out)
    cols = {"fluid": FLUID_COLUMNS, "sim": SIM_COLUMNS, "exact": ["rho"] + EXACT_COLUMNS}[args.engine]
    w.row(["param", "value"] + cols)
    for v, r in zip(values, rows):
        w.row([args.param, v] + r)


def _fig2(args):
    header = ["rho", "b_s_star"]
    for n in FIG2_NS:
        header += [f"sim_mean_n{n}", f"ci{n}"]
    rhos = [float(r) for r in np.round(np.arange(1, 10) * 0.1, 10)]
    tasks = [(rho, n) for rho in rhos for n in FIG2_NS]

    def run(task):
        rho, n = task
        est = _simulate(FederationParams(rho, 1.0, 0.01, 0.01, n), args)
        return est.mean_bs_frac, est.ci_halfwidth_bs

    results = dict(zip(tasks, _pmap(run, tasks, args.jobs)))
    rows = []
    for rho in rhos:
        row = [rho, fluid.fixed_point(FederationParams(rho, 1.0, 0.01, 0.01)).b_s_star]
        for n in FIG2_NS:
            row += list(results[rho, n])
        rows.append(row)
    return header, rows


def _fig3(args):
    header = ["ratio", "reduction_rho_0.5", "reduction_rho_0.65"]
    ratios = np.geomspace(1e-3, 1e3, args.points or 25)
    rows = [[r, analysis.speed_reduction(0.5, r), analysis.speed_reduction(0.65, r)]
            for r in ratios]
    return header, rows


def _fig4(args):
    header = ["eta"] + [f"reduction_rho_{rho}" for rho in FIG_RHOS]
    if args.simulate:
        header += [f"sim_reduction_rho_{rho}" for rho in FIG_RHOS]
    etas = np.linspace(0.0, 1.0, args.points or 21)
    rows = [[e] + [analysis.eta_reduction(rho, e) for rho in FIG_RHOS] for e in etas]
    if args.simulate:
        tasks = [(e, rho) for e in etas for rho in FIG_RHOS]

        def run(task):
            e, rho = task
            params = analysis.eta_params(rho, e, n=args.n)
            bs = _simulate(params, args).weighted_bs_frac
            c_nf = rho * (1.0 - params.s_star)
            return (c_nf - (rho - bs)) / c_nf

        sims = _pmap(run, tasks, args.jobs)
        for i, row in enumerate(rows):
            row += sims[i * len(FIG_RHOS):(i + 1) * len(FIG_RHOS)]
    return header, rows


GNUPLOT = """set datafile separator ','
set datafile commentschars '#'
set key autotitle columnhead
{logscale}set xlabel '{xlabel}'
set terminal pngcairo size 800,600
set output '{name}.png'
plot {plots}
"""


def cmd_figure(args, out) -> None:
    header, rows = {"fig2": _fig2, "fig3": _fig3, "fig4": _fig4}[args.name](args)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / f"{args.name}.csv"
    with open(path, "w", newline="") as fh:
        w = CsvOut(fh)
        w.row(header)
        for row in rows:
            w.row(row)
    if args.gnuplot:
        ycols = [i + 1 for i, h in enumerate(header) if i > 0 and not h.startswith("ci")]
        plots = ", ".join(f"'{args.name}.csv' using 1:{c} with linespoints" for c in ycols)
        script = GNUPLOT.format(logscale="set logscale x\n" if args.name == "fig3" else "",
                                xlabel=header[0], name=args.name, plots=plots)
        (outdir / f"{args.name}.gp").write_text(script)
    out.write(f"{path}\n")


COMMANDS = {"fluid": cmd_fluid, "simulate": cmd_simulate, "exact": cmd_exact,
            "sweep": cmd_sweep, "figure": cmd_figure}


def main(argv=None, stdout=None) -> int:
    stdout = stdout if stdout is not None else sys.stdout
    try:
        args = parse_args(argv)
        # buffer so a failing run never emits a partial CSV
        buf = io.StringIO()
        COMMANDS[args.command](args, buf)
    except HorizonTooShort as exc:
        print(f"glbfed: {exc}", file=sys.stderr)
        return EXIT_HORIZON
    except StateSpaceTooLarge as exc:
        print(f"glbfed: {exc}", file=sys.stderr)
        return EXIT_STATE_SPACE
    except (GlbfedError, OSError) as exc:
        print(f"glbfed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    stdout.write(buf.getvalue())
    stdout.flush()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
