"""Command-line front end: ``tcflow flow|verify|spectrum|curve --config <path>``."""
import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import operators as op
from . import snapshot
from . import spectrum as sp
from ._parallel import worker_count
from .config import ConfigError, build_field, build_setup, load_config, schema_help
from .errors import NoConvergenceError, PositivityError, StepFloorError, TCFlowError
from .flow import MonotonicityError, curve_deformation, run
from .grid import PeriodicGrid
from .kahler import TwistedSetup, build_metric

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_POSITIVITY = 3
EXIT_STEP_FLOOR = 4
EXIT_NO_CONVERGENCE = 5

FLOW_COLUMNS = ("t", "dt", "calabi", "kenergy", "max_dev", "pos_margin", "vol_res",
                "chern_res", "chi_res", "mean_drift")
SPECTRUM_COLUMNS = ("s", "kappa", "mu1", "lambda1", "bound_margin")
CURVE_COLUMNS = ("t", "E", "l", "dEdt_residual")
DEGENERATE_LENGTH = 1e-12


# ------------------------------------------------------------------ output


def fmt(x):
    if x is None or x == "":
        return ""
    return "%.17g" % x


def _plain(obj):
    """Convert numpy scalars / arrays for json."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def dumps(obj):
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_json(path, obj):
    if path is None:
        return
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dumps(obj))


class CsvSink:
    """Streams rows with 17 significant digits; inactive when ``path`` is None."""

    def __init__(self, path, columns):
        self.columns = columns
        self._fh = None
        if path is not None:
            _ensure_parent(path)
            self._fh = open(path, "w", encoding="utf-8", newline="")
            self._w = csv.writer(self._fh)
            self._w.writerow(columns)

    def __call__(self, row):
        if self._fh is not None:
            self._w.writerow([fmt(row.get(c)) for c in self.columns])

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


# -------------------------------------------------------------------- flow


def _dump_path(cfg, name):
    o = cfg.outputs
    if o.snapshot_dir is not None:
        os.makedirs(o.snapshot_dir, exist_ok=True)
        return os.path.join(o.snapshot_dir, name)
    ref = o.json_path or o.csv_path
    if ref is not None:
        return os.path.splitext(ref)[0] + "." + name
    return name


def _fitted_rate(trace):
    c = trace.column("calabi")
    if c[0] <= 1e-30 or np.count_nonzero(c > 0) < 2:
        return "not-applicable"
    try:
        return trace.fitted_decay_rate("calabi", 0.5)
    except ValueError:
        return "not-applicable"


def cmd_flow(cfg):
    setup = build_setup(cfg)
    phi0 = build_field(cfg.initial, setup.grid)
    sink = CsvSink(cfg.outputs.csv_path, FLOW_COLUMNS)
    o = cfg.outputs
    last = {}

    def observer(n_acc, state):
        last["state"] = state
        if o.snapshot_dir is None:
            return
        if n_acc == 0 or (o.snapshot_every and n_acc % o.snapshot_every == 0):
            os.makedirs(o.snapshot_dir, exist_ok=True)
            snapshot.write(os.path.join(o.snapshot_dir, f"phi_{n_acc:08d}.tcf"), state.phi, cfg.m)

    try:
        trace = run(setup, phi0, cfg.integrator, sink=sink, observer=observer)
    except (PositivityError, StepFloorError) as exc:
        sink.close()
        state = getattr(exc, "last_state", None) or last.get("state")
        kind = "positivity" if isinstance(exc, PositivityError) else "step-floor"
        dump = None
        phi = state.phi if state is not None else exc.phi
        if phi is not None:
            dump = _dump_path(cfg, "state_dump.tcf")
            snapshot.write(dump, phi, cfg.m)
        write_json(o.json_path, {
            "status": kind, "message": str(exc), "state_dump": dump,
            "t": None if state is None else state.t,
            "last_accepted": None if state is None else _plain(state.diagnostics),
        })
        print(f"tcflow flow: {exc}", file=sys.stderr)
        if dump is not None:
            print(f"tcflow flow: last accepted state written to {dump}", file=sys.stderr)
        return EXIT_POSITIVITY if kind == "positivity" else EXIT_STEP_FLOOR
    except MonotonicityError as exc:
        sink.close()
        write_json(o.json_path, {"status": "monotonicity-violation", "message": str(exc),
                                 "violation": exc.violation})
        print(f"tcflow flow: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    sink.close()
    final = trace.final
    if o.snapshot_dir is not None:
        snapshot.write(os.path.join(o.snapshot_dir, f"phi_{trace.n_accepted:08d}.tcf"),
                       final.phi, cfg.m)
    ctx = op.OperatorContext(setup, build_metric(setup, final.phi, setup.eps_pos))
    mu = sp.mu1(ctx).value
    kap = sp.kappa(ctx)
    bound = kap * (1.0 - cfg.s) * mu
    rate = _fitted_rate(trace)
    records = trace.records
    summary = {
        "status": "ok",
        "t_final": final.t,
        "n_accepted": trace.n_accepted,
        "n_rejected": trace.n_rejected,
        "terminal": {
            "phi_sup": float(np.max(np.abs(final.phi))),
            "phi_l2": float(np.sqrt(setup.grid.integrate(final.phi * final.phi))),
            "calabi": final.diagnostics["calabi"],
            "max_dev": final.diagnostics["max_dev"],
            "pos_margin": final.diagnostics["pos_margin"],
            "kenergy": final.diagnostics["kenergy"],
            "mean_drift": final.diagnostics["mean_drift"],
        },
        "fitted_decay_rate": rate,
        "rate_bound": {
            "kappa": kap, "mu1": mu, "value": bound,
            "met": "not-applicable" if isinstance(rate, str) else bool(rate >= bound),
        },
        "monotonicity": {
            "passed": not trace.violations,
            "tolerance": cfg.integrator.monotone_tol,
            "violations": trace.violations,
        },
        "conservation": {
            key: max(abs(r[key]) for r in records)
            for key in ("vol_res", "chern_res", "chi_res", "split_res")
        },
    }
    write_json(o.json_path, summary)
    return EXIT_OK


# ----------------------------------------------------------------- verify


def cmd_verify(cfg, seed=None):
    from .verify import run_suite

    try:
        report = run_suite(cfg, seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    text = dumps(report)
    sys.stdout.write(text)
    write_json(cfg.outputs.json_path, report)
    return EXIT_OK if report["passed"] else EXIT_CHECK_FAILED


# --------------------------------------------------------------- spectrum


def _spectrum_samples(cfg):
    """(phi, psi) pairs: the configured metric first, then random perturbations."""
    from .verify import random_potential

    grid = PeriodicGrid(cfg.m, cfg.n_axis)
    out = [(build_field(cfg.initial, grid), cfg.chi.c * build_field(cfg.chi.psi, grid), cfg.chi.c)]
    rng = np.random.default_rng((cfg.seed, 202))
    sc = cfg.spectrum
    for _ in range(sc.samples):
        phi = random_potential(grid, rng, sc.max_mode, sc.margin)
        psi = random_potential(grid, rng, sc.max_mode, sc.margin)
        out.append((phi, psi, 1.0))
    return grid, out


def cmd_spectrum(cfg):
    grid, samples = _spectrum_samples(cfg)
    sc = cfg.spectrum
    rows = []
    for phi, psi, c in samples:
        base = TwistedSetup(grid, sc.s_grid[0], c, psi, eps_pos=cfg.integrator.eps_pos)
        ms = build_metric(base, phi)
        ctx = op.OperatorContext(base, ms)
        mu = sp.mu1(ctx, maxiter=sc.maxiter).value
        kap = sp.kappa(ctx)
        for s in sc.s_grid:
            cs = op.OperatorContext(base.with_s(s), ms)
            lam = sp.lambda1(cs, maxiter=sc.maxiter).value
            rows.append({"s": s, "kappa": kap, "mu1": mu, "lambda1": lam,
                         "bound_margin": lam - kap * (1.0 - s) * mu})
    sink = CsvSink(cfg.outputs.csv_path, SPECTRUM_COLUMNS)
    for r in rows:
        sink(r)
    sink.close()
    worst = min(r["bound_margin"] / r["lambda1"] for r in rows)
    write_json(cfg.outputs.json_path, {
        "status": "ok", "rows": len(rows), "metric_samples": len(samples),
        "min_relative_bound_margin": worst,
        "bound_holds": bool(worst >= -1e-8),
    })
    return EXIT_OK


# ------------------------------------------------------------------ curve


def cmd_curve(cfg):
    from .verify import curve_family, curve_integrator

    setup = build_setup(cfg)
    path = curve_family(cfg, setup.grid)
    res = curve_deformation(setup, path, curve_integrator(cfg), cfg.curve.n_probes)
    probe_at = {p["t"]: p["residual"] for p in res.probes}
    sink = CsvSink(cfg.outputs.csv_path, CURVE_COLUMNS)
    for t, e, ln in zip(res.times, res.energy, res.length):
        sink({"t": float(t), "E": float(e), "l": float(ln),
              "dEdt_residual": probe_at.get(float(t), "")})
    sink.close()
    length = res.length
    summary = {
        "status": "ok",
        "family": cfg.curve.family,
        "energy_nonincreasing": res.energy_nonincreasing,
        "length_nonincreasing": res.length_nonincreasing,
        "length_strictly_decreasing": bool(np.all(np.diff(length) < 0)),
        "max_dEdt_residual": res.max_residual,
        "probes": res.probes,
        "initial": {"E": float(res.energy[0]), "l": float(length[0])},
        "final": {"E": float(res.energy[-1]), "l": float(length[-1])},
    }
    if float(np.min(length)) < DEGENERATE_LENGTH:
        summary["caveat"] = (
            "degenerate curve: length fell below 1e-12, so monotonicity flags and the "
            "dE/dt residual carry no information about distance decrease")
    write_json(cfg.outputs.json_path, summary)
    return EXIT_OK


# ------------------------------------------------------------------- main


COMMANDS = {"flow": cmd_flow, "spectrum": cmd_spectrum, "curve": cmd_curve}


def build_parser():
    epilog = (schema_help() + "\n\nexit codes: 0 success, 1 failed check (verify) or aborted "
              "monotonicity, 2 config error, 3 positivity lost, 4 step below dt_min, "
              "5 eigensolver did not converge\n"
              "environment: TCFLOW_THREADS caps worker threads (default: all cores)")
    fmt_cls = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        prog="tcflow", description="Twisted Calabi flow on flat complex tori.",
        epilog=epilog, formatter_class=fmt_cls)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "flow": "integrate the flow; CSV time series, JSON summary, snapshots",
        "verify": "run the randomized identity checks; JSON report, exit 1 on failure",
        "spectrum": "sweep mu1, lambda1 and the spectral-gap bound over s",
        "curve": "flow a tau-family of potentials and track its energy and length",
    }
    for name in ("flow", "verify", "spectrum", "curve"):
        p = sub.add_parser(name, help=helps[name], description=helps[name],
                           epilog=epilog, formatter_class=fmt_cls)
        p.add_argument("--config", required=True, help="YAML experiment configuration")
        if name == "verify":
            p.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        worker_count()
        cfg = load_config(args.config)
    except (ConfigError, ValueError) as exc:
        print(f"tcflow: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "verify":
            return cmd_verify(cfg, args.seed)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"tcflow: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PositivityError as exc:
        print(f"tcflow: {exc}", file=sys.stderr)
        return EXIT_POSITIVITY
    except StepFloorError as exc:
        print(f"tcflow: {exc}", file=sys.stderr)
        return EXIT_STEP_FLOOR
    except NoConvergenceError as exc:
        print(f"tcflow: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except TCFlowError as exc:
        print(f"tcflow: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
