"""Experiment configuration: YAML schema, strict loading and initial-data presets.

Every section is a dataclass whose field metadata carries the help text
printed by ``tcflow --help``. Unknown keys anywhere are rejected.
"""
import dataclasses
import os
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np
import yaml

from . import _hermitian as herm
from .flow import SCHEMES, IntegratorConfig
from .grid import PeriodicGrid
from .kahler import TwistedSetup

PRESETS = ("stationary", "single-mode", "random-bandlimited", "stability-small",
           "large-data", "fourier")


class ConfigError(ValueError):
    pass


def _f(default, help, **kw):
    if isinstance(default, (list, dict)):
        return field(default_factory=lambda d=default: type(d)(d), metadata={"help": help}, **kw)
    return field(default=default, metadata={"help": help}, **kw)


@dataclass
class FieldSpec:
    preset: str = _f("stationary", "one of " + ", ".join(PRESETS))
    k: Optional[list] = _f(None, "single-mode: integer wave vector of length 2m, axes (x1, y1, x2, y2)")
    amplitude: Optional[float] = _f(None, "sup-norm amplitude (single-mode, random-bandlimited, "
                                          "stability-small); single-mode default 1e-5")
    max_mode: int = _f(3, "random presets: largest |k_a| in the Fourier support")
    seed: int = _f(0, "random presets: generator seed")
    margin: Optional[float] = _f(None, "random presets: rescale so that min eig(I + i ddbar f) = margin "
                                       "(overrides amplitude)")
    decay: float = _f(1.0, "random presets: coefficient damping exponent, (1 + |k|^2)^-decay")
    coefficients: Optional[list] = _f(None, "fourier: list of {k: [...], cos: a, sin: b} terms "
                                            "a cos(2 pi k.x) + b sin(2 pi k.x)")


@dataclass
class ChiConfig:
    c: float = _f(1.0, "twist form chi = c (omega + i ddbar psi_unit), c > 0")
    psi: FieldSpec = _f(None, "potential of the non-flat part of chi (same keys as 'initial')")


@dataclass
class OutputConfig:
    csv_path: Optional[str] = _f(None, "time-series / sweep CSV destination")
    json_path: Optional[str] = _f(None, "JSON summary or report destination")
    snapshot_dir: Optional[str] = _f(None, "directory for binary field snapshots (flow)")
    snapshot_every: int = _f(0, "write a snapshot every N accepted steps (0: initial and final only)")


@dataclass
class SpectrumConfig:
    s_grid: list = _f([0.1, 0.3, 0.5, 0.7, 0.9], "twist parameters of the sweep")
    samples: int = _f(0, "random perturbed metrics added to the configured one")
    max_mode: int = _f(4, "Fourier support of random metric and twist potentials")
    margin: float = _f(0.3, "positivity margin of random metrics and twist forms")
    maxiter: int = _f(2000, "iteration cap of the eigensolvers")


@dataclass
class CurveConfig:
    family: str = _f("linear", "constant | linear | bent: tau -> phi0, tau psi, tau psi + tau(1-tau) b")
    n_tau: int = _f(8, "Chebyshev-Lobatto intervals in tau")
    amplitude: float = _f(2e-3, "sup norm of psi")
    bend: float = _f(1e-3, "sup norm of the bending field b (family 'bent')")
    max_mode: int = _f(3, "Fourier support of psi and b")
    dt: float = _f(1e-4, "fixed flow step shared by all samples")
    t_final: float = _f(0.02, "flow horizon")
    n_probes: int = _f(5, "interior times where dE/dt is checked")


@dataclass
class VerifyConfig:
    samples: int = _f(20, "random triples for the operator identities")
    spectral_samples: int = _f(20, "random metrics for the spectral-gap bound (each at every s)")
    s_values: list = _f([0.1, 0.5, 0.9], "twist parameters for the spectral-gap bound")
    variation_samples: int = _f(10, "random (phi, delta) pairs / direction pairs / targets")
    targets: int = _f(5, "random targets for path independence of the twisted K-energy")
    paths: int = _f(3, "random smooth paths for the second-variation identity")
    probe_times: list = _f([0.2, 0.35, 0.5, 0.65, 0.8], "path times for the second-variation identity")
    checks: Optional[list] = _f(None, "subset of checks to run (default: all)")
    tolerances: dict = _f({}, "per-check tolerance overrides, e.g. {lemma_identity: 0}")


@dataclass
class ExperimentConfig:
    m: int = _f(1, "complex dimension, 1 or 2")
    n_axis: int = _f(64, "grid points per real axis, power of two >= 8")
    s: float = _f(0.5, "twist parameter in (0, 1]")
    seed: int = _f(0, "seed for randomized suites (verify, spectrum samples)")
    chi: ChiConfig = _f(None, "twist form")
    initial: FieldSpec = _f(None, "initial Kahler potential")
    integrator: dict = _f({}, "time stepping, keys of the integrator table below")
    outputs: OutputConfig = _f(None, "artifact destinations")
    spectrum: SpectrumConfig = _f(None, "spectrum sweep")
    curve: CurveConfig = _f(None, "curve deformation experiment")
    verify: VerifyConfig = _f(None, "verification suite")


_SECTIONS = {
    "chi": ChiConfig, "initial": FieldSpec, "outputs": OutputConfig,
    "spectrum": SpectrumConfig, "curve": CurveConfig, "verify": VerifyConfig,
}

_INTEGRATOR_HELP = {
    "scheme": f"one of {', '.join(SCHEMES)}",
    "dt_init": "initial (or fixed) step; default 1e-4 s^2",
    "dt_min": "smallest admissible step",
    "dt_max": "largest admissible step",
    "rel_step_tol": "local error target, relative to sup|phi|",
    "t_final": "final time",
    "eps_pos": "positivity floor for the smallest eigenvalue of g_phi",
    "adaptive": "adaptive step control (false: fixed step dt_init)",
    "monotone_tol": "tolerance of the Calabi-energy monotonicity check",
    "abort_on_violation": "stop at the first monotonicity violation",
    "kenergy_quad": "Simpson panels for the initial twisted K-energy",
    "max_steps": "hard cap on accepted steps",
}


# ------------------------------------------------------------------ loading


def _build(cls, raw, where):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(names)}")
    kwargs = {}
    for f in fields(cls):
        key = f"{where}.{f.name}" if where else f.name
        sub = _SECTIONS.get(f.name) if cls is ExperimentConfig else None
        if cls is ChiConfig and f.name == "psi":
            sub = FieldSpec
        if sub is not None:
            kwargs[f.name] = _build(sub, raw.get(f.name), key)
        elif f.name in raw:
            kwargs[f.name] = raw[f.name]
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def _integrator(raw):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("integrator: expected a mapping")
    names = {f.name for f in fields(IntegratorConfig)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"integrator: unknown key(s) {unknown}; allowed: {sorted(names)}")
    kw = {}
    for f in fields(IntegratorConfig):
        if f.name not in raw:
            continue
        v = raw[f.name]
        if f.name in ("scheme",):
            kw[f.name] = str(v)
        elif f.name in ("adaptive", "abort_on_violation"):
            if not isinstance(v, bool):
                raise ConfigError(f"integrator.{f.name}: expected true/false")
            kw[f.name] = v
        elif f.name in ("kenergy_quad", "max_steps"):
            kw[f.name] = _as_int(v, f"integrator.{f.name}")
        else:
            kw[f.name] = None if v is None else _as_float(v, f"integrator.{f.name}")
    return IntegratorConfig(**kw)


def _as_float(v, where):
    if isinstance(v, bool):
        raise ConfigError(f"{where}: expected a number")
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number, got {v!r}") from None


def _as_int(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
        if isinstance(v, float) and v.is_integer():
            return int(v)
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    return int(v)


def _check_writable(path, where):
    if path is None:
        return
    parent = os.path.dirname(os.path.abspath(path)) or "."
    probe = parent
    while not os.path.exists(probe):
        nxt = os.path.dirname(probe)
        if nxt == probe:
            break
        probe = nxt
    if not os.path.isdir(probe) or not os.access(probe, os.W_OK):
        raise ConfigError(f"{where}: {path!r} is not writable")


def validate(cfg: ExperimentConfig):
    cfg.m = _as_int(cfg.m, "m")
    cfg.n_axis = _as_int(cfg.n_axis, "n_axis")
    cfg.s = _as_float(cfg.s, "s")
    cfg.seed = _as_int(cfg.seed, "seed")
    if cfg.m not in (1, 2):
        raise ConfigError("m must be 1 or 2")
    if cfg.n_axis < 8 or cfg.n_axis & (cfg.n_axis - 1):
        raise ConfigError("n_axis must be a power of two >= 8")
    if not 0.0 < cfg.s <= 1.0:
        raise ConfigError("s must lie in (0, 1]")
    cfg.chi.c = _as_float(cfg.chi.c, "chi.c")
    if cfg.chi.c <= 0:
        raise ConfigError("chi.c must be positive")
    for name, spec in (("initial", cfg.initial), ("chi.psi", cfg.chi.psi)):
        _validate_field(spec, name, cfg.m, cfg.n_axis)
    o = cfg.outputs
    for key in ("csv_path", "json_path", "snapshot_dir"):
        _check_writable(getattr(o, key), f"outputs.{key}")
    o.snapshot_every = _as_int(o.snapshot_every, "outputs.snapshot_every")
    if o.snapshot_every < 0:
        raise ConfigError("outputs.snapshot_every must be >= 0")
    sp = cfg.spectrum
    sp.s_grid = [_as_float(x, "spectrum.s_grid") for x in _as_list(sp.s_grid, "spectrum.s_grid")]
    if not sp.s_grid or any(not 0.0 < x <= 1.0 for x in sp.s_grid):
        raise ConfigError("spectrum.s_grid must be a nonempty list of values in (0, 1]")
    sp.samples = _as_int(sp.samples, "spectrum.samples")
    sp.max_mode = _as_int(sp.max_mode, "spectrum.max_mode")
    sp.margin = _as_float(sp.margin, "spectrum.margin")
    sp.maxiter = _as_int(sp.maxiter, "spectrum.maxiter")
    if sp.maxiter < 1:
        raise ConfigError("spectrum.maxiter must be >= 1")
    if not 0.0 < sp.margin < 1.0:
        raise ConfigError("spectrum.margin must lie in (0, 1)")
    cv = cfg.curve
    if cv.family not in ("constant", "linear", "bent"):
        raise ConfigError("curve.family must be constant, linear or bent")
    cv.n_tau = _as_int(cv.n_tau, "curve.n_tau")
    cv.max_mode = _as_int(cv.max_mode, "curve.max_mode")
    cv.n_probes = _as_int(cv.n_probes, "curve.n_probes")
    for key in ("amplitude", "bend", "dt", "t_final"):
        setattr(cv, key, _as_float(getattr(cv, key), f"curve.{key}"))
    if cv.n_tau < 2 or cv.dt <= 0 or cv.t_final < 2 * cv.dt or cv.n_probes < 1:
        raise ConfigError("curve: need n_tau >= 2, dt > 0, t_final >= 2 dt, n_probes >= 1")
    v = cfg.verify
    for key in ("samples", "spectral_samples", "variation_samples", "targets", "paths"):
        setattr(v, key, _as_int(getattr(v, key), f"verify.{key}"))
    v.s_values = [_as_float(x, "verify.s_values") for x in _as_list(v.s_values, "verify.s_values")]
    v.probe_times = [_as_float(x, "verify.probe_times")
                     for x in _as_list(v.probe_times, "verify.probe_times")]
    if not isinstance(v.tolerances, dict):
        raise ConfigError("verify.tolerances must be a mapping")
    v.tolerances = {str(k): _as_float(x, f"verify.tolerances.{k}") for k, x in v.tolerances.items()}
    if v.checks is not None:
        v.checks = [str(c) for c in _as_list(v.checks, "verify.checks")]
    try:
        cfg.integrator.resolved(cfg.s)
    except ValueError as exc:
        raise ConfigError(f"integrator: {exc}") from None
    return cfg


def _as_list(v, where):
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"{where}: expected a list")
    return list(v)


def _validate_field(spec, where, m, n_axis):
    if spec.preset not in PRESETS:
        raise ConfigError(f"{where}.preset: unknown preset {spec.preset!r}; choose from {PRESETS}")
    spec.max_mode = _as_int(spec.max_mode, f"{where}.max_mode")
    spec.seed = _as_int(spec.seed, f"{where}.seed")
    spec.decay = _as_float(spec.decay, f"{where}.decay")
    if spec.amplitude is not None:
        spec.amplitude = _as_float(spec.amplitude, f"{where}.amplitude")
    if spec.margin is not None:
        spec.margin = _as_float(spec.margin, f"{where}.margin")
        if not 0.0 < spec.margin < 1.0:
            raise ConfigError(f"{where}.margin must lie in (0, 1)")
    if spec.preset in ("random-bandlimited", "stability-small", "large-data"):
        if not 1 <= spec.max_mode <= n_axis // 3:
            raise ConfigError(f"{where}.max_mode must lie in [1, n_axis/3]")
    if spec.preset == "single-mode":
        k = spec.k if spec.k is not None else [1] + [0] * (2 * m - 1)
        k = [_as_int(x, f"{where}.k") for x in _as_list(k, f"{where}.k")]
        if len(k) != 2 * m:
            raise ConfigError(f"{where}.k must have {2 * m} entries")
        if max(abs(x) for x in k) > n_axis // 3:
            raise ConfigError(f"{where}.k exceeds the resolved band |k_a| <= n_axis/3")
        spec.k = k
    if spec.preset == "fourier":
        if not spec.coefficients:
            raise ConfigError(f"{where}.coefficients: the fourier preset needs a nonempty list")
        for i, term in enumerate(_as_list(spec.coefficients, f"{where}.coefficients")):
            w = f"{where}.coefficients[{i}]"
            if not isinstance(term, dict) or set(term) - {"k", "cos", "sin"} or "k" not in term:
                raise ConfigError(f"{w}: expected a mapping with k and optional cos / sin")
            k = [_as_int(x, f"{w}.k") for x in _as_list(term["k"], f"{w}.k")]
            if len(k) != 2 * m:
                raise ConfigError(f"{w}.k must have {2 * m} entries")
            _as_float(term.get("cos", 0.0), f"{w}.cos")
            _as_float(term.get("sin", 0.0), f"{w}.sin")


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path!r}: {exc}") from None
    return config_from_dict(raw)


def config_from_dict(raw):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("top level of the config must be a mapping")
    integ = raw.get("integrator")
    rest = {k: v for k, v in raw.items() if k != "integrator"}
    cfg = _build(ExperimentConfig, rest, "")
    cfg.integrator = _integrator(integ)
    return validate(cfg)


# ------------------------------------------------------------------ presets


def scale_to_margin(grid, f, margin):
    """Rescale f so that the smallest eigenvalue of I + i ddbar f is ``margin``."""
    low = float(herm.min_eig(grid.holo_hessian(f)).min())
    if low >= 0:
        raise ValueError("field has a nonnegative complex Hessian everywhere; cannot scale to a margin")
    return f * (1.0 - margin) / (-low)


def build_field(spec: FieldSpec, grid: PeriodicGrid):
    """Realise a FieldSpec on ``grid``."""
    p = spec.preset
    if p == "stationary":
        return np.zeros(grid.shape)
    if p == "single-mode":
        amp = 1e-5 if spec.amplitude is None else spec.amplitude
        return amp * grid.fourier_mode(spec.k)
    if p == "fourier":
        out = np.zeros(grid.shape)
        for term in spec.coefficients:
            out += float(term.get("cos", 0.0)) * grid.fourier_mode(term["k"])
            out += float(term.get("sin", 0.0)) * grid.fourier_mode(term["k"], phase=-0.5 * np.pi)
        return out
    rng = np.random.default_rng(spec.seed)
    if p == "random-bandlimited":
        f = grid.random_bandlimited(rng, spec.max_mode, 1.0, spec.decay)
        if spec.margin is not None:
            return scale_to_margin(grid, f, spec.margin)
        return (1e-3 if spec.amplitude is None else spec.amplitude) * f
    if p == "stability-small":
        amp = 1e-3 if spec.amplitude is None else spec.amplitude
        return grid.random_bandlimited(rng, spec.max_mode, amp, spec.decay)
    if p == "large-data":
        f = grid.random_bandlimited(rng, spec.max_mode, 1.0, spec.decay)
        return scale_to_margin(grid, f, 1e-3 if spec.margin is None else spec.margin)
    raise ConfigError(f"unknown preset {p!r}")


def build_setup(cfg: ExperimentConfig, s=None):
    grid = PeriodicGrid(cfg.m, cfg.n_axis)
    psi = cfg.chi.c * build_field(cfg.chi.psi, grid)
    eps = cfg.integrator.eps_pos
    return TwistedSetup(grid, cfg.s if s is None else s, cfg.chi.c, psi, eps_pos=eps)


# --------------------------------------------------------------------- help


def _section_help(title, cls, prefix):
    lines = [f"  [{title}]"]
    for f in fields(cls):
        if f.name in _SECTIONS or (cls is ChiConfig and f.name == "psi"):
            lines.append(f"    {prefix}{f.name}: {f.metadata['help']} (section)")
            continue
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        lines.append(f"    {prefix}{f.name}: {f.metadata['help']} [default: {default!r}]")
    return lines


def schema_help():
    """Plain-text description of every configuration key."""
    lines = ["configuration keys (YAML):"]
    lines += _section_help("top level", ExperimentConfig, "")
    lines += _section_help("chi", ChiConfig, "chi.")
    lines += _section_help("initial / chi.psi", FieldSpec, "")
    lines.append("  [integrator]")
    for f in fields(IntegratorConfig):
        default = f.default
        lines.append(f"    integrator.{f.name}: {_INTEGRATOR_HELP[f.name]} [default: {default!r}]")
    lines += _section_help("outputs", OutputConfig, "outputs.")
    lines += _section_help("spectrum", SpectrumConfig, "spectrum.")
    lines += _section_help("curve", CurveConfig, "curve.")
    lines += _section_help("verify", VerifyConfig, "verify.")
    return "\n".join(lines)
