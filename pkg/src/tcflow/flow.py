"""Twisted Calabi flow d phi / dt = R^s(phi) - Rbar^s on the flat torus.

The flow is split as d phi / dt = -s Delta^2 phi + F(phi) with
F = s Delta^2 phi + (R^s - Rbar^s). The constant-coefficient part is the
flat biharmonic operator, diagonal in Fourier space with symbol
s pi^4 |k|^4, and is integrated exactly; F is treated explicitly.

Default integrator is second-order exponential time differencing
(ETD-RK2, Cox and Matthews):

    a     = e^{hL} u + h phi1(hL) F(u)
    u_new = a + h phi2(hL) (F(a) - F(u))

with L = -s Lambda. IMEX-Euler, u_new = (u + h F(u)) / (1 + h s Lambda), is
kept as a first-order reference. The state is kept inside the 2/3 band and
projected to zero mean after every step; the removed mean is accumulated
as ``mean_drift``.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import exprel

from . import operators as op
from ._parallel import pmap
from .errors import PositivityError, StepFloorError
from .functionals import PotentialPath, twisted_kenergy
from .kahler import build_metric, trace_with

SCHEMES = ("etd-rk2", "imex-euler")
DIAGNOSTIC_KEYS = ("calabi", "kenergy", "max_dev", "pos_margin", "vol_res",
                   "chern_res", "chi_res", "mean_drift", "split_res")


@dataclass(frozen=True)
class IntegratorConfig:
    """Time-stepping parameters.

    ``dt_init=None`` resolves to 1e-4 s^2. With ``adaptive=False`` every step
    uses dt_init (the last one is shortened to land on t_final).
    """
    scheme: str = "etd-rk2"
    dt_init: float = None
    dt_min: float = 1e-12
    dt_max: float = 1e-2
    rel_step_tol: float = 1e-6
    t_final: float = 1.0
    eps_pos: float = 1e-8
    adaptive: bool = True
    monotone_tol: float = 1e-10
    abort_on_violation: bool = False
    kenergy_quad: int = 16
    max_steps: int = 10_000_000

    def resolved(self, s):
        dt_init = 1e-4 * s * s if self.dt_init is None else self.dt_init
        cfg = replace(self, dt_init=float(dt_init))
        cfg.validate()
        return cfg

    def validate(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.dt_init is None:
            return
        if not 0 < self.dt_min <= self.dt_init <= self.dt_max:
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if self.t_final < 0:
            raise ValueError("t_final must be nonnegative")
        if self.rel_step_tol <= 0:
            raise ValueError("rel_step_tol must be positive")
        if self.eps_pos <= 0:
            raise ValueError("eps_pos must be positive")
        if self.kenergy_quad < 2 or self.kenergy_quad % 2:
            raise ValueError("kenergy_quad must be an even integer >= 2")


@dataclass
class FlowState:
    t: float
    phi: np.ndarray
    dt: float
    diagnostics: dict
    _cache: dict = field(default=None, repr=False, compare=False)

    @property
    def mean_drift(self):
        return self.diagnostics["mean_drift"]

    def ungauged(self):
        """phi plus the accumulated mean: the solution of the unnormalized flow."""
        return self.phi + self.mean_drift


@dataclass
class FlowTrace:
    records: list
    final: FlowState
    violations: list
    n_accepted: int
    n_rejected: int

    def column(self, key):
        return np.array([r[key] for r in self.records])

    def fitted_decay_rate(self, key="calabi", fraction=0.5):
        """-slope of a least-squares fit of log(key) against t over the final ``fraction`` of the run."""
        t = self.column("t")
        y = self.column(key)
        t_end = t[-1]
        sel = (t >= t[0] + (1.0 - fraction) * (t_end - t[0])) & (y > 0)
        if np.count_nonzero(sel) < 2:
            raise ValueError("not enough positive samples to fit a decay rate")
        slope = np.polyfit(t[sel], np.log(y[sel]), 1)[0]
        return float(-slope)


# ----------------------------------------------------------------- RHS


@dataclass
class _Eval:
    ms: object
    dev: np.ndarray
    f_hat: np.ndarray
    phi_hat: np.ndarray
    split_res: float


def rhs_split(setup, ms):
    """(multiplier, F) with d phi / dt = -multiplier * phi_hat + F(phi).

    ``multiplier`` is s pi^4 |k|^4 on the real-FFT half grid and
    F = s Delta^2 phi + R^s - Rbar^s at the metric ``ms``.
    """
    grid = setup.grid
    mult = setup.s * grid.biharmonic_symbol
    dev = _deviation(setup, ms)
    return mult, grid.backward(mult * ms.phi_hat) + dev


def _deviation(setup, ms):
    tr_chi = trace_with(ms.ginv, setup.chi).real
    return setup.s * ms.scalar_curv - (1.0 - setup.s) * tr_chi - setup.twisted_average


def _evaluate(setup, phi, eps_pos):
    grid = setup.grid
    ms = build_metric(setup, phi, eps_pos)
    mult = setup.s * grid.biharmonic_symbol
    dev = _deviation(setup, ms)
    lin = grid.backward(mult * ms.phi_hat)
    f = lin + dev
    # the two right-hand sides: direct R^s - Rbar^s and -s Delta^2 phi + F
    split_res = float(np.max(np.abs((f - lin) - dev)))
    return _Eval(ms=ms, dev=dev, f_hat=grid.forward(f) * grid.dealias_mask,
                 phi_hat=ms.phi_hat, split_res=split_res)


def _diagnostics(setup, ev, mean_drift, kenergy):
    ms = ev.ms
    tr_chi = trace_with(ms.ginv, setup.chi).real
    return {
        "calabi": float(ms.integrate(ev.dev * ev.dev)),
        "kenergy": float(kenergy),
        "max_dev": float(np.max(np.abs(ev.dev))),
        "pos_margin": ms.positivity_margin,
        "vol_res": float(ms.volume() - 1.0),
        "chern_res": float(ms.integrate(ms.scalar_curv)),
        "chi_res": float(ms.integrate(tr_chi) - setup.chi_bar),
        "mean_drift": float(mean_drift),
        "split_res": ev.split_res,
    }


# ------------------------------------------------------------- ETD weights


def phi1(z):
    """(e^z - 1) / z, with the removable singularity at 0."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-4
    zs = z[small]
    out[small] = 1.0 + zs / 2.0 + zs * zs / 6.0
    out[~small] = exprel(z[~small])
    return out


def phi2(z):
    """(e^z - 1 - z) / z^2, with a series near 0."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 0.1
    zs = z[small]
    acc = np.zeros_like(zs)
    term = np.full_like(zs, 0.5)
    for k in range(2, 12):
        acc += term
        term = term * zs / (k + 1)
    out[small] = acc
    zb = z[~small]
    out[~small] = (np.expm1(zb) - zb) / (zb * zb)
    return out


class _Weights:
    """Per-dt cache of the diagonal ETD / IMEX factors."""

    def __init__(self, setup):
        self.lam = setup.s * setup.grid.biharmonic_symbol
        self._cache = {}

    def get(self, h):
        w = self._cache.get(h)
        if w is None:
            z = -h * self.lam
            w = (np.exp(z), h * phi1(z), h * phi2(z), 1.0 / (1.0 + h * self.lam))
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[h] = w
        return w


# ------------------------------------------------------------------ stepping


class _Stepper:
    def __init__(self, setup, cfg):
        self.setup = setup
        self.cfg = cfg
        self.grid = setup.grid
        self.weights = _Weights(setup)
        self.mask = self.grid.dealias_mask

    def initial_state(self, phi0, t0=0.0, kenergy0=None, mean_drift=0.0):
        grid = self.grid
        phi0 = grid.check(np.asarray(phi0, dtype=float), "phi0")
        phi_hat = grid.forward(phi0) * self.mask
        mean = phi_hat.flat[0].real / grid.size
        phi_hat.flat[0] = 0.0
        phi = grid.backward(phi_hat)
        ev = _evaluate(self.setup, phi, self.cfg.eps_pos)
        if kenergy0 is None:
            if np.max(np.abs(phi)) == 0.0:
                kenergy0 = 0.0
            else:
                kenergy0 = twisted_kenergy(self.setup, phi, self.cfg.kenergy_quad).kenergy_twisted
        diag = _diagnostics(self.setup, ev, mean_drift + mean, kenergy0)
        return FlowState(t=float(t0), phi=phi, dt=self.cfg.dt_init, diagnostics=diag,
                         _cache={"eval": ev})

    def _eval_of(self, state):
        ev = state._cache.get("eval") if state._cache else None
        if ev is None:
            ev = _evaluate(self.setup, state.phi, self.cfg.eps_pos)
        return ev

    def attempt(self, state, h):
        """One trial step of size h. Returns (phi_new_hat, eval_new, err) or raises PositivityError."""
        grid = self.grid
        ev = self._eval_of(state)
        u = ev.phi_hat * self.mask
        e, hp1, hp2, imex = self.weights.get(h)
        if self.cfg.scheme == "etd-rk2":
            a = e * u + hp1 * ev.f_hat
            ev_a = _evaluate(self.setup, grid.backward(a), self.cfg.eps_pos)
            corr = hp2 * (ev_a.f_hat - ev.f_hat)
            new = a + corr
            err_field = corr
        else:
            new = imex * (u + h * ev.f_hat)
            err_field = None
        mean = new.flat[0].real / grid.size
        new.flat[0] = 0.0
        phi_new = grid.backward(new)
        ev_new = _evaluate(self.setup, phi_new, self.cfg.eps_pos)
        if err_field is None:
            # first-order local error of the IMEX step
            err_field = 0.5 * h * imex * (ev_new.f_hat - ev.f_hat)
        scale = max(np.max(np.abs(phi_new)), np.max(np.abs(state.phi)), 1e-300)
        err = float(np.max(np.abs(grid.backward(err_field)))) / scale
        return phi_new, ev_new, mean, err

    def step(self, state):
        """Advance by one accepted step (adaptive or fixed)."""
        cfg = self.cfg
        remaining = cfg.t_final - state.t
        h = min(state.dt, remaining) if remaining > 0 else state.dt
        rejected = 0
        while True:
            if h < cfg.dt_min * (1.0 - 1e-12) and h < remaining:
                raise StepFloorError(h, cfg.dt_min, state.t, state.phi)
            try:
                phi_new, ev_new, mean, err = self.attempt(state, h)
            except PositivityError as exc:
                if not cfg.adaptive:
                    exc.t = state.t
                    raise
                rejected += 1
                h *= 0.5
                if h < cfg.dt_min:
                    exc.t = state.t
                    raise exc
                continue
            if cfg.adaptive and err > cfg.rel_step_tol:
                rejected += 1
                h *= 0.5
                continue
            break
        if cfg.adaptive:
            grow = 2.0 if err == 0.0 else min(2.0, max(0.5, 0.9 * math.sqrt(cfg.rel_step_tol / err)))
            dt_next = min(cfg.dt_max, max(cfg.dt_min, h * grow))
        else:
            dt_next = state.dt
        c_old = state.diagnostics["calabi"]
        ev_tmp = _diagnostics(self.setup, ev_new, state.mean_drift + mean, 0.0)
        kenergy = state.diagnostics["kenergy"] - 0.5 * h * (c_old + ev_tmp["calabi"])
        ev_tmp["kenergy"] = float(kenergy)
        new_state = FlowState(t=state.t + h, phi=phi_new, dt=dt_next, diagnostics=ev_tmp,
                              _cache={"eval": ev_new})
        if remaining > 0 and abs(cfg.t_final - new_state.t) < 1e-12 * max(1.0, cfg.t_final):
            new_state.t = cfg.t_final
        return new_state, h, rejected


def step(setup, state, cfg):
    """One accepted step of the configured scheme from ``state``."""
    cfg = cfg.resolved(setup.s)
    new_state, _, _ = _Stepper(setup, cfg).step(state)
    return new_state


def initial_state(setup, phi0, cfg):
    cfg = cfg.resolved(setup.s)
    return _Stepper(setup, cfg).initial_state(phi0)


def _record(state, h, rejected):
    rec = {"t": state.t, "dt": h}
    rec.update(state.diagnostics)
    rec["rejected"] = rejected
    return rec


class MonotonicityError(RuntimeError):
    def __init__(self, violation, state):
        super().__init__(
            f"Calabi energy increased at t={violation['t']:.6g}: "
            f"{violation['before']:.6e} -> {violation['after']:.6e}")
        self.violation = violation
        self.state = state


def run(setup, phi0, cfg, sink=None, observer=None):
    """Integrate from phi0 to cfg.t_final.

    Each accepted step's record is passed to ``sink``; ``observer`` receives
    (accepted step count, state), starting with (0, initial state).
    """
    cfg = cfg.resolved(setup.s)
    stepper = _Stepper(setup, cfg)
    state = stepper.initial_state(phi0)
    records = [_record(state, 0.0, 0)]
    if sink is not None:
        sink(records[0])
    if observer is not None:
        observer(0, state)
    violations = []
    n_acc = n_rej = 0
    eps_t = 1e-12 * max(1.0, cfg.t_final)
    while state.t < cfg.t_final - eps_t:
        if n_acc >= cfg.max_steps:
            raise StepFloorError(state.dt, cfg.dt_min, state.t, state.phi)
        prev = state
        try:
            state, h, rejected = stepper.step(state)
        except (PositivityError, StepFloorError) as exc:
            exc.last_state = state
            raise
        n_acc += 1
        n_rej += rejected
        rec = _record(state, h, rejected)
        records.append(rec)
        if sink is not None:
            sink(rec)
        if observer is not None:
            observer(n_acc, state)
        c0 = prev.diagnostics["calabi"]
        c1 = state.diagnostics["calabi"]
        if c1 > c0 + cfg.monotone_tol * max(1.0, c0):
            v = {"t": state.t, "before": c0, "after": c1}
            violations.append(v)
            if cfg.abort_on_violation:
                raise MonotonicityError(v, state)
    return FlowTrace(records=records, final=state, violations=violations,
                     n_accepted=n_acc, n_rejected=n_rej)


# ------------------------------------------------------------ curve experiment


@dataclass
class CurveResult:
    times: np.ndarray
    energy: np.ndarray
    length: np.ndarray
    probes: list
    max_residual: float
    energy_nonincreasing: bool
    length_nonincreasing: bool


def _family_energy_length(setup, path_taus, phis, weights, dmat, eps_pos):
    flat = np.stack(phis).reshape(len(phis), -1)
    vel = (dmat @ flat).reshape((len(phis),) + phis[0].shape)

    def one(i):
        ms = build_metric(setup, phis[i], eps_pos)
        return float(ms.integrate(vel[i] * vel[i]))

    sq = np.array(pmap(one, range(len(phis))))
    return float(weights @ sq), float(weights @ np.sqrt(np.maximum(sq, 0.0))), vel


def _energy_rate_formula(setup, phis, vel, weights, eps_pos):
    """-2 int_0^1 int phi_tau Re L^s(phi_tau) omega_phi^m dtau."""

    def one(i):
        ctx = op.OperatorContext(setup, build_metric(setup, phis[i], eps_pos))
        return float(np.real(ctx.ms.integrate(vel[i] * op.lichnerowicz_twisted(ctx, vel[i]))))

    vals = np.array(pmap(one, range(len(phis))))
    return float(-2.0 * weights @ vals)


def curve_deformation(setup, path: PotentialPath, cfg, n_probes=5):
    """Flow every sample of a curve and track its Mabuchi energy and length.

    All samples advance in lockstep with the fixed step cfg.dt_init so that
    the family is defined at matched times. The unnormalized flow is used
    (gauge mean added back) because the energy sees constants. dE/dt is
    probed by centred differences over one step at ``n_probes`` interior
    times and compared with -2 int int phi_tau L^s(phi_tau).
    """
    if not path.spectral:
        raise ValueError("curve_deformation needs a path sampled on Chebyshev-Lobatto nodes")
    cfg = replace(cfg.resolved(setup.s), adaptive=False)
    stepper = _Stepper(setup, cfg)
    weights = path.quadrature_weights()
    dmat = path._dmat
    states = pmap(lambda p: stepper.initial_state(p, kenergy0=0.0), list(path.phis))
    n_steps = int(round(cfg.t_final / cfg.dt_init))
    if n_steps < 2:
        raise ValueError("curve experiment needs at least two steps")
    probe_steps = sorted(set(int(round(x)) for x in np.linspace(1, n_steps - 1, n_probes + 2)[1:-1]))
    times, energy, length = [], [], []
    formula = {}
    for j in range(n_steps + 1):
        phis = [st.ungauged() for st in states]
        e, ln, vel = _family_energy_length(setup, path.taus, phis, weights, dmat, cfg.eps_pos)
        times.append(states[0].t)
        energy.append(e)
        length.append(ln)
        if j in probe_steps:
            formula[j] = _energy_rate_formula(setup, phis, vel, weights, cfg.eps_pos)
        if j < n_steps:
            states = pmap(lambda st: stepper.step(st)[0], states)
    times = np.array(times)
    energy = np.array(energy)
    length = np.array(length)
    probes = []
    for j in probe_steps:
        fd = (energy[j + 1] - energy[j - 1]) / (times[j + 1] - times[j - 1])
        ex = formula[j]
        probes.append({"t": float(times[j]), "fd": float(fd), "formula": ex,
                       "residual": float(abs(fd - ex) / max(abs(ex), 1e-300))})
    tol = 1e-12
    return CurveResult(
        times=times, energy=energy, length=length, probes=probes,
        max_residual=max(p["residual"] for p in probes),
        energy_nonincreasing=bool(np.all(np.diff(energy) <= tol * np.maximum(1.0, energy[:-1]))),
        length_nonincreasing=bool(np.all(np.diff(length) <= tol * np.maximum(1.0, length[:-1]))),
    )
