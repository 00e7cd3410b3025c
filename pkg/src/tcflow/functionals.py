"""Energies on the space of Kahler potentials and their variational checks.

Conventions
-----------
* The twisted Calabi functional is C^s = int (R^s - Rbar^s)^2 omega_phi^m with
  no 1/2 in front. Its first variation is then
  D C^s(delta) = -2 Re int delta L^s(R^s) omega_phi^m, and at a critical point
  its Hessian is 2 Re int L^s(d1) conj(L^s(d2)).
* The twisted K-energy M^s = s M + (1 - s) J_chi is defined through its
  differential D M^s(delta) = -int delta (R^s - Rbar^s) omega_phi^m and is
  evaluated by integrating that 1-form along a path from phi = 0.
"""
from dataclasses import dataclass

import numpy as np

from . import operators as op
from ._parallel import pmap
from .kahler import build_metric, trace_with

DEFAULT_N_QUAD = 16


@dataclass(frozen=True)
class EnergyReport:
    calabi: float
    kenergy_twisted: float
    kenergy_mabuchi: float
    j_chi: float
    quadrature_error_estimate: float


# ------------------------------------------------------------------ Calabi


def twisted_deviation(setup, ms):
    """R^s - Rbar^s at the metric state ``ms``."""
    tr_chi = trace_with(ms.ginv, setup.chi).real
    return setup.s * ms.scalar_curv - (1.0 - setup.s) * tr_chi - setup.twisted_average


def calabi_energy(setup, phi):
    """C^s(phi) = int (R^s - Rbar^s)^2 omega_phi^m."""
    ms = build_metric(setup, phi)
    dev = twisted_deviation(setup, ms)
    return float(ms.integrate(dev * dev))


def calabi_gradient(setup, phi):
    """L2(omega_phi^m) gradient of C^s: the field G with D C^s(delta) = int delta G omega_phi^m."""
    ctx = op.OperatorContext.from_potential(setup, phi)
    # L^s annihilates constants, so R^s and R^s - Rbar^s give the same field
    return -2.0 * np.real(op.lichnerowicz_twisted(ctx, ctx.twisted_scalar))


def calabi_first_variation(setup, phi, delta, with_imag=False):
    """-2 Re int delta L^s(R^s) omega_phi^m.

    With ``with_imag`` also returns the discarded imaginary part of the
    pairing (zero in exact arithmetic, a discretization diagnostic here).
    """
    ctx = op.OperatorContext.from_potential(setup, phi)
    lr = op.lichnerowicz_twisted(ctx, ctx.twisted_scalar)
    pairing = -2.0 * complex(ctx.ms.integrate(delta * lr))
    if with_imag:
        return pairing.real, pairing.imag
    return pairing.real


def calabi_fd_derivative(setup, phi, delta, eps):
    """Central difference (C(phi + eps delta) - C(phi - eps delta)) / (2 eps)."""
    cp = calabi_energy(setup, phi + eps * delta)
    cm = calabi_energy(setup, phi - eps * delta)
    return (cp - cm) / (2.0 * eps)


def calabi_hessian_form(setup, phi, d1, d2):
    """2 Re int L^s(d1) conj(L^s(d2)) omega_phi^m (the Hessian when phi is critical)."""
    ctx = op.OperatorContext.from_potential(setup, phi)
    l1 = op.lichnerowicz_twisted(ctx, d1)
    l2 = op.lichnerowicz_twisted(ctx, d2)
    return float(2.0 * np.real(ctx.ms.integrate(l1 * np.conj(l2))))


def calabi_fd_hessian(setup, phi, d1, d2, eps, richardson=True):
    """Mixed second difference of C^s in directions d1, d2.

    The four-point stencil has O(eps^2) error; with ``richardson`` the
    stencils at eps and eps/2 are combined to cancel it.
    """

    def mixed(h):
        vals = pmap(lambda sg: calabi_energy(setup, phi + h * (sg[0] * d1 + sg[1] * d2)),
                    [(1, 1), (1, -1), (-1, 1), (-1, -1)])
        return (vals[0] - vals[1] - vals[2] + vals[3]) / (4.0 * h * h)

    coarse = mixed(eps)
    if not richardson:
        return coarse
    fine = mixed(0.5 * eps)
    return (4.0 * fine - coarse) / 3.0


# -------------------------------------------------------------- K-energy


def _one_form_parts(setup, phi, direction):
    """(-int dir R, int dir (tr chi - chi_bar), D M^s(dir)) at phi, all against omega_phi^m."""
    ms = build_metric(setup, phi)
    tr_chi = trace_with(ms.ginv, setup.chi).real
    mab = -ms.integrate(direction * ms.scalar_curv)
    jchi = ms.integrate(direction * (tr_chi - setup.chi_bar))
    return mab, jchi, setup.s * mab + (1.0 - setup.s) * jchi


def kenergy_one_form(setup, phi, direction):
    """D M^s_phi(direction) = -int direction (R^s - Rbar^s) omega_phi^m."""
    return _one_form_parts(setup, phi, direction)[2]


def _simpson_weights(n):
    if n < 2 or n % 2:
        raise ValueError(f"Simpson rule needs an even number of panels >= 2, got {n}")
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / (3.0 * n)


def kenergy_segment(setup, start, end, n_quad=DEFAULT_N_QUAD):
    """Integrate the K-energy 1-form along the straight segment start -> end.

    Returns (parts, error) where parts = (M, J_chi, M^s) increments from the
    composite Simpson rule with 2 n_quad panels and ``error`` is the
    Richardson estimate |S_2n - S_n| / 15 for the twisted part.
    """
    n2 = 2 * n_quad
    step = end - start
    ts = np.linspace(0.0, 1.0, n2 + 1)
    vals = np.array(pmap(lambda t: _one_form_parts(setup, start + t * step, step), ts))
    fine = _simpson_weights(n2) @ vals
    coarse = _simpson_weights(n_quad) @ vals[::2]
    err = abs(fine[2] - coarse[2]) / 15.0
    return fine, err


def twisted_kenergy(setup, phi, n_quad=DEFAULT_N_QUAD):
    """Calabi energy and K-energies of phi, the latter along the linear path t phi."""
    phi = np.asarray(phi, dtype=float)
    calabi = calabi_energy(setup, phi)
    parts, err = kenergy_segment(setup, np.zeros_like(phi), phi, n_quad)
    return EnergyReport(calabi=calabi, kenergy_twisted=float(parts[2]),
                        kenergy_mabuchi=float(parts[0]), j_chi=float(parts[1]),
                        quadrature_error_estimate=float(err))


def kenergy_polyline(setup, vertices, n_quad=DEFAULT_N_QUAD):
    """M^s at the last vertex, integrated along the polyline 0 -> v_1 -> ... -> v_k."""
    total = 0.0
    err = 0.0
    prev = np.zeros_like(vertices[0])
    for v in vertices:
        parts, e = kenergy_segment(setup, prev, v, n_quad)
        total += parts[2]
        err += e
        prev = v
    return float(total), float(err)


def kenergy_bent(setup, phi, bump, n_quad=DEFAULT_N_QUAD):
    """M^s(phi) along the two-segment path through phi/2 + bump."""
    return kenergy_polyline(setup, [0.5 * phi + bump, phi], n_quad)


def kenergy_along(setup, path, t0, t1, n_gauss=8):
    """int_{t0}^{t1} D M^s_{phi(t)}(phi'(t)) dt by Gauss-Legendre on a smooth path."""
    x, w = np.polynomial.legendre.leggauss(n_gauss)
    half = 0.5 * (t1 - t0)
    ts = t0 + half * (x + 1.0)
    vals = pmap(lambda t: kenergy_one_form(setup, path.at(t), path.velocity(t)), ts)
    return float(half * np.dot(w, vals))


# ------------------------------------------------------------------ paths


def chebyshev_lobatto(n):
    """n + 1 Chebyshev-Lobatto nodes on [0, 1], increasing, with the differentiation matrix."""
    if n < 1:
        raise ValueError("need at least one interval")
    k = np.arange(n + 1)
    x = np.cos(np.pi * k / n)  # 1 .. -1
    c = np.where((k == 0) | (k == n), 2.0, 1.0) * (-1.0) ** k
    dx = x[:, None] - x[None, :]
    d = np.outer(c, 1.0 / c) / (dx + np.eye(n + 1))
    d -= np.diag(d.sum(axis=1))
    # map [-1, 1] -> [0, 1] and reverse to increasing order
    tau = 0.5 * (1.0 - x)
    return tau, -2.0 * d


def clenshaw_curtis_weights(n):
    """Quadrature weights on [0, 1] for the increasing Chebyshev-Lobatto nodes."""
    theta = np.pi * np.arange(n + 1) / n
    w = np.zeros(n + 1)
    v = np.ones(n - 1)
    if n % 2 == 0:
        w[0] = w[n] = 1.0 / (n * n - 1)
        for k in range(1, n // 2):
            v -= 2.0 * np.cos(2 * k * theta[1:-1]) / (4 * k * k - 1)
        v -= np.cos(n * theta[1:-1]) / (n * n - 1)
    else:
        w[0] = w[n] = 1.0 / (n * n)
        for k in range(1, (n - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[1:-1]) / (4 * k * k - 1)
    w[1:-1] = 2.0 * v / n
    return 0.5 * w  # symmetric, so the reversal to increasing tau is free


class PotentialPath:
    """Sampled curve tau -> phi_tau with tau in [0, 1].

    Velocities are either given, computed spectrally when the nodes are
    Chebyshev-Lobatto (``spectral=True``), or by second-order finite
    differences otherwise.
    """

    def __init__(self, taus, phis, velocities=None, spectral=False):
        taus = np.asarray(taus, dtype=float)
        if taus.ndim != 1 or taus.size < 2:
            raise ValueError("a path needs at least two samples")
        if np.any(np.diff(taus) <= 0):
            raise ValueError("tau must be strictly increasing")
        if taus[0] != 0.0 or taus[-1] != 1.0:
            raise ValueError("tau must start at 0 and end at 1")
        self.taus = taus
        self.phis = np.asarray(phis, dtype=float)
        if self.phis.shape[0] != taus.size:
            raise ValueError("one potential per tau sample is required")
        self.spectral = bool(spectral)
        if spectral:
            nodes, dmat = chebyshev_lobatto(taus.size - 1)
            if not np.allclose(nodes, taus, atol=1e-14):
                raise ValueError("spectral velocities need Chebyshev-Lobatto nodes")
            self._dmat = dmat
        if velocities is None:
            velocities = self._differentiate(self.phis)
        self.velocities = np.asarray(velocities, dtype=float)

    @classmethod
    def chebyshev(cls, fn, n):
        """Sample a callable tau -> phi on n + 1 Chebyshev-Lobatto nodes."""
        taus, _ = chebyshev_lobatto(n)
        return cls(taus, np.stack([fn(t) for t in taus]), spectral=True)

    def _differentiate(self, values):
        flat = values.reshape(values.shape[0], -1)
        if self.spectral:
            out = self._dmat @ flat
        else:
            out = np.gradient(flat, self.taus, axis=0, edge_order=2)
        return out.reshape(values.shape)

    def quadrature_weights(self):
        if self.spectral:
            return clenshaw_curtis_weights(self.taus.size - 1)
        # trapezoid
        dt = np.diff(self.taus)
        w = np.zeros(self.taus.size)
        w[:-1] += 0.5 * dt
        w[1:] += 0.5 * dt
        return w

    def __len__(self):
        return self.taus.size


def speed_squared(setup, phi, velocity):
    """int velocity^2 omega_phi^m (Mabuchi norm squared)."""
    ms = build_metric(setup, phi)
    return float(ms.integrate(velocity * velocity))


def curve_energy_length(setup, path: PotentialPath):
    """(E, l) = (int_0^1 |phi'|^2 dtau, int_0^1 |phi'| dtau) in the Mabuchi metric."""
    sq = np.array(pmap(lambda i: speed_squared(setup, path.phis[i], path.velocities[i]),
                       range(len(path))))
    w = path.quadrature_weights()
    return float(w @ sq), float(w @ np.sqrt(np.maximum(sq, 0.0)))


class PolynomialPath:
    """Smooth path phi(t) = sum_k t^k c_k with exact derivatives."""

    def __init__(self, coeffs):
        self.coeffs = [np.asarray(c, dtype=float) for c in coeffs]

    def _eval(self, t, order):
        out = np.zeros_like(self.coeffs[0])
        for k, c in enumerate(self.coeffs):
            if k < order:
                continue
            fac = 1.0
            for j in range(order):
                fac *= k - j
            out = out + fac * t ** (k - order) * c
        return out

    def at(self, t):
        return self._eval(t, 0)

    def velocity(self, t):
        return self._eval(t, 1)

    def acceleration(self, t):
        return self._eval(t, 2)

    def sample(self, n, spectral=True):
        taus = chebyshev_lobatto(n)[0] if spectral else np.linspace(0.0, 1.0, n + 1)
        phis = np.stack([self.at(t) for t in taus])
        vels = np.stack([self.velocity(t) for t in taus])
        return PotentialPath(taus, phis, vels, spectral=spectral)


# --------------------------------------------------------- second variation


@dataclass(frozen=True)
class SecondVariation:
    fd: float
    formula: float
    geodesic_defect_term: float
    residual: float


def second_variation_formula(setup, phi, vel, acc):
    """d^2 M^s / dt^2 along a path with phi' = vel, phi'' = acc.

    int (-phi'' + |d phi'|^2_phi)(R^s - Rbar^s) omega_phi^m + Re int phi' L^s(phi') omega_phi^m.
    Returns (total, defect term).
    """
    ctx = op.OperatorContext.from_potential(setup, phi)
    dev = ctx.twisted_scalar - setup.twisted_average
    dv = ctx.grid.dz(vel)
    grad_sq = op.grad_pair(ctx.ms.ginv, dv, dv).real
    defect = ctx.ms.integrate((-acc + grad_sq) * dev)
    lin = np.real(ctx.ms.integrate(vel * op.lichnerowicz_twisted(ctx, vel)))
    return float(defect + lin), float(defect)


def kenergy_second_difference(setup, path, t0, h, n_gauss=8):
    """(M(t0 + h) - 2 M(t0) + M(t0 - h)) / h^2 from exact 1-form integrals."""
    up = kenergy_along(setup, path, t0, t0 + h, n_gauss)
    down = kenergy_along(setup, path, t0 - h, t0, n_gauss)
    return (up - down) / (h * h)


def second_variation_check(setup, path, t0, h=1e-2, n_gauss=8):
    """Compare the FD second derivative of M^s with the closed-form identity at t0.

    ``path`` provides at/velocity/acceleration (e.g. PolynomialPath). The FD
    value uses steps h and h/2 combined by Richardson extrapolation.
    """
    if not h < t0 < 1.0 - h:
        raise ValueError("finite-difference stencil must fit inside [0, 1]")
    d_h = kenergy_second_difference(setup, path, t0, h, n_gauss)
    d_h2 = kenergy_second_difference(setup, path, t0, 0.5 * h, n_gauss)
    fd = (4.0 * d_h2 - d_h) / 3.0
    formula, defect = second_variation_formula(
        setup, path.at(t0), path.velocity(t0), path.acceleration(t0))
    scale = max(abs(formula), abs(fd), 1e-300)
    return SecondVariation(fd=fd, formula=formula, geodesic_defect_term=defect,
                           residual=abs(fd - formula) / scale)
