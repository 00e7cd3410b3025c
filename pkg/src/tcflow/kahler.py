"""Kahler metrics omega_phi = omega + i ddbar phi on the flat torus.

Matrix fields are component-first, shape ``(m, m) + grid.shape``, and store
``H[j, k] = H_{j kbar}``; (1,0)-covectors have shape ``(m,) + grid.shape``.
For a metric ``g`` the inverse ``ginv`` is the pointwise matrix inverse, so
the contravariant tensor is ``g^{j kbar} = ginv[k, j]``. With this layout

    g^{j kbar} A_{j kbar}                  = trace(ginv @ A)
    g^{j qbar} g^{p kbar} A_{j kbar} B_{p qbar} = trace(ginv @ A @ ginv @ B)

The volume form omega^m is identified with det(g) times Lebesgue measure on
the unit torus; the background volume is 1.
"""
from functools import cached_property

import numpy as np

from . import _hermitian as herm
from .errors import DataValidityError, PositivityError
from .grid import PeriodicGrid

DEFAULT_EPS_POS = 1e-8


def trace_with(ginv, a):
    """g^{j kbar} a_{j kbar} as a complex field."""
    return herm.trace_product(ginv, a)


def inner_11(ginv, alpha, beta):
    """Pointwise inner product of two real (1,1)-forms at the metric with inverse ``ginv``."""
    return herm.trace_product(herm.matmul(ginv, alpha), herm.matmul(ginv, beta)).real


def grad_pair(ginv, du, dv):
    """<d u, d v> = g^{j kbar} u_j conj(v_k) from holomorphic gradients du, dv."""
    m = ginv.shape[0]
    dvc = np.conj(dv)
    return sum(ginv[k, j] * du[j] * dvc[k] for j in range(m) for k in range(m))


class TwistedSetup:
    """Background data: grid, twist parameter s and twist form chi = c omega + i ddbar psi.

    The averages are cohomological constants: the mean scalar curvature is 0
    on the torus and ``chi_bar`` is the average of tr_omega chi (= m c).
    """

    def __init__(self, grid: PeriodicGrid, s, chi_scale=1.0, chi_potential=None,
                 eps_pos=DEFAULT_EPS_POS):
        if not 0.0 < s <= 1.0:
            raise ValueError(f"twist parameter s must lie in (0, 1], got {s}")
        if chi_scale <= 0:
            raise ValueError("chi_scale must be positive")
        self.grid = grid
        self.s = float(s)
        self.chi_scale = float(chi_scale)
        if chi_potential is None:
            chi_potential = np.zeros(grid.shape)
        self.chi_potential = grid.check(np.asarray(chi_potential, dtype=float), "chi_potential")
        self.chi = self.chi_scale * herm.eye(grid.m, grid.shape) + grid.holo_hessian(self.chi_potential)
        self.chi_min_eig = float(herm.min_eig(self.chi).min())
        if self.chi_min_eig <= 0:
            raise DataValidityError(
                f"twist form is not positive: min eigenvalue {self.chi_min_eig:.3e}")
        self.eps_pos = float(eps_pos)
        self.chi_bar = grid.integrate(herm.trace(self.chi).real)
        self.r_bar = 0.0

    @property
    def twisted_average(self):
        return twisted_average(self)

    def with_s(self, s):
        return TwistedSetup(self.grid, s, self.chi_scale, self.chi_potential, self.eps_pos)


def twisted_average(setup):
    """Cohomological average s R_bar - (1 - s) chi_bar of the twisted scalar curvature."""
    return setup.s * setup.r_bar - (1.0 - setup.s) * setup.chi_bar


class MetricState:
    """omega_phi and its curvature. Curvature fields are computed on first access."""

    def __init__(self, setup: TwistedSetup, phi, eps_pos=None):
        grid = setup.grid
        phi = grid.check(np.asarray(phi), "phi")
        if np.iscomplexobj(phi):
            raise DataValidityError("Kahler potential must be real")
        self.setup = setup
        self.grid = grid
        self.phi = phi
        self.eps_pos = setup.eps_pos if eps_pos is None else eps_pos
        self.phi_hat = grid.forward(phi)
        self.hess = grid.holo_hessian(phi, self.phi_hat)
        self.g = herm.eye(grid.m, grid.shape) + self.hess
        self.positivity_margin = float(herm.min_eig(self.g).min())
        if self.positivity_margin <= self.eps_pos:
            raise PositivityError(self.positivity_margin, self.eps_pos, phi)
        self.det_g = herm.det(self.g)
        self.ginv = herm.inv(self.g)

    @cached_property
    def log_det(self):
        return np.log(self.det_g)

    @cached_property
    def ricci(self):
        """Ric_{j kbar} = -d_j d_kbar log det g."""
        return -self.grid.holo_hessian(self.log_det)

    @cached_property
    def scalar_curv(self):
        return trace_with(self.ginv, self.ricci).real

    @cached_property
    def tr_chi(self):
        """tr_{omega_phi} chi."""
        return trace_with(self.ginv, self.setup.chi).real

    @cached_property
    def twisted_scalar(self):
        s = self.setup.s
        return s * self.scalar_curv - (1.0 - s) * self.tr_chi

    def integrate(self, f):
        """Integral of f against omega_phi^m."""
        return self.grid.integrate(f, self.det_g)

    def volume(self):
        return self.grid.integrate(self.det_g)


def build_metric(setup, phi, eps_pos=None):
    """Metric state for potential ``phi``; raises PositivityError outside the Kahler cone."""
    return MetricState(setup, phi, eps_pos)


def twisted_scalar(setup, ms):
    """R^s(omega_phi) = s R_phi - (1 - s) tr_phi chi."""
    if ms.setup is setup:
        return ms.twisted_scalar
    tr_chi = trace_with(ms.ginv, setup.chi).real
    return setup.s * ms.scalar_curv - (1.0 - setup.s) * tr_chi
