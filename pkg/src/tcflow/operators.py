"""Twisted Lichnerowicz operator and related field-to-field maps.

Two independent evaluation routes exist for the twisted operator:

* ``lichnerowicz_twisted``: s Delta^2 f + <Ric^s, i ddbar f> + <d R^s, d f>,
  evaluated pointwise at omega_phi (primary route).
* ``lichnerowicz_twisted_def``: s DD^* DD f - (1 - s) i dbar^*(grad^{1,0} f -| chi),
  with the twist term computed as an explicit divergence.

The quadratic forms ``dd_norm_sq`` / ``chi_grad_norm_sq`` and the weak
operators ``weak_*`` are built only from first-order objects
(DD f = dbar grad^{1,0} f, grad^{1,0} f) and discrete integration by parts,
so they are exactly symmetric on the grid. The eigensolvers use them.
"""
from functools import cached_property

import numpy as np

from . import _hermitian as herm
from .kahler import MetricState, TwistedSetup, build_metric, grad_pair, inner_11, trace_with


class OperatorContext:
    """Operators of the twisted setup evaluated at one metric state."""

    def __init__(self, setup: TwistedSetup, ms: MetricState):
        self.setup = setup
        self.ms = ms
        self.grid = ms.grid
        self.s = setup.s

    @classmethod
    def from_potential(cls, setup, phi):
        return cls(setup, build_metric(setup, phi))

    @cached_property
    def tr_chi(self):
        return trace_with(self.ms.ginv, self.setup.chi).real

    @cached_property
    def twisted_scalar(self):
        return self.s * self.ms.scalar_curv - (1.0 - self.s) * self.tr_chi

    @cached_property
    def d_twisted_scalar(self):
        return self.grid.dz(self.twisted_scalar)

    @cached_property
    def d_scalar(self):
        return self.grid.dz(self.ms.scalar_curv)

    @cached_property
    def ricci_twisted(self):
        """Ric^s = s Ric - (1 - s) chi."""
        return self.s * self.ms.ricci - (1.0 - self.s) * self.setup.chi

    def weighted_integral(self, f):
        return self.ms.integrate(f)

    def weighted_mean(self, f):
        return self.ms.integrate(f) / self.ms.volume()


# ---------------------------------------------------------------- strong forms


def laplacian(ctx, f):
    """Delta_phi f = g^{j kbar} f_{j kbar} (half the Riemannian Laplacian)."""
    return trace_with(ctx.ms.ginv, ctx.grid.holo_hessian(f)).real


def _bilaplacian_and_hessian(ctx, f):
    hess = ctx.grid.holo_hessian(f)
    lap = trace_with(ctx.ms.ginv, hess).real
    return laplacian(ctx, lap), hess


def lichnerowicz_classical(ctx, f):
    """DD^* DD f = Delta^2 f + Ric^{j kbar} f_{j kbar} + g^{j kbar} R_j f_kbar (complex)."""
    bilap, hess = _bilaplacian_and_hessian(ctx, f)
    ginv = ctx.ms.ginv
    return bilap + inner_11(ginv, ctx.ms.ricci, hess) + grad_pair(ginv, ctx.d_scalar, ctx.grid.dz(f))


def lichnerowicz_twisted(ctx, f):
    """s Delta^2 f + <Ric^s, i ddbar f> + <d R^s, d f> at omega_phi (complex)."""
    bilap, hess = _bilaplacian_and_hessian(ctx, f)
    ginv = ctx.ms.ginv
    return (ctx.s * bilap + inner_11(ginv, ctx.ricci_twisted, hess)
            + grad_pair(ginv, ctx.d_twisted_scalar, ctx.grid.dz(f)))


def grad10(ctx, f):
    """Components X^a of grad^{1,0} f = g^{a bbar} f_bbar."""
    ginv = ctx.ms.ginv
    df = ctx.grid.dzbar(f)
    m = ctx.grid.m
    return np.stack([sum(ginv[g, a] * df[g] for g in range(m)) for a in range(m)])


def _lower(mat, x):
    """v_b = sum_c x^c mat_{c bbar}."""
    m = mat.shape[0]
    return np.stack([sum(x[c] * mat[c, b] for c in range(m)) for b in range(m)])


def twist_term_contraction(ctx, f):
    """i dbar^*(grad^{1,0} f -| chi) = g^{a bbar} d_a (g^{c ebar} f_ebar chi_{c bbar}).

    Computed as the divergence of the contracted (0,1)-form, with no use of
    the closedness of chi.
    """
    v = _lower(ctx.setup.chi, grad10(ctx, f))
    ginv = ctx.ms.ginv
    m = ctx.grid.m
    # g^{a bbar} d_a v_b = sum ginv[b, a] d_a v_b
    out = 0.0
    for b in range(m):
        dv = ctx.grid.dz(v[b])
        for a in range(m):
            out = out + ginv[b, a] * dv[a]
    return out


def twist_term_identity_rhs(ctx, f):
    """<i ddbar f, chi> + <d tr_phi chi, d f>."""
    ginv = ctx.ms.ginv
    hess = ctx.grid.holo_hessian(f)
    return inner_11(ginv, hess, ctx.setup.chi) + grad_pair(ginv, ctx.grid.dz(ctx.tr_chi), ctx.grid.dz(f))


def lichnerowicz_twisted_def(ctx, f):
    """Cross-check route: s DD^*DD f - (1 - s) i dbar^*(grad^{1,0} f -| chi)."""
    return ctx.s * lichnerowicz_classical(ctx, f) - (1.0 - ctx.s) * twist_term_contraction(ctx, f)


def lichnerowicz_untwisted_part(ctx, f):
    """The s = 0 end of the affine family: -i dbar^*(grad^{1,0} f -| chi)."""
    return -twist_term_contraction(ctx, f)


def quadratic_form(ctx, f, g=None):
    """Re of the integral of f * L^s(g) against omega_phi^m."""
    if g is None:
        g = f
    return float(np.real(ctx.ms.integrate(f * lichnerowicz_twisted(ctx, g))))


# ----------------------------------------------------- first-order quantities


def dd_operator(ctx, f):
    """DD f = dbar grad^{1,0} f as T[a, b] = d_bbar X^a."""
    x = grad10(ctx, f)
    return np.stack([ctx.grid.dzbar(x[a]) for a in range(ctx.grid.m)])


def _dd_lowered(ctx, t):
    """W[c, d] = g_{a cbar} g^{d bbar} T^a_bbar, i.e. g^T T ginv."""
    return herm.matmul(herm.matmul(np.swapaxes(ctx.ms.g, 0, 1), t), ctx.ms.ginv)


def dd_pointwise_norm_sq(ctx, t):
    """|T|^2 = g_{a cbar} g^{d bbar} T^a_bbar conj(T^c_dbar)."""
    w = _dd_lowered(ctx, t)
    m = ctx.grid.m
    return sum((w[c, d] * np.conj(t[c, d])).real for c in range(m) for d in range(m))


def dd_norm_sq(ctx, f):
    return ctx.ms.integrate(dd_pointwise_norm_sq(ctx, dd_operator(ctx, f)))


def chi_grad_norm_sq(ctx, f):
    """Integral of chi(grad^{1,0} f, conj grad^{1,0} f) against omega_phi^m."""
    x = grad10(ctx, f)
    m = ctx.grid.m
    xc = np.conj(x)
    dens = sum((ctx.setup.chi[a, b] * x[a] * xc[b]).real for a in range(m) for b in range(m))
    return ctx.ms.integrate(dens)


def grad_norm_sq(ctx, f):
    """Integral of |d f|^2_phi against omega_phi^m."""
    df = ctx.grid.dz(f)
    return ctx.ms.integrate(grad_pair(ctx.ms.ginv, df, df).real)


def lemma_decomposition(ctx, f):
    """s ||DD f||^2 + (1 - s) ||grad^{1,0} f||^2_chi."""
    return ctx.s * dd_norm_sq(ctx, f) + (1.0 - ctx.s) * chi_grad_norm_sq(ctx, f)


# ------------------------------------------------------------- weak operators
#
# weak_*(f) returns K f with  mean(h * K f) = q(f, h)  for the corresponding
# symmetric form q. Derivative adjoints are realised through the exact
# antisymmetry of the spectral derivative: sum u d(v) = -sum d(u) v.


def _weak_from_covector(ctx, w):
    """Given w[c] paired as Re mean(conj(X_h[c]) w[c]), return K with mean(h K) equal to it."""
    ginv = ctx.ms.ginv
    m = ctx.grid.m
    # conj(X_h[c]) = sum_e conj(ginv[e, c]) d_e h
    out = np.zeros(ctx.grid.shape)
    for e in range(m):
        z = sum(np.conj(ginv[e, c]) * w[c] for c in range(m))
        out -= ctx.grid.partial(z, e).real
    return out


def weak_dd(ctx, f):
    """Weak form of det(g) * DD^* DD f."""
    w = _dd_lowered(ctx, dd_operator(ctx, f)) * ctx.ms.det_g
    m = ctx.grid.m
    # pairing: Re mean(conj(T_h[c, d]) w[c, d]) with conj(T_h[c, d]) = d_d conj(X_h[c])
    y = np.stack([-sum(ctx.grid.partial(w[c, d], d) for d in range(m)) for c in range(m)])
    return _weak_from_covector(ctx, y)


def weak_chi(ctx, f):
    """Weak form of det(g) * (twist part of the operator)."""
    return _weak_from_covector(ctx, _lower(ctx.setup.chi, grad10(ctx, f)) * ctx.ms.det_g)


def weak_laplacian(ctx, f):
    """Weak form of -det(g) Delta_phi f."""
    return _weak_from_covector(ctx, _lower(ctx.ms.g, grad10(ctx, f)) * ctx.ms.det_g)


def weak_twisted(ctx, f):
    """Weak form of det(g) L^s f from the sum-of-squares decomposition."""
    out = (1.0 - ctx.s) * weak_chi(ctx, f)
    if ctx.s > 0:
        out += ctx.s * weak_dd(ctx, f)
    return out
