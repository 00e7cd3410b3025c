import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import scaled
from tcflow import operators as op
from tcflow.grid import PeriodicGrid
from tcflow.kahler import TwistedSetup


def random_ctx(m, seed, margin=None, s=None):
    grid = PeriodicGrid(m, 64 if m == 1 else 16)
    if margin is None:
        margin = 0.8 if m == 1 else 0.95
    rng = np.random.default_rng(seed)
    mm = 2 if m == 1 else 1
    s = float(rng.uniform(0.05, 0.95)) if s is None else s
    psi = scaled(grid, grid.random_bandlimited(rng, mm), 0.5)
    phi = scaled(grid, grid.random_bandlimited(rng, mm), margin)
    f = grid.random_bandlimited(rng, mm)
    g = grid.random_bandlimited(rng, mm)
    return op.OperatorContext.from_potential(TwistedSetup(grid, s, 1.0, psi), phi), f, g


@pytest.mark.parametrize("m,n,k", [(1, 32, (1, 0)), (1, 32, (2, -1)), (2, 8, (1, 0, 1, 1))])
@pytest.mark.parametrize("s", [0.2, 0.7])
def test_flat_symbol(m, n, k, s):
    """At the flat metric with chi = c omega, L^s is the multiplier s pi^4 |k|^4 + (1-s) c pi^2 |k|^2."""
    grid = PeriodicGrid(m, n)
    c = 1.7
    ctx = op.OperatorContext.from_potential(TwistedSetup(grid, s, c), np.zeros(grid.shape))
    f = grid.fourier_mode(k)
    ksq = sum(x * x for x in k)
    want = (s * np.pi**4 * ksq**2 + (1 - s) * c * np.pi**2 * ksq) * f
    for route in (op.lichnerowicz_twisted, op.lichnerowicz_twisted_def):
        np.testing.assert_allclose(route(ctx, f).real, want, atol=1e-7 * np.max(np.abs(want)))
    np.testing.assert_allclose(op.weak_twisted(ctx, f), want, atol=1e-7 * np.max(np.abs(want)))


@given(seed=st.integers(0, 2**31 - 1), m=st.sampled_from([1, 2]))
def test_twist_identity_and_routes(seed, m):
    ctx, f, _ = random_ctx(m, seed)
    lhs = op.twist_term_contraction(ctx, f)
    rhs = op.twist_term_identity_rhs(ctx, f)
    assert np.max(np.abs(lhs - rhs)) <= 1e-8 * np.max(np.abs(rhs))
    l1 = op.lichnerowicz_twisted(ctx, f)
    l2 = op.lichnerowicz_twisted_def(ctx, f)
    assert np.max(np.abs(l1 - l2)) <= 1e-8 * np.max(np.abs(l1))


@given(seed=st.integers(0, 2**31 - 1), m=st.sampled_from([1, 2]))
def test_decomposition_and_positivity(seed, m):
    ctx, f, _ = random_ctx(m, seed)
    q = op.quadratic_form(ctx, f)
    d = op.lemma_decomposition(ctx, f)
    assert abs(q - d) <= 1e-8 * abs(d)
    assert q >= -1e-10
    assert op.dd_norm_sq(ctx, f) >= 0 and op.chi_grad_norm_sq(ctx, f) >= 0
    # weak form reproduces the same quadratic form
    assert ctx.grid.integrate(f * op.weak_twisted(ctx, f)) == pytest.approx(d, rel=1e-9)


@given(seed=st.integers(0, 2**31 - 1), m=st.sampled_from([1, 2]))
def test_self_adjoint(seed, m):
    """Re int g L f omega^m is symmetric in (f, g); the weak form is symmetric too."""
    ctx, f, g = random_ctx(m, seed)
    a = op.quadratic_form(ctx, g, f)
    b = op.quadratic_form(ctx, f, g)
    assert a == pytest.approx(b, rel=1e-8, abs=1e-10)
    wa = ctx.grid.integrate(g * op.weak_twisted(ctx, f))
    wb = ctx.grid.integrate(f * op.weak_twisted(ctx, g))
    assert wa == pytest.approx(wb, rel=1e-10, abs=1e-10)


def test_constants_in_kernel():
    ctx, _, _ = random_ctx(1, 5)
    one = np.ones(ctx.grid.shape)
    assert np.max(np.abs(op.lichnerowicz_twisted(ctx, one))) < 1e-9
    assert np.max(np.abs(op.weak_twisted(ctx, one))) < 1e-9
    assert op.quadratic_form(ctx, one) == pytest.approx(0.0, abs=1e-12)


def test_laplacian_matches_trace():
    ctx, f, _ = random_ctx(2, 9)
    lap = op.laplacian(ctx, f)
    # weighted integral of a Laplacian vanishes
    assert abs(ctx.ms.integrate(lap)) < 1e-10
    # -int f Delta f omega^m = |grad f|^2
    assert -ctx.ms.integrate(f * lap) == pytest.approx(op.grad_norm_sq(ctx, f), rel=1e-9)
    np.testing.assert_allclose(ctx.grid.integrate(f * op.weak_laplacian(ctx, f)),
                               op.grad_norm_sq(ctx, f), rtol=1e-9)


def test_untwisted_part_sign():
    ctx, f, _ = random_ctx(1, 11, s=0.4)
    total = op.lichnerowicz_twisted_def(ctx, f)
    parts = 0.4 * op.lichnerowicz_classical(ctx, f) + 0.6 * op.lichnerowicz_untwisted_part(ctx, f)
    np.testing.assert_allclose(total, parts, atol=1e-12 * np.max(np.abs(total)))
