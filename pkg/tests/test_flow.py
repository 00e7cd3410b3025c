import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import scaled
from tcflow import flow
from tcflow._parallel import pmap, worker_count
from tcflow.errors import PositivityError, StepFloorError
from tcflow.flow import IntegratorConfig
from tcflow.functionals import twisted_kenergy
from tcflow.grid import PeriodicGrid
from tcflow.kahler import TwistedSetup

G = PeriodicGrid(1, 32)


@given(z=st.floats(-200.0, 5.0).filter(lambda z: z == 0 or abs(z) > 1e-200))
def test_etd_weights_against_mpmath(z):
    mpmath.mp.dps = 60
    zm = mpmath.mpf(z)
    if z == 0:
        p1, p2 = mpmath.mpf(1), mpmath.mpf(0.5)
    else:
        p1 = mpmath.expm1(zm) / zm
        # series avoids the cancellation in e^z - 1 - z for small |z|
        p2 = mpmath.nsum(lambda k: zm**k / mpmath.factorial(k + 2), [0, mpmath.inf]) \
            if abs(z) < 1 else (mpmath.expm1(zm) - zm) / zm**2
    assert flow.phi1(np.array([z]))[0] == pytest.approx(float(p1), rel=1e-13, abs=1e-300)
    assert flow.phi2(np.array([z]))[0] == pytest.approx(float(p2), rel=1e-12, abs=1e-300)


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(scheme="rk4").resolved(0.5)
    with pytest.raises(ValueError):
        IntegratorConfig(dt_init=1e-3, dt_min=1e-2).resolved(0.5)
    with pytest.raises(ValueError):
        IntegratorConfig(kenergy_quad=3).resolved(0.5)
    with pytest.raises(ValueError):
        IntegratorConfig(rel_step_tol=0).resolved(0.5)
    assert IntegratorConfig().resolved(0.5).dt_init == pytest.approx(2.5e-5)


def test_stationary_run_is_exactly_zero():
    setup = TwistedSetup(G, 0.5, 2.0)
    tr = flow.run(setup, np.zeros(G.shape), IntegratorConfig(t_final=1e-3))
    for key in ("calabi", "kenergy", "max_dev", "vol_res", "chern_res", "chi_res", "mean_drift"):
        assert np.all(tr.column(key) == 0.0), key
    assert tr.final.t == 1e-3
    assert not tr.violations


@pytest.mark.parametrize("k", [(1, 0), (1, 1), (2, 0)])
@pytest.mark.parametrize("s,c", [(0.5, 1.0), (0.8, 2.0)])
def test_linearized_decay_rate(k, s, c):
    """Tiny single mode: C^s decays at 2 (s pi^4 |k|^4 + (1 - s) c pi^2 |k|^2)."""
    setup = TwistedSetup(G, s, c)
    ksq = k[0] ** 2 + k[1] ** 2
    lam = s * np.pi**4 * ksq**2 + (1 - s) * c * np.pi**2 * ksq
    cfg = IntegratorConfig(t_final=4.0 / lam, rel_step_tol=1e-8)
    tr = flow.run(setup, 1e-7 * G.fourier_mode(k), cfg)
    assert tr.fitted_decay_rate() == pytest.approx(2 * lam, rel=1e-2)
    assert not tr.violations


def _small_random(seed, amp=1e-3):
    return G.random_bandlimited(np.random.default_rng(seed), 3, amp)


def test_conservation_and_monotonicity():
    rng = np.random.default_rng(2)
    psi = scaled(G, G.random_bandlimited(rng, 2), 0.6)
    setup = TwistedSetup(G, 0.4, 1.0, psi)
    phi0 = scaled(G, G.random_bandlimited(rng, 2), 0.7)
    tr = flow.run(setup, phi0, IntegratorConfig(t_final=5e-3, rel_step_tol=1e-8))
    assert not tr.violations
    assert np.max(np.abs(tr.column("vol_res"))) < 1e-12
    assert np.max(np.abs(tr.column("chern_res"))) < 1e-9
    assert np.max(np.abs(tr.column("chi_res"))) < 1e-9
    assert np.max(tr.column("split_res")) < 1e-9
    c = tr.column("calabi")
    assert c[-1] < c[0]
    # dM/dt = -C: the trapezoid-accumulated K-energy matches a direct evaluation
    direct = twisted_kenergy(setup, tr.final.phi, 32).kenergy_twisted
    assert tr.final.diagnostics["kenergy"] == pytest.approx(direct, rel=1e-4)


def test_etd_is_second_order_and_imex_first_order():
    setup = TwistedSetup(G, 0.5, 1.0)
    phi0 = _small_random(1, 1e-3)
    T = 4e-3

    def final(scheme, dt):
        cfg = IntegratorConfig(scheme=scheme, t_final=T, dt_init=dt, dt_max=dt, adaptive=False)
        return flow.run(setup, phi0, cfg).final.phi

    for scheme, order in (("etd-rk2", 2.0), ("imex-euler", 1.0)):
        dt0 = 1.25e-4
        ref = final(scheme, dt0 / 32)
        e1 = np.max(np.abs(final(scheme, dt0) - ref))
        e2 = np.max(np.abs(final(scheme, dt0 / 2) - ref))
        assert np.log2(e1 / e2) == pytest.approx(order, abs=0.25), scheme


def test_mean_gauge():
    setup = TwistedSetup(G, 0.5, 1.0, scaled(G, _small_random(4, 1.0), 0.5))
    phi0 = _small_random(5, 1e-3) + 0.25
    tr = flow.run(setup, phi0, IntegratorConfig(t_final=2e-3))
    assert abs(G.integrate(tr.final.phi)) < 1e-15
    assert tr.records[0]["mean_drift"] == pytest.approx(0.25, rel=1e-12)
    # R^s - Rbar^s integrates to a nonzero constant drift only through the mean
    assert np.all(np.isfinite(tr.column("mean_drift")))


def test_positivity_and_step_floor_errors():
    rng = np.random.default_rng(0)
    setup = TwistedSetup(G, 0.5, 1.0)
    near = scaled(G, G.random_bandlimited(rng, 4), 1e-3)
    with pytest.raises(PositivityError) as exc:
        flow.run(setup, near, IntegratorConfig(adaptive=False, dt_init=1e-6, dt_min=1e-6, t_final=1e-3))
    assert exc.value.last_state.t == 0.0
    with pytest.raises(StepFloorError) as exc:
        flow.run(setup, near, IntegratorConfig(dt_init=1e-10, dt_min=1e-10, t_final=1e-3))
    assert exc.value.dt < 1e-10
    # halving away from a positivity failure down to the floor reports the positivity loss
    with pytest.raises(PositivityError):
        flow.run(setup, near, IntegratorConfig(dt_init=1e-6, dt_min=1e-7, t_final=1e-3))
    with pytest.raises(PositivityError):
        flow.run(setup, scaled(G, G.random_bandlimited(rng, 2), -0.2), IntegratorConfig())


def test_monotonicity_abort():
    setup = TwistedSetup(G, 0.5, 1.0)
    cfg = IntegratorConfig(t_final=1e-3, monotone_tol=-2.0, abort_on_violation=True)
    with pytest.raises(flow.MonotonicityError):
        flow.run(setup, _small_random(0), cfg)
    tr = flow.run(setup, _small_random(0), IntegratorConfig(t_final=1e-3, monotone_tol=-2.0))
    assert len(tr.violations) == tr.n_accepted


def test_step_function_and_determinism():
    setup = TwistedSetup(G, 0.5, 1.0)
    cfg = IntegratorConfig(t_final=1e-3)
    st0 = flow.initial_state(setup, _small_random(3), cfg)
    st1 = flow.step(setup, st0, cfg)
    assert st1.t > 0 and st1.diagnostics["calabi"] < st0.diagnostics["calabi"]
    a = flow.run(setup, _small_random(3), cfg)
    b = flow.run(setup, _small_random(3), cfg)
    assert a.records == b.records


def test_observer_and_sink():
    setup = TwistedSetup(G, 0.5, 1.0)
    seen, recs = [], []
    tr = flow.run(setup, _small_random(6), IntegratorConfig(t_final=5e-4),
                  sink=recs.append, observer=lambda n, s: seen.append(n))
    assert seen == list(range(tr.n_accepted + 1))
    assert len(recs) == tr.n_accepted + 1


def test_curve_deformation_small_family():
    setup = TwistedSetup(G, 0.5, 1.0)
    psi = _small_random(8, 2e-3)
    from tcflow.functionals import PotentialPath
    path = PotentialPath.chebyshev(lambda t: t * psi, 8)
    res = flow.curve_deformation(setup, path, IntegratorConfig(dt_init=1e-4, t_final=1e-2), 3)
    assert res.length_nonincreasing and res.energy_nonincreasing
    assert res.max_residual < 1e-3
    with pytest.raises(ValueError):
        flow.curve_deformation(setup, PotentialPath([0.0, 1.0], [psi * 0, psi]),
                               IntegratorConfig(dt_init=1e-4, t_final=4e-3))


def test_threads_env(monkeypatch):
    monkeypatch.setenv("TCFLOW_THREADS", "3")
    assert worker_count() == 3
    assert pmap(lambda x: x * x, range(10)) == [x * x for x in range(10)]
    monkeypatch.setenv("TCFLOW_THREADS", "0")
    with pytest.raises(ValueError):
        worker_count()
    monkeypatch.setenv("TCFLOW_THREADS", "many")
    with pytest.raises(ValueError):
        worker_count()
    monkeypatch.delenv("TCFLOW_THREADS")
    assert worker_count() >= 1
