"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

Run ``pytest tests/test_acceptance.py -s`` to see the lines inline; they are
also repeated in the terminal summary.
"""
import os
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest
import yaml

from acceptance_log import report
from tcflow import operators as op
from tcflow import snapshot
from tcflow import spectrum as sp
from tcflow import verify
from tcflow.config import build_field, build_setup, config_from_dict, load_config
from tcflow.flow import IntegratorConfig, run
from tcflow.grid import PeriodicGrid
from tcflow.kahler import TwistedSetup, build_metric

ROOT = os.path.join(os.path.dirname(__file__), os.pardir)
CONFIGS = os.path.join(ROOT, "configs")
SUITE_DIMS = ((1, 64), (2, 32))


def suite_config(m, n_axis, **verify_keys):
    return config_from_dict({"m": m, "n_axis": n_axis, "s": 0.5, "verify": verify_keys})


@pytest.fixture(scope="module")
def operator_results():
    return {(m, n): verify._operator_suite(suite_config(m, n, samples=20), 0)
            for m, n in SUITE_DIMS}


def test_criterion_01_lemma_identity():
    worst = {}
    t0 = time.perf_counter()
    for m, n in SUITE_DIMS:
        grid = PeriodicGrid(m, n)
        rng = np.random.default_rng((0, 1))
        margin = verify.ensemble_margin(m)
        res = []
        for _ in range(20):
            s = float(rng.uniform(0.05, 0.95))
            psi = verify.random_potential(grid, rng, 2, 0.5)
            phi = verify.random_potential(grid, rng, 2, margin)
            f = grid.random_bandlimited(rng, 2)
            ctx = op.OperatorContext.from_potential(TwistedSetup(grid, s, 1.0, psi), phi)
            lhs = op.twist_term_contraction(ctx, f)
            rhs = op.twist_term_identity_rhs(ctx, f)
            res.append(float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs))))
        worst[m] = max(res)
    elapsed = time.perf_counter() - t0
    accurate = all(r <= 1e-8 for r in worst.values())
    fast = elapsed < 10.0
    report(1, accurate and fast,
           f"twist-term identity max rel residual m=1 {worst[1]:.2e}, m=2 {worst[2]:.2e} "
           f"(tol 1e-8); runtime {elapsed:.1f} s (limit 10 s)")
    assert accurate
    assert fast, f"runtime {elapsed:.1f} s exceeds 10 s"


def test_criterion_02_decomposition(operator_results):
    dec = max(r["decomposition"][0] for r in operator_results.values())
    qmin = min(r["positivity"][2]["min_quadratic_form"] for r in operator_results.values())
    ok = dec <= 1e-8 and qmin >= -1e-10
    report(2, ok, f"decomposition max rel residual {dec:.2e} (tol 1e-8); "
                  f"min quadratic form {qmin:.3e} (>= -1e-10)")
    assert ok


def test_criterion_03_flat_spectrum():
    grid = PeriodicGrid(1, 64)
    t0 = time.perf_counter()
    worst_lam = worst_mu = 0.0
    for s in (0.1, 0.5, 0.9):
        ctx = op.OperatorContext.from_potential(TwistedSetup(grid, s, 1.0), np.zeros(grid.shape))
        lam = sp.lambda1(ctx).value
        mu = sp.mu1(ctx).value
        worst_lam = max(worst_lam, abs(lam / (s * np.pi**4 + (1 - s) * np.pi**2) - 1))
        worst_mu = max(worst_mu, abs(mu / np.pi**2 - 1))
    elapsed = time.perf_counter() - t0
    ok = worst_lam <= 1e-6 and worst_mu <= 1e-8 and elapsed < 30
    report(3, ok, f"flat lambda1 rel err {worst_lam:.2e} (tol 1e-6), mu1 rel err "
                  f"{worst_mu:.2e} (tol 1e-8); runtime {elapsed:.1f} s (limit 30 s)")
    assert ok


def test_criterion_04_spectral_bound():
    cfg = suite_config(1, 64, spectral_samples=20, s_values=[0.1, 0.5, 0.9])
    residual, n, details = verify._spectral_suite(cfg, 0)["spectral_bound"]
    worst = details["worst_relative_violation"]
    ok = worst <= 1e-8
    report(4, ok, f"lambda1 >= kappa (1-s) mu1 on {n} (metric, s) pairs; worst "
                  f"(bound - lambda1)/lambda1 = {worst:.3e} (tol 1e-8)")
    assert ok


def test_criterion_05_first_variation():
    out = verify._variation_suite(suite_config(1, 64, variation_samples=10), 0)
    err = out["first_variation"][0]
    order = out["first_variation_order"][0]
    ok = err <= 1e-6 and order >= 1.9
    report(5, ok, f"first variation max rel mismatch {err:.2e} at eps 1e-3 (tol 1e-6); "
                  f"min observed order {order:.3f} (>= 1.9)")
    assert ok


def test_criterion_06_hessian():
    out = verify._hessian_suite(suite_config(1, 64, variation_samples=10), 0)
    err = out["hessian"][0]
    pos = out["hessian_positivity"][0]
    ok = err <= 1e-5 and pos > 0
    report(6, ok, f"critical-point Hessian max rel mismatch {err:.2e} (tol 1e-5); "
                  f"min H(d,d)/|d|^2 = {pos:.3e} (> 0)")
    assert ok


@pytest.fixture(scope="module")
def stability_run():
    cfg = load_config(os.path.join(CONFIGS, "stability-small.yaml"))
    setup = build_setup(cfg)
    phi0 = build_field(cfg.initial, setup.grid)
    t0 = time.perf_counter()
    trace = run(setup, phi0, cfg.integrator)
    elapsed = time.perf_counter() - t0
    return cfg, setup, trace, elapsed


def test_criterion_07_monotonicity(stability_run):
    cfg, _, trace, elapsed = stability_run
    cal = trace.column("calabi")
    drop = cal[0] / cal[-1]
    jumps = np.diff(cal)
    worst = float(jumps.max())
    ok = not trace.violations and worst <= 1e-10 and drop >= 10 and elapsed < 120
    report(7, ok, f"Calabi energy over {trace.n_accepted} steps: largest increase {worst:.2e} "
                  f"(tol 1e-10), drop factor {drop:.3g} (>= 10); runtime {elapsed:.1f} s (limit 120 s)")
    assert ok


def single_mode_rate(k, s=0.5, c=1.0, t_final=None):
    cfg = config_from_dict({"m": 1, "n_axis": 32, "s": s, "chi": {"c": c},
                            "initial": {"preset": "single-mode", "k": list(k), "amplitude": 1e-6}})
    setup = build_setup(cfg)
    k2 = float(np.dot(k, k))
    predicted = s * np.pi**4 * k2**2 + (1 - s) * c * np.pi**2 * k2
    integ = replace(cfg.integrator, t_final=t_final or 5.0 / predicted)
    trace = run(setup, build_field(cfg.initial, setup.grid), integ)
    # the Calabi energy is quadratic in the mode amplitude
    return 0.5 * trace.fitted_decay_rate("calabi"), predicted


def test_criterion_08_stability(stability_run):
    cfg, setup, trace, _ = stability_run
    final = trace.final
    sup = float(np.max(np.abs(final.phi)))
    ctx = op.OperatorContext(setup, build_metric(setup, final.phi, setup.eps_pos))
    bound = sp.kappa(ctx) * (1 - cfg.s) * sp.mu1(ctx).value
    rate = trace.fitted_decay_rate("calabi")
    modes = {}
    for k in ((1, 0), (2, 0)):
        measured, predicted = single_mode_rate(k)
        modes[k] = (measured, predicted, abs(measured / predicted - 1))
    ok = sup <= 1e-6 and rate >= bound and all(v[2] <= 0.01 for v in modes.values())
    report(8, ok, f"terminal sup|phi| {sup:.2e} (<= 1e-6); Calabi decay rate {rate:.4g} >= "
                  f"kappa(1-s)mu1 = {bound:.4g}; single-mode rates "
                  + ", ".join(f"|k|={int(np.hypot(*k))}: {v[0]:.5g} vs {v[1]:.5g} ({100 * v[2]:.3f}%)"
                              for k, v in modes.items()) + " (tol 1%)")
    assert ok


def test_criterion_09_conservation(stability_run):
    _, _, trace, _ = stability_run
    vol = float(np.max(np.abs(trace.column("vol_res"))))
    chern = float(np.max(np.abs(trace.column("chern_res"))))
    chi = float(np.max(np.abs(trace.column("chi_res"))))
    ok = vol <= 1e-8 and chern <= 1e-8 and chi <= 1e-7
    report(9, ok, f"max |Vol-1| {vol:.2e} (1e-8), max |int R| {chern:.2e} (1e-8), "
                  f"max |int tr chi - chibar| {chi:.2e} (1e-7)")
    assert ok


def test_criterion_10_second_variation():
    cfg = suite_config(1, 64, paths=3, probe_times=[0.2, 0.35, 0.5, 0.65, 0.8])
    residual, n, _ = verify._second_variation_suite(cfg, 0)["second_variation"]
    ok = residual <= 1e-4
    report(10, ok, f"second-variation identity max rel residual {residual:.2e} over {n} "
                   f"(path, time) probes (tol 1e-4)")
    assert ok


def test_criterion_11_curve():
    cfg = load_config(os.path.join(CONFIGS, "curve-linear.yaml"))
    t0 = time.perf_counter()
    out = verify._curve_suite(cfg, cfg.seed)
    elapsed = time.perf_counter() - t0
    rate = out["curve_rate"][0]
    inc = out["curve_length_monotone"][0]
    final_len = out["curve_length_monotone"][2]["final_length"]
    ok = rate <= 1e-3 and inc <= 1e-12 and final_len > 1e-12 and elapsed < 300
    report(11, ok, f"curve length largest relative increase {inc:.1e} (final l = {final_len:.3e}); "
                   f"dE/dt max rel residual {rate:.2e} (tol 1e-3); runtime {elapsed:.1f} s (limit 300 s)")
    assert ok


def test_criterion_12_path_independence():
    residual, n, _ = verify._kenergy_suite(suite_config(1, 64, targets=5), 0)[
        "kenergy_path_independence"]
    ok = residual <= 1e-8
    report(12, ok, f"twisted K-energy straight vs bent path max |diff| {residual:.2e} on {n} "
                   f"targets (tol 1e-8 absolute)")
    assert ok


def test_criterion_13_self_convergence():
    cfg = load_config(os.path.join(CONFIGS, "stability-small.yaml"))
    setup = build_setup(cfg)
    phi0 = build_field(cfg.initial, setup.grid)
    dt0 = 1.25e-4

    def final(dt):
        integ = IntegratorConfig(scheme="etd-rk2", adaptive=False, dt_init=dt, dt_min=dt,
                                 t_final=cfg.integrator.t_final)
        return run(setup, phi0, integ).final.phi

    ref = final(dt0 / 16)
    e1 = float(np.max(np.abs(final(dt0) - ref)))
    e2 = float(np.max(np.abs(final(dt0 / 2) - ref)))
    order = float(np.log2(e1 / e2))
    ok = order >= 1.9
    report(13, ok, f"ETD-RK2 errors vs dt/16 reference {e1:.2e} (dt={dt0:g}), {e2:.2e} "
                   f"(dt/2); observed order {order:.3f} (>= 1.9)")
    assert ok


def test_criterion_14_determinism(tmp_path):
    raw = {"m": 1, "n_axis": 64, "s": 0.5, "seed": 7,
           "verify": {"samples": 3, "variation_samples": 2, "targets": 2, "paths": 1,
                      "probe_times": [0.5],
                      "checks": ["lemma_identity", "decomposition", "first_variation",
                                 "kenergy_path_independence", "second_variation"]}}
    path = tmp_path / "verify.yaml"
    path.write_text(yaml.safe_dump(raw))
    outs = [subprocess.run([sys.executable, "-m", "tcflow.cli", "verify", "--config", str(path)],
                           cwd=tmp_path, capture_output=True, timeout=600) for _ in range(2)]
    same = outs[0].returncode == 0 and outs[0].stdout == outs[1].stdout and len(outs[0].stdout) > 0
    rng = np.random.default_rng(14)
    fields = [rng.standard_normal((16, 16)), rng.standard_normal((8, 8, 8, 8)) * 1e300,
              np.array([np.pi, -0.0, 5e-324, np.inf, np.nan] + [1.0] * 59).reshape(8, 8)]
    exact = True
    for phi in fields:
        m = phi.ndim // 2
        p = tmp_path / f"phi{m}.tcf"
        snapshot.write(p, phi, m)
        back, m2 = snapshot.read(p)
        exact &= m2 == m and back.tobytes() == phi.tobytes()
    ok = same and exact
    report(14, ok, f"two verify runs byte-identical: {same} ({len(outs[0].stdout)} bytes); "
                   f"snapshot round trip bit-exact: {exact}")
    assert ok
