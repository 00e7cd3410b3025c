import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tcflow import _hermitian as herm
from tcflow.config import (ChiConfig, ConfigError, CurveConfig, ExperimentConfig, FieldSpec,
                           OutputConfig, SpectrumConfig, VerifyConfig, build_field, build_setup,
                           config_from_dict, load_config, schema_help)
from tcflow.flow import IntegratorConfig
from tcflow.grid import PeriodicGrid

SECTIONS = ("chi", "initial", "outputs", "spectrum", "curve", "verify", "integrator")
KNOWN = {f.name for f in dataclasses.fields(ExperimentConfig)}
SECTION_CLASSES = {"chi": ChiConfig, "initial": FieldSpec, "outputs": OutputConfig,
                   "spectrum": SpectrumConfig, "curve": CurveConfig, "verify": VerifyConfig,
                   "integrator": IntegratorConfig}


def test_defaults():
    cfg = config_from_dict({})
    assert (cfg.m, cfg.n_axis, cfg.s) == (1, 64, 0.5)
    assert cfg.initial.preset == "stationary"


def test_load_yaml(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("m: 2\nn_axis: 16\ns: 0.25\nintegrator:\n  scheme: imex-euler\n")
    cfg = load_config(p)
    assert (cfg.m, cfg.n_axis, cfg.s, cfg.integrator.scheme) == (2, 16, 0.25, "imex-euler")


@given(key=st.text(alphabet="abcdefghijklmnopqrstuvwxyz_", min_size=1, max_size=12),
       section=st.sampled_from((None,) + SECTIONS))
def test_unknown_keys_rejected(key, section):
    if section is None:
        if key in KNOWN:
            return
        raw = {key: 1}
    else:
        names = {f.name for f in dataclasses.fields(SECTION_CLASSES[section])}
        if key in names:
            return
        raw = {section: {key: 1}}
    with pytest.raises(ConfigError, match="unknown key"):
        config_from_dict(raw)


@pytest.mark.parametrize("raw", [
    {"m": 3}, {"m": "one"}, {"m": True}, {"n_axis": 48}, {"n_axis": 4}, {"s": 0.0}, {"s": 1.5},
    {"chi": {"c": -1}}, {"initial": {"preset": "nope"}},
    {"initial": {"preset": "single-mode", "k": [1, 0, 0]}},
    {"initial": {"preset": "single-mode", "k": [40, 0]}},
    {"initial": {"preset": "random-bandlimited", "max_mode": 50}},
    {"initial": {"preset": "random-bandlimited", "margin": 1.5}},
    {"initial": {"preset": "fourier"}},
    {"integrator": {"scheme": "rk4"}}, {"integrator": {"adaptive": "yes"}},
    {"integrator": {"dt_min": 1.0, "dt_init": 0.1}},
    {"spectrum": {"s_grid": []}}, {"spectrum": {"maxiter": 0}},
    {"curve": {"family": "spiral"}}, {"verify": {"tolerances": [1]}},
    {"outputs": {"snapshot_every": -1}},
    [1, 2], "text",
])
def test_invalid_values(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_bad_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(ConfigError, match="not writable"):
        config_from_dict({"outputs": {"csv_path": str(blocker / "x.csv")}})
    p = tmp_path / "bad.yaml"
    p.write_text("m: [1,\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_presets():
    grid = PeriodicGrid(1, 32)
    assert np.all(build_field(FieldSpec(), grid) == 0)
    f = build_field(FieldSpec(preset="single-mode", k=[2, 0], amplitude=1e-4), grid)
    assert np.max(np.abs(f)) == pytest.approx(1e-4)
    for preset in ("random-bandlimited", "large-data"):
        f = build_field(FieldSpec(preset=preset, margin=0.05, max_mode=3), grid)
        low = herm.min_eig(np.eye(1)[:, :, None, None] + grid.holo_hessian(f)).min()
        assert low == pytest.approx(0.05, abs=1e-12)
    f = build_field(FieldSpec(preset="fourier", coefficients=[
        {"k": [1, 0], "cos": 0.5}, {"k": [0, 2], "sin": 0.25}]), grid)
    x, y = grid.coords
    assert np.allclose(f, 0.5 * np.cos(2 * np.pi * x) + 0.25 * np.sin(4 * np.pi * y), atol=1e-14)
    a = build_field(FieldSpec(preset="stability-small", seed=4), grid)
    b = build_field(FieldSpec(preset="stability-small", seed=4), grid)
    assert np.array_equal(a, b)


def test_build_setup_scales_psi():
    cfg = config_from_dict({"n_axis": 16, "chi": {"c": 2.0, "psi": {
        "preset": "single-mode", "amplitude": 1e-3}}})
    setup = build_setup(cfg)
    assert setup.chi_scale == 2.0
    assert np.max(np.abs(setup.chi_potential)) == pytest.approx(2e-3)


def test_schema_help_lists_every_key():
    text = schema_help()
    for f in dataclasses.fields(ExperimentConfig):
        assert f"{f.name}:" in text
    for f in dataclasses.fields(IntegratorConfig):
        assert f"integrator.{f.name}:" in text
    for name in ("outputs.csv_path", "spectrum.s_grid", "curve.family", "verify.tolerances",
                 "chi.c", "coefficients"):
        assert name in text
