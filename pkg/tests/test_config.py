from pathlib import Path

import pytest

from nudgelearn.config import (
    Kind, ParseError, ValidationError, emit_config, grid_axis, parse_config, parse_settings, with_overrides,
)
from nudgelearn.dynamics import Params
from nudgelearn.integrate import Scheme
from nudgelearn.learn import Estimator, UpdateMode

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
APPENDIX = (CONFIGS / "sparse_full.cfg").read_text()


def test_appendix_values():
    spec = parse_config(APPENDIX)
    cfg = spec.base
    assert cfg.params == Params(10.0, 28.0, 8 / 3)
    assert cfg.initial_estimate == pytest.approx((8.0, 22.4, 32 / 15))
    assert cfg.obs_interval() == 500
    assert cfg.param_interval() == 20000
    assert cfg.gains.mu1 == pytest.approx(18000) and cfg.gains.mu1_p == pytest.approx(18)
    assert cfg.scheme.kind == Scheme.EULER and cfg.learn.mode == UpdateMode.FIXED_INTERVAL


def test_round_trip():
    spec = parse_config(APPENDIX)
    text = emit_config(spec)
    again = parse_config(text)
    assert again == spec
    assert emit_config(again) == text
    assert again.base == spec.base


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.cfg")))
def test_shipped_configs_round_trip(name):
    kind = {"sweep": Kind.SWEEP, "mu_min": Kind.MU_MIN, "noise_grid": Kind.NOISE_GRID, "bounds": Kind.BOUNDS,
            "replace": Kind.REPLACE}
    k = next((v for p, v in kind.items() if name.startswith(p)), Kind.SIMULATE)
    spec = parse_config((CONFIGS / name).read_text(), k)
    assert parse_config(emit_config(spec), k) == spec


def test_beta_without_z_is_a_validation_error():
    with pytest.raises(ValidationError) as info:
        parse_config("learn = b\nobserve = xy\n")
    assert info.value.code == "VALIDATION_ERROR"
    assert isinstance(info.value, ValueError)


@pytest.mark.parametrize("text,line", [
    ("sigma = 10\nfoo = 3\n", 2),
    ("sigma = 10\n\n# c\nsigma = 11\n", 4),
    ("dt = 1e-4\nmu = 1.8/\n", 2),
    ("justtext\n", 1),
    ("seed = 1.5\n", 1),
    ("rho =\n", 1),
    ("mu = __import__('os')\n", 1),
])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(ParseError) as info:
        parse_config(text)
    assert info.value.line == line
    assert info.value.code == "PARSE_ERROR"
    assert f"line {line}" in str(info.value)


def test_expressions_and_defaults():
    s = parse_settings("sigma_DA = 0.8*sigma\nmu = 1.8/dt\n")
    assert s["sigma_DA"] == 8.0
    assert s["mu"] == pytest.approx(1.8 / 1e-4)
    # a key set later in the file is not silently defaulted
    with pytest.raises(ParseError):
        parse_settings("sigma_DA = 0.8*sigma\nsigma = 20\n")


def test_lists_and_ranges():
    s = parse_settings("mu_scan = 10:50:10\nnoise_pairs = 0, 0; 1e-5, 1e-3\n")
    assert s["mu_scan"] == (10.0, 20.0, 30.0, 40.0, 50.0)
    assert s["noise_pairs"] == ((0.0, 0.0), (1e-5, 1e-3))
    assert list(grid_axis((5, 50, 20)))[:2] == pytest.approx([5.0, 5 + 45 / 19])


def test_continuous_defaults():
    spec = parse_config("dt = 1e-4\ndt_obs = dt\nobserve = x\nlearn = s\n")
    cfg = spec.base
    assert cfg.learn.mode == UpdateMode.THRESHOLD and cfg.scheme.kind == Scheme.RK4
    assert cfg.gains.mu1 == 500 and cfg.gains.mu1_p == 500
    assert cfg.gains.mu2 == 0 and cfg.gains.mu3 == 0


def test_translated_estimator_config():
    spec = parse_config((CONFIGS / "sweep_translated.cfg").read_text(), Kind.SWEEP)
    assert spec.base.learn.estimator == Estimator.TRANSLATED
    assert spec.base.observation.translated_z


def test_validation_of_harness_keys():
    with pytest.raises(ValidationError):
        parse_config("workers = 0\n")
    with pytest.raises(ValidationError):
        parse_config("points = 10, 30\nmu_scan = 0\n", Kind.MU_MIN)
    with pytest.raises(ValidationError):
        parse_config("observe = y\nlearn = r\n", Kind.REPLACE)
    with pytest.raises(ValidationError):
        parse_config("initial = nowhere\n")


def test_overrides():
    spec = with_overrides(parse_config(APPENDIX), matlab_compat=True)
    assert spec.base.matlab_compat and spec.settings["matlab_compat"]
    assert parse_config(APPENDIX, workers=3).workers == 3
