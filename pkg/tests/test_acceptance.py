"""Acceptance suite: one PASS/FAIL line per criterion (see the summary section of the pytest report).

Timings are taken after a JIT warm-up run so compilation is not charged to the
measured experiment.
"""
import math
import os
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from nudgelearn.bounds import BoundInputs, K_bound, L_bound, RadiusMode, absorbing_radius, envelope_check, \
    remainder_bounds
from nudgelearn.config import Kind, parse_config
from nudgelearn.dynamics import Params, StabilityClass, fixed_points, hopf_rho, lorenz_rhs, max_real_eigenvalue
from nudgelearn.experiments import mu_min_rows, noise_rows, sweep_rows, write_trace
from nudgelearn.integrate import REFERENCE_INITIAL, Scheme, run_coupled, trajectory
from nudgelearn.learn import ThresholdFit, threshold

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
WORKERS = min(4, os.cpu_count() or 1)

# pinned tolerances
TOL_SPARSE = 1e-6
TOL_CONTINUOUS = 1e-8
TOL_Z_ONLY = 1e-2
ENVELOPE_MAX = 0.01
SWEEP_TOL = 1e-3
SWEEP_SHARE = 0.90
NOISE_TOP = 1e-1
RUNTIME_SPARSE = 10.0
RUNTIME_CONTINUOUS = 30.0
RUNTIME_SWEEP = 300.0


def cfg_text(name, **subs):
    text = (CONFIGS / name).read_text()
    for old, new in subs.items():
        text = text.replace(old, new)
    return text


def timed(fn, *args):
    fn(*args)  # warm-up compiles and caches
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def subset_config(observe, learn):
    letters = {"s": "sigma", "r": "rho", "b": "beta"}
    lines = []
    for line in cfg_text("sparse_full.cfg").splitlines():
        key = line.split("=")[0].strip()
        if key.endswith("_DA") and key[:-3] not in [letters[c] for c in learn]:
            continue  # unlearned parameters stay at their true values
        if key == "observe":
            line = f"observe = {observe}"
        if key == "learn":
            line = f"learn = {learn}"
        lines.append(line)
    return parse_config("\n".join(lines)).base


# -- 1 -------------------------------------------------------------------------

def test_c1_sparse_full_recovery(verdict):
    cfg = parse_config(cfg_text("sparse_full.cfg")).base
    tr, secs = timed(run_coupled, cfg)
    fe = tr.final_errors()
    ok = all(fe[k] <= TOL_SPARSE for k in fe) and secs <= RUNTIME_SPARSE
    verdict("C1 sparse full recovery", ok,
            ", ".join(f"{k}={v:.2e}" for k, v in fe.items()) + f", runtime={secs:.2f}s (mu_p=mu/1000)")


@pytest.mark.xfail(strict=True, reason="with the caption's mu_param = 1.8 the estimates stall near 1e-2")
def test_c1_literal_caption_gain():
    cfg = parse_config(cfg_text("sparse_full.cfg", **{"mu_p = mu/1000": "mu_p = 1.8"})).base
    fe = run_coupled(cfg).final_errors()
    print("[INFO] C1 variant mu_p=1.8: " + ", ".join(f"{k}={v:.2e}" for k, v in fe.items()))
    assert all(v <= TOL_SPARSE for v in fe.values())


# -- 2 -------------------------------------------------------------------------

SUBSETS = [("x", "s"), ("y", "r"), ("yz", "rb"), ("xz", "sb"), ("xy", "sr"), ("xyz", "srb")]


def test_c2_channel_subsets(verdict):
    names = {"s": "e_sigma", "r": "e_rho", "b": "e_beta"}
    parts, ok = [], True
    for observe, learn in SUBSETS:
        fe = run_coupled(subset_config(observe, learn)).final_errors()
        worst = max(fe[names[c]] for c in learn)
        ok &= worst <= TOL_SPARSE
        parts.append(f"{observe}/{learn}={worst:.1e}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # beta may go negative here
        fe = run_coupled(subset_config("z", "b")).final_errors()
    z_fails = fe["e_beta"] > TOL_Z_ONLY
    parts.append(f"z/b={fe['e_beta']:.1e} (must stay > {TOL_Z_ONLY:g})")
    verdict("C2 channel-subset matrix", ok and z_fails, ", ".join(parts))


# -- 3 and 4 -------------------------------------------------------------------

@pytest.fixture(scope="module")
def fig1():
    cfg = parse_config(cfg_text("bounds.cfg"), Kind.BOUNDS).base
    tr, secs = timed(run_coupled, cfg)
    return cfg, tr, secs


def test_c3_continuous_sigma(verdict, fig1):
    cfg, tr, secs = fig1
    err = tr.final_errors()["e_sigma"]
    n = len(tr.accepted_updates("sigma"))
    verdict("C3 continuous sigma recovery", err <= TOL_CONTINUOUS and secs <= RUNTIME_CONTINUOUS,
            f"|dsigma|={err:.2e} after {n} threshold updates, runtime={secs:.2f}s")


def test_c4_envelopes(verdict, fig1):
    cfg, tr, _ = fig1
    R = absorbing_radius(cfg.params, RadiusMode.EMPIRICAL)
    rep = envelope_check(tr, BoundInputs(cfg.params, cfg.initial_estimate, cfg.gains, R))
    verdict("C4 envelope validity", rep.violation_fraction < ENVELOPE_MAX,
            f"violations={rep.violation_fraction:.2e} over {rep.samples} samples in {rep.segments} segments "
            f"(K {rep.K_fraction:.1e}, L {rep.L_fraction:.1e}), R={R:.2f}")


# -- 5 -------------------------------------------------------------------------

def test_c5_stability_regions(verdict):
    x_spec = parse_config(cfg_text("sweep_x.cfg"), Kind.SWEEP, workers=WORKERS)
    t_spec = parse_config(cfg_text("sweep_translated.cfg"), Kind.SWEEP, workers=WORKERS)
    assert x_spec.settings["converge_tol"] == t_spec.settings["converge_tol"] == SWEEP_TOL
    t0 = time.perf_counter()
    x_rows = sweep_rows(x_spec)
    t1 = time.perf_counter()
    t_rows = sweep_rows(t_spec)
    t2 = time.perf_counter()
    ppm = StabilityClass.PPM_STABLE.value
    nofp = StabilityClass.NO_STABLE_FP.value
    x_ppm = [r for r in x_rows if r[3] == ppm]
    x_nofp = [r for r in x_rows if r[3] == nofp]
    t_ppm = [r for r in t_rows if r[3] == ppm]
    x_conv = sum(bool(r[4]) for r in x_ppm)
    improved = sum(bool(r[6]) for r in x_nofp) / max(1, len(x_nofp))
    t_conv = sum(bool(r[4]) for r in t_ppm) / max(1, len(t_ppm))
    ok = (len(x_rows) == 400 and x_conv == 0 and improved >= SWEEP_SHARE and t_conv >= SWEEP_SHARE
          and (t1 - t0) <= RUNTIME_SWEEP and (t2 - t1) <= RUNTIME_SWEEP)
    verdict("C5 stability-region sweep", ok,
            f"x-obs PPM converged {x_conv}/{len(x_ppm)}, NO_STABLE_FP improved {improved:.1%} of {len(x_nofp)}, "
            f"translated PPM converged {t_conv:.1%} of {len(t_ppm)}; "
            f"runtime {t1 - t0:.0f}s + {t2 - t1:.0f}s with {WORKERS} worker(s)")


# -- 6 -------------------------------------------------------------------------

def test_c6_table_relation(verdict):
    spec = parse_config(cfg_text("mu_min.cfg"), Kind.MU_MIN, workers=WORKERS)
    rows = {(r[0], r[1]): r for r in mu_min_rows(spec)}
    a, b = rows[(10.0, 30.0)], rows[(50.0, 30.0)]
    mc = a[2]
    ok = mc is not None and 10 <= mc <= 200 and a[4] / mc >= 1e3 and b[2] is None
    ratio = a[4] / mc if mc else math.nan
    verdict("C6 minimal gain vs analytic bound", ok,
            f"(10,30): M_c={mc}, mu_c analytic={a[4]:.4g} (ratio {ratio:.2g}), empirical-R {a[5]:.4g}; "
            f"(50,30): M_c={b[2]} [{b[6]}]")


# -- 7 -------------------------------------------------------------------------

def test_c7_noise_floors(verdict):
    spec = parse_config(cfg_text("noise_grid.cfg"), Kind.NOISE_GRID, workers=WORKERS)
    rows = noise_rows(spec)
    plat = {(r[0], r[1]): r[2] for r in rows}
    clean = plat[(0.0, 0.0)]
    amps = [1e-13, 1e-11, 1e-9, 1e-7, 1e-5, 1e-3]
    seq = [plat[(a, a)] for a in amps]
    drops = [i for i in range(1, len(seq)) if seq[i] < seq[i - 1]]
    monotone = len(drops) == 0 or (len(drops) == 1 and seq[drops[0]] * 10 >= seq[drops[0] - 1])
    top = next(r for r in rows if r[0] == r[1] == 1e-3)
    top_ok = all(v <= NOISE_TOP for v in top[3:6])
    below = all(clean < v for k, v in plat.items() if k != (0.0, 0.0))
    verdict("C7 noise floors", monotone and top_ok and below,
            "plateaus " + ", ".join(f"{a:g}:{p:.1e}" for a, p in zip(amps, seq))
            + f"; clean {clean:.1e}; errors at 1e-3: " + ", ".join(f"{v:.1e}" for v in top[3:6]))


# -- 8 -------------------------------------------------------------------------

def _rhs_zero():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(200):
        p = Params(*rng.uniform([0.5, 1.01, 0.2], [60, 200, 10]))
        for q in fixed_points(p).members():
            worst = max(worst, float(np.max(np.abs(lorenz_rhs(q, p)))) / max(1.0, abs(q.x) * abs(q.z), q.x ** 2))
    return worst


def _hopf_ok():
    for s, b in ((10, 8 / 3), (20, 1.0), (40, 2.5), (16, 4.0)):
        rc = hopf_rho(Params(s, 1, b))
        lo, hi = Params(s, 0.99 * rc, b), Params(s, 1.01 * rc, b)
        if not (max_real_eigenvalue(fixed_points(lo).p_plus, lo) < 0 < max_real_eigenvalue(fixed_points(hi).p_plus, hi)):
            return False
    return True


def _order(scheme, dts):
    p = Params(10, 28, 8 / 3)
    ref = trajectory(p, REFERENCE_INITIAL, 1e-6, 1_000_000, Scheme.RK4)[-1]
    errs = [np.linalg.norm(trajectory(p, REFERENCE_INITIAL, dt, int(round(1 / dt)), scheme)[-1] - ref) for dt in dts]
    return float(np.polyfit(np.log(dts), np.log(errs), 1)[0])


def _threshold_gap():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 80))
        s = np.sort(rng.integers(0, 3000, n)) * 1e-3
        u = np.exp(rng.uniform(-30, 5, n))
        fit = ThresholdFit(0.0)
        for a, b in zip(s, u):
            fit.add(a, b)
        t = float(s.mean()) + 0.01
        if np.ptp(s) == 0:
            expect = math.exp(np.log(u).mean())
        else:
            A = np.array([[np.dot(s, s), s.sum()], [s.sum(), n]])
            m, b = np.linalg.solve(A, [np.dot(s, np.log(u)), np.log(u).sum()])
            expect = math.exp(m * t + b)
        worst = max(worst, abs(threshold(fit, t) / expect - 1))
    return worst


def _bounds_gap():
    from test_bounds import oracle, random_inputs  # sympy oracle
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(100):
        bi = random_inputs(rng)
        k2 = K_bound(bi)
        l2 = L_bound(bi, k2)
        for a, b in zip([k2, l2, *remainder_bounds(bi, k2, l2)], oracle(bi)):
            if b != 0:
                worst = max(worst, abs(a / b - 1))
            elif a != 0:
                worst = math.inf
    return worst


def _bitwise(tmp_path):
    text = cfg_text("sparse_full.cfg", **{"tf = 150": "tf = 20", "eta = 0": "eta = 1e-5",
                                         "epsilon = 0": "epsilon = 1e-5"})
    cfg = parse_config(text).base
    paths = [write_trace(run_coupled(cfg), tmp_path / f"trace{i}.csv") for i in range(2)]
    return paths[0].read_bytes() == paths[1].read_bytes()


def test_c8_property_suites(verdict, tmp_path):
    rhs = _rhs_zero()
    hopf = _hopf_ok()
    e1 = _order(Scheme.EULER, [1e-3, 5e-4, 2.5e-4, 1.25e-4])
    e4 = _order(Scheme.RK4, [2e-2, 1e-2, 5e-3, 2.5e-3])
    th = _threshold_gap()
    bd = _bounds_gap()
    same = _bitwise(tmp_path)
    ok = rhs <= 1e-12 and hopf and abs(e1 - 1) <= 0.3 and abs(e4 - 4) <= 0.3 and th <= 1e-10 and bd <= 1e-12 and same
    verdict("C8 property suites", ok,
            f"fixed-point rhs {rhs:.1e}, Hopf bracket {'ok' if hopf else 'broken'}, Euler slope {e1:.2f}, "
            f"RK4 slope {e4:.2f}, threshold vs normal equations {th:.1e}, bounds vs oracle {bd:.1e}, "
            f"trace bytes {'identical' if same else 'differ'}")
