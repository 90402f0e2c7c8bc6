"""Experiment drivers: each ``cmd_*`` runs simulations and writes CSV/text files."""
from __future__ import annotations

import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import bounds
from .config import ExperimentSpec, Kind, config_for, grid_axis
from .dynamics import Params, classify_stability
from .integrate import NonFiniteStateError, SimConfig, Trace, run_coupled

TRACE_HEAD = ("t", "e_sol", "e_sigma", "e_rho", "e_beta")
TRACE_EXTRA = ("K", "L", "sigma", "rho", "beta", "u", "v", "w")
UPDATE_HEAD = ("time", "parameter", "old", "new", "denominator", "skipped", "reason")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    if x is None:
        return ""
    return str(x)


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def write_kv(path: Path, pairs) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in pairs:
            fh.write(f"{k} = {fmt(v)}\n")
    return path


class PartialFailure(RuntimeError):
    """Some runs of a multi-run experiment failed; their rows carry the reason."""

    exit_code = 4

    def __init__(self, failed: int, total: int, files):
        super().__init__(f"{failed} of {total} runs failed")
        self.failed, self.total, self.files = failed, total, files


@dataclass
class RunOutcome:
    trace: Optional[Trace]
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


def _quiet_run(cfg: SimConfig) -> RunOutcome:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            return RunOutcome(run_coupled(cfg))
        except NonFiniteStateError as exc:
            return RunOutcome(exc.trace, f"NONFINITE_STATE at t={exc.time:.6g}")


def _outdir(spec: ExperimentSpec) -> Path:
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- simulate ----------------------------------------------------------------

def trace_columns(trace: Trace) -> tuple[str, ...]:
    cols = TRACE_HEAD + TRACE_EXTRA
    if trace.config.replace:
        cols += ("sigma_replace", "monitor")
    return cols


def write_trace(trace: Trace, path: Path) -> Path:
    cols = trace_columns(trace)
    table = np.column_stack([trace[c] for c in cols]) if len(trace) else np.empty((0, len(cols)))
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    if len(table):
        np.savetxt(buf, table, fmt="%.17g", delimiter=",")
    if trace.aborted:
        t_abort = trace.config.t0 + trace.aborted_at * trace.config.dt
        buf.write("aborted," + fmt(t_abort) + "," * (len(cols) - 2) + "\n")
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def write_updates(trace: Trace, path: Path) -> Path:
    return write_csv(path, UPDATE_HEAD, ((e.time, e.parameter, e.old, e.new, e.denominator, e.skipped, e.reason)
                                         for e in trace.events))


def write_summary(trace: Trace, path: Path, status: str = "ok") -> Path:
    fe = trace.final_errors() if len(trace) else {}
    est = trace.final_estimate
    pairs = [("status", status), ("seed", trace.config.seed), ("wall_time", trace.wall_time),
             ("steps", trace.config.n_steps), ("updates", len(trace.accepted_updates()))]
    pairs += [(f"final_{k}", v) for k, v in fe.items()]
    if est is not None:
        pairs += [("sigma_est", est.sigma), ("rho_est", est.rho), ("beta_est", est.beta)]
    return write_kv(path, pairs)


def cmd_simulate(spec: ExperimentSpec) -> list[Path]:
    out = _outdir(spec)
    try:
        trace = run_coupled(spec.base)
    except NonFiniteStateError as exc:
        write_trace(exc.trace, out / "trace.csv")
        write_updates(exc.trace, out / "updates.csv")
        write_summary(exc.trace, out / "summary.txt", status=f"aborted: {exc}")
        raise
    return [write_trace(trace, out / "trace.csv"), write_updates(trace, out / "updates.csv"),
            write_summary(trace, out / "summary.txt")]


# -- sweep -------------------------------------------------------------------

SWEEP_HEAD = ("rho", "sigma", "final_abs_error", "stability_class", "converged_flag",
              "initial_abs_error", "improved", "status")


def _learned_error(trace: Trace, unknown) -> float:
    fe = trace.final_errors()
    errs = [fe[k] for k, u in zip(("e_sigma", "e_rho", "e_beta"), unknown) if u]
    return max(errs) if errs else fe["e_sol"]


def _sweep_cell(args):
    settings, index, rho, sigma = args
    kind = classify_stability(Params(sigma, rho, settings["beta"])).kind.value
    unknown = tuple(c in settings["learn"] for c in "srb")
    init_err = abs(settings["offset"]) if any(unknown) else 0.0
    try:
        cfg = config_for(settings, sigma=sigma, rho=rho, seed=settings["seed"] ^ index, relative_guess=True)
    except ValueError as exc:
        return index, (rho, sigma, math.nan, kind, False, init_err, False, f"CONFIG: {exc}")
    res = _quiet_run(replace(cfg, record_every=max(cfg.n_steps, 1)))
    if not res.ok:
        return index, (rho, sigma, math.nan, kind, False, init_err, False, res.error)
    err = _learned_error(res.trace, unknown)
    return index, (rho, sigma, err, kind, bool(err <= settings["converge_tol"]), init_err,
                   bool(err < init_err), "ok")


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (8 * workers))))


def sweep_rows(spec: ExperimentSpec) -> list[tuple]:
    s = spec.settings
    rhos, sigmas = grid_axis(s["rho_range"]), grid_axis(s["sigma_range"])
    jobs = [(s, i * len(sigmas) + j, float(r), float(sg)) for i, r in enumerate(rhos) for j, sg in enumerate(sigmas)]
    results = _map(_sweep_cell, jobs, spec.workers)
    return [row for _, row in sorted(results, key=lambda x: x[0])]


def cmd_sweep(spec: ExperimentSpec) -> list[Path]:
    out = _outdir(spec)
    rows = sweep_rows(spec)
    path = write_csv(out / "sweep.csv", SWEEP_HEAD, rows)
    failed = sum(r[-1] != "ok" for r in rows)
    if failed:
        raise PartialFailure(failed, len(rows), [path])
    return [path]


# -- minimal gain scan -------------------------------------------------------

MU_HEAD = ("sigma", "rho", "M_c", "final_error", "mu_c_analytic", "mu_c_empiricalR", "stability_class")


def _scan_run(settings, sigma, rho, mu1) -> tuple[bool, float]:
    s = dict(settings)
    s.update(mu=mu1, mu1=mu1, mu1_p=mu1)
    # keep the explicit stages stable for very large gains
    if s["scheme"] == "rk4" and mu1 * s["dt"] > 1.0:
        s["dt"] = s["dt_obs"] = 1.0 / mu1
    cfg = config_for(s, sigma=sigma, rho=rho, relative_guess=True)
    res = _quiet_run(replace(cfg, record_every=max(cfg.n_steps, 1)))
    if not res.ok:
        return False, math.nan
    err = res.trace.final_errors()["e_sigma"]
    return bool(err <= s["converge_tol"]), err


def _mu_point(args):
    settings, sigma, rho = args
    final = math.nan
    found = None
    for mu1 in sorted(settings["mu_scan"]):
        ok, err = _scan_run(settings, sigma, rho, mu1)
        final = err
        if ok:
            found = mu1
            break
    p = Params(sigma, rho, settings["beta"])
    est = Params(sigma + settings["offset"], rho, settings["beta"])
    g = config_for(settings, sigma=sigma, rho=rho, relative_guess=True).gains
    mu_c = {}
    for mode in bounds.RadiusMode:
        R = bounds.absorbing_radius(p, mode)
        mu_c[mode] = bounds.mu_conditions(bounds.BoundInputs(p, est, replace(g, mu2=0.0, mu3=0.0), R))[2]
    return (sigma, rho, found, final, mu_c[bounds.RadiusMode.ANALYTIC], mu_c[bounds.RadiusMode.EMPIRICAL],
            classify_stability(p).kind.value)


def mu_min_rows(spec: ExperimentSpec) -> list[tuple]:
    s = spec.settings
    jobs = [(s, float(sg), float(r)) for sg, r in s["points"]]
    return _map(_mu_point, jobs, spec.workers)


def cmd_mu_min(spec: ExperimentSpec) -> list[Path]:
    out = _outdir(spec)
    rows = mu_min_rows(spec)
    return [write_csv(out / "mu_min.csv", MU_HEAD, rows)]


# -- noise grid --------------------------------------------------------------

NOISE_HEAD = ("epsilon", "eta", "plateau", "e_sigma", "e_rho", "e_beta", "e_sol", "status")


def plateau(trace: Trace, window: float) -> float:
    m = trace.window(window)
    return float(np.median(trace["e_sigma"][m] + trace["e_rho"][m] + trace["e_beta"][m]))


def _noise_run(args):
    settings, eps, eta = args
    s = dict(settings)
    s.update(epsilon=eps, eta=eta)
    cfg = config_for(s)
    res = _quiet_run(cfg)
    if not res.ok:
        return (eps, eta, math.nan, math.nan, math.nan, math.nan, math.nan, res.error)
    fe = res.trace.final_errors()
    return (eps, eta, plateau(res.trace, s["plateau_window"]), fe["e_sigma"], fe["e_rho"], fe["e_beta"],
            fe["e_sol"], "ok")


def noise_rows(spec: ExperimentSpec) -> list[tuple]:
    s = spec.settings
    return _map(_noise_run, [(s, float(e), float(n)) for e, n in s["noise_pairs"]], spec.workers)


def cmd_noise_grid(spec: ExperimentSpec) -> list[Path]:
    out = _outdir(spec)
    rows = noise_rows(spec)
    path = write_csv(out / "noise_grid.csv", NOISE_HEAD, rows)
    failed = sum(r[-1] != "ok" for r in rows)
    if failed:
        raise PartialFailure(failed, len(rows), [path])
    return [path]


# -- bounds ------------------------------------------------------------------

SEGMENT_HEAD = ("start", "end", "sigma", "rho", "beta", "K2", "L2", "samples", "K_violations", "L_violations",
                "hypotheses_ok")


@dataclass
class BoundsResult:
    reports: dict
    radii: dict
    envelope: bounds.EnvelopeReport
    trace: Trace


def bounds_result(spec: ExperimentSpec) -> BoundsResult:
    cfg = replace(spec.base, record_every=1)
    trace = run_coupled(cfg)
    p, est, g = cfg.params, cfg.initial_estimate, cfg.gains
    radii = {m: bounds.absorbing_radius(p, m) for m in bounds.RadiusMode}
    reports = {m: bounds.report(bounds.BoundInputs(p, est, g, radii[m])) for m in bounds.RadiusMode}
    chosen = bounds.RadiusMode(spec.settings["radius"])
    env = bounds.envelope_check(trace, bounds.BoundInputs(p, est, g, radii[chosen]))
    return BoundsResult(reports, radii, env, trace)


def cmd_bounds(spec: ExperimentSpec) -> list[Path]:
    out = _outdir(spec)
    res = bounds_result(spec)
    chosen = bounds.RadiusMode(spec.settings["radius"])
    rep = res.reports[chosen]
    pairs = [("radius_mode", chosen.value), ("R", res.radii[chosen])]
    pairs += list(rep.as_dict().items())
    pairs += [(f"mu_c_{m.value}", res.reports[m].mu_c) for m in bounds.RadiusMode]
    pairs += [(f"R_{m.value}", res.radii[m]) for m in bounds.RadiusMode]
    env = res.envelope
    pairs += [("envelope_samples", env.samples), ("envelope_K_violations", env.K_violations),
              ("envelope_L_violations", env.L_violations), ("violation_fraction", env.violation_fraction),
              ("hypotheses_unmet", env.hypotheses_unmet)]
    files = [write_kv(out / "bounds.txt", pairs)]
    head = ("radius_mode", "R") + tuple(rep.as_dict())
    files.append(write_csv(out / "bounds.csv", head,
                           ((m.value, res.radii[m], *res.reports[m].as_dict().values()) for m in bounds.RadiusMode)))
    files.append(write_csv(out / "envelope.csv", SEGMENT_HEAD, env.per_segment))
    return files


# -- direct replacement ------------------------------------------------------

REPLACE_HEAD = ("t", "sigma_nudge", "sigma_replace", "nondegeneracy_monitor")


def replace_trace(spec: ExperimentSpec) -> Trace:
    return run_coupled(replace(spec.base, replace=True))


def cmd_replace(spec: ExperimentSpec) -> list[Path]:
    out = _outdir(spec)
    tr = replace_trace(spec)
    rows = zip(tr.t, tr["sigma"], tr["sigma_replace"], tr["monitor"])
    s = tr.config.params.sigma
    m = tr.window(spec.settings["plateau_window"])
    summary = [("sigma_true", s),
               ("nudge_final_error", abs(tr["sigma"][-1] - s)),
               ("replace_final_error", abs(tr["sigma_replace"][-1] - s)),
               ("replace_median_error_window", float(np.nanmedian(np.abs(tr["sigma_replace"][m] - s)))),
               ("nudge_variance_window", float(np.nanvar(tr["sigma"][m]))),
               ("replace_variance_window", float(np.nanvar(tr["sigma_replace"][m])))]
    return [write_csv(out / "replace.csv", REPLACE_HEAD, rows), write_kv(out / "replace_summary.txt", summary)]


COMMANDS = {Kind.SIMULATE: cmd_simulate, Kind.SWEEP: cmd_sweep, Kind.MU_MIN: cmd_mu_min,
            Kind.NOISE_GRID: cmd_noise_grid, Kind.BOUNDS: cmd_bounds, Kind.REPLACE: cmd_replace}


def run(spec: ExperimentSpec) -> list[Path]:
    return COMMANDS[spec.kind](spec)

