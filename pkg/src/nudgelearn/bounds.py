"""A-priori error bounds for the nudged system and checks against measured runs.

Everything here is a direct evaluation of closed-form expressions in the
absorbing radius ``R``, the true parameters and the current parameter errors.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields
from typing import NamedTuple, Optional

import numpy as np

from .dynamics import Gains, ParamEstimate, Params
from .integrate import SPINUP_START, NonFiniteStateError, Scheme, spinup, trajectory


class RadiusMode(str, enum.Enum):
    ANALYTIC = "analytic"
    EMPIRICAL = "empirical"


@dataclass(frozen=True)
class BoundInputs:
    params: Params
    estimates: ParamEstimate
    gains: Gains
    R: float

    def __post_init__(self):
        if not (math.isfinite(self.R) and self.R > 0):
            raise ValueError("R must be > 0")

    @property
    def deltas(self) -> tuple[float, float, float]:
        return tuple(abs(e - p) for e, p in zip(self.estimates, self.params))

    @property
    def damping(self) -> tuple[float, float, float]:
        """(mu1 + sigma~, mu2 + 1, mu3 + beta~)."""
        g = self.gains
        return (g.mu1 + self.estimates.sigma, g.mu2 + 1.0, g.mu3 + self.estimates.beta)

    @property
    def mu(self) -> float:
        return min(self.damping)

    def with_estimates(self, est: ParamEstimate) -> "BoundInputs":
        return BoundInputs(self.params, Params(*est), self.gains, self.R)


@dataclass(frozen=True)
class BoundReport:
    mu: float
    K2: float
    L2: float
    G2: float
    D2: float
    E2: float
    mu_c: float
    cond_diff_ok: bool
    cond_diff_dot_ok: bool

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def absorbing_radius(p: Params, mode: RadiusMode = RadiusMode.ANALYTIC, *, duration: float = 500.0,
                     dt: float = 1e-3, factor: float = 1.1) -> float:
    """Radius of a ball in (x, y, z - rho - sigma) that traps the dynamics.

    ANALYTIC: beta (rho + sigma) / (2 sqrt(beta - 1)), defined for beta > 1;
    otherwise the empirical estimate is used. EMPIRICAL: ``factor`` times the
    largest norm seen over ``duration`` time units after the usual spin-up.
    """
    mode = RadiusMode(mode)
    if mode == RadiusMode.ANALYTIC and p.beta > 1:
        return p.beta * (p.rho + p.sigma) / (2.0 * math.sqrt(p.beta - 1.0))
    s0 = spinup(p, start=SPINUP_START, dt=dt)
    n = int(round(duration / dt))
    path = trajectory(p, s0, dt, n, Scheme.RK4)
    finite = np.isfinite(path).all(axis=1)
    if not finite.all():
        k = int(np.argmin(finite))
        raise NonFiniteStateError(k, k * dt, None)
    shifted = path - np.array([0.0, 0.0, p.rho + p.sigma])
    return factor * float(np.sqrt((shifted ** 2).sum(axis=1)).max())


def K_bound(bi: BoundInputs) -> float:
    """Asymptotic level of (u^2 + v^2 + w^2)/2."""
    p, R = bi.params, bi.R
    ds, dr, db = bi.deltas
    a1, a2, a3 = bi.damping
    return (2.0 / bi.mu) * (2 * R**2 * ds**2 / a1 + 4 * R**2 * dr**2 / a2
                            + 4 * (R**2 + (p.rho + p.sigma)**2) * db**2 / a3)


def L_bound(bi: BoundInputs, K2: float) -> float:
    """Asymptotic level of the velocity-error energy given K^2."""
    p, R = bi.params, bi.R
    s, r, b = p
    ds, dr, db = bi.deltas
    a1, a2, a3 = bi.damping
    mu = bi.mu
    rs2 = (r + s) ** 2
    coupling = (R**4 + (b**2 + s**2) * R**2 + b**2 * rs2) / a2 + 3 * R**2 * (R**2 + 2 * rs2 + 1) / a3
    forcing = (24 * R**2 * (R**2 + rs2 + 1) * ds**2 / a1 + 8 * s**2 * R**2 * dr**2 / a2
               + 16 * (R**4 + b**2 * R**2 + b**2 * rs2) * db**2 / a3)
    return (128.0 / mu) * coupling * K2 + (2.0 / mu) * forcing


def remainder_bounds(bi: BoundInputs, K2: float, L2: float) -> tuple[float, float, float]:
    """(G^2, D^2, E^2): bounds on the residuals of the three update formulas."""
    p, R = bi.params, bi.R
    s, r, b = p
    ds, dr, db = bi.deltas
    a1, a2, a3 = bi.damping
    st = bi.estimates.sigma
    rs2 = (r + s) ** 2
    G2 = 24 * R**2 * (R**2 + 2 * rs2 + 1) * ds**2 / a1**2 + 4 * st**2 * L2 / a1**2
    D2 = (8 * s**2 * R**2 * dr**2 + 128 * K2 * L2 + 48 * (R**2 + rs2) * L2
          + 128 * (R**4 + (b**2 + s**2) * R**2 + b**2 * rs2) * K2) / a2
    E2 = (8 * (R**4 + b**2 * R**2 + b**2 * rs2) * db**2 + 64 * K2 * L2 + 16 * R**2 * L2
          + 48 * (R**2 + 2 * rs2 + 1) * R**4 * K2) / a3
    return G2, D2, E2


def _diff_rhs(bi: BoundInputs) -> float:
    p, R = bi.params, bi.R
    ds = bi.deltas[0]
    _, a2, a3 = bi.damping
    return 16.0 * ((ds**2 + 3 * (p.sigma + p.rho)**2 + 2 * R**2) / a2 + R**2 / (2 * a3))


def mu_conditions(bi: BoundInputs) -> tuple[bool, bool, float]:
    """(cond_diff_ok, cond_diff_dot_ok, mu_c).

    ``mu_c`` is the mu1 at which the first position-error condition holds with
    equality, for the errors carried by ``bi`` (pass the initial guesses to get
    the t = 0 value).
    """
    p, R = bi.params, bi.R
    ds, dr, _ = bi.deltas
    a1, a2, a3 = bi.damping
    rhs1 = _diff_rhs(bi)
    cond_diff = a1 >= rhs1 and a2 >= 4 * dr**2 / a1
    K2 = K_bound(bi)
    rhs_dot = (32 * (ds**2 + dr**2 + R**2 + 2 * (p.rho + p.sigma)**2) / a2
               + 64 * (1 / a2 + 1 / a3) * K2 + 16 * R**2 / a3)
    mu_c = rhs1 - bi.estimates.sigma
    return bool(cond_diff), bool(a1 >= rhs_dot), float(mu_c)


def report(bi: BoundInputs) -> BoundReport:
    K2 = K_bound(bi)
    L2 = L_bound(bi, K2)
    G2, D2, E2 = remainder_bounds(bi, K2, L2)
    ok1, ok2, mu_c = mu_conditions(bi)
    return BoundReport(bi.mu, K2, L2, G2, D2, E2, mu_c, ok1, ok2)


def corollary_constants(p: Params, R: float, mu: float) -> tuple[float, float]:
    """(c1, c2) of the sigma-only envelopes.

    Setting mu2 = mu3 = 0, rho~ = rho, beta~ = beta (so only Delta sigma
    survives) turns K^2 into c1 (Delta sigma)^2 / (mu1 + sigma~) with
    c1 = 4 R^2 / mu, and L^2 into c2 (Delta sigma)^2 / (mu1 + sigma~) with
    c2 = (128/mu) [A + 3 R^2 (R^2 + 2 (rho+sigma)^2 + 1) / beta] c1
         + (48/mu) R^2 (R^2 + (rho+sigma)^2 + 1),
    A = R^4 + (beta^2 + sigma^2) R^2 + beta^2 (rho+sigma)^2.
    """
    s, r, b = p
    rs2 = (r + s) ** 2
    c1 = 4 * R**2 / mu
    A = R**4 + (b**2 + s**2) * R**2 + b**2 * rs2
    c2 = (128 / mu) * (A + 3 * R**2 * (R**2 + 2 * rs2 + 1) / b) * c1 + (48 / mu) * R**2 * (R**2 + rs2 + 1)
    return c1, c2


class SegmentResult(NamedTuple):
    start: float
    end: float
    sigma: float
    rho: float
    beta: float
    K2: float
    L2: float
    samples: int
    K_violations: int
    L_violations: int
    hypotheses_ok: bool


@dataclass
class EnvelopeReport:
    samples: int
    K_violations: int
    L_violations: int
    segments: int
    hypotheses_unmet: bool
    worst_K_ratio: float
    worst_L_ratio: float
    per_segment: list[SegmentResult] = field(default_factory=list)

    @property
    def violation_fraction(self) -> float:
        if self.samples == 0:
            return 0.0
        return (self.K_violations + self.L_violations) / (2 * self.samples)

    @property
    def K_fraction(self) -> float:
        return self.K_violations / self.samples if self.samples else 0.0

    @property
    def L_fraction(self) -> float:
        return self.L_violations / self.samples if self.samples else 0.0


def _segment_estimates(trace) -> tuple[np.ndarray, list[ParamEstimate]]:
    """Start times and (post-update) estimates of each constant-parameter stretch."""
    est = list(trace.config.initial_estimate)
    starts, values = [trace.t[0]], [Params(*est)]
    for ev in trace.events:
        if ev.skipped:
            continue
        est[("sigma", "rho", "beta").index(ev.parameter)] = ev.new
        if ev.time == starts[-1]:
            values[-1] = Params(*est)
        else:
            starts.append(ev.time)
            values.append(Params(*est))
    return np.asarray(starts), values


def envelope_check(trace, bi: BoundInputs, skip: float = 0.1, rtol: float = 1e-9) -> EnvelopeReport:
    """Compare the recorded K(t), L(t) with the exponential envelopes.

    On every stretch [t_n, t_{n+1}) with constant estimates,
        K(t) <= K(t_n) exp(-mu (t - t_n)/2) + K^2
        L(t) <= L(t_n) exp(-mu (t - t_n)/2) + L^2
    with K^2, L^2 (and mu) evaluated at that stretch's estimates. Samples in
    the first ``skip`` time units of the run are not scored. ``bi`` supplies
    the truth, gains and R; its estimates are replaced per stretch.
    """
    t = trace.t
    K, L = trace["K"], trace["L"]
    starts, ests = _segment_estimates(trace)
    seg = np.searchsorted(starts, t, side="right") - 1
    samples = kv = lv = 0
    worst_k = worst_l = 0.0
    unmet = False
    rows = []
    for j, est in enumerate(ests):
        idx = np.nonzero(seg == j)[0]
        if idx.size == 0:
            continue
        b = bi.with_estimates(est)
        ok1, ok2, _ = mu_conditions(b)
        unmet |= not (ok1 and ok2)
        K2 = K_bound(b)
        L2 = L_bound(b, K2)
        i0 = idx[0]
        decay = np.exp(-0.5 * b.mu * (t[idx] - t[i0]))
        kb = K[i0] * decay + K2
        lb = L[i0] * decay + L2
        keep = t[idx] >= t[0] + skip
        if not keep.any():
            continue
        kk, ll = K[idx][keep], L[idx][keep]
        kb, lb = kb[keep], lb[keep]
        n, nk, nl = int(keep.sum()), int(np.count_nonzero(kk > kb * (1 + rtol))), \
            int(np.count_nonzero(ll > lb * (1 + rtol)))
        samples, kv, lv = samples + n, kv + nk, lv + nl
        rows.append(SegmentResult(float(t[i0]), float(t[idx[-1]]), *map(float, est), float(K2), float(L2),
                                  n, nk, nl, ok1 and ok2))
        with np.errstate(divide="ignore", invalid="ignore"):
            worst_k = max(worst_k, float(np.nanmax(np.where(kb > 0, kk / kb, 0.0))))
            worst_l = max(worst_l, float(np.nanmax(np.where(lb > 0, ll / lb, 0.0))))
    return EnvelopeReport(samples, kv, lv, len(ests), unmet, worst_k, worst_l, rows)


def bound_inputs_at_start(p: Params, estimate: ParamEstimate, gains: Gains,
                          mode: RadiusMode = RadiusMode.EMPIRICAL, R: Optional[float] = None) -> BoundInputs:
    if R is None:
        R = absorbing_radius(p, mode)
    return BoundInputs(p, Params(*estimate), gains, R)


__all__ = [
    "RadiusMode", "BoundInputs", "BoundReport", "EnvelopeReport", "SegmentResult", "absorbing_radius", "K_bound", "L_bound",
    "remainder_bounds", "mu_conditions", "report", "corollary_constants", "envelope_check",
    "bound_inputs_at_start",
]
