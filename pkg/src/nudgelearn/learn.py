"""Parameter-update rules and the schedulers that decide when to apply them.

Three estimators live here:

* the nudging update rules (``update_sigma``, ``update_rho``, ``update_beta``),
  gated either by a fixed interval or by the log-linear threshold test;
* direct replacement, where sigma is read off a finite-difference derivative
  of the observed x and a model driven directly by those observations;
* the translated-z formula, valid when the nontrivial fixed points are stable.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from numba import njit

PARAM_NAMES = ("sigma", "rho", "beta")

# samples with |innovation| below this are dropped from the threshold fit
LOG_FLOOR = 1e-300

# reason codes shared with the compiled engine
R_NONE = 0
R_DEGENERATE = 1
R_NO_OBSERVATION = 2
R_NONPOSITIVE = 3
REASONS = {R_NONE: "", R_DEGENERATE: "DEGENERATE_DENOMINATOR",
           R_NO_OBSERVATION: "NO_OBSERVATION", R_NONPOSITIVE: "NONPOSITIVE_ESTIMATE"}


class DegenerateDenominatorError(ValueError):
    pass


class InsufficientSamplesError(ValueError):
    pass


class UpdateMode(str, enum.Enum):
    THRESHOLD = "threshold"
    FIXED_INTERVAL = "fixed"


class Estimator(str, enum.Enum):
    NUDGING = "nudging"
    TRANSLATED = "translated"


@dataclass(frozen=True)
class LearnPlan:
    """Which parameters are learned and when updates fire.

    ``T_R`` is the minimum time between updates (threshold mode) and
    ``dt_param`` the update period (fixed-interval mode).
    """

    unknown: tuple[bool, bool, bool] = (False, False, False)
    mode: UpdateMode = UpdateMode.FIXED_INTERVAL
    T_R: float = 0.0
    dt_param: float = 2.0
    p_tol: float = 1e-4
    estimator: Estimator = Estimator.NUDGING

    def __post_init__(self):
        if self.T_R < 0:
            raise ValueError("T_R must be >= 0")
        if self.mode == UpdateMode.FIXED_INTERVAL and not self.dt_param > 0:
            raise ValueError("dt_param must be > 0 in fixed-interval mode")
        if not self.p_tol > 0:
            raise ValueError("p_tol must be > 0")
        if self.estimator == Estimator.TRANSLATED and tuple(self.unknown) != (True, False, False):
            raise ValueError("the translated-z estimator learns sigma only")

    @property
    def learns_anything(self) -> bool:
        return any(self.unknown)

    def required_channels(self) -> tuple[bool, bool, bool]:
        """Observed channels the enabled updates read (sigma<->x, rho<->y, beta<->z)."""
        if self.estimator == Estimator.TRANSLATED:
            return (False, False, True)
        return tuple(bool(u) for u in self.unknown)


@dataclass(frozen=True)
class UpdateEvent:
    time: float
    parameter: str
    old: float
    new: float
    denominator: float
    skipped: bool = False
    reason: str = ""


# -- update rules ------------------------------------------------------------

@njit(cache=True)
def sigma_rule(sigma_n, mu_p, u, x_n, y_n, p_tol):
    den = y_n - x_n
    if abs(den) > p_tol:
        return sigma_n - mu_p * u / den, den, False
    return sigma_n, den, True


@njit(cache=True)
def rho_rule(rho_n, mu_p, v, x_n, p_tol):
    if abs(x_n) > p_tol:
        return rho_n - mu_p * v / x_n, x_n, False
    return rho_n, x_n, True


@njit(cache=True)
def beta_rule(beta_n, mu_p, w, z_n, p_tol):
    # note the sign: beta moves *with* w / z
    if abs(z_n) > p_tol:
        return beta_n + mu_p * w / z_n, z_n, False
    return beta_n, z_n, True


def _event(t, name, old, new, den, skipped):
    reason = REASONS[R_DEGENERATE] if skipped else (REASONS[R_NONPOSITIVE] if new <= 0 else "")
    return float(new), UpdateEvent(float(t), name, float(old), float(new), float(den), bool(skipped), reason)


def update_sigma(sigma_n: float, mu1_p: float, u: float, x_n: float, y_n: float,
                 p_tol: float = 1e-4, t: float = 0.0) -> tuple[float, UpdateEvent]:
    new, den, skipped = sigma_rule(sigma_n, mu1_p, u, x_n, y_n, p_tol)
    return _event(t, "sigma", sigma_n, new, den, skipped)


def update_rho(rho_n: float, mu2_p: float, v: float, x_n: float,
               p_tol: float = 1e-4, t: float = 0.0) -> tuple[float, UpdateEvent]:
    new, den, skipped = rho_rule(rho_n, mu2_p, v, x_n, p_tol)
    return _event(t, "rho", rho_n, new, den, skipped)


def update_beta(beta_n: float, mu3_p: float, w: float, z_n: float,
                p_tol: float = 1e-4, t: float = 0.0) -> tuple[float, UpdateEvent]:
    new, den, skipped = beta_rule(beta_n, mu3_p, w, z_n, p_tol)
    return _event(t, "beta", beta_n, new, den, skipped)


# -- log-linear threshold ----------------------------------------------------
#
# Fit state is a length-5 float array: count, mean_s, mean_y, C_ss, C_sy
# (Welford co-moments). Times are stored relative to the last update t_n.

@njit(cache=True)
def fit_reset(st):
    for i in range(5):
        st[i] = 0.0


@njit(cache=True)
def fit_push(st, s, y):
    n = st[0] + 1.0
    ds = s - st[1]
    st[1] += ds / n
    dy = y - st[2]
    st[2] += dy / n
    st[3] += ds * (s - st[1])
    st[4] += ds * (y - st[2])
    st[0] = n


@njit(cache=True)
def fit_line(st):
    """(slope, intercept) in shifted time; slope 0 when all samples share one time."""
    if st[3] > 0.0:
        m = st[4] / st[3]
    else:
        m = 0.0
    return m, st[2] - m * st[1]


@njit(cache=True)
def gate(innovation, den, p_tol, elapsed, T_R, st):
    """Algorithm-1 test for one channel (elapsed = t - t_n)."""
    if innovation == 0.0 or abs(den) <= p_tol or elapsed < T_R or st[0] < 2.0:
        return False
    m, b = fit_line(st)
    return abs(innovation) <= math.exp(m * elapsed + b)


class ThresholdFit:
    """Running least-squares fit of log|innovation| against time since ``t_n``."""

    def __init__(self, t_n: float = 0.0):
        self.t_n = float(t_n)
        self.stats = np.zeros(5)

    def reset(self, t_n: float) -> None:
        self.t_n = float(t_n)
        fit_reset(self.stats)

    def add(self, s: float, innovation: float) -> bool:
        """Record one sample; returns False when it was dropped (|innovation| ~ 0)."""
        a = abs(innovation)
        if a < LOG_FLOOR:
            return False
        fit_push(self.stats, float(s) - self.t_n, math.log(a))
        return True

    @property
    def count(self) -> int:
        return int(self.stats[0])

    @property
    def slope(self) -> float:
        return fit_line(self.stats)[0]

    @property
    def intercept(self) -> float:
        # back to absolute time: log|u| ~ m*(s - t_n) + b
        m, b = fit_line(self.stats)
        return b - m * self.t_n

    def __len__(self) -> int:
        return self.count


def threshold(fit: ThresholdFit, t: float) -> float:
    """exp(m_n t + b_n) for the least-squares line through the retained samples."""
    if fit.count < 2:
        raise InsufficientSamplesError(f"need >= 2 retained samples, have {fit.count}")
    m, b = fit_line(fit.stats)
    return math.exp(m * (t - fit.t_n) + b)


class SchedulerState(NamedTuple):
    t: float
    t_n: float
    nudged: tuple[float, float, float]
    innovation: tuple[float, float, float]
    fits: Sequence[ThresholdFit]


def continuous_scheduler_should_update(state: SchedulerState, plan: LearnPlan) -> tuple[bool, bool, bool]:
    """Per-parameter Algorithm-1 decision (False for parameters not being learned).

    The denominators checked are the ones the matching update rule divides by:
    y~ - x~ for sigma, x~ for rho and z~ for beta.
    """
    xt, yt, zt = state.nudged
    dens = (yt - xt, xt, zt)
    elapsed = state.t - state.t_n
    return tuple(
        bool(plan.unknown[i]) and bool(gate(state.innovation[i], dens[i], plan.p_tol, elapsed, plan.T_R,
                                            state.fits[i].stats))
        for i in range(3)
    )


# -- alternative estimators --------------------------------------------------

@njit(cache=True)
def replacement_rule(x_prev, x_last, dt_obs, y_model, p_tol):
    xdot = (x_last - x_prev) / dt_obs
    den = y_model - x_last
    if abs(den) <= p_tol:
        return 0.0, xdot, den, False
    return xdot / den, xdot, den, True


def direct_replacement_sigma(x_history: Sequence[float], y_model: float, dt_obs: float,
                             y_true: Optional[float] = None, p_tol: float = 1e-4) -> tuple[float, Optional[float]]:
    """sigma~ = xdot / (y~ - x) with a two-point backward difference for xdot.

    ``x_history`` holds consecutive observations of x spaced ``dt_obs`` apart
    (only the last two are used). Returns the estimate and, when ``y_true`` is
    supplied, the non-degeneracy monitor |xdot| |y~ - y| / (|y~ - x| |y - x|).
    """
    if len(x_history) < 2:
        raise InsufficientSamplesError("direct replacement needs two observations of x")
    sig, xdot, den, ok = replacement_rule(float(x_history[-2]), float(x_history[-1]), float(dt_obs),
                                          float(y_model), float(p_tol))
    if not ok:
        raise DegenerateDenominatorError(f"|y~ - x| = {abs(den):.3g} <= p_tol")
    monitor = None
    if y_true is not None:
        gap = abs(y_true - x_history[-1])
        monitor = math.inf if gap == 0 else abs(xdot) * abs(y_model - y_true) / (abs(den) * gap)
    return sig, monitor


def translated_sigma(z_tau_obs: float) -> float:
    """Recover sigma from the translated fixed point z_tau = -sigma - 1."""
    return -z_tau_obs - 1.0
