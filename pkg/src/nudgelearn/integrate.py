"""Time stepping for the coupled true/nudged pair.

Sparse-observation runs use forward Euler, reproducing the reference loop
step for step. Continuous-observation runs (observations every step) use
classical RK4 at a small fixed step, with the observation re-evaluated at
every stage so the nudged system sees the true trajectory continuously.
"""
from __future__ import annotations

import enum
import math
import time
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from . import _engine
from .assimilate import ObservationPlan
from .dynamics import Gains, ParamEstimate, Params, State
from .learn import (PARAM_NAMES, REASONS, Estimator, LearnPlan, UpdateEvent, UpdateMode)

SPINUP_START = State(60.0, 60.0, 10.0)
# end point of the reference ode45 spin-up from (1, 1, 1) over t in [0, 100]
REFERENCE_INITIAL = State(8.15641407246436, 10.8938717856828, 22.3338694390332)

CHUNK = 1 << 16


class SimulationError(RuntimeError):
    code = "SIMULATION_ERROR"


class NonFiniteStateError(SimulationError):
    """Raised when a state component leaves [-1e8, 1e8] or turns non-finite."""

    code = "NONFINITE_STATE"

    def __init__(self, step: int, time_: float, trace: "Trace"):
        super().__init__(f"state blew up at step {step} (t={time_:.6g})")
        self.step = step
        self.time = time_
        self.trace = trace


class ConfigMismatchError(ValueError):
    code = "CONFIG_MISMATCH"


class Scheme(str, enum.Enum):
    EULER = "euler"
    RK4 = "rk4"


@dataclass(frozen=True)
class StepScheme:
    kind: Scheme = Scheme.EULER
    dt: float = 1e-4

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError("dt must be > 0")

    def check_gains(self, gains: Gains) -> bool:
        """Linear-stability check of the nudging term; warns and returns False on violation."""
        limit = 2.0 if self.kind == Scheme.EULER else 2.785
        ok = self.dt * max(gains.nudging) < limit
        if not ok:
            warnings.warn(f"dt*max(mu) = {self.dt * max(gains.nudging):.3g} exceeds the {self.kind.value} "
                          f"stability limit {limit}", RuntimeWarning, stacklevel=3)
        return ok


class NoiseSource:
    """Seeded stream of standard normals.

    Uniforms come from numpy's PCG64 (one double per draw) and are turned
    into normals by Box-Muller: each pair (u1, u2) yields
    ``r cos(2 pi u2)`` then ``r sin(2 pi u2)`` with ``r = sqrt(-2 log(1 - u1))``.
    The second value of a pair is cached, so drawing one at a time or in
    blocks gives the same sequence.
    """

    algorithm = "PCG64/Box-Muller"

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        self._spare: Optional[float] = None
        self.position = 0

    def normal_draw(self) -> float:
        return float(self.normals(1)[0])

    def normals(self, n: int) -> np.ndarray:
        out = np.empty(n)
        i = 0
        if n and self._spare is not None:
            out[0] = self._spare
            self._spare = None
            i = 1
        m = n - i
        if m > 0:
            pairs = (m + 1) // 2
            u = self._gen.random(2 * pairs)
            r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
            ang = 2.0 * np.pi * u[1::2]
            z = np.empty(2 * pairs)
            z[0::2] = r * np.cos(ang)
            z[1::2] = r * np.sin(ang)
            out[i:] = z[:m]
            if m % 2:
                self._spare = float(z[-1])
        self.position += n
        return out


def normal_draw(ns: NoiseSource) -> float:
    return ns.normal_draw()


def stochastic_forcing(ns: NoiseSource, epsilon: float, dt: float) -> State:
    """Three independent N(0, (epsilon sqrt(dt))^2) draws; no draws when epsilon == 0."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if epsilon == 0:
        return State(0.0, 0.0, 0.0)
    return State(*(epsilon * math.sqrt(dt) * ns.normals(3)))


def euler_step(s: State, rhs_value: State, dt: float) -> State:
    return State(s[0] + dt * rhs_value[0], s[1] + dt * rhs_value[1], s[2] + dt * rhs_value[2])


def rk4_step(f: Callable[[State], State], s: State, dt: float) -> State:
    k1 = f(s)
    k2 = f(euler_step(s, k1, dt / 2))
    k3 = f(euler_step(s, k2, dt / 2))
    k4 = f(euler_step(s, k3, dt))
    return State(*(s[i] + dt / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in range(3)))


def _scheme_code(kind: Scheme) -> int:
    return _engine.EULER if kind == Scheme.EULER else _engine.RK4


def trajectory(p: Params, s0: State, dt: float, n_steps: int, scheme: Scheme = Scheme.RK4,
               stride: int = 1) -> np.ndarray:
    """True-system states (n, 3) every ``stride`` steps, starting with ``s0``."""
    return _engine.integrate_true(float(s0[0]), float(s0[1]), float(s0[2]), float(p[0]), float(p[1]),
                                  float(p[2]), float(dt), int(n_steps), _scheme_code(Scheme(scheme)), int(stride))


def spinup(p: Params, duration: float = 5.0, start: State = SPINUP_START, dt: float = 1e-4,
           scheme: Scheme = Scheme.RK4) -> State:
    """Integrate forward from ``start`` so the run begins inside the absorbing ball."""
    n = int(round(duration / dt))
    end = trajectory(p, start, dt, n, scheme, stride=max(n, 1))[-1]
    return State(*map(float, end))


@dataclass(frozen=True)
class SimConfig:
    params: Params = Params(10.0, 28.0, 8.0 / 3.0)
    initial_estimate: ParamEstimate = Params(8.0, 22.4, 32.0 / 15.0)
    initial_true: State = REFERENCE_INITIAL
    initial_nudged: State = State(0.0, 0.0, 0.0)
    gains: Gains = Gains()
    scheme: StepScheme = StepScheme()
    t0: float = 0.0
    tf: float = 150.0
    epsilon: float = 0.0
    seed: int = 0
    observation: ObservationPlan = ObservationPlan()
    learn: LearnPlan = LearnPlan()
    matlab_compat: bool = False
    draw_always: bool = False
    hold_feedback: bool = False
    record_every: int = 1
    replace: bool = False

    @property
    def dt(self) -> float:
        return self.scheme.dt

    @property
    def eta(self) -> float:
        return self.observation.eta

    @property
    def n_steps(self) -> int:
        """Loop iterations, one per grid time t0, t0+dt, ..., tf."""
        return int(round((self.tf - self.t0) / self.dt)) + 1

    def obs_interval(self) -> int:
        return self.observation.interval(self.dt)

    def param_interval(self) -> int:
        return max(1, int(round(self.learn.dt_param / self.dt)))

    def validate(self) -> "SimConfig":
        self.params.check()
        if not all(math.isfinite(c) for c in tuple(self.initial_estimate) + tuple(self.initial_true)
                   + tuple(self.initial_nudged)):
            raise ValueError("initial states and estimates must be finite")
        if not self.tf > self.t0:
            raise ValueError("tf must exceed t0")
        span = (self.tf - self.t0) / self.dt
        if abs(span - round(span)) > 0.5:
            raise ValueError("(tf - t0)/dt is not close to an integer")
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ValueError("epsilon must be >= 0")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        obs_int = self.obs_interval()
        need = self.learn.required_channels()
        missing = [c for c, n, m in zip("xyz", need, self.observation.mask) if n and not m]
        if missing:
            raise ConfigMismatchError(f"enabled updates need unobserved channel(s): {','.join(missing)}")
        if self.observation.translated_z and self.learn.learns_anything \
                and self.learn.estimator != Estimator.TRANSLATED:
            raise ConfigMismatchError("translated z observations only feed the translated-z estimator")
        if self.learn.estimator == Estimator.TRANSLATED and not self.observation.translated_z:
            raise ConfigMismatchError("the translated-z estimator needs translated_z observations")
        if self.learn.learns_anything and self.learn.mode == UpdateMode.THRESHOLD and obs_int != 1:
            raise ConfigMismatchError("threshold updates need observations every step (dt_obs == dt)")
        if self.scheme.kind == Scheme.EULER:
            self.scheme.check_gains(self.gains)
        return self


@dataclass
class Trace:
    """Recorded run.

    ``data`` maps column name to array (see ``_engine.COLUMNS``). The error
    and estimate columns are sampled before that step's updates; ``K`` and
    ``L`` use the feedback and estimates actually applied over the step.
    """

    data: dict[str, np.ndarray]
    events: list[UpdateEvent]
    config: SimConfig
    aborted_at: Optional[int] = None
    wall_time: float = 0.0
    final_true: Optional[State] = None
    final_nudged: Optional[State] = None
    final_estimate: Optional[ParamEstimate] = None
    noise_position: int = 0

    def __getitem__(self, key: str) -> np.ndarray:
        return self.data[key]

    def __len__(self) -> int:
        return len(self.data["t"])

    @property
    def t(self) -> np.ndarray:
        return self.data["t"]

    @property
    def aborted(self) -> bool:
        return self.aborted_at is not None

    def final_errors(self) -> dict[str, float]:
        return {k: float(self.data[k][-1]) for k in ("e_sol", "e_sigma", "e_rho", "e_beta")}

    def accepted_updates(self, parameter: Optional[str] = None) -> list[UpdateEvent]:
        return [e for e in self.events if not e.skipped and (parameter is None or e.parameter == parameter)]

    def update_times(self) -> list[float]:
        return sorted({e.time for e in self.events if not e.skipped})

    def window(self, duration: float) -> np.ndarray:
        """Boolean mask of samples in the last ``duration`` time units."""
        return self.t >= self.t[-1] - duration - 1e-12


def _count_obs(k0: int, k1: int, obs_int: int) -> int:
    if obs_int == 1:
        return k1 - k0
    ti = np.arange(k0 + 1, k1 + 1)
    return int(np.count_nonzero(ti % obs_int == 1))


def run_coupled(cfg: SimConfig) -> Trace:
    """Advance true and nudged systems from t0 to tf and return the full record.

    Raises :class:`NonFiniteStateError` (carrying the partial trace) on blow-up
    and :class:`ConfigMismatchError` when the plans disagree.
    """
    cfg.validate()
    start = time.perf_counter()
    obs, lp, g = cfg.observation, cfg.learn, cfg.gains
    n_total = cfg.n_steps
    obs_int = cfg.obs_interval()
    param_int = cfg.param_interval()
    ns = NoiseSource(cfg.seed)
    forcing_draws = cfg.epsilon > 0 or cfg.draw_always
    obs_draws = obs.eta > 0 or cfg.draw_always

    p = np.array(cfg.params, dtype=float)
    est = np.array(cfg.initial_estimate, dtype=float)
    mu = np.array(g.nudging, dtype=float)
    mup = np.array(g.update, dtype=float)
    U = np.array(cfg.initial_true, dtype=float)
    V = np.array(cfg.initial_nudged, dtype=float)
    mask = np.array(obs.mask, dtype=np.bool_)
    learn = np.array(lp.unknown, dtype=np.bool_)
    aux = np.zeros(8)
    aux[_engine.A_TN] = cfg.t0
    fits = np.zeros((3, 5))
    rep = np.zeros(7)
    rep[_engine.P_Y] = cfg.initial_nudged[1]
    rep[_engine.P_Z] = cfg.initial_nudged[2]
    rep[_engine.P_SIG] = np.nan
    rep[_engine.P_MON] = np.nan

    mode = _engine.FIXED if lp.mode == UpdateMode.FIXED_INTERVAL else _engine.THRESHOLD
    estimator = _engine.TRANSLATED if lp.estimator == Estimator.TRANSLATED else _engine.NUDGING
    every = cfg.record_every
    rows, ev_rows = [], []
    status, abort_k = _engine.OK, -1
    for k0 in range(0, n_total, CHUNK):
        k1 = min(k0 + CHUNK, n_total)
        n_noise = (3 * (k1 - k0) if forcing_draws else 0) + (3 * _count_obs(k0, k1, obs_int) if obs_draws else 0)
        noise = ns.normals(n_noise) if n_noise else np.zeros(0)
        rec = np.empty(((k1 - k0) // every + 2, _engine.N_COLS))
        ev = np.empty((3 * (k1 - k0) + 3, 7))
        status, abort_k, n_rec, n_ev, used = _engine.advance(
            k0, k1, n_total, float(cfg.t0), float(cfg.dt), p, est, mu, mup, U, V,
            _scheme_code(cfg.scheme.kind), obs_int, mask, bool(obs.translated_z), float(obs.eta),
            float(cfg.epsilon), learn, mode, param_int, float(lp.T_R), float(lp.p_tol), estimator,
            bool(cfg.matlab_compat), bool(cfg.hold_feedback), bool(cfg.replace),
            noise, forcing_draws, obs_draws, aux, fits, rep, every, rec, ev)
        rows.append(rec[:n_rec])
        ev_rows.append(ev[:n_ev])
        if status != _engine.OK:
            break
        assert used == n_noise, "noise stream out of step"

    table = np.concatenate(rows) if rows else np.empty((0, _engine.N_COLS))
    data = {name: table[:, j].copy() for j, name in enumerate(_engine.COLUMNS)}
    events = [UpdateEvent(float(r[0]), PARAM_NAMES[int(r[1])], float(r[2]), float(r[3]), float(r[4]),
                          bool(r[5]), REASONS[int(r[6])]) for r in np.concatenate(ev_rows)]
    for e in events:
        if e.reason == REASONS[3]:
            warnings.warn(f"{e.parameter} estimate became non-positive ({e.new:.4g}) at t={e.time:.6g}",
                          RuntimeWarning, stacklevel=2)
    trace = Trace(data, events, cfg, wall_time=time.perf_counter() - start,
                  final_true=State(*map(float, U)), final_nudged=State(*map(float, V)),
                  final_estimate=Params(*map(float, est)), noise_position=ns.position)
    if status != _engine.OK:
        trace.aborted_at = int(abort_k)
        raise NonFiniteStateError(int(abort_k), cfg.t0 + abort_k * cfg.dt, trace)
    return trace


def true_only(cfg: SimConfig) -> SimConfig:
    """Same run with learning and observations switched off (nudging gains zero)."""
    return replace(cfg, gains=Gains(), learn=LearnPlan(), observation=replace(cfg.observation, eta=0.0))
