"""Observation operators and the masked nudging feedback."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .dynamics import Gains, ParamEstimate, Params, State


@dataclass(frozen=True)
class ObservationPlan:
    """Which channels are seen, how often, and with what noise.

    With ``translated_z`` the z channel reports z - sigma - rho. That presumes
    an observer who can measure the translated variable even though sigma is
    the unknown being sought; the variable change is taken at face value.
    """

    mask: tuple[bool, bool, bool] = (True, True, True)
    dt_obs: float = 0.05
    eta: float = 0.0
    translated_z: bool = False

    def __post_init__(self):
        if not any(self.mask):
            raise ValueError("at least one channel must be observed")
        if not self.dt_obs > 0:
            raise ValueError("dt_obs must be > 0")
        if not (math.isfinite(self.eta) and self.eta >= 0):
            raise ValueError("eta must be >= 0")
        if self.translated_z and not self.mask[2]:
            raise ValueError("translated_z requires the z channel")

    def interval(self, dt: float) -> int:
        """Observation period in steps, checked to be (nearly) a whole number."""
        k = round(self.dt_obs / dt)
        if k < 1 or abs(self.dt_obs - k * dt) > 0.5 * dt:
            raise ValueError(f"dt_obs={self.dt_obs} is not a multiple of dt={dt}")
        return k

    @property
    def channels(self) -> str:
        return "".join(c for c, m in zip("xyz", self.mask) if m)


@dataclass(frozen=True)
class Observation:
    values: tuple[Optional[float], Optional[float], Optional[float]]
    timestamp: float = 0.0
    translated: bool = False


def is_observation_step(ti: int, obs_int: int) -> bool:
    """Observation schedule on the 1-based step counter.

    Every step when ``obs_int == 1``; otherwise steps with ``ti % obs_int == 1``
    (1, 1 + obs_int, ...).
    """
    return obs_int == 1 or ti % obs_int == 1


def observe(s_true: State, plan: ObservationPlan, ns=None, p: Optional[Params] = None,
            t: float = 0.0) -> Observation:
    """Noisy partial observation of the true state.

    When ``plan.eta > 0`` three normals are drawn from ``ns`` (one per channel,
    x first) regardless of the mask, so the stream layout does not depend on
    which channels are observed.
    """
    noise = (0.0, 0.0, 0.0)
    if plan.eta > 0:
        noise = tuple(plan.eta * ns.normal_draw() for _ in range(3))
    vals = [s_true[i] + noise[i] for i in range(3)]
    if plan.translated_z:
        if p is None:
            raise ValueError("translated observations need the true parameters")
        vals[2] = s_true[2] - p.sigma - p.rho + noise[2]
    return Observation(tuple(v if m else None for v, m in zip(vals, plan.mask)), t, plan.translated_z)


def make_feedback(s_nudged: State, obs: Observation, g: Gains,
                  estimate: Optional[ParamEstimate] = None) -> State:
    """mu_i * (s~_i - obs_i) on observed channels, zero elsewhere.

    A translated observation is compared against z~ - sigma~ - rho~, which
    keeps the model side free of the true sigma.
    """
    model = list(s_nudged)
    if obs.translated:
        if estimate is None:
            raise ValueError("translated feedback needs the current estimate")
        model[2] = s_nudged[2] - estimate.sigma - estimate.rho
    mu = g.nudging
    return State(*(0.0 if o is None else mu[i] * (model[i] - o) for i, o in enumerate(obs.values)))
