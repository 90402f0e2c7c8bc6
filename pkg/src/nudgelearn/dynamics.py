"""Vector fields, fixed points and linear stability of the Lorenz '63 system.

The scalar kernels (``lorenz_xyz``, ``nudged_xyz``) are compiled with numba so
the time-stepping engine can call them without leaving nopython mode; the
public functions wrap them with small named tuples.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from numba import njit

# |rho - 1| or |rho - rho_c| below this is treated as sitting on a bifurcation.
DEGENERACY_BAND = 1e-9


class State(NamedTuple):
    x: float
    y: float
    z: float

    def is_finite(self) -> bool:
        return all(math.isfinite(c) for c in self)


ZERO = State(0.0, 0.0, 0.0)


class Params(NamedTuple):
    """Lorenz parameters (sigma, rho, beta).

    The same tuple is used for the evolving estimate; only the true
    parameters are required to be strictly positive (see :meth:`check`).
    """

    sigma: float
    rho: float
    beta: float

    def check(self) -> "Params":
        if not all(math.isfinite(c) and c > 0 for c in self):
            raise ValueError(f"parameters must be finite and > 0, got {tuple(self)}")
        return self


ParamEstimate = Params


class ErrorState(NamedTuple):
    u: float
    v: float
    w: float

    @classmethod
    def between(cls, s_true: State, s_nudged: State) -> "ErrorState":
        return cls(s_nudged[0] - s_true[0], s_nudged[1] - s_true[1], s_nudged[2] - s_true[2])


class VelocityError(NamedTuple):
    gamma: float
    delta: float
    eta_dot: float


@dataclass(frozen=True)
class Gains:
    """Nudging strengths and the (separate) strengths used in the update rules."""

    mu1: float = 0.0
    mu2: float = 0.0
    mu3: float = 0.0
    mu1_p: float = 0.0
    mu2_p: float = 0.0
    mu3_p: float = 0.0

    def __post_init__(self):
        for name in ("mu1", "mu2", "mu3", "mu1_p", "mu2_p", "mu3_p"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val >= 0):
                raise ValueError(f"gain {name} must be finite and >= 0, got {val}")

    @property
    def nudging(self) -> tuple[float, float, float]:
        return (self.mu1, self.mu2, self.mu3)

    @property
    def update(self) -> tuple[float, float, float]:
        return (self.mu1_p, self.mu2_p, self.mu3_p)


class StabilityClass(str, enum.Enum):
    ORIGIN_STABLE = "ORIGIN_STABLE"
    PPM_STABLE = "PPM_STABLE"
    NO_STABLE_FP = "NO_STABLE_FP"


class Stability(NamedTuple):
    kind: StabilityClass
    degenerate: bool = False


@dataclass(frozen=True)
class FixedPointSet:
    origin: State
    p_plus: Optional[State]
    p_minus: Optional[State]
    rho_c: Optional[float]

    def members(self) -> list[State]:
        return [p for p in (self.origin, self.p_plus, self.p_minus) if p is not None]

    def translated(self, p: Params) -> list[State]:
        """P+/- expressed in (x, y, z - sigma - rho); empty when they do not exist."""
        return [State(q.x, q.y, q.z - p.sigma - p.rho) for q in (self.p_plus, self.p_minus) if q is not None]


@njit(cache=True)
def lorenz_xyz(x, y, z, sigma, rho, beta):
    return sigma * (y - x), rho * x - y - x * z, x * y - beta * z


@njit(cache=True)
def nudged_xyz(x, y, z, sigma, rho, beta, f1, f2, f3):
    return sigma * (y - x) - f1, rho * x - y - x * z - f2, x * y - beta * z - f3


def lorenz_rhs(s: State, p: Params, forcing: State = ZERO) -> State:
    """Right-hand side of the true system plus an additive forcing vector."""
    dx, dy, dz = lorenz_xyz(float(s[0]), float(s[1]), float(s[2]), float(p[0]), float(p[1]), float(p[2]))
    return State(dx + forcing[0], dy + forcing[1], dz + forcing[2])


def nudged_rhs(s_nudged: State, p_est: ParamEstimate, feedback: State = ZERO) -> State:
    """Right-hand side of the assimilating copy; ``feedback`` is subtracted.

    ``feedback`` is the already-masked vector ``mu_i * (s_nudged_i - obs_i)``
    built by :func:`nudgelearn.assimilate.make_feedback`.
    """
    return State(*nudged_xyz(float(s_nudged[0]), float(s_nudged[1]), float(s_nudged[2]),
                             float(p_est[0]), float(p_est[1]), float(p_est[2]),
                             float(feedback[0]), float(feedback[1]), float(feedback[2])))


def velocity_error(s: State, s_nudged: State, p: Params, p_est: ParamEstimate,
                   feedback: State = ZERO, forcing: State = ZERO) -> VelocityError:
    """Time derivative of the state error, i.e. (gamma, delta, eta_dot)."""
    a = nudged_rhs(s_nudged, p_est, feedback)
    b = lorenz_rhs(s, p, forcing)
    return VelocityError(a[0] - b[0], a[1] - b[1], a[2] - b[2])


def position_energy(e: ErrorState) -> float:
    return 0.5 * (e[0] ** 2 + e[1] ** 2 + e[2] ** 2)


def velocity_energy(ve: VelocityError) -> float:
    return 0.5 * (ve[0] ** 2 + ve[1] ** 2 + ve[2] ** 2)


def hopf_rho(p: Params) -> Optional[float]:
    """rho at which P+/- lose stability; ``None`` when sigma - beta - 1 <= 0."""
    den = p.sigma - p.beta - 1.0
    if den <= 0:
        return None
    return p.sigma * (p.sigma + p.beta + 3.0) / den


def fixed_points(p: Params) -> FixedPointSet:
    rho_c = hopf_rho(p)
    if p.rho > 1:
        a = math.sqrt(p.beta * (p.rho - 1.0))
        plus, minus = State(a, a, p.rho - 1.0), State(-a, -a, p.rho - 1.0)
    else:
        plus = minus = None
    return FixedPointSet(State(0.0, 0.0, 0.0), plus, minus, rho_c)


def jacobian(s: State, p: Params) -> np.ndarray:
    x, y, z = s
    return np.array([
        [-p.sigma, p.sigma, 0.0],
        [p.rho - z, -1.0, -x],
        [y, x, -p.beta],
    ])


def max_real_eigenvalue(s: State, p: Params) -> float:
    return float(np.max(np.linalg.eigvals(jacobian(s, p)).real))


def eigen_stability(p: Params) -> dict[str, bool]:
    """Numerical check: which fixed points have all eigenvalues in the open left half plane."""
    fps = fixed_points(p)
    out = {"origin": max_real_eigenvalue(fps.origin, p) < 0}
    if fps.p_plus is not None:
        # P+ and P- are related by the (x, y) -> (-x, -y) symmetry.
        out["p_plus"] = max_real_eigenvalue(fps.p_plus, p) < 0
        out["p_minus"] = max_real_eigenvalue(fps.p_minus, p) < 0
    return out


def classify_stability(p: Params) -> Stability:
    """Closed-form stability class of the fixed points.

    When sigma <= beta + 1 there is no Hopf threshold and P+/- stay stable for
    every rho > 1, so that case is reported as PPM_STABLE.
    """
    rho_c = hopf_rho(p)
    if abs(p.rho - 1.0) < DEGENERACY_BAND or (rho_c is not None and abs(p.rho - rho_c) < DEGENERACY_BAND):
        return Stability(StabilityClass.NO_STABLE_FP, True)
    if p.rho < 1.0:
        return Stability(StabilityClass.ORIGIN_STABLE)
    if rho_c is None or p.rho < rho_c:
        return Stability(StabilityClass.PPM_STABLE)
    return Stability(StabilityClass.NO_STABLE_FP)


def classify_by_eigenvalues(p: Params) -> StabilityClass:
    stab = eigen_stability(p)
    if stab["origin"]:
        return StabilityClass.ORIGIN_STABLE
    if stab.get("p_plus", False):
        return StabilityClass.PPM_STABLE
    return StabilityClass.NO_STABLE_FP
