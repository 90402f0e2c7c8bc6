"""Flat ``key = value`` experiment files.

Numeric values may be arithmetic expressions over numbers and keys defined on
earlier lines (``mu = 1.8/dt``). Lists use commas, ``lo:hi:step`` ranges or
``;``-separated pairs, depending on the key.
"""
from __future__ import annotations

import ast
import enum
import math
import operator
from collections import ChainMap
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np

from .assimilate import ObservationPlan
from .dynamics import Gains, Params, State, classify_stability, fixed_points, StabilityClass
from .integrate import REFERENCE_INITIAL, ConfigMismatchError, Scheme, SimConfig, StepScheme, spinup
from .learn import Estimator, LearnPlan, UpdateMode


class Kind(str, enum.Enum):
    SIMULATE = "simulate"
    SWEEP = "sweep"
    MU_MIN = "mu-min"
    NOISE_GRID = "noise-grid"
    BOUNDS = "bounds"
    REPLACE = "replace"


class ConfigError(ValueError):
    exit_code = 2


class ParseError(ConfigError):
    code = "PARSE_ERROR"

    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class ValidationError(ConfigError):
    code = "VALIDATION_ERROR"


# -- schema ------------------------------------------------------------------

NUMBER, TEXT, BOOL, FLOATS, PAIRS, TRIPLE = "number", "text", "bool", "floats", "pairs", "triple"

# key -> (kind, default). Defaults of None are filled in by _resolve.
SCHEMA: dict[str, tuple[str, Any]] = {
    "sigma": (NUMBER, 10.0),
    "rho": (NUMBER, 28.0),
    "beta": (NUMBER, 8.0 / 3.0),
    "sigma_DA": (NUMBER, None),
    "rho_DA": (NUMBER, None),
    "beta_DA": (NUMBER, None),
    "t0": (NUMBER, 0.0),
    "tf": (NUMBER, 150.0),
    "dt": (NUMBER, 1e-4),
    "dt_obs": (NUMBER, None),
    "dt_param": (NUMBER, 2.0),
    "p_tol": (NUMBER, 1e-4),
    "mu": (NUMBER, None),
    "mu1": (NUMBER, None),
    "mu2": (NUMBER, None),
    "mu3": (NUMBER, None),
    "mu_p": (NUMBER, None),
    "mu1_p": (NUMBER, None),
    "mu2_p": (NUMBER, None),
    "mu3_p": (NUMBER, None),
    "eta": (NUMBER, 0.0),
    "epsilon": (NUMBER, 0.0),
    "seed": (NUMBER, 0),
    "observe": (TEXT, "xyz"),
    "learn": (TEXT, "none"),
    "mode": (TEXT, None),
    "T_R": (NUMBER, 1.0),
    "scheme": (TEXT, None),
    "estimator": (TEXT, "nudging"),
    "initial": (TEXT, "reference"),
    "initial_DA": (TRIPLE, (0.0, 0.0, 0.0)),
    "spinup": (NUMBER, 5.0),
    "start_offset": (NUMBER, 1e-6),
    "record_every": (NUMBER, 100),
    "matlab_compat": (BOOL, False),
    "draw_always": (BOOL, False),
    "hold_feedback": (BOOL, False),
    # experiment-specific
    "offset": (NUMBER, 10.0),
    "converge_tol": (NUMBER, None),
    "rho_range": (FLOATS, (5.0, 50.0, 20.0)),
    "sigma_range": (FLOATS, (5.0, 50.0, 20.0)),
    "points": (PAIRS, ((10.0, 30.0),)),
    "mu_scan": (FLOATS, None),
    "noise_pairs": (PAIRS, ((0.0, 0.0),)),
    "plateau_window": (NUMBER, 10.0),
    "radius": (TEXT, "empirical"),
    "workers": (NUMBER, 1),
}

INTEGER_KEYS = {"seed", "record_every", "workers"}
PARAM_LETTERS = {"s": 0, "r": 1, "b": 2}
INITIAL_CHOICES = ("reference", "spinup", "fixed_point", "auto")

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}


def _arith(expr: str, env: dict[str, Any]) -> float:
    """Evaluate + - * / ** over numbers and earlier keys; nothing else is allowed."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return node.value
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return _UNARY[type(node.op)](ev(node.operand))
        if isinstance(node, ast.Name):
            val = env.get(node.id)
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                raise ValueError(f"unknown name {node.id!r} (only numeric keys set earlier or with defaults)")
            return val
        raise ValueError(f"unsupported expression element {type(node).__name__}")

    try:
        tree = ast.parse(expr.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse {expr!r}") from exc
    try:
        return ev(tree)
    except ZeroDivisionError as exc:
        raise ValueError("division by zero") from exc


def _floats(raw: str, env) -> tuple[float, ...]:
    """Comma list; an item ``a:b:step`` expands to a, a+step, ..., <= b."""
    out: list[float] = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" in item:
            parts = [_arith(x, env) for x in item.split(":")]
            if len(parts) != 3 or parts[2] <= 0:
                raise ValueError(f"range {item!r} must be lo:hi:step with step > 0")
            lo, hi, step = parts
            n = int(math.floor((hi - lo) / step + 1e-9)) + 1
            out.extend(lo + i * step for i in range(max(n, 0)))
        else:
            out.append(float(_arith(item, env)))
    return tuple(out)


def _pairs(raw: str, env) -> tuple[tuple[float, float], ...]:
    out = []
    for chunk in raw.split(";"):
        if not chunk.strip():
            continue
        vals = _floats(chunk, env)
        if len(vals) != 2:
            raise ValueError(f"expected a pair, got {chunk.strip()!r}")
        out.append(vals)
    return tuple(out)


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


_NUMERIC_DEFAULTS = {k: d for k, (kind, d) in SCHEMA.items() if kind == NUMBER and d is not None}


def parse_settings(text: str) -> dict[str, Any]:
    """Raw key/value pass: syntax, unknown keys and per-value typing.

    Expressions see keys assigned on earlier lines, falling back to the
    numeric defaults (so ``sigma_DA = 0.8*sigma`` works without ``sigma``).
    """
    lines = text.splitlines()
    assigned = {ln.split("#", 1)[0].split("=", 1)[0].strip() for ln in lines if "=" in ln.split("#", 1)[0]}
    env: dict[str, Any] = {}
    # a default is visible only for keys the file never sets
    scope = ChainMap(env, {k: v for k, v in _NUMERIC_DEFAULTS.items() if k not in assigned})
    for lineno, line in enumerate(lines, 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ParseError(lineno, f"expected 'key = value', got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in SCHEMA:
            raise ParseError(lineno, f"unknown key {key!r}")
        if key in env:
            raise ParseError(lineno, f"duplicate key {key!r}")
        if not raw:
            raise ParseError(lineno, f"missing value for {key!r}")
        kind = SCHEMA[key][0]
        try:
            if kind == NUMBER:
                val = _arith(raw, scope)
                if key in INTEGER_KEYS:
                    if float(val) != int(val):
                        raise ValueError(f"{key} must be an integer")
                    val = int(val)
                else:
                    val = float(val)
            elif kind == TEXT:
                val = raw.strip().strip('"').strip("'")
            elif kind == BOOL:
                val = _bool(raw)
            elif kind == TRIPLE:
                val = _floats(raw, scope)
                if len(val) != 3:
                    raise ValueError("expected three comma-separated numbers")
            elif kind == FLOATS:
                val = _floats(raw, scope)
            else:
                val = _pairs(raw, scope)
        except ValueError as exc:
            raise ParseError(lineno, f"{key}: {exc}") from None
        env[key] = val
    return env


# -- resolved experiment -----------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    kind: Kind
    settings: dict = field(compare=True, hash=False)
    base: SimConfig = field(compare=False)
    out: str = "out"
    workers: int = 1

    def cell_config(self, sigma: float, rho: float, seed: Optional[int] = None) -> SimConfig:
        """Base config moved to (sigma, rho); learned parameters start at truth + offset."""
        return config_for(self.settings, sigma=sigma, rho=rho, seed=seed, relative_guess=True)


def _mask(text: str, letters: str, what: str) -> tuple[bool, bool, bool]:
    text = text.strip().lower()
    if text in ("", "none", "-"):
        return (False, False, False)
    bad = set(text) - set(letters)
    if bad:
        raise ValidationError(f"{what} accepts letters from {letters!r}, got {''.join(sorted(bad))!r}")
    return tuple(c in text for c in letters)


def _resolve(raw: dict[str, Any]) -> dict[str, Any]:
    s = {k: (raw[k] if k in raw else d) for k, (_, d) in SCHEMA.items()}
    if s["dt_obs"] is None:
        s["dt_obs"] = s["dt"]
    continuous = abs(s["dt_obs"] - s["dt"]) <= 0.5 * s["dt"]
    if s["mode"] is None:
        s["mode"] = "threshold" if continuous else "fixed"
    if s["scheme"] is None:
        s["scheme"] = "rk4" if continuous else "euler"
    if s["mu"] is None:
        s["mu"] = 1.8 / s["dt"] if not continuous else 500.0
    for i in (1, 2, 3):
        if s[f"mu{i}"] is None:
            s[f"mu{i}"] = s["mu"]
    if s["mu_p"] is None:
        # same gain in the update rule when every step is observed, mu*dt otherwise
        s["mu_p"] = s["mu"] if continuous else s["mu"] * s["dt"]
    for i in (1, 2, 3):
        if s[f"mu{i}_p"] is None:
            s[f"mu{i}_p"] = s["mu_p"]
    unknown = _mask(s["learn"], "srb", "learn")
    for i, name in enumerate(("sigma", "rho", "beta")):
        if s[f"{name}_DA"] is None:
            s[f"{name}_DA"] = 0.8 * s[name] if unknown[i] else s[name]
    if s["converge_tol"] is None:
        s["converge_tol"] = 1e-3
    if s["mu_scan"] is None:
        s["mu_scan"] = tuple(10.0 * k for k in range(1, 51))
    return s


def config_for(s: dict[str, Any], sigma: Optional[float] = None, rho: Optional[float] = None,
               seed: Optional[int] = None, relative_guess: bool = False) -> SimConfig:
    """Build a SimConfig from resolved settings, optionally at another (sigma, rho)."""
    try:
        p = Params(s["sigma"] if sigma is None else sigma, s["rho"] if rho is None else rho, s["beta"])
        p.check()
        observe = _mask(s["observe"], "xyz", "observe")
        unknown = _mask(s["learn"], "srb", "learn")
        try:
            estimator = Estimator(s["estimator"])
            mode = UpdateMode(s["mode"])
            scheme = Scheme(s["scheme"])
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        if relative_guess:
            est = Params(*(p[i] + s["offset"] if unknown[i] else p[i] for i in range(3)))
        elif sigma is None and rho is None:
            est = Params(s["sigma_DA"], s["rho_DA"], s["beta_DA"])
        else:
            est = Params(*(p[i] * s[f"{n}_DA"] / s[n] if unknown[i] else p[i]
                           for i, n in enumerate(("sigma", "rho", "beta"))))
        start = initial_state(s, p)
        translated = estimator == Estimator.TRANSLATED
        cfg = SimConfig(
            params=p, initial_estimate=est, initial_true=start, initial_nudged=State(*s["initial_DA"]),
            gains=Gains(*(s[f"mu{i}"] if observe[i - 1] else 0.0 for i in (1, 2, 3)),
                        *(s[f"mu{i}_p"] for i in (1, 2, 3))),
            scheme=StepScheme(scheme, s["dt"]), t0=s["t0"], tf=s["tf"], epsilon=s["epsilon"],
            seed=s["seed"] if seed is None else seed,
            observation=ObservationPlan(observe, s["dt_obs"], s["eta"], translated_z=translated),
            learn=LearnPlan(unknown, mode, s["T_R"], s["dt_param"], s["p_tol"], estimator),
            matlab_compat=s["matlab_compat"], draw_always=s["draw_always"], hold_feedback=s["hold_feedback"],
            record_every=s["record_every"])
        return cfg.validate()
    except ValidationError:
        raise
    except (ValueError, ConfigMismatchError) as exc:
        raise ValidationError(str(exc)) from None


def initial_state(s: dict[str, Any], p: Params) -> State:
    """True initial condition named by the ``initial`` key.

    ``auto`` starts references whose nontrivial fixed points are stable at
    P+ (offset by ``start_offset``), so they sit at equilibrium, and spins up
    from the usual far-away point otherwise.
    """
    how = s["initial"].strip().lower()
    if how == "reference":
        return REFERENCE_INITIAL
    if how == "spinup":
        return spinup(p, s["spinup"])
    if how in ("fixed_point", "auto"):
        if how == "fixed_point" or classify_stability(p).kind == StabilityClass.PPM_STABLE:
            pp = fixed_points(p).p_plus
            if pp is None:
                raise ValidationError("fixed_point start needs rho > 1")
            off = s["start_offset"]
            return spinup(p, s["spinup"], start=State(pp.x + off, pp.y + off, pp.z + off))
        return spinup(p, s["spinup"])
    try:
        vals = tuple(float(v) for v in how.split(","))
    except ValueError:
        vals = ()
    if len(vals) != 3:
        raise ValidationError(f"initial must be one of {INITIAL_CHOICES} or 'x, y, z', got {how!r}")
    return State(*vals)


def validate_settings(kind: Kind, s: dict[str, Any]) -> None:
    if s["workers"] < 1:
        raise ValidationError("workers must be >= 1")
    if s["record_every"] < 1:
        raise ValidationError("record_every must be >= 1")
    if s["radius"] not in ("empirical", "analytic"):
        raise ValidationError("radius must be 'empirical' or 'analytic'")
    if kind == Kind.SWEEP:
        for key in ("rho_range", "sigma_range"):
            r = s[key]
            if len(r) != 3 or r[2] < 1 or int(r[2]) != r[2]:
                raise ValidationError(f"{key} must be lo, hi, count with count >= 1")
    if kind == Kind.MU_MIN:
        if not s["points"]:
            raise ValidationError("points must not be empty")
        if not s["mu_scan"] or any(m <= 0 for m in s["mu_scan"]):
            raise ValidationError("mu_scan must be a non-empty list of positive gains")
    if kind == Kind.NOISE_GRID and not s["noise_pairs"]:
        raise ValidationError("noise_pairs must not be empty")
    if kind == Kind.REPLACE and not _mask(s["observe"], "xyz", "observe")[0]:
        raise ValidationError("direct replacement needs x observations")


def parse_config(text: str, kind: Kind | str = Kind.SIMULATE, out: str = "out",
                 workers: Optional[int] = None) -> ExperimentSpec:
    s = _resolve(parse_settings(text))
    kind = Kind(kind)
    if workers is not None:
        s["workers"] = int(workers)
    validate_settings(kind, s)
    base = config_for(s)
    return ExperimentSpec(kind, s, base, out, s["workers"])


def _fmt(val: Any) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, int):
        return str(val)
    if isinstance(val, float):
        return repr(val)
    if isinstance(val, tuple):
        if val and isinstance(val[0], tuple):
            return "; ".join(", ".join(repr(float(x)) for x in pair) for pair in val)
        return ", ".join(repr(float(x)) for x in val)
    return str(val)


def emit_config(spec: ExperimentSpec) -> str:
    """Canonical text: every key, schema order, floats via repr."""
    return "".join(f"{k} = {_fmt(spec.settings[k])}\n" for k in SCHEMA)


def with_overrides(spec: ExperimentSpec, **flags: Any) -> ExperimentSpec:
    """Copy of ``spec`` with some settings replaced (used for CLI flags)."""
    s = dict(spec.settings)
    s.update({k: v for k, v in flags.items() if v is not None})
    validate_settings(spec.kind, s)
    return replace(spec, settings=s, base=config_for(s), workers=s["workers"])


def grid_axis(r: tuple[float, float, float]) -> np.ndarray:
    lo, hi, n = r
    return np.linspace(lo, hi, int(n))
