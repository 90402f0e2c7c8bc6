"""Continuous observations of x and threshold-triggered updates of sigma.

The model starts with sigma off by 100. An update fires only when the
innovation |x~ - x| has dropped below a log-linear fit of its own recent decay
and at least T_R time units have passed since the previous one.
"""
from pathlib import Path

from nudgelearn.config import parse_config
from nudgelearn.integrate import run_coupled

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

cfg = parse_config((CONFIGS / "continuous_sigma.cfg").read_text()).base
trace = run_coupled(cfg)

print(" update time   sigma before   sigma after")
for ev in trace.accepted_updates("sigma"):
    print(f"{ev.time:11.4f}   {ev.old:12.8f}   {ev.new:12.8f}")

print(f"\nfinal |dsigma| = {trace.final_errors()['e_sigma']:.2e} at t = {trace.t[-1]:g}")
