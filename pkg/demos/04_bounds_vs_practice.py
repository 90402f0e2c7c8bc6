"""The analytic gain requirement against the smallest gain that works in practice."""
from pathlib import Path

from nudgelearn.bounds import BoundInputs, RadiusMode, absorbing_radius, envelope_check, report
from nudgelearn.config import Kind, parse_config
from nudgelearn.integrate import run_coupled

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

spec = parse_config((CONFIGS / "bounds.cfg").read_text(), Kind.BOUNDS)
cfg = spec.base
p = cfg.params
for mode in RadiusMode:
    R = absorbing_radius(p, mode)
    rep = report(BoundInputs(p, cfg.initial_estimate, cfg.gains, R))
    print(f"R ({mode.value:9s}) = {R:7.3f}   mu_c = {rep.mu_c:12.1f}   K^2 = {rep.K2:.3g}   "
          f"conditions met: {rep.cond_diff_ok}")

print(f"\nthe run uses mu1 = {cfg.gains.mu1:g}, far below mu_c, and still converges:")
trace = run_coupled(cfg)
print(f"   final |dsigma| = {trace.final_errors()['e_sigma']:.2e}")

# The exponential envelopes hold on almost every sample even though their hypotheses do not.
env = envelope_check(trace, BoundInputs(p, cfg.initial_estimate, cfg.gains, absorbing_radius(p, RadiusMode.EMPIRICAL)))
print(f"   envelope violations: {env.violation_fraction:.2e} of {env.samples} samples "
      f"(hypotheses unmet: {env.hypotheses_unmet})")
