"""Nudging against simply solving the x equation for sigma.

Direct replacement estimates sigma = xdot / (y~ - x) with a backward
difference of consecutive observations. That works with dense clean data and
degrades quickly once observations are sparse or noisy.
"""
from pathlib import Path

import numpy as np

from nudgelearn.config import Kind, parse_config
from nudgelearn.experiments import replace_trace

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

for name in ("replace.cfg", "replace_sparse.cfg", "replace_noisy.cfg"):
    spec = parse_config((CONFIGS / name).read_text(), Kind.REPLACE)
    tr = replace_trace(spec)
    s = tr.config.params.sigma
    w = tr.window(10.0)
    rep_err = np.nanmedian(np.abs(tr["sigma_replace"][w] - s))
    print(f"{name:20s} dt_obs={tr.config.observation.dt_obs:<7g} eta={tr.config.eta:<6g} "
          f"nudging |dsigma|={abs(tr['sigma'][-1] - s):.1e}   replacement median |dsigma|={rep_err:.2e}")
