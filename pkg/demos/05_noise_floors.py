"""Noise sets a floor on how accurately the parameters can be recovered."""
from pathlib import Path

from nudgelearn.config import Kind, parse_config
from nudgelearn.experiments import noise_rows

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

spec = parse_config((CONFIGS / "noise_grid.cfg").read_text(), Kind.NOISE_GRID)
print(" epsilon      eta      plateau   |dsigma|   |drho|    |dbeta|")
for eps, eta, plat, es, er, eb, *_ in noise_rows(spec):
    print(f"{eps:8.0e}  {eta:8.0e}   {plat:.2e}  {es:.2e}  {er:.2e}  {eb:.2e}")
