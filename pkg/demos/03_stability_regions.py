"""Where does learning sigma from x fail?

When the Lorenz fixed points P+/- are stable, the observed trajectory settles
onto one of them and x stops carrying information about sigma. The translated
variable z - sigma - rho settles at -sigma - 1 there, so it can be read off
directly. This demo runs a coarse 6x6 version of the plane sweep.
"""
from collections import Counter
from pathlib import Path

from nudgelearn.config import Kind, parse_config
from nudgelearn.experiments import sweep_rows

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def coarse(name):
    text = (CONFIGS / name).read_text()
    text = text.replace("rho_range = 5, 50, 20", "rho_range = 5, 50, 6").replace(
        "sigma_range = 5, 50, 20", "sigma_range = 5, 50, 6")
    return parse_config(text, Kind.SWEEP)


for name in ("sweep_x.cfg", "sweep_translated.cfg"):
    rows = sweep_rows(coarse(name))
    tally = Counter((r[3], bool(r[4])) for r in rows)
    print(name)
    for (kind, ok), n in sorted(tally.items()):
        print(f"   {kind:14s} converged={ok!s:5s}  {n:3d} cells")

    # a small map: '#' converged, '.' did not, rows are sigma, columns rho
    sigmas = sorted({r[1] for r in rows}, reverse=True)
    rhos = sorted({r[0] for r in rows})
    cell = {(r[0], r[1]): r for r in rows}
    for s in sigmas:
        print(f"   sigma={s:5.1f} " + "".join("#" if cell[(r, s)][4] else "." for r in rhos))
    print()
