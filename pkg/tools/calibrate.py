"""Freeze the domination calibration used by the acceptance suite.

Runs global domination (Hilbert kernel, n=1, rings=2, r=1) on the 20 seeded
random step functions of the acceptance suite and writes tests/calibration.json:

* kappa0: max over seeds of C_emp / C_T at N = 2^8 (the frozen ratio bound);
* c_emp_reference: per-seed C_emp at N = 2^10 (regression baseline, +-10%).

    python3 tools/calibrate.py [output.json]
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

from sparse_dominator.domination import global_dominate
from sparse_dominator.function import random_step
from sparse_dominator.grid import Cube
from sparse_dominator.operators import get_kernel

SEEDS = range(20)
COARSE_LEVEL = 8
PIECES = 16
RINGS = 2


def run(level: int) -> list[dict]:
    T = get_kernel("hilbert")
    window = Cube((0,), 2**level, level)
    rows = []
    for seed in SEEDS:
        f = random_step(window, seed, PIECES, COARSE_LEVEL)
        res = global_dominate(T, f, rings=RINGS)
        c_t = res.certificate.constants.c_t
        rows.append({"seed": seed, "c_emp": res.c_emp, "c_t": c_t, "ratio": res.c_emp / c_t})
    return rows


def main(argv: list[str]) -> int:
    out = Path(argv[0]) if argv else Path(__file__).resolve().parent.parent / "tests" / "calibration.json"
    cal = run(8)
    ref = run(10)
    doc = {
        "kernel": "hilbert",
        "rings": RINGS,
        "pieces": PIECES,
        "coarse_level": COARSE_LEVEL,
        "seeds": list(SEEDS),
        "calibration_level": 8,
        "kappa0": max(r["ratio"] for r in cal),
        "calibration_runs": cal,
        "reference_level": 10,
        "c_emp_reference": {str(r["seed"]): r["c_emp"] for r in ref},
        "c_emp_tolerance": 0.10,
    }
    out.write_text(json.dumps(doc, indent=1) + "\n")
    print(f"kappa0 = {doc['kappa0']!r}; max ratio at N=2^10 = {max(r['ratio'] for r in ref)!r}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
