"""Designing a spreading code and checking what it buys.

Anneal a short code against the exhaustive optimum, then look at the
bundled L = 128 designs: crest factor, frame PAPR and the cross-correlation
support of their circular shifts.

    python3 notebooks/01_code_design.py
"""

from pathlib import Path

from ofmtss.annealer import AnnealConfig, anneal, exhaustive_search
from ofmtss.codes import (CrestCost, crest_cost, cross_corr_histogram, load_code,
                          make_circular_set)
from ofmtss.dsp import papr_db
from ofmtss.pulse import design_prototype
from ofmtss.txrx import QPSK, interior, random_frame, synthesize

CODES = Path(__file__).resolve().parents[1] / "configs" / "codes"

# Small L: annealing should land on the global optimum.
for L in (8, 10):
    _, best = exhaustive_search(L, crest_cost)
    runs = [anneal(L, CrestCost(L), AnnealConfig(seed=s)).best_cost for s in range(5)]
    print(f"L={L}: optimum {best:.6f}, annealed {[round(r, 6) for r in runs]}")

# L = 128: the bundled designs.
bank = design_prototype()
for name in ("crest128", "cyc128"):
    code = load_code(CODES / f"{name}.json")
    f = random_frame(QPSK, 500, seed=0)
    p = papr_db(interior(bank, synthesize(bank, code, f), 500))
    hist = cross_corr_histogram(make_circular_set(code, 1))
    print(f"{name}: crest {crest_cost(code.zeta):.4f}, frame PAPR {p:.2f} dB, "
          f"|shift correlations| {hist}")
