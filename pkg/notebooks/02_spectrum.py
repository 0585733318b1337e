"""Overlapped versus non-overlapped spectrum.

The overlapped waveform fills the gaps between the FMT subbands, so its
PSD is flat across the band while the FMT frame shows a null between every
pair of subcarriers. Writes both estimates as CSV.

    python3 notebooks/02_spectrum.py [output dir]
"""

import sys
from pathlib import Path

import numpy as np

from ofmtss.codes import load_code
from ofmtss.dsp import estimate_psd
from ofmtss.pulse import design_prototype
from ofmtss.txrx import QPSK, interior, random_frame, synthesize, synthesize_fmt

root = Path(__file__).resolve().parents[1]
out = Path(sys.argv[1]) if len(sys.argv) > 1 else root / "ofmtss-out" / "notebooks"
out.mkdir(parents=True, exist_ok=True)

bank = design_prototype()
code = load_code(root / "configs" / "codes" / "crest128.json")
n = 500
frame = random_frame(QPSK, n, seed=0)
x = synthesize(bank, code, frame)
y = synthesize_fmt(bank, code.gamma[::2], frame.qpsk_symbols)

for name, sig, seg in (("ofmt", x, 768), ("fmt", y, 8192)):
    spec = estimate_psd(sig.replace(interior(bank, sig, n), 0), seg)
    db = 10 * np.log10(spec.psd / spec.psd[np.abs(spec.frequencies) < 60].mean())
    np.savetxt(out / f"psd_{name}.csv", np.column_stack([spec.frequencies, db]),
               delimiter=",", header="frequency,psd_db_rel", comments="")
    inband = np.abs(spec.frequencies) <= 60
    print(f"{name}: in-band min {db[inband].min():6.1f} dB, max {db[inband].max():5.2f} dB")
print(f"wrote {out}")
