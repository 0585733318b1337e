"""Monte-Carlo error rates against theory.

Runs a bundled experiment configuration (default: configs/fig7_b3.conf)
and prints the measured rates next to the closed-form curve. The larger
configurations (fig6, fig7_b8, fig8) take a few minutes each.

    python3 notebooks/04_error_rates.py [config]
"""

import sys
from pathlib import Path

from ofmtss.cli import parse_config_text
from ofmtss.simlab import (ExperimentConfig, run_experiment, theory_biorth_ser,
                           theory_qpsk_ber)

root = Path(__file__).resolve().parents[1]
path = Path(sys.argv[1]) if len(sys.argv) > 1 else root / "configs" / "fig7_b3.conf"
mapping = parse_config_text(path.read_text())
mapping["code"] = str(path.parent / mapping["code"])
cfg = ExperimentConfig.from_mapping(mapping)
rep = run_experiment(cfg)
for row in rep.rows:
    e = row["ebn0_db"]
    th = theory_qpsk_ber(e) if cfg.mode == "qpsk" else theory_biorth_ser(e, cfg.M)
    mark = "" if row["lo95"] <= th <= row["hi95"] else "  outside 95%"
    print(f"{e:5.2f} dB  measured {row['rate']:.3e}  theory {th:.3e}{mark}")
