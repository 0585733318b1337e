"""
Command-line entry point: ``ofmtss <subcommand> [options]``.

Every subcommand writes into ``<output root>/<subcommand>-<config hash>/``
so a changed configuration never overwrites earlier results. The output
root is ``--out``, else ``$OFMTSS_OUTPUT_ROOT``, else ``./ofmtss-out``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .annealer import AnnealConfig, anneal_best, exhaustive_search, EXHAUSTIVE_MAX_L
from .clipper import clip_sweep, write_clip_sweep
from .codes import (CrestCost, build_code, cross_corr_histogram, crest_cost,
                    cyclic_autocorr_cost, load_code, make_circular_set, save_code,
                    validate_ici_free)
from .dsp import estimate_psd, papr_db, read_iq, write_iq
from .errors import NumericalFailure, OfmtError
from .pulse import WaveformConfig, design_prototype
from .simlab import ConfigError, ExperimentConfig, run_experiment
from .txrx import BIORTH, QPSK, interior, random_frame, save_frame, synthesize

OUTPUT_ENV = "OFMTSS_OUTPUT_ROOT"

COSTS = {"crest": lambda L: CrestCost(L), "cyclic": lambda L: cyclic_autocorr_cost}


class UsageError(Exception):
    pass


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines (``#`` starts a comment) or a JSON object.

    Values are read as JSON when possible, so numbers, lists and ``null``
    work; anything else is kept as a string.
    """
    s = text.strip()
    if s.startswith("{"):
        try:
            return json.loads(s)
        except json.JSONDecodeError as exc:
            raise ConfigError({"config": f"invalid JSON: {exc}"}) from exc
    out: dict = {}
    bad = {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep or not key.strip():
            bad[f"line {no}"] = f"expected key = value, got {line!r}"
            continue
        val = val.strip()
        try:
            out[key.strip()] = json.loads(val)
        except json.JSONDecodeError:
            out[key.strip()] = val
    if bad:
        raise ConfigError(bad)
    return out


def _hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _outdir(args, name: str, cfg) -> Path:
    root = Path(args.out or os.environ.get(OUTPUT_ENV) or "ofmtss-out")
    d = root / f"{name}-{_hash(cfg)}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=str))
    return path


def _bank(args):
    return design_prototype(WaveformConfig(N=args.L // 2, alpha=args.alpha,
                                           span_symbols=args.span))


def _check_L(L: int):
    if L < 2 or L % 2:
        raise UsageError(f"L must be an even integer >= 2, got {L}")


def cmd_design_code(args) -> int:
    _check_L(args.L)
    seeds = list(range(args.seed, args.seed + args.restarts))
    cfg = (AnnealConfig.thorough(W=args.W) if args.L >= 64 else AnnealConfig(W=args.W))
    rec = {"L": args.L, "cost": args.cost, "W": args.W, "seeds": seeds,
           "schedule": cfg.__dict__}
    out = _outdir(args, "design-code", rec)
    res = anneal_best(args.L, COSTS[args.cost](args.L), cfg, seeds, args.jobs)
    code = build_code(res.best_zeta)
    designer = "sa-crest" if args.cost == "crest" else "sa-cyclic"
    save_code(code, out / "code.json", designer, res.seed, res.best_cost)
    (out / "cost_trace.csv").write_text(res.trace_csv())
    print(f"best {args.cost} cost {res.best_cost:.6g} (seed {res.seed}); "
          f"crest {crest_cost(code.zeta):.4f}")
    print(f"wrote {out / 'code.json'}")
    return 0


def cmd_oracle_search(args) -> int:
    if args.L > EXHAUSTIVE_MAX_L:
        raise UsageError(f"exhaustive search is limited to L <= {EXHAUSTIVE_MAX_L}")
    _check_L(args.L)
    from .codes import crest_cost as cc
    cost = cc if args.cost == "crest" else cyclic_autocorr_cost
    z, c = exhaustive_search(args.L, cost)
    out = _outdir(args, "oracle-search", {"L": args.L, "cost": args.cost})
    save_code(build_code(z), out / "code.json", "manual", None, c)
    print(f"global minimum {args.cost} cost {c:.12g} at {z.astype(int).tolist()}")
    return 0


def _load_gains(path):
    """A code file, or a JSON list of complex gains given as [re, im] pairs."""
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict) and "gamma" in doc:
        return np.array([complex(re, im) for re, im in doc["gamma"]]), None
    code = load_code(path)
    return code.gamma, code


def cmd_evaluate(args) -> int:
    try:
        gamma, code = _load_gains(args.code)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read {args.code}: {exc}") from exc
    report: dict = {"code_file": str(args.code), "L": int(gamma.size)}
    ok, resid = validate_ici_free(gamma)
    report["ici_free"] = {"pass": bool(ok), "residual": resid}
    out = _outdir(args, "evaluate", {"code": gamma.round(12).tolist().__repr__(),
                                     "seed": args.seed, "n": args.intervals,
                                     "alpha": args.alpha})
    if code is not None:
        report["crest"] = crest_cost(code.zeta)
        L = code.L
        if L % 2 == 0 and L >= 8:
            bank = design_prototype(WaveformConfig(N=L // 2, alpha=args.alpha,
                                                   span_symbols=args.span))
            fr = random_frame(QPSK, args.intervals, seed=args.seed)
            x = synthesize(bank, code, fr)
            report["frame_papr_db"] = papr_db(interior(bank, x, args.intervals))
            spec = estimate_psd(x.replace(interior(bank, x, args.intervals), 0), 128)
            np.savetxt(out / "psd.csv", np.column_stack([spec.frequencies, spec.psd]),
                       delimiter=",", header="frequency,psd", comments="")
        if L & (L - 1) == 0:
            hist = cross_corr_histogram(make_circular_set(code, 1))
            report["cross_corr_histogram"] = {str(k): v for k, v in hist.items()}
    _write_json(out / "report.json", report)
    print(json.dumps(report, indent=1, default=str))
    return 0


def cmd_synth(args) -> int:
    _check_L(args.L)
    code = load_code(args.code)
    bank = _bank(args)
    rec = {"code": code.zeta.tolist(), "n": args.intervals, "mode": args.mode,
           "M": args.M, "seed": args.seed, "alpha": args.alpha}
    out = _outdir(args, "synth", rec)
    if args.mode == "qpsk":
        fr = random_frame(QPSK, args.intervals, seed=args.seed)
        x = synthesize(bank, code, fr)
    else:
        fr = random_frame(BIORTH, args.intervals, M=args.M, seed=args.seed)
        x = synthesize(bank, make_circular_set(code, args.M), fr)
    write_iq(x, out / "tx.iq")
    save_frame(fr, out / "frame.json")
    print(f"wrote {len(x)} samples to {out / 'tx.iq'}; "
          f"PAPR {papr_db(interior(bank, x, args.intervals)):.2f} dB")
    return 0


def cmd_psd(args) -> int:
    x = read_iq(args.iq)
    out = _outdir(args, "psd", {"iq": str(args.iq), "seg": args.segment})
    spec = estimate_psd(x, args.segment)
    np.savetxt(out / "psd.csv", np.column_stack([spec.frequencies, spec.psd]),
               delimiter=",", header="frequency,psd", comments="")
    print(f"{spec.segment_count} segments, resolution {spec.resolution_bw:.4g}; "
          f"wrote {out / 'psd.csv'}")
    return 0


def cmd_clip_sweep(args) -> int:
    _check_L(args.L)
    code = load_code(args.code)
    bank = _bank(args)
    mus = [float(m) for m in args.mu]
    rec = {"code": code.zeta.tolist(), "mu": mus, "n": args.intervals,
           "M": args.M, "seed": args.seed, "alpha": args.alpha}
    out = _outdir(args, "clip-sweep", rec)
    cset = make_circular_set(code, args.M)
    fr = random_frame(BIORTH, args.intervals, M=args.M, seed=args.seed)
    rows = []
    for mu, rep in zip(mus, clip_sweep(bank, cset, fr, mus)):
        rows.append(rep.row(mu))
        print(f"mu {mu:5.2f} dB: PAPR {rep.papr_before:.2f} -> {rep.papr_after:.2f} dB, "
              f"EVM chip {rep.evm_chip:.4f}, symb {rep.evm_symb:.5f}")
    write_clip_sweep(rows, out / "clip_sweep.csv")
    return 0


def cmd_simulate(args) -> int:
    try:
        mapping = parse_config_text(Path(args.config).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    if args.seed is not None:
        mapping["seed"] = args.seed
    if args.mu is not None:
        mapping["clip.mu_db"] = args.mu
    base = Path(args.config).parent
    code = mapping.get("code")
    if isinstance(code, str) and not Path(code).is_absolute():
        mapping["code"] = str(base / code)
    cfg = ExperimentConfig.from_mapping(mapping)
    out = _outdir(args, "simulate", cfg.to_dict())
    rep = run_experiment(cfg, jobs=args.jobs)
    rep.write(out / "results.csv")
    print(rep.summary())
    print(f"wrote {out / 'results.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ofmtss", description=__doc__.split("\n\n")[0])
    p.add_argument("--out", help=f"output root (default ${OUTPUT_ENV} or ./ofmtss-out)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def wave(sp, L=True):
        if L:
            sp.add_argument("--L", type=int, default=128)
        sp.add_argument("--alpha", type=float, default=1.0)
        sp.add_argument("--span", type=int, default=16)

    s = sub.add_parser("design-code", help="anneal a chip vector")
    s.add_argument("--L", type=int, required=True)
    s.add_argument("--cost", choices=sorted(COSTS), default="crest")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--W", type=int, default=2)
    s.add_argument("--restarts", type=int, default=8,
                   help="independent runs; the best cost wins")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_design_code)

    s = sub.add_parser("oracle-search", help="exhaustive search for small L")
    s.add_argument("--L", type=int, required=True)
    s.add_argument("--cost", choices=sorted(COSTS), default="crest")
    s.set_defaults(func=cmd_oracle_search)

    s = sub.add_parser("evaluate", help="crest, PAPR, ICI check and histogram of a code")
    s.add_argument("code")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--intervals", type=int, default=500)
    wave(s, L=False)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="synthesize a random frame to an IQ file")
    s.add_argument("code")
    s.add_argument("--mode", choices=("qpsk", "biorth"), default="qpsk")
    s.add_argument("--M", type=int, default=1)
    s.add_argument("--intervals", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    wave(s)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("psd", help="Welch PSD of an IQ file")
    s.add_argument("iq")
    s.add_argument("--segment", type=int, default=128)
    s.set_defaults(func=cmd_psd)

    s = sub.add_parser("clip-sweep", help="EVM and PAPR versus clipping threshold")
    s.add_argument("code")
    s.add_argument("--mu", nargs="+", default=["3.75", "4.0", "4.25", "4.5", "4.75", "5.0"])
    s.add_argument("--M", type=int, default=128)
    s.add_argument("--intervals", type=int, default=4000)
    s.add_argument("--seed", type=int, default=0)
    wave(s)
    s.set_defaults(func=cmd_clip_sweep)

    s = sub.add_parser("simulate", help="Monte-Carlo BER/SER from a config file")
    s.add_argument("config")
    s.add_argument("--seed", type=int)
    s.add_argument("--mu", type=float, help="override clip.mu_db")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OfmtError as exc:
        # design tolerances that cannot be met are numerical failures
        from .errors import DesignError
        print(f"error: {exc}", file=sys.stderr)
        return 3 if isinstance(exc, DesignError) else 2


if __name__ == "__main__":
    sys.exit(main())
