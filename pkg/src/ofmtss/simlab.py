"""
AWGN channel, closed-form error rates and Monte-Carlo experiments.

Energy bookkeeping: :func:`ofmtss.txrx.synthesize` produces unit energy per
code interval, so with ``B`` bits per interval ``Eb = 1/B``. Complex noise
with two-sided density ``N0`` has per-sample variance ``N0 * fs``, which the
matched filter turns into variance ``N0`` per output.

Every frame of an experiment draws its bits and noise from
``default_rng([seed, ebn0_index, block, stream])``, so results do not depend
on how blocks are scheduled.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
from scipy import integrate, optimize, special
from scipy.stats import binomtest

from . import __version__
from .annealer import AnnealConfig, anneal_best
from .clipper import ClipConfig, clip
from .codes import (CrestCost, SpreadingCode, build_code, cyclic_autocorr_cost,
                    load_code, make_circular_set, make_hadamard_set,
                    validate_ici_free)
from .dsp import IqSignal
from .errors import IciConstraintError, OfmtError
from .pulse import WaveformConfig, design_prototype
from .txrx import (BIORTH, QPSK, analyze, biorth_bits, correlate, despread_qpsk,
                   detect, qpsk_bits, random_frame, synthesize)

__all__ = [
    "ConfigError",
    "awgn",
    "theory_qpsk_ber",
    "theory_biorth_ser",
    "ebn0_for_theory",
    "ebn0_at_rate",
    "wilson_interval",
    "ExperimentConfig",
    "TrialReport",
    "run_experiment",
    "resolve_code",
]


class ConfigError(OfmtError):
    """Invalid experiment configuration. ``fields`` names the offenders."""

    def __init__(self, problems: dict[str, str]):
        self.fields = problems
        super().__init__("invalid configuration: " + "; ".join(
            f"{k}: {v}" for k, v in problems.items()))


def awgn(x: IqSignal, ebn0_db: float | None, bits_per_interval: int,
         seed: int | np.random.Generator | None = None) -> IqSignal:
    """Add circular complex white Gaussian noise for the requested Eb/N0.

    The energy per interval is read from ``x.meta['interval_energy']``
    (1 if absent). ``ebn0_db`` of ``None`` or ``inf`` returns ``x``
    unchanged. The output is marked ``meta['noisy'] = True`` and carries
    the per-sample variance as ``meta['noise_var']``.
    """
    if bits_per_interval < 1:
        raise OfmtError("bits_per_interval must be >= 1")
    if ebn0_db is None or ebn0_db == math.inf:
        return x
    if not math.isfinite(ebn0_db):
        raise OfmtError(f"Eb/N0 must be finite or +inf, got {ebn0_db}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    es = x.meta.get("interval_energy", 1.0)
    n0 = es / bits_per_interval / 10 ** (ebn0_db / 10)
    var = n0 * x.sample_rate
    w = rng.standard_normal((2, len(x)))
    noise = (w[0] + 1j * w[1]) * np.sqrt(var / 2)
    meta = dict(x.meta, noisy=True, noise_var=var, n0=n0)
    return IqSignal(x.samples + noise, x.sample_rate, x.origin_index, meta)


def _q(x):
    return 0.5 * special.erfc(np.asarray(x) / np.sqrt(2))


def theory_qpsk_ber(ebn0_db):
    """Gray-coded QPSK bit error rate ``Q(sqrt(2 Eb/N0))``."""
    g = 10 ** (np.asarray(ebn0_db, dtype=float) / 10)
    out = 0.5 * special.erfc(np.sqrt(g))
    return float(out) if out.ndim == 0 else out


def theory_biorth_ser(ebn0_db: float, M: int) -> float:
    """Symbol error rate of biorthogonal signaling with ``M`` codes.

    With ``a = sqrt(2 B Eb/N0)`` and ``B = log2(M) + 1``,

        Pe = Q(a) + int_{-a}^{inf} phi(v) (1 - (1 - 2 Q(v + a))**(M-1)) dv.

    The integral is done by adaptive quadrature and cross-checked on a
    split interval; a disagreement above 1e-8 raises NumericalFailure.
    """
    from .errors import NumericalFailure
    if M < 1 or M & (M - 1):
        raise OfmtError(f"M must be a power of two, got {M}")
    B = M.bit_length()
    a = math.sqrt(2 * B * 10 ** (ebn0_db / 10))
    qa = 0.5 * math.erfc(a / math.sqrt(2))
    if M == 1:
        return qa

    def f(v):
        q = 0.5 * math.erfc((v + a) / math.sqrt(2))
        return math.exp(-v * v / 2) / math.sqrt(2 * math.pi) \
            * -math.expm1((M - 1) * math.log1p(-2 * q))

    opts = dict(epsabs=1e-14, epsrel=1e-12, limit=200)
    hi = 40.0  # phi(v) is below 1e-300 beyond this
    i1, e1 = integrate.quad(f, -a, hi, **opts)
    mid = max(-a, min(hi, 0.0))
    i2 = integrate.quad(f, -a, mid, **opts)[0] + integrate.quad(f, mid, hi, **opts)[0]
    if abs(i1 - i2) > 1e-8 or e1 > 1e-8:
        raise NumericalFailure(f"biorthogonal SER integral unstable ({i1} vs {i2})")
    return float(min(1.0, qa + i1))


def ebn0_for_theory(target: float, M: int | None = None) -> float:
    """Eb/N0 (dB) at which theory reaches ``target``.

    ``M=None`` inverts the QPSK bit error rate, otherwise the biorthogonal
    symbol error rate.
    """
    if not 0 < target < 0.5:
        raise OfmtError("target rate must be in (0, 0.5)")
    fn = theory_qpsk_ber if M is None else (lambda e: theory_biorth_ser(e, M))
    # rates underflow to 0 at high Eb/N0, hence the floor inside the log
    return float(optimize.brentq(lambda e: math.log(max(fn(e), 1e-300)) - math.log(target),
                                 -10.0, 30.0, xtol=1e-10))


def ebn0_at_rate(ebn0_db, rates, target: float) -> float:
    """Eb/N0 where a measured curve crosses ``target``.

    Interpolates ``log10(rate)`` linearly between the two grid points that
    bracket the target. Raises OfmtError when the curve does not cross it.
    """
    e = np.asarray(ebn0_db, dtype=float)
    r = np.asarray(rates, dtype=float)
    for i in range(len(e) - 1):
        r0, r1 = r[i], r[i + 1]
        if r0 >= target >= r1 and r0 > 0 and r1 > 0 and r0 != r1:
            w = (math.log10(r0) - math.log10(target)) / (math.log10(r0) - math.log10(r1))
            return float(e[i] + w * (e[i + 1] - e[i]))
    raise OfmtError(f"measured rates do not bracket {target}")


def wilson_interval(errors: int, trials: int) -> tuple[float, float]:
    """95% Wilson score interval."""
    if trials < 1:
        return 0.0, 1.0
    ci = binomtest(int(errors), int(trials)).proportion_ci(0.95, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte-Carlo experiment.

    ``code`` is a path to a code file, a list of chips, or a design
    request ``{"designer": "sa-crest" | "sa-cyclic", "seeds": [...]}``.
    ``mode`` is ``"qpsk"`` (bit errors counted) or ``"biorth"`` (symbol
    errors counted). ``set_kind`` picks circular shifts or Hadamard
    products for the biorthogonal code set.
    """

    waveform: WaveformConfig = field(default_factory=WaveformConfig)
    code: Any = None
    mode: str = "qpsk"
    M: int = 1
    set_kind: str = "circular"
    ebn0_grid_db: tuple = (0.0, 2.0, 4.0, 6.0, 8.0)
    min_errors: int = 100
    max_symbols: int = 1_000_000
    frame_intervals: int = 2000
    clip: ClipConfig | None = None
    seed: int = 0

    def __post_init__(self):
        bad = {}
        if self.mode not in ("qpsk", "biorth"):
            bad["mode"] = f"must be 'qpsk' or 'biorth', got {self.mode!r}"
        if self.mode == "qpsk" and self.M != 1:
            bad["M"] = "QPSK uses M = 1"
        if self.M < 1 or self.M & (self.M - 1):
            bad["M"] = f"must be a power of two, got {self.M}"
        if self.set_kind not in ("circular", "hadamard"):
            bad["set_kind"] = f"must be 'circular' or 'hadamard', got {self.set_kind!r}"
        grid = tuple(float(v) for v in np.atleast_1d(self.ebn0_grid_db))
        if not grid or not all(math.isfinite(v) for v in grid):
            bad["ebn0_grid_db"] = "must be a non-empty list of finite values"
        if self.min_errors < 100:
            bad["min_errors"] = "must be >= 100"
        if self.max_symbols < 1:
            bad["max_symbols"] = "must be >= 1"
        span = self.waveform.span_symbols
        if self.frame_intervals <= 2 * span:
            bad["frame_intervals"] = f"must exceed twice the filter span ({2 * span})"
        if self.code is None:
            bad["code"] = "missing"
        if bad:
            raise ConfigError(bad)
        object.__setattr__(self, "ebn0_grid_db", grid)

    @property
    def bits_per_interval(self) -> int:
        return 2 if self.mode == "qpsk" else self.M.bit_length()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ebn0_grid_db"] = list(self.ebn0_grid_db)
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    @classmethod
    def from_mapping(cls, m: dict) -> "ExperimentConfig":
        """Build from a flat mapping with dotted keys (``waveform.N``,
        ``clip.mu_db``) or nested dicts. Unknown keys are rejected."""
        flat: dict[str, Any] = {}
        for k, v in m.items():
            if isinstance(v, dict) and k in ("waveform", "clip"):
                for kk, vv in v.items():
                    flat[f"{k}.{kk}"] = vv
            else:
                flat[k] = v
        top = {f.name for f in fields(cls)}
        sub = {"waveform": {f.name for f in fields(WaveformConfig)},
               "clip": {f.name for f in fields(ClipConfig)}}
        kw: dict[str, Any] = {}
        parts: dict[str, dict] = {"waveform": {}, "clip": {}}
        bad = {}
        for k, v in flat.items():
            head, _, tail = k.partition(".")
            if tail and head in sub and tail in sub[head]:
                parts[head][tail] = v
            elif not tail and k in top and k not in sub:
                kw[k] = v
            elif k == "clip" and v in (None, "none", ""):
                continue
            else:
                bad[k] = "unknown field"
        if bad:
            raise ConfigError(bad)
        try:
            kw["waveform"] = WaveformConfig(**parts["waveform"])
        except (OfmtError, TypeError) as exc:
            raise ConfigError({"waveform": str(exc)}) from exc
        if parts["clip"]:
            try:
                kw["clip"] = ClipConfig(**parts["clip"])
            except (OfmtError, TypeError) as exc:
                raise ConfigError({"clip": str(exc)}) from exc
        for name, typ in (("M", int), ("min_errors", int), ("max_symbols", int),
                          ("frame_intervals", int), ("seed", int)):
            if name in kw:
                try:
                    kw[name] = typ(kw[name])
                except (TypeError, ValueError):
                    bad[name] = f"expected {typ.__name__}"
        if bad:
            raise ConfigError(bad)
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError({"config": str(exc)}) from exc


def resolve_code(spec, L: int) -> SpreadingCode:
    """Turn an ExperimentConfig ``code`` entry into a SpreadingCode."""
    if isinstance(spec, SpreadingCode):
        code = spec
    elif isinstance(spec, (str, Path)):
        code = load_code(spec)
    elif isinstance(spec, dict) and "designer" in spec:
        seeds = spec.get("seeds", list(range(8)))
        if spec["designer"] == "sa-crest":
            cost = CrestCost(L)
        elif spec["designer"] == "sa-cyclic":
            cost = cyclic_autocorr_cost
        else:
            raise ConfigError({"code": f"unknown designer {spec['designer']!r}"})
        r = anneal_best(L, cost, AnnealConfig.thorough(), seeds)
        code = build_code(r.best_zeta)
    else:
        code = build_code(spec)
    if code.L != L:
        raise ConfigError({"code": f"code length {code.L} does not match L={L}"})
    ok, resid = validate_ici_free(code.gamma)
    if not ok:
        raise IciConstraintError(f"code violates the ICI-free constraint ({resid})")
    return code


@dataclass
class TrialReport:
    """Per-Eb/N0 error counts with Wilson intervals."""

    rows: list[dict]
    meta: dict

    COLUMNS = ("ebn0_db", "errors", "trials", "rate", "lo95", "hi95")

    @property
    def rates(self) -> np.ndarray:
        return np.array([r["rate"] for r in self.rows])

    @property
    def ebn0_db(self) -> np.ndarray:
        return np.array([r["ebn0_db"] for r in self.rows])

    def to_csv(self) -> str:
        lines = [",".join(self.COLUMNS + ("censored",))]
        for r in self.rows:
            lines.append(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                                  for c in self.COLUMNS) + f",{int(r['censored'])}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> tuple[Path, Path]:
        """Write ``<path>`` (CSV) and ``<path>.json`` (metadata)."""
        path = Path(path)
        path.write_text(self.to_csv())
        side = path.with_name(path.name + ".json")
        side.write_text(json.dumps(self.meta, indent=1, sort_keys=True, default=str))
        return path, side

    def summary(self) -> str:
        out = [f"{'Eb/N0':>7} {'errors':>8} {'trials':>10} {'rate':>11}  95% interval"]
        for r in self.rows:
            flag = " (censored)" if r["censored"] else ""
            out.append(f"{r['ebn0_db']:7.2f} {r['errors']:8d} {r['trials']:10d} "
                       f"{r['rate']:11.4e}  [{r['lo95']:.3e}, {r['hi95']:.3e}]{flag}")
        return "\n".join(out)


class _Setup:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.bank = design_prototype(cfg.waveform)
        self.code = resolve_code(cfg.code, cfg.waveform.L)
        if cfg.mode == "biorth":
            make = make_circular_set if cfg.set_kind == "circular" else make_hadamard_set
            self.cset = make(self.code, cfg.M)
        else:
            self.cset = None
        self.clip_edge = (cfg.clip.edge_for(cfg.waveform.L, cfg.waveform.alpha)
                          if cfg.clip else None)


def _run_block(setup: _Setup, idx: int, ebn0: float, block: int) -> tuple[int, int]:
    """Errors and trials for one frame, counting interior intervals only."""
    cfg = setup.cfg
    n = cfg.frame_intervals
    span = cfg.waveform.span_symbols
    bits_rng = np.random.default_rng([cfg.seed, idx, block, 0])
    noise_rng = np.random.default_rng([cfg.seed, idx, block, 1])
    if cfg.mode == "qpsk":
        frame = random_frame(QPSK, n, seed=bits_rng)
        x = synthesize(setup.bank, setup.code, frame)
    else:
        frame = random_frame(BIORTH, n, M=cfg.M, seed=bits_rng)
        x = synthesize(setup.bank, setup.cset, frame)
    if cfg.clip is not None:
        x, _ = clip(x, cfg.clip, setup.clip_edge)
    rx = awgn(x, ebn0, frame.bits_per_interval, noise_rng)
    chips = analyze(setup.bank, rx, n)
    keep = slice(span, n - span)
    bpi = frame.bits_per_interval
    sent = frame.bits.reshape(n, bpi)[keep]
    if cfg.mode == "qpsk":
        got = qpsk_bits(despread_qpsk(setup.code, chips)).reshape(n, bpi)[keep]
        return int(np.sum(got != sent)), int(sent.size)
    det = detect(setup.cset, correlate(setup.cset, chips))
    got = biorth_bits(det.index, det.sign, cfg.M).reshape(n, bpi)[keep]
    return int(np.sum(np.any(got != sent, axis=1))), int(sent.shape[0])


_WORKER: _Setup | None = None


def _init_worker(cfg):
    global _WORKER
    _WORKER = _Setup(cfg)


def _worker_block(args):
    return _run_block(_WORKER, *args)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1,
                   setup: _Setup | None = None) -> TrialReport:
    """Monte-Carlo error rates over the Eb/N0 grid.

    Frames are processed in block order until ``min_errors`` errors or
    ``max_symbols`` trials are reached. With ``jobs > 1`` blocks are
    evaluated ahead in worker processes but consumed in the same order, so
    the report is identical to a serial run.
    """
    t0 = time.perf_counter()
    setup = setup or _Setup(cfg)
    rows = []
    pool = (ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(cfg,))
            if jobs > 1 else None)
    try:
        for i, e in enumerate(cfg.ebn0_grid_db):
            errors = trials = 0
            block = 0
            while errors < cfg.min_errors and trials < cfg.max_symbols:
                if pool is None:
                    results = [_run_block(setup, i, e, block)]
                else:
                    results = list(pool.map(_worker_block,
                                            [(i, e, block + j) for j in range(jobs)]))
                for err, n in results:
                    if errors >= cfg.min_errors or trials >= cfg.max_symbols:
                        break
                    errors += err
                    trials += n
                    block += 1
            lo, hi = wilson_interval(errors, trials)
            rows.append({"ebn0_db": e, "errors": errors, "trials": trials,
                         "rate": errors / trials, "lo95": lo, "hi95": hi,
                         "censored": errors < cfg.min_errors})
    finally:
        if pool is not None:
            pool.shutdown()
    meta = {
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "version": __version__,
        "wall_time_s": time.perf_counter() - t0,
        "metric": "ber" if cfg.mode == "qpsk" else "ser",
        "code_zeta": setup.code.zeta.astype(int).tolist(),
    }
    return TrialReport(rows, meta)


def write_rows_csv(rows, columns, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    return path
