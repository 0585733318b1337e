"""
Peak reduction by iterative clip-and-filter, and the resulting distortion.

Each pass limits the envelope to ``mu`` times the RMS of the signal entering
that pass while preserving phase. Passes up to ``hard_clip_after`` are
followed by an ideal low-pass at ``band_edge``; later passes are left
unfiltered, so with the defaults the last of three passes is a hard clip.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import IqSignal, papr_db
from .errors import OfmtError
from .pulse import PulseBank
from .txrx import ChipMatrix, TxFrame, analyze, interior, sent_chips, synthesize

__all__ = [
    "ClipConfig",
    "EvmReport",
    "clip",
    "band_limit",
    "oob_power_db",
    "measure_evm",
    "predict_sinr",
    "clip_sweep",
    "write_clip_sweep",
    "CLIP_SWEEP_COLUMNS",
]

CLIP_SWEEP_COLUMNS = ("mu_db", "papr_before", "papr_after", "evm_chip", "evm_symb", "oob_db")


@dataclass(frozen=True)
class ClipConfig:
    """Clipping threshold and pass structure.

    ``band_edge`` of ``None`` means the occupied band ``(L + alpha) / 2``,
    resolved against a waveform by :meth:`edge_for`.
    """

    mu_db: float
    iterations: int = 3
    hard_clip_after: int = 2
    band_edge: float | None = None

    def __post_init__(self):
        if not self.mu_db > 0:
            raise OfmtError(f"mu_db must be positive, got {self.mu_db}")
        if self.iterations < 1:
            raise OfmtError("iterations must be >= 1")
        if not 0 <= self.hard_clip_after <= self.iterations + 1:
            raise OfmtError("hard_clip_after must be in [0, iterations + 1]")
        if self.band_edge is not None and not self.band_edge > 0:
            raise OfmtError("band_edge must be positive")

    @property
    def mu_linear(self) -> float:
        return 10 ** (self.mu_db / 20)

    def edge_for(self, L: int, alpha: float) -> float:
        return self.band_edge if self.band_edge is not None else (L + alpha) / 2


def _limit(x: np.ndarray, thr: float) -> np.ndarray:
    mag = np.abs(x)
    over = mag > thr
    out = x.copy()
    out[over] *= thr / mag[over]
    return out


def band_limit(x: IqSignal, band_edge: float) -> IqSignal:
    """Zero every FFT bin with ``|f| > band_edge``."""
    if band_edge >= x.sample_rate / 2:
        raise OfmtError(
            f"band_edge {band_edge} is at or beyond Nyquist ({x.sample_rate / 2})")
    f = np.fft.fftfreq(len(x), 1 / x.sample_rate)
    X = np.fft.fft(x.samples)
    X[np.abs(f) > band_edge] = 0
    return x.replace(np.fft.ifft(X))


def oob_power_db(x: IqSignal, band_edge: float) -> float:
    """Power outside ``|f| <= band_edge`` relative to the power inside, in dB."""
    f = np.fft.fftfreq(len(x), 1 / x.sample_rate)
    P = np.abs(np.fft.fft(x.samples)) ** 2
    inside = np.abs(f) <= band_edge
    pin, pout = P[inside].sum(), P[~inside].sum()
    if pin == 0:
        raise OfmtError("no in-band power")
    return float(10 * np.log10(pout / pin)) if pout > 0 else -np.inf


def clip(x: IqSignal, cfg: ClipConfig, band_edge: float | None = None
         ) -> tuple[IqSignal, IqSignal]:
    """Clip-and-filter ``x``; returns the output and the clip noise ``out - x``.

    ``band_edge`` overrides ``cfg.band_edge``; one of them must be given
    (see :meth:`ClipConfig.edge_for`). The output's metadata records the
    threshold of the final pass (``clip_threshold``) and the out-of-band
    level just before the first unfiltered pass (``oob_before_hard_db``).
    """
    if len(x) == 0:
        raise OfmtError("cannot clip an empty signal")
    edge = band_edge if band_edge is not None else cfg.band_edge
    if edge is None:
        raise OfmtError("band_edge not set; use ClipConfig.edge_for")
    if edge >= x.sample_rate / 2:
        raise OfmtError(
            f"band_edge {edge} is at or beyond Nyquist ({x.sample_rate / 2})")
    cur = x
    thr = np.inf
    oob_pre = None
    for i in range(1, cfg.iterations + 1):
        if i > cfg.hard_clip_after and oob_pre is None:
            oob_pre = oob_power_db(cur, edge)
        rms = np.sqrt(np.mean(np.abs(cur.samples) ** 2))
        thr = cfg.mu_linear * rms
        cur = cur.replace(_limit(cur.samples, thr))
        if i <= cfg.hard_clip_after:
            cur = band_limit(cur, edge)
    if oob_pre is None:
        oob_pre = oob_power_db(cur, edge)
    meta = dict(x.meta)
    meta.update(clip_mu_db=cfg.mu_db, clip_threshold=float(thr),
                oob_before_hard_db=oob_pre)
    out = IqSignal(cur.samples, x.sample_rate, x.origin_index, meta)
    nu = IqSignal(cur.samples - x.samples, x.sample_rate, x.origin_index, dict(meta))
    return out, nu


@dataclass(frozen=True)
class EvmReport:
    evm_chip: float
    evm_symb: float
    papr_before: float = float("nan")
    papr_after: float = float("nan")
    oob_power_db: float = float("nan")
    n_intervals: int = 0

    def row(self, mu_db: float) -> dict:
        return {"mu_db": mu_db, "papr_before": self.papr_before,
                "papr_after": self.papr_after, "evm_chip": self.evm_chip,
                "evm_symb": self.evm_symb, "oob_db": self.oob_power_db}


def measure_evm(ref: ChipMatrix, rx: ChipMatrix, codes, **extra) -> EvmReport:
    """Chip- and symbol-level EVM of clipping.

    ``ref`` and ``rx`` are chip estimates of the same frame without and
    with clipping, both noiseless, so ``nu = rx.chips - ref.chips`` is the
    clip noise alone. ``codes`` is the ``(n, L)`` matrix of signed chip
    vectors that were sent.

    ``evm_chip = sqrt(mean_k Var_n nu_k)``; ``evm_symb`` is the standard
    deviation over intervals of ``(1/L) zeta[n] . nu[n]``.

    Raises OfmtError if either input is marked as noisy.
    """
    for cm in (ref, rx):
        if cm.meta.get("noisy"):
            raise OfmtError("EVM needs noiseless chips; channel noise would mix with clip noise")
    if ref.raw.shape != rx.raw.shape:
        raise OfmtError("reference and received chip matrices differ in shape")
    z = np.asarray(codes, dtype=float)
    if z.shape != ref.raw.shape:
        raise OfmtError(f"codes must have shape {ref.raw.shape}, got {z.shape}")
    if z.shape[0] < 2:
        raise OfmtError("need at least two intervals")
    nu = rx.chips - ref.chips
    L = z.shape[1]
    evm_chip = float(np.sqrt(np.mean(np.var(nu, axis=0))))
    evm_symb = float(np.std(np.sum(z * nu, axis=1) / L))
    return EvmReport(evm_chip, evm_symb, n_intervals=z.shape[0], **extra)


def predict_sinr(snr_linear: float, evm_symb: float) -> float:
    """``SNR / (SNR * evm_symb**2 + 1)``."""
    if snr_linear < 0 or evm_symb < 0:
        raise OfmtError("SNR and EVM must be non-negative")
    return snr_linear / (snr_linear * evm_symb ** 2 + 1)


def clip_sweep(bank: PulseBank, cset, frame: TxFrame, mus) -> list[EvmReport]:
    """Clip one frame at each threshold in ``mus`` (dB) and measure it.

    EVM, PAPR and out-of-band power are taken over the steady-state
    intervals only (see ``txrx.interior``). The band edge is the occupied
    half-bandwidth ``(L + alpha) / 2``.
    """
    n = frame.n_intervals
    span = bank.cfg.span_symbols
    x = synthesize(bank, cset, frame)
    ref = analyze(bank, x, n)
    keep = slice(span, n - span)
    z = sent_chips(cset, frame)[keep]
    papr0 = papr_db(interior(bank, x, n))
    out = []
    for mu in mus:
        cfg = ClipConfig(float(mu))
        edge = cfg.edge_for(bank.L, bank.cfg.alpha)
        y, _ = clip(x, cfg, edge)
        rx = analyze(bank, y, n)
        out.append(measure_evm(ChipMatrix(ref.raw[keep]), ChipMatrix(rx.raw[keep]), z,
                               papr_before=papr0,
                               papr_after=papr_db(interior(bank, y, n)),
                               oob_power_db=oob_power_db(y, edge)))
    return out


def write_clip_sweep(rows, path) -> Path:
    """Write clip-sweep rows (dicts keyed by CLIP_SWEEP_COLUMNS) as CSV."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CLIP_SWEEP_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(r[k])) for k in CLIP_SWEEP_COLUMNS})
    return path
