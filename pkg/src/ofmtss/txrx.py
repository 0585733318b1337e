"""
Transmitter and receiver for the overlapped multitone spread-spectrum modem.

Synthesis and analysis both use the same decomposition of the subcarrier
filters. With ``Ps`` samples per symbol interval, a sample that lies ``jj``
intervals and ``p`` samples after the start of interval ``n`` receives

    h(jj + p/Ps) (-1)**jj ramp[p] sum_k gamma_k[n] exp(j 2 pi k p / Ps)

where ``ramp[p] = exp(j 2 pi (1/2 - N) p / Ps)``. The inner sum is one
inverse FFT per interval, so a frame costs ``O(n Ps log Ps)`` plus a
``(2 span + 1)``-tap polyphase filter. The slow per-subcarrier reference
implementations are kept alongside for testing.

Timing and carrier are ideal: the receiver samples at ``t = nT``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import circulant
from scipy.signal import upfirdn

from .codes import MultiCodeSet, SpreadingCode, quadrature_ramp
from .dsp import IqSignal
from .errors import OfmtError
from .pulse import PulseBank, fmt_pulse, ofmt_pulse

__all__ = [
    "QPSK",
    "BIORTH",
    "TxFrame",
    "ChipMatrix",
    "CorrelatorOutput",
    "random_frame",
    "frame_gains",
    "synthesize",
    "synthesize_reference",
    "synthesize_fmt",
    "analyze",
    "analyze_reference",
    "correlate",
    "correlate_fft",
    "correlate_dense",
    "detect",
    "despread_qpsk",
    "qpsk_bits",
    "biorth_bits",
    "save_frame",
    "load_frame",
    "interior",
    "sent_chips",
]

QPSK = "single-code-qpsk"
BIORTH = "multicode-biorthogonal"
_MODES = (QPSK, BIORTH)


def _log2(M: int) -> int:
    if M < 1 or M & (M - 1):
        raise OfmtError(f"M must be a power of two, got {M}")
    return M.bit_length() - 1


@dataclass(frozen=True)
class TxFrame:
    """Payload bits of a frame and the per-interval symbols they select.

    In QPSK mode each interval carries two Gray-mapped bits. In
    biorthogonal mode each interval carries ``log2(M) + 1`` bits: the
    leading ``log2(M)`` bits (MSB first) pick the code index and the last
    bit picks the sign (0 is +1).
    """

    mode: str
    bits: np.ndarray
    M: int = 1
    seed: int | None = None

    def __post_init__(self):
        if self.mode not in _MODES:
            raise OfmtError(f"mode must be one of {_MODES}, got {self.mode!r}")
        b = np.asarray(self.bits, dtype=np.uint8).ravel()
        if np.any(b > 1):
            raise OfmtError("bits must be 0 or 1")
        if self.mode == QPSK and self.M != 1:
            raise OfmtError("QPSK frames use a single code (M = 1)")
        _log2(self.M)
        if b.size % self.bits_per_interval:
            raise OfmtError(
                f"{b.size} bits is not a whole number of {self.bits_per_interval}-bit intervals")
        object.__setattr__(self, "bits", b)

    @property
    def bits_per_interval(self) -> int:
        return 2 if self.mode == QPSK else _log2(self.M) + 1

    @property
    def n_intervals(self) -> int:
        return self.bits.size // self.bits_per_interval

    @property
    def qpsk_symbols(self) -> np.ndarray:
        b = self.bits.reshape(-1, 2).astype(float)
        return ((1 - 2 * b[:, 0]) + 1j * (1 - 2 * b[:, 1])) / np.sqrt(2)

    @property
    def code_index(self) -> np.ndarray:
        k = _log2(self.M)
        b = self.bits.reshape(-1, k + 1)[:, :k].astype(np.int64)
        return b @ (1 << np.arange(k - 1, -1, -1, dtype=np.int64))

    @property
    def code_sign(self) -> np.ndarray:
        return 1 - 2 * self.bits.reshape(-1, _log2(self.M) + 1)[:, -1].astype(np.int64)

    def to_json(self) -> str:
        return json.dumps({
            "mode": self.mode,
            "M": self.M,
            "n_bits": int(self.bits.size),
            "bits": np.packbits(self.bits).tobytes().hex(),
            "seed": self.seed,
        })

    @classmethod
    def from_json(cls, text: str) -> "TxFrame":
        try:
            doc = json.loads(text)
            raw = np.frombuffer(bytes.fromhex(doc["bits"]), dtype=np.uint8)
            bits = np.unpackbits(raw)[:int(doc["n_bits"])]
            return cls(doc["mode"], bits, int(doc.get("M", 1)), doc.get("seed"))
        except (ValueError, KeyError, TypeError) as exc:
            raise OfmtError(f"malformed frame description: {exc}") from exc


def random_frame(mode: str, n_intervals: int, M: int = 1,
                 seed: int | np.random.Generator | None = None) -> TxFrame:
    """Frame of uniformly random bits."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bpi = 2 if mode == QPSK else _log2(M) + 1
    bits = rng.integers(0, 2, size=n_intervals * bpi, dtype=np.uint8)
    return TxFrame(mode, bits, M, seed if isinstance(seed, (int, np.integer)) else None)


def save_frame(frame: TxFrame, path) -> Path:
    path = Path(path)
    path.write_text(frame.to_json())
    return path


def load_frame(path) -> TxFrame:
    return TxFrame.from_json(Path(path).read_text())


def _base_code(codes) -> SpreadingCode:
    if isinstance(codes, MultiCodeSet):
        return codes.base
    if isinstance(codes, SpreadingCode):
        return codes
    raise OfmtError("expected a SpreadingCode or MultiCodeSet")


def sent_chips(codes, frame: TxFrame) -> np.ndarray:
    """``(n, L)`` signed real chips carried by each interval of ``frame``.

    For a QPSK frame these are the base chips repeated (the data symbol
    is not folded in).
    """
    if frame.mode == QPSK:
        z = _base_code(codes).zeta.astype(float)
        return np.tile(z, (frame.n_intervals, 1))
    if not isinstance(codes, MultiCodeSet):
        raise OfmtError("a biorthogonal frame needs a MultiCodeSet")
    if frame.M != codes.M:
        raise OfmtError(f"frame uses M={frame.M} but the code set has M={codes.M}")
    return frame.code_sign[:, None] * codes.active_chips[frame.code_index]


def frame_gains(codes, frame: TxFrame) -> np.ndarray:
    """``(n_intervals, L)`` matrix of spreading gains ``gamma_k[n]``."""
    if frame.mode == QPSK:
        return frame.qpsk_symbols[:, None] * _base_code(codes).gamma[None, :]
    if not isinstance(codes, MultiCodeSet):
        raise OfmtError("biorthogonal frames need a MultiCodeSet")
    if frame.M != codes.M:
        raise OfmtError(f"frame uses M={frame.M} but the code set has M={codes.M}")
    g = codes.active_gains[frame.code_index]
    if codes.base.phi:
        g = g * np.exp(1j * codes.base.phi)
    return frame.code_sign[:, None] * g


def _check_gains(bank: PulseBank, gains) -> np.ndarray:
    g = np.asarray(gains, dtype=complex)
    if g.ndim != 2 or g.shape[1] != bank.L or g.shape[0] < 1:
        raise OfmtError(f"gains must have shape (n, {bank.L}), got {g.shape}")
    return g


def _ramp(bank: PulseBank) -> np.ndarray:
    ps = bank.cfg.samples_per_symbol
    return np.exp(2j * np.pi * (0.5 - bank.cfg.N) * np.arange(ps) / ps)


def _signed_polyphase(bank: PulseBank) -> np.ndarray:
    span = bank.cfg.span_symbols
    sign = (-1.0) ** (np.arange(2 * span + 1) - span)
    return bank.polyphase * sign[:, None]


def synthesize(bank: PulseBank, codes, frame: TxFrame | None = None, *,
               gains=None, normalize: bool = True) -> IqSignal:
    """Transmit signal ``x(t) = sum_n sum_k gamma_k[n] h_k(t - nT)``.

    Either ``frame`` (with its code set ``codes``) or an explicit ``gains``
    matrix selects the per-interval spreading gains. With ``normalize``
    the output is scaled by ``1/sqrt(L)`` so the mean power is 1 and each
    interval carries unit energy. The applied factor is stored in
    ``meta['tx_gain']``; :func:`analyze` divides it out again.

    The signal starts ``span`` intervals before ``t = 0`` and ends ``span``
    intervals after the last interval.
    """
    if gains is None:
        if frame is None:
            raise OfmtError("synthesize needs a frame or a gains matrix")
        gains = frame_gains(codes, frame)
    g = _check_gains(bank, gains)
    n = g.shape[0]
    ps = bank.cfg.samples_per_symbol
    span = bank.cfg.span_symbols
    V = np.fft.ifft(g, ps, axis=1) * ps * _ramp(bank)[None, :]
    X = np.zeros((n + 2 * span, ps), dtype=complex)
    for r, row in enumerate(_signed_polyphase(bank)):
        X[r:r + n] += row[None, :] * V
    gain = 1 / np.sqrt(bank.L) if normalize else 1.0
    meta = {"tx_gain": gain, "n_intervals": n, "interval_energy": gain ** 2 * bank.L}
    if frame is not None:
        meta["mode"] = frame.mode
    return IqSignal(X.ravel() * gain, bank.fs, span * ps, meta)


def synthesize_fmt(bank: PulseBank, gains, symbols, normalize: bool = True) -> IqSignal:
    """Non-overlapped comparison signal ``sum_n s[n] g(t - nT)``.

    ``g`` is the ``N``-subcarrier pulse of :func:`pulse.fmt_pulse` built
    from the unit-magnitude ``gains``. Timing and scaling follow
    :func:`synthesize`, with ``1/sqrt(N)`` in place of ``1/sqrt(L)``.
    """
    s = np.asarray(symbols, dtype=complex).ravel()
    if s.size == 0:
        raise OfmtError("need at least one symbol")
    p = fmt_pulse(bank, gains)
    ps = bank.cfg.samples_per_symbol
    span = bank.cfg.span_symbols
    y = upfirdn(p.samples, s, up=ps)[:(s.size + 2 * span) * ps]
    gain = 1 / np.sqrt(bank.cfg.N) if normalize else 1.0
    meta = {"tx_gain": gain, "n_intervals": int(s.size), "waveform": "fmt"}
    return IqSignal(y * gain, bank.fs, span * ps, meta)


def interior(bank: PulseBank, x: IqSignal, n_intervals: int) -> np.ndarray:
    """Samples of the steady-state part of a frame.

    The first and last ``span`` intervals carry the filter ramp-up and
    ramp-down and are dropped, so PAPR and power figures describe a frame
    that runs indefinitely.
    """
    ps = bank.cfg.samples_per_symbol
    span = bank.cfg.span_symbols
    if n_intervals <= 2 * span:
        raise OfmtError(f"need more than {2 * span} intervals, got {n_intervals}")
    a = x.origin_index + span * ps
    b = x.origin_index + (n_intervals - span) * ps
    if a < 0 or b > len(x):
        raise OfmtError("signal does not cover the requested intervals")
    return x.samples[a:b]


def synthesize_reference(bank: PulseBank, gains) -> IqSignal:
    """Unnormalized sum of shifted overlapped pulses (slow reference)."""
    g = _check_gains(bank, gains)
    ps = bank.cfg.samples_per_symbol
    span = bank.cfg.span_symbols
    out = np.zeros((g.shape[0] + 2 * span) * ps, dtype=complex)
    for i, row in enumerate(g):
        p = ofmt_pulse(bank, row).samples
        out[i * ps:i * ps + p.size] += p
    return IqSignal(out, bank.fs, span * ps, {"tx_gain": 1.0})


@dataclass(frozen=True)
class ChipMatrix:
    """Filter-bank outputs sampled at ``t = nT``.

    ``raw[n, k]`` is the matched-filter output of subcarrier ``k``;
    ``despun = conj(b) * raw`` removes the quadrature ramp and ``chips``
    is its real part, the estimate of ``zeta_k[n]`` (scaled by the data
    symbol in QPSK mode).
    """

    raw: np.ndarray
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        r = np.asarray(self.raw, dtype=complex)
        if r.ndim != 2:
            raise OfmtError("raw outputs must be a 2-D array")
        object.__setattr__(self, "raw", r)

    @property
    def L(self) -> int:
        return self.raw.shape[1]

    @property
    def n_intervals(self) -> int:
        return self.raw.shape[0]

    @property
    def despun(self) -> np.ndarray:
        return self.raw * np.conj(quadrature_ramp(self.L))[None, :]

    @property
    def chips(self) -> np.ndarray:
        return self.despun.real


def _blocks(bank: PulseBank, rx: IqSignal, n_intervals: int) -> np.ndarray:
    """Received samples as ``(n + 2 span, Ps)`` blocks starting at ``-span``."""
    ps = bank.cfg.samples_per_symbol
    span = bank.cfg.span_symbols
    if not np.isclose(rx.sample_rate, bank.fs, rtol=1e-12, atol=0):
        raise OfmtError(f"rx sample rate {rx.sample_rate} differs from {bank.fs}")
    if n_intervals < 1:
        raise OfmtError("n_intervals must be >= 1")
    start = rx.origin_index - span * ps
    stop = start + (n_intervals + 2 * span) * ps
    if start < 0 or stop > len(rx):
        raise OfmtError(
            f"received signal too short: {n_intervals} intervals need samples "
            f"[{start}, {stop}) around the origin, have [0, {len(rx)})")
    return rx.samples[start:stop].reshape(-1, ps)


def analyze(bank: PulseBank, rx: IqSignal, n_intervals: int) -> ChipMatrix:
    """Matched filter bank ``h_k^*(-t)`` sampled at ``t = nT``.

    ``rx.meta['tx_gain']`` (default 1) is divided out so chip estimates
    are on the scale of the spreading gains.
    """
    X = _blocks(bank, rx, n_intervals)
    hps = _signed_polyphase(bank)
    Z = np.zeros((n_intervals, X.shape[1]), dtype=complex)
    for r, row in enumerate(hps):
        Z += row[None, :] * X[r:r + n_intervals]
    Y = np.fft.fft(Z * np.conj(_ramp(bank))[None, :], axis=1)[:, :bank.L]
    gain = rx.meta.get("tx_gain", 1.0)
    return ChipMatrix(Y / (bank.fs * gain), dict(rx.meta))


def analyze_reference(bank: PulseBank, rx: IqSignal, n_intervals: int) -> ChipMatrix:
    """Per-subcarrier correlation with ``h_k(t - nT)`` (slow reference)."""
    ps = bank.cfg.samples_per_symbol
    X = _blocks(bank, rx, n_intervals).ravel()
    h = bank.h
    hk = [h.samples.real * np.exp(2j * np.pi * f * h.t) for f in bank.ofmt_freqs]
    Y = np.empty((n_intervals, bank.L), dtype=complex)
    for n in range(n_intervals):
        seg = X[n * ps:n * ps + len(h)]
        for k in range(bank.L):
            Y[n, k] = np.sum(seg * np.conj(hk[k]))
    gain = rx.meta.get("tx_gain", 1.0)
    return ChipMatrix(Y / (bank.fs * gain), dict(rx.meta))


@dataclass(frozen=True)
class CorrelatorOutput:
    """Correlations with every code of the family, one row per interval.

    ``c[n, m]`` is the correlation of the de-rotated outputs of interval
    ``n`` with code ``m`` of the family. ``index``, ``sign`` and ``soft``
    are filled in by :func:`detect`.
    """

    c: np.ndarray
    index: np.ndarray | None = None
    sign: np.ndarray | None = None
    soft: np.ndarray | None = None


def _rows(y, L: int) -> tuple[np.ndarray, bool]:
    y = np.asarray(getattr(y, "raw", y), dtype=complex)
    single = y.ndim == 1
    y2 = y[None, :] if single else y
    if y2.ndim != 2 or y2.shape[1] != L:
        raise OfmtError(f"expected length-{L} output vectors, got shape {y.shape}")
    return y2, single


def correlate_fft(cset: MultiCodeSet, y) -> CorrelatorOutput:
    """Correlate with all ``L`` cyclic shifts using two FFTs per interval.

    ``y`` holds raw filter-bank outputs (one vector or one row per
    interval). Computes ``F^H conj(Lambda) F (conj(b) * y)``, where
    ``Lambda`` is the DFT of the base chips, and re-indexes the result so
    that entry ``m`` belongs to the code rotated left by ``m``.
    """
    if cset.kind != "circular":
        raise OfmtError("the FFT correlator needs a circular-shift code set")
    L = cset.L
    y2, single = _rows(y, L)
    u = y2 * np.conj(quadrature_ramp(L))[None, :]
    c = np.fft.ifft(np.conj(cset.dft_of_base)[None, :] * np.fft.fft(u, axis=1), axis=1)
    c = c[:, (-np.arange(L)) % L]
    return CorrelatorOutput(c[0] if single else c)


def correlate_dense(cset: MultiCodeSet, y) -> CorrelatorOutput:
    """Brute-force correlation. For circular sets this is ``J^H (conj(b) * y)``
    with ``J`` the circulant matrix whose first column is the base code."""
    L = cset.L
    y2, single = _rows(y, L)
    u = y2 * np.conj(quadrature_ramp(L))[None, :]
    if cset.kind == "circular":
        J = circulant(cset.base.zeta.astype(float))
        c = (J.conj().T @ u.T).T
        c = c[:, (-np.arange(L)) % L]
    else:
        c = u @ cset.shifts.T.astype(float)
    return CorrelatorOutput(c[0] if single else c)


def correlate(cset: MultiCodeSet, y) -> CorrelatorOutput:
    """FFT correlator for circular sets, dense product otherwise."""
    if cset.kind == "circular":
        return correlate_fft(cset, y)
    return correlate_dense(cset, y)


def detect(cset: MultiCodeSet, corr: CorrelatorOutput) -> CorrelatorOutput:
    """Biorthogonal decision over the active codes.

    Picks the active code with the largest ``|Re c|`` (lowest index on
    ties) and the sign of that correlation. ``index`` is the position in
    the active list, i.e. the transmitted code index. ``soft`` is the gap
    between the best and second-best ``|Re c|``.
    """
    c = np.atleast_2d(corr.c)
    v = c[:, cset.active].real
    a = np.abs(v)
    m = np.argmax(a, axis=1)
    rows = np.arange(v.shape[0])
    best = v[rows, m]
    s = np.where(best < 0, -1, 1)
    if a.shape[1] > 1:
        second = np.partition(a, -2, axis=1)[:, -2]
    else:
        second = np.zeros(a.shape[0])
    soft = a[rows, m] - second
    if np.ndim(corr.c) == 1:
        return CorrelatorOutput(corr.c, m[:1].copy(), s[:1].copy(), soft[:1].copy())
    return CorrelatorOutput(corr.c, m, s, soft)


def despread_qpsk(code, chips: ChipMatrix) -> np.ndarray:
    """Symbol estimates ``(1/L) sum_k zeta_k conj(b_k) y_k``."""
    base = _base_code(code)
    z = np.asarray(base.zeta, dtype=float)
    s = chips.despun @ z / base.L
    if base.phi:
        s = s * np.exp(-1j * base.phi)
    return s


def qpsk_bits(symbols) -> np.ndarray:
    """Gray demapping by quadrant: a negative component is a 1 bit."""
    s = np.asarray(symbols, dtype=complex)
    return np.stack([s.real < 0, s.imag < 0], axis=1).astype(np.uint8).ravel()


def biorth_bits(index, sign, M: int) -> np.ndarray:
    """Bits for detected ``(code index, sign)`` pairs."""
    k = _log2(M)
    index = np.asarray(index, dtype=np.int64)
    cols = [(index >> (k - 1 - i)) & 1 for i in range(k)]
    cols.append((np.asarray(sign) < 0).astype(np.int64))
    return np.stack(cols, axis=1).astype(np.uint8).ravel()
