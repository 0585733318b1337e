"""
Prototype filter and composite pulse responses.

The prototype ``h`` is a truncated square-root raised cosine for symbol
interval ``T = 1``. From it we build the overlapped subcarrier pulse
``g_bar(t) = h(t) sum_k gamma_k exp(j 2 pi f_k t)`` with subcarriers spaced
``1/T`` apart, and the pieces its matched-filter response splits into: the
aligned term ``a(t)``, the adjacent-band cross term ``c(t)`` and the
adjacent-band kernel ``d(t)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import IqSignal, convolve
from .errors import DesignError, OfmtError

__all__ = [
    "WaveformConfig",
    "PulseBank",
    "srrc",
    "design_prototype",
    "compute_d",
    "ofmt_pulse",
    "fmt_pulse",
    "fmt_response",
    "beta_bar",
    "aligned_term",
    "cross_term",
    "cross_term_direct",
    "system_response",
    "pulse_spectrum",
]


@dataclass(frozen=True)
class WaveformConfig:
    """Waveform dimensions.

    ``N`` is the non-overlapped subcarrier count; the overlapped waveform
    uses ``L = 2N`` subcarriers. ``oversample`` is samples per chip, so the
    sample rate is ``oversample * L / T``.
    """

    N: int = 64
    alpha: float = 1.0
    span_symbols: int = 16
    oversample: int = 2
    T: float = 1.0

    def __post_init__(self):
        if self.N < 1:
            raise OfmtError(f"N must be >= 1, got {self.N}")
        if not 0 < self.alpha <= 1:
            raise OfmtError(f"roll-off must be in (0, 1], got {self.alpha}")
        if self.oversample < 2:
            raise OfmtError(f"oversample must be >= 2, got {self.oversample}")
        if self.span_symbols < 4:
            raise OfmtError(f"span_symbols must be >= 4, got {self.span_symbols}")
        if self.T != 1.0:
            raise OfmtError("only the normalized symbol interval T = 1 is supported")

    @property
    def L(self) -> int:
        return 2 * self.N

    @property
    def samples_per_symbol(self) -> int:
        return self.oversample * self.L

    @property
    def sample_rate(self) -> float:
        return self.samples_per_symbol / self.T


def srrc(t, alpha: float, T: float = 1.0) -> np.ndarray:
    """Square-root raised-cosine impulse response (unnormalized)."""
    t = np.asarray(t, dtype=float) / T
    h = np.empty_like(t)
    at0 = np.isclose(t, 0.0, atol=1e-12)
    sing = np.isclose(np.abs(4 * alpha * t), 1.0, atol=1e-12)
    reg = ~(at0 | sing)
    x = t[reg]
    h[reg] = (np.sin(np.pi * x * (1 - alpha))
              + 4 * alpha * x * np.cos(np.pi * x * (1 + alpha))) \
        / (np.pi * x * (1 - (4 * alpha * x) ** 2))
    h[at0] = 1 - alpha + 4 * alpha / np.pi
    h[sing] = alpha / np.sqrt(2) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * alpha))
                                    + (1 - 2 / np.pi) * np.cos(np.pi / (4 * alpha)))
    return h / T


@dataclass(frozen=True)
class PulseBank:
    """Prototype filter, its autocorrelation and the subcarrier grids.

    ``h`` is scaled to unit energy, which makes ``rho(0) = 1``. All arrays
    share the sample rate ``cfg.sample_rate``.
    """

    cfg: WaveformConfig
    h: IqSignal
    rho: IqSignal
    d: IqSignal
    fmt_freqs: np.ndarray
    ofmt_freqs: np.ndarray
    nyquist_leakage: float
    nyquist_tol: float
    ici_tol: float = 1e-3
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def L(self) -> int:
        return self.cfg.L

    @property
    def fs(self) -> float:
        return self.cfg.sample_rate

    @property
    def polyphase(self) -> np.ndarray:
        """``h`` split into ``2*span+1`` rows of one symbol interval each.

        Row ``j + span`` holds ``h((j*Ps + p)/fs)`` for ``p = 0..Ps-1`` where
        ``Ps`` is samples per symbol.
        """
        if "poly" not in self._cache:
            ps = self.cfg.samples_per_symbol
            span = self.cfg.span_symbols
            hp = np.zeros((2 * span + 1) * ps)
            hp[:len(self.h)] = self.h.samples.real
            self._cache["poly"] = hp.reshape(2 * span + 1, ps)
        return self._cache["poly"]


def design_prototype(cfg: WaveformConfig | None = None,
                     nyquist_tol: float = 1e-4,
                     ici_tol: float = 1e-3) -> PulseBank:
    """Build the prototype filter and derived responses for ``cfg``.

    Raises
    ------
    DesignError
        If truncation leaves ``max |rho(nT)| >= nyquist_tol`` for some
        nonzero integer ``n``. The achieved leakage is attached.
    """
    cfg = cfg or WaveformConfig()
    ps = cfg.samples_per_symbol
    half = cfg.span_symbols * ps
    fs = cfg.sample_rate
    t = np.arange(-half, half + 1) / fs
    h = srrc(t, cfg.alpha, cfg.T)
    h /= np.sqrt(np.sum(h ** 2) / fs)
    hs = IqSignal(h.astype(complex), fs, half)

    rho = convolve(hs, hs)
    rho = rho.replace(rho.samples.real / fs + 0j)
    o = rho.origin_index
    n_max = (len(rho) - 1 - o) // ps
    leak = max(abs(rho.samples[o + n * ps]) for n in range(1, n_max + 1))
    leak = float(leak / abs(rho.samples[o]))
    if leak >= nyquist_tol:
        raise DesignError(
            f"prototype span {cfg.span_symbols} leaves Nyquist leakage {leak:.3g} "
            f">= tolerance {nyquist_tol:.3g}", achieved=leak)

    k = np.arange(cfg.N)
    fmt_freqs = (2 * (k - cfg.N / 2) + 1) / cfg.T
    kb = np.arange(cfg.L)
    ofmt_freqs = (kb - cfg.N + 0.5) / cfg.T

    d = convolve(hs, hs.replace(h * np.exp(2j * np.pi * t / cfg.T)))
    d = d.replace(d.samples / fs)
    return PulseBank(cfg, hs, rho, d, fmt_freqs, ofmt_freqs, leak,
                     nyquist_tol, ici_tol)


def compute_d(bank: PulseBank, check: bool = True) -> IqSignal:
    """Adjacent-band kernel ``d(t) = h(t) * h(t) exp(j 2 pi t / T)``.

    With ``check`` the zero-phase property of ``d(t) exp(-j pi t / T)`` is
    verified: it must be real and even to ``1e-9`` of ``max |d|``.
    """
    d = bank.d
    if check:
        dp = d.samples * np.exp(-1j * np.pi * d.t / bank.cfg.T)
        scale = np.abs(d.samples).max()
        bad = max(np.abs(dp.imag).max(), np.abs(dp - dp[::-1]).max())
        if scale > 0 and bad > 1e-9 * scale:
            raise DesignError(
                f"d(t) exp(-j pi t/T) is not zero-phase (residual {bad / scale:.3g})",
                achieved=bad / scale)
    return d


def _gains(code, expected: int) -> np.ndarray:
    g = np.asarray(getattr(code, "gamma", code), dtype=complex).ravel()
    if g.size != expected:
        raise OfmtError(f"expected {expected} spreading gains, got {g.size}")
    return g


def _multitone(t: np.ndarray, freqs: np.ndarray, gains: np.ndarray) -> np.ndarray:
    step = np.diff(freqs)
    if freqs.size < 2 or np.ptp(step) > 1e-12:
        return np.exp(2j * np.pi * np.outer(t, freqs)) @ gains
    # evenly spaced tones: a polynomial in exp(j 2 pi step t), evaluated by Horner
    z = np.exp(2j * np.pi * step[0] * t)
    acc = np.full(t.shape, gains[-1], dtype=complex)
    for g in gains[-2::-1]:
        acc = acc * z + g
    return acc * np.exp(2j * np.pi * freqs[0] * t)


def ofmt_pulse(bank: PulseBank, code) -> IqSignal:
    """Overlapped pulse ``h(t) sum_k gamma_k exp(j 2 pi fbar_k t)``.

    ``code`` is a SpreadingCode or a length-``L`` vector of gains.
    """
    g = _gains(code, bank.L)
    t = bank.h.t
    return bank.h.replace(bank.h.samples.real * _multitone(t, bank.ofmt_freqs, g))


def fmt_pulse(bank: PulseBank, gains) -> IqSignal:
    """Non-overlapped counterpart with ``N`` subcarriers spaced ``2/T``."""
    g = _gains(gains, bank.cfg.N)
    t = bank.h.t
    return bank.h.replace(bank.h.samples.real * _multitone(t, bank.fmt_freqs, g))


def _matched_response(p: IqSignal) -> IqSignal:
    rev = p.replace(np.conj(p.samples[::-1]), len(p) - 1 - p.origin_index)
    r = convolve(p, rev)
    return r.replace(r.samples / p.sample_rate)


def fmt_response(bank: PulseBank, gains) -> IqSignal:
    """``eta(t) = g(t) * g^*(-t)`` for the non-overlapped pulse."""
    return _matched_response(fmt_pulse(bank, gains))


def beta_bar(bank: PulseBank, t) -> np.ndarray:
    """``sum_k exp(j 2 pi fbar_k t)`` evaluated in closed form."""
    t = np.asarray(t, dtype=float)
    L = bank.L
    s = np.sin(np.pi * t / bank.cfg.T)
    out = np.empty(t.shape, dtype=complex)
    # fbar_k are symmetric about 0 so the sum is real: sin(pi L t)/sin(pi t)
    near = np.abs(s) < 1e-12
    out[~near] = np.sin(np.pi * L * t[~near] / bank.cfg.T) / s[~near]
    n = np.rint(t[near] / bank.cfg.T)
    out[near] = L * (-1.0) ** (n * (L - 1))
    return out


def aligned_term(bank: PulseBank) -> IqSignal:
    """``a(t) = beta_bar(t) rho(t)``, the sum of the aligned-band responses."""
    rho = bank.rho
    return rho.replace(beta_bar(bank, rho.t) * rho.samples.real)


def _adjacent_brackets(g: np.ndarray) -> np.ndarray:
    return np.conj(g[:-1]) * g[1:] + g[:-1] * np.conj(g[1:])


def cross_term(bank: PulseBank, code) -> IqSignal:
    """Adjacent-band cross term ``c(t)`` in factored form.

    ``c(t) = d(t) sum_{k<L-1} exp(j 2 pi fbar_k t) (g_k^* g_{k+1} + g_k g_{k+1}^*)``.
    """
    g = _gains(code, bank.L)
    d = bank.d
    br = _adjacent_brackets(g)
    if not np.any(br):
        return d.replace(np.zeros(len(d), dtype=complex))
    return d.replace(d.samples * _multitone(d.t, bank.ofmt_freqs[:-1], br))


def cross_term_direct(bank: PulseBank, code) -> IqSignal:
    """``c(t)`` from explicit convolutions of each adjacent subcarrier pair."""
    g = _gains(code, bank.L)
    h = bank.h
    fs = bank.fs
    t = h.t
    base = h.samples.real
    acc = None
    for k in range(bank.L - 1):
        hk = h.replace(base * np.exp(2j * np.pi * bank.ofmt_freqs[k] * t))
        hk1 = h.replace(base * np.exp(2j * np.pi * bank.ofmt_freqs[k + 1] * t))
        pair = convolve(hk, hk1)
        w = g[k] * np.conj(g[k + 1]) + np.conj(g[k]) * g[k + 1]
        term = w * pair.samples
        acc = term if acc is None else acc + term
    return pair.replace(acc / fs)


def system_response(bank: PulseBank, code) -> IqSignal:
    """Full matched response ``eta_bar(t) = g_bar(t) * g_bar^*(-t)``."""
    return _matched_response(ofmt_pulse(bank, code))


def pulse_spectrum(bank: PulseBank, code, nfft: int | None = None):
    """Frequencies and ``|G_bar(f)|^2`` of the overlapped pulse.

    The continuous-time Fourier transform is approximated by a zero-padded
    FFT scaled by the sample period.
    """
    g = ofmt_pulse(bank, code)
    n = nfft or 1 << int(np.ceil(np.log2(4 * len(g))))
    x = np.zeros(n, dtype=complex)
    x[:len(g)] = g.samples
    G = np.fft.fftshift(np.fft.fft(x)) / bank.fs
    f = np.fft.fftshift(np.fft.fftfreq(n, 1 / bank.fs))
    return f, np.abs(G) ** 2
