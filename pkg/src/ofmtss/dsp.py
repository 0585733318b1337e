"""
Signal containers and basic measurements.

Every continuous-time quantity in the package (pulses, composite responses,
transmit signals) lives on a uniform grid inside an :class:`IqSignal`. The
symbol interval is normalized to ``T = 1`` so a sample rate of ``fs`` means
``fs`` samples per symbol interval.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .errors import OfmtError, RateMismatchError, UndefinedMetricError

__all__ = [
    "IqSignal",
    "SpectrumEstimate",
    "convolve",
    "crest_factor",
    "papr_db",
    "estimate_psd",
    "forward_fft",
    "inverse_fft",
    "write_iq",
    "read_iq",
]


@dataclass(frozen=True)
class IqSignal:
    """Complex baseband samples on a uniform grid.

    Attributes
    ----------
    samples : ndarray of complex
        Sample values.
    sample_rate : float
        Samples per second (per symbol interval, since ``T = 1``).
    origin_index : int
        Index of the sample that sits at ``t = 0``.
    """

    samples: np.ndarray
    sample_rate: float
    origin_index: int = 0
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=complex)
        if x.ndim != 1:
            raise OfmtError("samples must be one-dimensional")
        if not self.sample_rate > 0:
            raise OfmtError(f"sample_rate must be positive, got {self.sample_rate}")
        if x.size and not np.all(np.isfinite(x)):
            raise OfmtError("samples contain NaN or Inf")
        if x.size and not 0 <= self.origin_index < x.size:
            raise OfmtError(
                f"origin_index {self.origin_index} outside [0, {x.size})")
        object.__setattr__(self, "samples", x)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def t(self) -> np.ndarray:
        """Time of every sample, in units of T."""
        return (np.arange(self.samples.size) - self.origin_index) / self.sample_rate

    def at(self, t: float) -> complex:
        """Sample value at grid time ``t`` (zero outside the support)."""
        i = self.origin_index + int(round(t * self.sample_rate))
        if 0 <= i < self.samples.size:
            return complex(self.samples[i])
        return 0j

    def energy(self) -> float:
        """Continuous-time energy, ``integral |x(t)|^2 dt``."""
        return float(np.sum(np.abs(self.samples) ** 2) / self.sample_rate)

    def replace(self, samples, origin_index: int | None = None) -> "IqSignal":
        return IqSignal(samples, self.sample_rate,
                        self.origin_index if origin_index is None else origin_index,
                        dict(self.meta))


@dataclass(frozen=True)
class SpectrumEstimate:
    frequencies: np.ndarray
    psd: np.ndarray
    resolution_bw: float
    segment_count: int

    def band(self, lo: float, hi: float) -> np.ndarray:
        """PSD values with ``lo <= f <= hi``."""
        sel = (self.frequencies >= lo) & (self.frequencies <= hi)
        return self.psd[sel]

    def value_at(self, f: float) -> float:
        return float(self.psd[np.argmin(np.abs(self.frequencies - f))])


def convolve(a: IqSignal, b: IqSignal) -> IqSignal:
    """Full discrete linear convolution of two signals on the same grid.

    Origins add, so ``t = 0`` stays aligned. The sum is not scaled by the
    sample period; divide by ``sample_rate`` to approximate the
    continuous-time integral.
    """
    if not np.isclose(a.sample_rate, b.sample_rate, rtol=1e-12, atol=0):
        raise RateMismatchError(
            f"sample rates differ: {a.sample_rate} vs {b.sample_rate}")
    if len(a) == 0 or len(b) == 0:
        raise OfmtError("cannot convolve an empty signal")
    if min(len(a), len(b)) < 64:
        y = np.convolve(a.samples, b.samples)
    else:
        y = sps.fftconvolve(a.samples, b.samples)
    return IqSignal(y, a.sample_rate,
                    a.origin_index + b.origin_index)


def _magnitudes(x) -> np.ndarray:
    v = x.samples if isinstance(x, IqSignal) else np.asarray(x)
    if v.size == 0:
        raise UndefinedMetricError("empty signal")
    return np.abs(v)


def crest_factor(x) -> float:
    """Peak amplitude over RMS amplitude. Accepts an IqSignal or array."""
    mag = _magnitudes(x)
    rms = np.sqrt(np.mean(mag ** 2))
    if rms == 0:
        raise UndefinedMetricError("crest factor undefined for an all-zero signal")
    return float(mag.max() / rms)


def papr_db(x) -> float:
    """Peak-to-average power ratio in dB."""
    p = _magnitudes(x) ** 2
    mean = p.mean()
    if mean == 0:
        raise UndefinedMetricError("PAPR undefined for an all-zero signal")
    return float(10 * np.log10(p.max() / mean))


def _check_pow2(n: int):
    if n < 1 or n & (n - 1):
        raise OfmtError(f"transform length must be a power of two, got {n}")


def forward_fft(x) -> np.ndarray:
    """Unitary DFT (``norm='ortho'``) restricted to power-of-two lengths."""
    x = np.asarray(x, dtype=complex)
    _check_pow2(x.shape[-1])
    return np.fft.fft(x, norm="ortho")


def inverse_fft(X) -> np.ndarray:
    X = np.asarray(X, dtype=complex)
    _check_pow2(X.shape[-1])
    return np.fft.ifft(X, norm="ortho")


def estimate_psd(x: IqSignal, segment_len: int, overlap: float = 0.5,
                 nfft: int | None = None) -> SpectrumEstimate:
    """Averaged periodogram with a periodic Hann window.

    The estimate is two-sided, centred on 0 Hz, and scaled as a density so
    that ``sum(psd) * df`` equals the mean power of ``x``.

    Parameters
    ----------
    x : IqSignal
    segment_len : int
        Samples per segment. ``len(x)`` must be at least twice this.
    overlap : float
        Fractional overlap between segments, in [0, 1).
    nfft : int, optional
        Transform length; defaults to the next power of two at or above
        ``segment_len`` (extra length is zero padding).
    """
    n = len(x)
    if segment_len < 2 or n < 2 * segment_len:
        raise OfmtError(
            f"segment_len={segment_len} too long for a {n}-sample signal")
    if not 0 <= overlap < 1:
        raise OfmtError("overlap must be in [0, 1)")
    if nfft is None:
        nfft = 1 << int(np.ceil(np.log2(segment_len)))
    noverlap = int(round(overlap * segment_len))
    fs = x.sample_rate
    f, p = sps.welch(x.samples, fs=fs, window="hann", nperseg=segment_len,
                     noverlap=noverlap, nfft=nfft, return_onesided=False,
                     detrend=False, scaling="density")
    f = np.fft.fftshift(f)
    p = np.fft.fftshift(p)
    if nfft % 2 == 0:
        # drop the unpaired -fs/2 bin so the grid is symmetric about 0
        f, p = f[1:], p[1:]
    step = segment_len - noverlap
    count = (n - segment_len) // step + 1
    return SpectrumEstimate(f, np.maximum(p, 0.0), fs / nfft, count)


def write_iq(sig: IqSignal, path) -> tuple[Path, Path]:
    """Write interleaved little-endian float32 I/Q plus a JSON header.

    Returns the data and header paths (``<path>`` and ``<path>.json``).
    """
    path = Path(path)
    inter = np.empty(2 * len(sig), dtype="<f4")
    inter[0::2] = sig.samples.real
    inter[1::2] = sig.samples.imag
    inter.tofile(path)
    header = path.with_name(path.name + ".json")
    header.write_text(json.dumps({
        "sample_rate": sig.sample_rate,
        "origin_index": sig.origin_index,
        "length": len(sig),
    }, indent=2))
    return path, header


def read_iq(path) -> IqSignal:
    path = Path(path)
    header = json.loads(path.with_name(path.name + ".json").read_text())
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != 2 * header["length"]:
        raise OfmtError(
            f"{path}: expected {header['length']} I/Q pairs, found {raw.size / 2}")
    return IqSignal(raw[0::2] + 1j * raw[1::2], float(header["sample_rate"]),
                    int(header["origin_index"]))
