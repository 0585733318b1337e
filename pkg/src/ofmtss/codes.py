"""
Spreading codes for the overlapped waveform.

Adjacent overlapping subcarriers cancel each other's interference only when
consecutive gains are in phase quadrature. Up to a global phase that leaves
``gamma = b * zeta`` with ``b_k = j**k`` and binary chips ``zeta_k``, so a
code is fully described by its +/-1 chip vector.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import hadamard

from .errors import IciConstraintError, OfmtError

__all__ = [
    "SpreadingCode",
    "MultiCodeSet",
    "quadrature_ramp",
    "build_code",
    "validate_ici_free",
    "cyclic_autocorr",
    "cyclic_autocorr_cost",
    "multitone_envelope",
    "crest_cost",
    "CrestCost",
    "frame_peak_cost",
    "make_circular_set",
    "make_hadamard_set",
    "cross_corr_histogram",
    "save_code",
    "load_code",
]

DESIGNERS = ("sa-crest", "sa-cyclic", "manual")


def quadrature_ramp(L: int) -> np.ndarray:
    """``b = [1, j, j**2, ..., j**(L-1)]`` computed exactly."""
    return np.array([1, 1j, -1, -1j])[np.arange(L) % 4]


def _as_chips(zeta) -> np.ndarray:
    z = np.asarray(zeta)
    if z.ndim != 1 or z.size == 0:
        raise OfmtError("chip vector must be a non-empty 1-D sequence")
    if not np.all((z == 1) | (z == -1)):
        raise OfmtError("chips must all be +1 or -1")
    return z.astype(np.int8)


@dataclass(frozen=True)
class SpreadingCode:
    """Binary chip vector and the complex gains derived from it."""

    zeta: np.ndarray
    phi: float = 0.0
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def L(self) -> int:
        return self.zeta.size

    @property
    def gamma(self) -> np.ndarray:
        g = quadrature_ramp(self.L) * self.zeta
        if self.phi:
            g = g * np.exp(1j * self.phi)
        return g

    def shifted(self, ell: int) -> "SpreadingCode":
        """Code whose chips are ``zeta`` rotated left by ``ell``."""
        return SpreadingCode(np.roll(self.zeta, -ell), self.phi)


def build_code(zeta, phi: float = 0.0) -> SpreadingCode:
    """Create a code from +/-1 chips; the result always passes the ICI check."""
    code = SpreadingCode(_as_chips(zeta), float(phi))
    ok, resid = validate_ici_free(code.gamma)
    if not ok:  # unreachable for binary chips, kept as a guard
        raise IciConstraintError(f"constructed gains fail ICI check ({resid})")
    return code


def validate_ici_free(gamma, tol: float = 1e-9) -> tuple[bool, float]:
    """Check ``conj(g_k) g_{k+1} + g_k conj(g_{k+1}) = 0`` for all ``k``.

    Returns ``(passed, max_residual)``. Gains must have unit magnitude.
    """
    g = np.asarray(getattr(gamma, "gamma", gamma), dtype=complex).ravel()
    if g.size == 0:
        raise OfmtError("empty gain vector")
    if np.max(np.abs(np.abs(g) - 1)) > tol:
        raise OfmtError("spreading gains must have unit amplitude")
    if g.size == 1:
        return True, 0.0
    br = np.conj(g[:-1]) * g[1:] + g[:-1] * np.conj(g[1:])
    resid = float(np.abs(br).max())
    return resid < tol, resid


def cyclic_autocorr(zeta) -> np.ndarray:
    """All cyclic autocorrelations ``zeta_0 . zeta_l`` for ``l = 0..L-1``."""
    z = np.asarray(zeta, dtype=float)
    return np.rint(np.fft.ifft(np.abs(np.fft.fft(z)) ** 2).real)


def cyclic_autocorr_cost(zeta):
    """Sum of squared nonzero-lag cyclic autocorrelations.

    A 2-D input is treated as one chip vector per row.
    """
    z = np.asarray(zeta, dtype=float)
    r = np.rint(np.fft.ifft(np.abs(np.fft.fft(z, axis=-1)) ** 2, axis=-1).real)
    J = np.sum(r[..., 1:] ** 2, axis=-1)
    return float(J) if z.ndim == 1 else J


def multitone_envelope(gains, density: int = 16) -> np.ndarray:
    """Samples of ``sum_k g_k exp(j 2 pi k t)`` over one period.

    The grid has ``density * L`` points. A frequency offset common to all
    tones does not change the envelope, so the baseband grid is used.
    """
    g = np.asarray(getattr(gains, "gamma", gains), dtype=complex)
    n = density * g.size
    return np.fft.ifft(g, n) * n


def crest_cost(zeta, density: int = 16):
    """Crest factor of the multitone built from ``b * zeta``.

    Because ``b`` only shifts the multitone in time, the real chips are
    used directly. A 2-D input is treated as one chip vector per row.
    """
    z = np.asarray(zeta, dtype=float)
    n = density * z.shape[-1]
    env = np.abs(np.fft.ifft(z, n, axis=-1))
    cf = env.max(axis=-1) / np.sqrt(np.mean(env ** 2, axis=-1))
    return float(cf) if z.ndim == 1 else cf


class CrestCost:
    """Crest-factor cost with cheap evaluation of chip flips.

    Calling the object evaluates a chip vector from scratch. The
    ``reset/propose/commit`` protocol keeps the multitone samples of the
    current state and updates them in ``O(flips * grid)``: flipping chip
    ``k`` subtracts ``2 zeta_k exp(j 2 pi k t)`` from every grid sample. By
    Parseval the mean power over a full-period grid is exactly ``L``, so
    only the peak has to be tracked.

    An optional non-negative ``weight`` (one value per grid point) turns
    the cost into ``max |m(t)| w(t) / sqrt(L)``; see :func:`frame_peak_cost`.
    """

    batched = True
    kernel = "crest"

    def __init__(self, L: int, density: int = 16, weight=None):
        self.L = L
        self.density = density
        n = density * L
        k = np.arange(L)
        self._tones = np.exp(2j * np.pi * np.outer(k, np.arange(n)) / n)
        if weight is None:
            self._w2 = np.ones(n)
        else:
            w = np.asarray(weight, dtype=float)
            if w.shape != (n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
                raise OfmtError(f"weight must be {n} finite non-negative values")
            self._w2 = w ** 2
        self.weighted = weight is not None
        self._env = None
        self._cand = None
        self._tables = None

    def __call__(self, zeta):
        if not self.weighted:
            return crest_cost(zeta, self.density)
        z = np.asarray(zeta, dtype=float)
        n = self.density * z.shape[-1]
        p = np.abs(np.fft.ifft(z, n, axis=-1) * n) ** 2 * self._w2
        c = np.sqrt(p.max(axis=-1) / z.shape[-1])
        return float(c) if z.ndim == 1 else c

    def __repr__(self):
        kind = "weighted, " if self.weighted else ""
        return f"CrestCost(L={self.L}, {kind}density={self.density})"

    @property
    def weight_squared(self) -> np.ndarray:
        return self._w2

    @property
    def tone_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """Real and imaginary parts of the tone table, C-contiguous."""
        if self._tables is None:
            self._tables = (np.ascontiguousarray(self._tones.real),
                            np.ascontiguousarray(self._tones.imag))
        return self._tables

    def reset(self, zeta) -> float:
        self._env = np.asarray(zeta, dtype=float) @ self._tones
        return self._peak(self._env)

    def propose(self, zeta, idx) -> float:
        """Cost after flipping ``zeta[idx]``; ``zeta`` is the current state."""
        w = -2.0 * np.asarray(zeta, dtype=float)[idx]
        self._cand = self._env + w @ self._tones[idx]
        return self._peak(self._cand)

    def commit(self):
        self._env = self._cand

    def _peak(self, env) -> float:
        p = (env.real ** 2 + env.imag ** 2) * self._w2
        return float(np.sqrt(p.max() / self.L))


def frame_peak_cost(bank, density: int = 16) -> CrestCost:
    """Bound on the crest factor of a single-code QPSK frame.

    A single-code frame factors as ``x(t) = m_bar(t) u(t)`` with the
    baseband data signal ``u(t) = sum_n s_n (-1)**n h(t - n)``. For unit
    modulus symbols ``|u(t)| <= W(t) = sum_n |h(t - n)|``, so

        crest(x) <= max_t |m_bar(t)| W(t) / sqrt(L).

    ``|m_bar(t)| = |m_zeta(t + 1/4)|`` where ``m_zeta`` is the multitone of
    the real chips, so the weight on the chip-multitone grid is
    ``W(t - 1/4)``. Unlike the plain crest factor this bound depends on
    where the envelope peaks fall relative to the symbol instants.
    """
    from .pulse import srrc
    cfg = bank.cfg
    L = cfg.L
    n = density * L
    t = np.arange(n) / n - 0.25
    span = cfg.span_symbols
    h = bank.h.samples.real
    scale = np.max(np.abs(h)) / abs(srrc(np.array([0.0]), cfg.alpha, cfg.T)[0])
    W = np.zeros(n)
    for k in range(-span - 1, span + 2):
        tau = t - k
        inside = np.abs(tau) <= span
        W[inside] += np.abs(srrc(tau[inside], cfg.alpha, cfg.T)) * scale
    return CrestCost(L, density, weight=W)


@dataclass(frozen=True)
class MultiCodeSet:
    """A base code plus a selection of ``M`` derived codes.

    ``shifts[i]`` is the chip vector of code ``i`` of the full family and
    ``active`` lists the family indices that are in use. For the circular
    family the index is the rotation amount.
    """

    base: SpreadingCode
    shifts: np.ndarray
    active: np.ndarray
    kind: str
    dft_of_base: np.ndarray

    @property
    def L(self) -> int:
        return self.base.L

    @property
    def M(self) -> int:
        return self.active.size

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.M)) + 1

    @property
    def active_chips(self) -> np.ndarray:
        """``(M, L)`` chip matrix of the codes in use."""
        return self.shifts[self.active]

    @property
    def active_gains(self) -> np.ndarray:
        return self.active_chips * quadrature_ramp(self.L)


def _check_M(M: int, L: int):
    if M < 1 or M & (M - 1):
        raise OfmtError(f"number of codes must be a power of two, got {M}")
    if M > L:
        raise OfmtError(f"number of codes {M} exceeds code length {L}")


def make_circular_set(base: SpreadingCode, M: int) -> MultiCodeSet:
    """All ``L`` rotations of the base code, ``M`` of them active.

    Active rotations are spaced ``L / M`` apart, which maximizes the
    smallest distance between them.
    """
    L = base.L
    _check_M(M, L)
    if L % M:
        raise OfmtError(f"M={M} must divide L={L}")
    idx = np.arange(L)
    shifts = base.zeta[(idx[:, None] + idx[None, :]) % L]
    active = np.arange(M) * (L // M)
    return MultiCodeSet(base, shifts, active, "circular",
                        np.fft.fft(base.zeta.astype(float)))


def make_hadamard_set(base: SpreadingCode, M: int) -> MultiCodeSet:
    """Base chips multiplied by the first ``M`` Sylvester-Hadamard columns."""
    L = base.L
    if L & (L - 1):
        raise OfmtError(f"Hadamard sets need a power-of-two length, got {L}")
    _check_M(M, L)
    H = hadamard(L).astype(np.int8)
    shifts = (H.T * base.zeta[None, :]).astype(np.int8)
    return MultiCodeSet(base, shifts, np.arange(M), "hadamard",
                        np.fft.fft(base.zeta.astype(float)))


def cross_corr_histogram(cset: MultiCodeSet, active_only: bool = False) -> dict[int, int]:
    """Count of ``|zeta_i . zeta_j|`` over all unordered pairs ``i != j``.

    By default every member of the family is included, not only the active
    ones.
    """
    Z = (cset.active_chips if active_only else cset.shifts).astype(np.int64)
    G = np.abs(Z @ Z.T)
    iu = np.triu_indices(Z.shape[0], k=1)
    return dict(sorted(Counter(G[iu].tolist()).items()))


def save_code(code: SpreadingCode, path, designer: str = "manual",
              seed: int | None = None, cost: float | None = None) -> Path:
    if designer not in DESIGNERS:
        raise OfmtError(f"designer must be one of {DESIGNERS}")
    path = Path(path)
    path.write_text(json.dumps({
        "L": code.L,
        "phi": code.phi,
        "zeta": code.zeta.astype(int).tolist(),
        "designer": designer,
        "seed": seed,
        "cost": cost,
    }, indent=1))
    return path


def load_code(path) -> SpreadingCode:
    """Read a code file. Raises OfmtError for malformed content."""
    try:
        doc = json.loads(Path(path).read_text())
        zeta = doc["zeta"]
        L = int(doc["L"])
        phi = float(doc.get("phi", 0.0))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise OfmtError(f"cannot read code file {path}: {exc}") from exc
    if len(zeta) != L:
        raise OfmtError(f"code file {path}: L={L} but {len(zeta)} chips")
    code = build_code(zeta, phi)
    return SpreadingCode(code.zeta, code.phi,
                         {k: doc.get(k) for k in ("designer", "seed", "cost")})


# both costs accept a (batch, L) array; exhaustive search relies on this
crest_cost.batched = True
cyclic_autocorr_cost.batched = True
# the annealer runs a compiled incremental chain for costs tagged with a kernel
cyclic_autocorr_cost.kernel = "cyclic"
