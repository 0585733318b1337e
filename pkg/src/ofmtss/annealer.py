"""
Simulated annealing over binary chip vectors.

Each move flips the sign of ``X ~ U{1..W}`` randomly chosen chips. Uphill
moves are accepted with probability ``exp(-delta / temperature)``. The chain
stays at one temperature until the cost has settled (relative standard
deviation over a window below a threshold, or an iteration cap), then the
temperature is lowered geometrically. The run ends once the best cost has
not improved for ``stall_temps`` consecutive temperatures.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numba
import numpy as np

from .errors import NumericalFailure, OfmtError

__all__ = [
    "AnnealConfig",
    "AnnealResult",
    "anneal",
    "anneal_many",
    "anneal_best",
    "metropolis_accept",
    "calibrate_temperature",
    "exhaustive_search",
]

CostFn = Callable[[np.ndarray], float]

EXHAUSTIVE_MAX_L = 20


@dataclass(frozen=True)
class AnnealConfig:
    W: int = 2
    initial_temp: float | None = None
    initial_accept: float = 0.8
    cooling_factor: float = 0.95
    equilibrium_window: int = 100
    equilibrium_std_tol: float = 0.02
    max_iters_per_temp: int = 2000
    stall_temps: int = 10
    max_temps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.W < 1:
            raise OfmtError("W must be >= 1")
        if not 0 < self.cooling_factor < 1:
            raise OfmtError("cooling_factor must be in (0, 1)")
        if not 0 < self.initial_accept < 1:
            raise OfmtError("initial_accept must be in (0, 1)")
        for name in ("equilibrium_window", "max_iters_per_temp", "stall_temps",
                     "max_temps"):
            if getattr(self, name) < 1:
                raise OfmtError(f"{name} must be >= 1")
        if self.initial_temp is not None and not self.initial_temp > 0:
            raise OfmtError("initial_temp must be positive")

    @classmethod
    def thorough(cls, **overrides) -> "AnnealConfig":
        """Longer schedule used for full-length (L >= 64) code design."""
        kw = dict(initial_accept=0.5, equilibrium_window=5000,
                  max_iters_per_temp=50000, stall_temps=15)
        kw.update(overrides)
        return cls(**kw)


@dataclass
class AnnealResult:
    best_zeta: np.ndarray
    best_cost: float
    cost_trace: list[tuple[float, float, float]]
    iterations: int
    seed: int
    meta: dict = field(default_factory=dict)

    def trace_csv(self) -> str:
        rows = ["temperature,best_cost,accept_rate"]
        rows += [f"{t!r},{c!r},{a!r}" for t, c, a in self.cost_trace]
        return "\n".join(rows) + "\n"


def metropolis_accept(delta: float, temperature: float,
                      rng: np.random.Generator | None = None,
                      u: float | None = None) -> bool:
    """Accept downhill moves always, uphill ones with ``exp(-delta/T)``.

    The uniform variate is drawn from ``rng`` unless ``u`` is supplied.
    """
    if delta <= 0:
        return True
    if u is None:
        u = rng.random()
    return u < math.exp(-delta / temperature)


def _flip_indices(L: int, W: int, rng: np.random.Generator) -> np.ndarray:
    x = int(rng.integers(1, min(W, L) + 1))
    return rng.choice(L, size=x, replace=False)


def _draw_moves(L: int, W: int, n: int, rng: np.random.Generator):
    """Pre-draw ``n`` moves: flip counts, distinct flip positions, uniforms."""
    W = min(W, L)
    counts = rng.integers(1, W + 1, size=n)
    pos = rng.integers(0, L, size=(n, W))
    if W > 1:
        dup = np.array([np.unique(r).size < W for r in pos]) if W > 2 else pos[:, 0] == pos[:, 1]
        for i in np.flatnonzero(dup):
            pos[i] = rng.choice(L, size=W, replace=False)
    return counts, pos, rng.random(n)


def _perturb(z: np.ndarray, W: int, rng: np.random.Generator) -> np.ndarray:
    idx = _flip_indices(z.size, W, rng)
    out = z.copy()
    out[idx] = -out[idx]
    return out


def _evaluate(cost: CostFn, z: np.ndarray) -> float:
    c = float(cost(z))
    if not math.isfinite(c):
        raise NumericalFailure(f"cost returned {c} for state {z.tolist()}")
    return c


def calibrate_temperature(cost: CostFn, z: np.ndarray, W: int,
                          rng: np.random.Generator, target: float = 0.8,
                          trials: int = 100) -> float:
    """Temperature at which uphill moves from ``z`` are accepted at ``target``.

    The rate is the mean of ``exp(-delta/T)`` over sampled uphill deltas and
    is solved for ``T`` by bisection in log space.
    """
    c0 = _evaluate(cost, z)
    ups = []
    for _ in range(trials):
        d = _evaluate(cost, _perturb(z, W, rng)) - c0
        if d > 0:
            ups.append(d)
    if not ups:
        return max(abs(c0), 1.0) * 1e-3
    ups = np.asarray(ups)
    lo, hi = np.log(ups.min() * 1e-3), np.log(ups.max() * 1e3)
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        rate = np.mean(np.exp(-ups / np.exp(mid)))
        if rate < target:
            lo = mid
        else:
            hi = mid
    return float(np.exp(0.5 * (lo + hi)))


def anneal(L: int, cost: CostFn, cfg: AnnealConfig = AnnealConfig(),
           init: np.ndarray | None = None) -> AnnealResult:
    """Minimize ``cost`` over ``{-1, +1}**L``.

    Deterministic for a given ``cfg.seed``.

    Raises
    ------
    NumericalFailure
        If the cost callback returns NaN or infinity.
    """
    if L < 2:
        raise OfmtError(f"L must be >= 2, got {L}")
    rng = np.random.default_rng(cfg.seed)
    if init is None:
        z = rng.choice(np.array([-1, 1], dtype=np.int8), size=L)
    else:
        z = np.asarray(init, dtype=np.int8).copy()
        if z.size != L:
            raise OfmtError("initial state has the wrong length")
    temp = cfg.initial_temp
    if temp is None:
        temp = calibrate_temperature(cost, z, cfg.W, rng, cfg.initial_accept)

    if getattr(cost, "kernel", None) in ("crest", "cyclic"):
        best_z, trace, iterations = _compiled_chain(L, cost, cfg, rng, z, temp)
        return AnnealResult(best_z, _evaluate(cost, best_z), trace, iterations,
                            cfg.seed, _meta(L, cfg, cost))

    # costs exposing reset/propose/commit are updated in place per move
    incremental = all(hasattr(cost, m) for m in ("reset", "propose", "commit"))
    c = float(cost.reset(z)) if incremental else _evaluate(cost, z)
    best_z, best_c = z.copy(), c

    trace: list[tuple[float, float, float]] = []
    iterations = 0
    stall = 0
    for _ in range(cfg.max_temps):
        prev_best = best_c
        if incremental:
            c = float(cost.reset(z))  # discard accumulated rounding
        window: list[float] = []
        accepted = 0
        n_here = 0
        counts, pos, uni = _draw_moves(L, cfg.W, cfg.max_iters_per_temp, rng)
        for it in range(cfg.max_iters_per_temp):
            idx = pos[it, :counts[it]]
            if incremental:
                cc = float(cost.propose(z, idx))
                if not math.isfinite(cc):
                    raise NumericalFailure(f"cost returned {cc}")
            else:
                cand = z.copy()
                cand[idx] = -cand[idx]
                cc = _evaluate(cost, cand)
            n_here += 1
            if metropolis_accept(cc - c, temp, u=uni[it]):
                if incremental:
                    cand = z.copy()
                    cand[idx] = -cand[idx]
                    cost.commit()
                z, c = cand, cc
                accepted += 1
                if c < best_c:
                    best_z, best_c = z.copy(), c
            window.append(c)
            if len(window) == cfg.equilibrium_window:
                w = np.asarray(window)
                m = abs(w.mean())
                if m == 0 or w.std() / m < cfg.equilibrium_std_tol:
                    break
                window.clear()
        iterations += n_here
        trace.append((temp, best_c, accepted / n_here))
        stall = stall + 1 if best_c >= prev_best else 0
        if stall >= cfg.stall_temps:
            break
        temp *= cfg.cooling_factor

    if incremental:
        # report the from-scratch value so best_cost == cost(best_zeta) exactly
        best_c = _evaluate(cost, best_z)
    return AnnealResult(best_z, best_c, trace, iterations, cfg.seed,
                        _meta(L, cfg, cost))


def _meta(L, cfg, cost) -> dict:
    m = {"L": L, "W": cfg.W, "cost": getattr(cost, "__name__", repr(cost))}
    if hasattr(cost, "density"):
        m["grid_density"] = cost.density
    return m


# Compiled chains for the two built-in costs. They consume the same pre-drawn
# moves as the generic loop in anneal(), so the Markov chain is identical.

@numba.njit(cache=True)
def _settled(win, tol):
    m = abs(win.mean())
    return m == 0 or win.std() / m < tol


@numba.njit(cache=True)
def _crest_sweep(z, tr, ti, w2, temp, counts, pos, uni, window, std_tol,
                 best_z, best_c):
    """One temperature of the chain for the (weighted) multitone crest cost.

    ``w2`` holds the squared weight of every grid point.

    ``z`` and ``best_z`` are updated in place. Returns
    ``(cost, best_cost, accepted, iterations)``.
    """
    L, G = tr.shape
    er = np.zeros(G)
    ei = np.zeros(G)
    for k in range(L):
        zk = float(z[k])
        for g in range(G):
            er[g] += zk * tr[k, g]
            ei[g] += zk * ti[k, g]
    pk = 0.0
    for g in range(G):
        pk = max(pk, (er[g] * er[g] + ei[g] * ei[g]) * w2[g])
    c = np.sqrt(pk / L)
    cr = np.empty(G)
    ci = np.empty(G)
    win = np.empty(window)
    nwin = 0
    accepted = 0
    it = 0
    while it < counts.size:
        cnt = counts[it]
        k0 = pos[it, 0]
        w0 = -2.0 * z[k0]
        pk = 0.0
        if cnt == 1:
            for g in range(G):
                a = er[g] + w0 * tr[k0, g]
                b = ei[g] + w0 * ti[k0, g]
                cr[g] = a
                ci[g] = b
                pk = max(pk, (a * a + b * b) * w2[g])
        else:
            cr[:] = er
            ci[:] = ei
            for j in range(1, cnt):
                k = pos[it, j]
                w = -2.0 * z[k]
                for g in range(G):
                    cr[g] += w * tr[k, g]
                    ci[g] += w * ti[k, g]
            for g in range(G):
                a = cr[g] + w0 * tr[k0, g]
                b = ci[g] + w0 * ti[k0, g]
                cr[g] = a
                ci[g] = b
                pk = max(pk, (a * a + b * b) * w2[g])
        cc = np.sqrt(pk / L)
        if not np.isfinite(cc):
            return np.nan, best_c, accepted, it + 1
        delta = cc - c
        if delta <= 0 or uni[it] < np.exp(-delta / temp):
            for j in range(cnt):
                z[pos[it, j]] = -z[pos[it, j]]
            er, cr = cr, er
            ei, ci = ci, ei
            c = cc
            accepted += 1
            if c < best_c:
                best_c = c
                best_z[:] = z
        win[nwin] = c
        nwin += 1
        it += 1
        if nwin == window:
            if _settled(win, std_tol):
                break
            nwin = 0
    return c, best_c, accepted, it


@numba.njit(cache=True)
def _cyclic_sweep(z, temp, counts, pos, uni, window, std_tol, best_z, best_c):
    """One temperature of the chain for the cyclic autocorrelation cost.

    Flipping the chips in a set ``F`` changes lag ``l`` by
    ``-2 sum_F z_f (z_{f+l} + z_{f-l}) + 4 sum_{f, f+l in F} z_f z_{f+l}``,
    so a move costs ``O(L |F|)``.
    """
    L = z.size
    r = np.zeros(L, dtype=np.int64)
    for l in range(L):
        for k in range(L):
            r[l] += z[k] * z[(k + l) % L]
    c = 0.0
    for l in range(1, L):
        c += float(r[l] * r[l])
    rn = np.empty(L, dtype=np.int64)
    inF = np.zeros(L, dtype=np.bool_)
    win = np.empty(window)
    nwin = 0
    accepted = 0
    it = 0
    while it < counts.size:
        cnt = counts[it]
        for j in range(cnt):
            inF[pos[it, j]] = True
        cc = 0.0
        for l in range(1, L):
            d = 0
            for j in range(cnt):
                f = pos[it, j]
                d -= 2 * z[f] * (z[(f + l) % L] + z[(f - l) % L])
                if inF[(f + l) % L]:
                    d += 4 * z[f] * z[(f + l) % L]
            rn[l] = r[l] + d
            cc += float(rn[l] * rn[l])
        for j in range(cnt):
            inF[pos[it, j]] = False
        delta = cc - c
        if delta <= 0 or uni[it] < np.exp(-delta / temp):
            for j in range(cnt):
                z[pos[it, j]] = -z[pos[it, j]]
            r[1:] = rn[1:]
            c = cc
            accepted += 1
            if c < best_c:
                best_c = c
                best_z[:] = z
        win[nwin] = c
        nwin += 1
        it += 1
        if nwin == window:
            if _settled(win, std_tol):
                break
            nwin = 0
    return c, best_c, accepted, it


def _compiled_chain(L, cost, cfg, rng, z, temp):
    z = z.astype(np.int64)
    if cost.kernel == "crest":
        tr, ti = cost.tone_tables
        w2 = cost.weight_squared
        sweep = lambda *a: _crest_sweep(z, tr, ti, w2, *a)  # noqa: E731
    else:
        sweep = lambda *a: _cyclic_sweep(z, *a)  # noqa: E731
    best_z = z.copy()
    best_c = _evaluate(cost, z)
    trace = []
    iterations = 0
    stall = 0
    for _ in range(cfg.max_temps):
        prev_best = best_c
        counts, pos, uni = _draw_moves(L, cfg.W, cfg.max_iters_per_temp, rng)
        c, best_c, accepted, n_here = sweep(
            temp, counts.astype(np.int64), pos.astype(np.int64), uni,
            cfg.equilibrium_window, cfg.equilibrium_std_tol, best_z, best_c)
        if not math.isfinite(c):
            raise NumericalFailure(f"cost became non-finite at state {z.tolist()}")
        iterations += n_here
        trace.append((temp, best_c, accepted / n_here))
        stall = stall + 1 if best_c >= prev_best else 0
        if stall >= cfg.stall_temps:
            break
        temp *= cfg.cooling_factor
    return best_z.astype(np.int8), trace, iterations


def _run_one(args):
    L, cost, cfg = args
    return anneal(L, cost, cfg)


def anneal_many(L: int, cost: CostFn, cfg: AnnealConfig, seeds: Sequence[int],
                jobs: int = 1) -> list[AnnealResult]:
    """Independent runs, one per seed; optionally across worker processes."""
    work = [(L, cost, replace(cfg, seed=int(s))) for s in seeds]
    if jobs <= 1:
        return [_run_one(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_run_one, work))


def anneal_best(L: int, cost: CostFn, cfg: AnnealConfig, seeds: Sequence[int],
                jobs: int = 1) -> AnnealResult:
    """Best of several independent runs (ties go to the earliest seed)."""
    runs = anneal_many(L, cost, cfg, seeds, jobs)
    return min(runs, key=lambda r: r.best_cost)


def _is_batched(cost) -> bool:
    return bool(getattr(cost, "batched", False)
                or getattr(getattr(cost, "func", None), "batched", False))


def exhaustive_search(L: int, cost: CostFn, tol: float = 1e-12) -> tuple[np.ndarray, float]:
    """Global minimizer of a negation-invariant cost over ``{-1, +1}**L``.

    Only vectors with ``zeta_0 = +1`` are visited. Among minimizers (costs
    within ``tol`` of the minimum) the lexicographically smallest vector,
    ordering -1 before +1, is returned.
    """
    if L < 1:
        raise OfmtError("L must be >= 1")
    if L > EXHAUSTIVE_MAX_L:
        raise OfmtError(
            f"exhaustive search over 2**{L - 1} vectors refused (limit L <= "
            f"{EXHAUSTIVE_MAX_L})")
    n = 1 << (L - 1)
    if _is_batched(cost):
        best_c, best_i = math.inf, -1
        block = 1 << 14
        weights = 1 << np.arange(L - 2, -1, -1, dtype=np.int64)
        for start in range(0, n, block):
            ids = np.arange(start, min(start + block, n), dtype=np.int64)
            bits = (ids[:, None] & weights[None, :]) > 0
            Z = np.ones((ids.size, L), dtype=np.int8)
            Z[:, 1:] = np.where(bits, 1, -1)
            cs = np.asarray(cost(Z), dtype=float)
            if not np.all(np.isfinite(cs)):
                raise NumericalFailure("cost returned a non-finite value")
            i = int(np.argmin(cs))
            if cs[i] < best_c - tol:
                best_c, best_i = float(cs[i]), int(ids[i])
        bits = [(best_i >> (L - 2 - k)) & 1 for k in range(L - 1)]
        z = np.array([1] + [1 if b else -1 for b in bits], dtype=np.int8)
        return z, best_c
    best_c, best_z = math.inf, None
    for tail in itertools.product((-1, 1), repeat=L - 1):
        z = np.array((1,) + tail, dtype=np.int8)
        c = _evaluate(cost, z)
        if c < best_c - tol:
            best_c, best_z = c, z
    return best_z, best_c
