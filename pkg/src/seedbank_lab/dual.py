"""Block-counting dual: Gillespie simulation, wake-up times and exact oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Sequence

import numba
import numpy as np
from scipy import sparse
from scipy.sparse.linalg import expm_multiply, spsolve
from scipy.special import gamma as gamma_fn

from . import rng as rngmod
from .seedbank import Asymptotic, SeedBankSpec, gamma_of
from .system import SeedBankSystem

__all__ = [
    "DualState",
    "WakeTimeLaw",
    "DualPaths",
    "CoalescenceEstimate",
    "TailFit",
    "ActivityEstimate",
    "ExactDual",
    "gillespie_step",
    "simulate_lineages",
    "coalescence_probability",
    "sample_tau",
    "tau_tail_fit",
    "activity_asymptotics",
    "exact_dual_oracle",
]


@dataclass(frozen=True)
class DualState:
    """Lineage counts per effective site and elapsed time."""

    counts: np.ndarray
    t: float = 0.0

    def __post_init__(self) -> None:
        if np.any(self.counts < 0):
            raise ValueError("lineage counts must be nonnegative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _transition_rates(state: DualState, system: SeedBankSystem, d: float):
    c = state.counts.astype(float)
    moves = c * system.out_rates
    act = c[: system.n_sites]
    coal = d * act * (act - 1) / 2.0
    return moves, coal


def gillespie_step(
    state: DualState, system: SeedBankSystem, d: float, rng: np.random.Generator
) -> tuple[DualState, dict]:
    """Apply one exponential holding time and one transition of the dual."""
    moves, coal = _transition_rates(state, system, d)
    total = moves.sum() + coal.sum()
    if total <= 0:
        raise ValueError("no transition is enabled from this state")
    hold = rng.exponential(1.0 / total)
    counts = state.counts.copy()
    pick = rng.random() * total
    if pick < moves.sum():
        u = int(np.searchsorted(np.cumsum(moves), pick, side="right"))
        u = min(u, len(moves) - 1)
        row = system.rate_matrix.getrow(u)
        probs = row.data / row.data.sum()
        v = int(row.indices[min(np.searchsorted(np.cumsum(probs), rng.random(), "right"), len(probs) - 1)])
        counts[u] -= 1
        counts[v] += 1
        event = {"kind": "move", "from": u, "to": v, "dt": hold}
    else:
        pick -= moves.sum()
        i = int(np.searchsorted(np.cumsum(coal), pick, side="right"))
        i = min(i, len(coal) - 1)
        counts[i] -= 1
        event = {"kind": "coalescence", "site": i, "dt": hold}
    return DualState(counts, state.t + hold), event


@numba.njit(cache=True)
def _run_replicas(pos0, out_rate, dest, cum, n_sites, d, times, seeds, stop_at_one):
    R = seeds.shape[0]
    T = times.shape[0]
    L0 = pos0.shape[0]
    out = np.full((R, T, L0), -1, dtype=np.int64)
    first_coal = np.full(R, np.inf)
    width = dest.shape[1]
    pos = np.empty(L0, dtype=np.int64)
    for r in range(R):
        np.random.seed(seeds[r])
        for l in range(L0):
            pos[l] = pos0[l]
        nl = L0
        t = 0.0
        k = 0
        while k < T:
            move_total = 0.0
            for l in range(nl):
                move_total += out_rate[pos[l]]
            n_pairs = 0
            for a in range(nl):
                if pos[a] < n_sites:
                    for b in range(a + 1, nl):
                        if pos[b] == pos[a]:
                            n_pairs += 1
            total = move_total + d * n_pairs
            if total <= 0.0:
                tnext = np.inf
            else:
                tnext = t + np.random.exponential(1.0 / total)
            while k < T and tnext > times[k]:
                for l in range(nl):
                    out[r, k, l] = pos[l]
                k += 1
            if k >= T:
                break
            pick = np.random.random() * total
            if pick < move_total:
                l = 0
                acc = out_rate[pos[0]]
                while acc <= pick and l < nl - 1:
                    l += 1
                    acc += out_rate[pos[l]]
                u = pos[l]
                w = np.random.random()
                j = 0
                while j < width - 1 and cum[u, j] <= w:
                    j += 1
                pos[l] = dest[u, j]
            else:
                target = int((pick - move_total) / d)
                if target >= n_pairs:
                    target = n_pairs - 1
                seen = 0
                done = False
                for a in range(nl):
                    if done:
                        break
                    if pos[a] < n_sites:
                        for b in range(a + 1, nl):
                            if pos[b] == pos[a]:
                                if seen == target:
                                    pos[b] = pos[nl - 1]
                                    nl -= 1
                                    done = True
                                    break
                                seen += 1
                if first_coal[r] == np.inf:
                    first_coal[r] = tnext
            t = tnext
            if stop_at_one and nl == 1:
                for kk in range(k, T):
                    out[r, kk, 0] = pos[0]
                break
    return out, first_coal


@dataclass
class DualPaths:
    """Lineage positions (replicas, times, lineages); -1 marks merged lineages."""

    times: np.ndarray
    positions: np.ndarray
    first_coalescence: np.ndarray

    def counts(self, n_states: int) -> np.ndarray:
        R, T, _ = self.positions.shape
        out = np.zeros((R, T, n_states), dtype=np.int64)
        for l in range(self.positions.shape[2]):
            p = self.positions[:, :, l]
            ok = p >= 0
            r_idx, t_idx = np.nonzero(ok)
            np.add.at(out, (r_idx, t_idx, p[ok]), 1)
        return out

    def monomial(self, z: np.ndarray) -> np.ndarray:
        """prod_u z_u^{L_u(t)} per replica and time."""
        z = np.asarray(z, dtype=float)
        vals = np.where(self.positions >= 0, z[np.maximum(self.positions, 0)], 1.0)
        return vals.prod(axis=2)


def lineage_list(counts: Sequence[int] | np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.int64)
    return np.repeat(np.arange(len(counts)), counts)


def simulate_lineages(
    system: SeedBankSystem,
    d: float,
    initial: Sequence[int] | np.ndarray,
    times: Sequence[float],
    replicas: int,
    seed: int,
    stop_at_one: bool = False,
    tag: str = "dual",
) -> DualPaths:
    """Exact event-driven runs of the dual from initial lineage counts."""
    pos0 = lineage_list(initial)
    if pos0.size == 0:
        raise ValueError("need at least one lineage")
    ts = np.asarray(times, dtype=float)
    if np.any(np.diff(ts) <= 0) or np.any(ts < 0):
        raise ValueError("times must be increasing and nonnegative")
    dest, cum = system.jump_table
    seeds = rngmod.replica_seeds(seed, replicas, tag)
    pos, first = _run_replicas(
        pos0, system.out_rates, dest, cum, system.n_sites, float(d), ts, seeds, stop_at_one
    )
    return DualPaths(ts, pos, first)


@dataclass(frozen=True)
class CoalescenceEstimate:
    horizon: float
    probability: float
    se: float
    censored: float
    replicas: int


def coalescence_probability(
    system: SeedBankSystem,
    d: float,
    start: tuple[int, int],
    horizons: Sequence[float],
    replicas: int,
    seed: int,
) -> list[CoalescenceEstimate]:
    """Fraction of two-lineage runs that merge before each horizon.

    Runs still unmerged at a horizon are reported as censored.
    """
    counts = np.zeros(system.n_states, dtype=np.int64)
    for u in start:
        counts[u] += 1
    hs = np.asarray(sorted(horizons), dtype=float)
    paths = simulate_lineages(system, d, counts, hs[-1:], replicas, seed, stop_at_one=True,
                              tag="coalescence")
    out = []
    for h in hs:
        hit = paths.first_coalescence <= h
        p = float(hit.mean())
        out.append(CoalescenceEstimate(float(h), p, math.sqrt(p * (1 - p) / replicas),
                                       1.0 - p, replicas))
    return out


# ---------------------------------------------------------------- wake-up times


@dataclass(frozen=True)
class WakeTimeLaw:
    """Mixture law of the dormancy period and exponential activity period."""

    weights: np.ndarray
    rates: np.ndarray
    chi: float

    @classmethod
    def of(cls, sb: SeedBankSpec) -> "WakeTimeLaw":
        K, e = sb.colours()
        chi = float(np.sum(K * e))
        return cls(K * e / chi, e, chi)

    def survival(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.exp(-np.outer(t, self.rates)) @ self.weights

    def active_survival(self, t) -> np.ndarray:
        return np.exp(-self.chi * np.asarray(t, dtype=float))

    @property
    def mean(self) -> float:
        return float(np.sum(self.weights / self.rates))


def sample_tau(sb: SeedBankSpec, size: int, rng: np.random.Generator) -> np.ndarray:
    """Dormancy periods: colour m with probability K_m e_m / chi, then Exp(e_m)."""
    law = WakeTimeLaw.of(sb)
    cdf = np.cumsum(law.weights)
    cdf[-1] = 1.0
    m = np.searchsorted(cdf, rng.random(size), side="right")
    return rng.exponential(1.0, size) / law.rates[m]


@dataclass(frozen=True)
class TailFit:
    gamma_hat: float
    gamma_se: float
    C_hat: float
    window: tuple[float, float]
    n_samples: int
    n_in_window: int
    C_active_normalised: float | None
    C_density_form: float | None

    def as_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def tail_constants(sb: Asymptotic) -> tuple[float, float]:
    """The two candidate prefactors of P(tau > t) ~ C t^-gamma.

    First: A B^(1-gamma) Gamma(gamma) / (chi beta).  Second:
    (A / beta) B^(1-gamma) gamma Gamma(gamma).
    """
    g = sb.gamma
    c1 = sb.A * sb.B ** (1 - g) * gamma_fn(g) / (sb.chi * sb.beta)
    c2 = sb.A / sb.beta * sb.B ** (1 - g) * g * gamma_fn(g)
    return float(c1), float(c2)


def tau_tail_fit(
    samples: np.ndarray,
    sb: SeedBankSpec | None = None,
    decades: float = 2.0,
    min_exceed: int = 1000,
) -> TailFit:
    """Log-log regression of the empirical survival function over its upper decades.

    The window ends where ``min_exceed`` samples remain above it.  For a
    truncated asymptotic spec it also ends at 1/(10 e_{M-1}), beyond which the
    deepest colour cuts off exponentially, and where the survival mass lost
    to the dropped colours exceeds 5% of the empirical survival.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n <= min_exceed:
        raise ValueError("too few samples beyond the fit threshold")
    hi = x[n - min_exceed - 1]
    if isinstance(sb, Asymptotic):
        _, e = sb.colours()
        if sb.truncation < 1000:
            raise ValueError("tail fits need at least 1e3 colours")
        hi = min(hi, 0.1 / e[-1])
        # dropped colours remove survival mass of size neglected/chi; keep it below 5%
        floor = sb.neglected_rate / sb.chi
        if floor > 0:
            ok = x[(1.0 - np.arange(1, n + 1) / n) >= 20 * floor]
            hi = min(hi, ok[-1] if ok.size else 0.0)
    lo = hi / 10**decades
    sel = (x >= lo) & (x <= hi)
    if np.count_nonzero(x > hi) < min_exceed or np.count_nonzero(sel) < 10:
        raise ValueError("too few samples beyond the fit threshold")
    # subsample the step function on a log grid to avoid overweighting dense regions
    grid = np.geomspace(lo, hi, 60)
    s_grid = 1.0 - np.searchsorted(x, grid, side="right") / n
    lx, ls = np.log(grid), np.log(s_grid)
    coef, cov = np.polyfit(lx, ls, 1, cov=True)
    g_hat = -coef[0]
    C_hat = math.exp(coef[1])
    c1 = c2 = None
    if isinstance(sb, Asymptotic):
        c1, c2 = tail_constants(sb)
    return TailFit(float(g_hat), float(math.sqrt(cov[0, 0])), C_hat, (float(lo), float(hi)), n,
                   int(np.count_nonzero(sel)), c1, c2)


# ---------------------------------------------------------------- activity clock


@dataclass(frozen=True)
class ActivityEstimate:
    times: np.ndarray
    active_time: np.ndarray
    active_time_se: np.ndarray
    cycles: np.ndarray
    active_prob: np.ndarray
    active_prob_se: np.ndarray
    gamma: float | None
    replicas: int

    def normalised(self) -> tuple[np.ndarray, np.ndarray]:
        """T(t)/t (finite rho) or T(t)/t^gamma (infinite rho) with SE."""
        scale = self.times if self.gamma is None else self.times**self.gamma
        return self.active_time / scale, self.active_time_se / scale


def activity_asymptotics(
    sb: SeedBankSpec,
    times: Sequence[float],
    replicas: int,
    seed: int,
    start_active: bool = True,
) -> ActivityEstimate:
    """Alternating renewal clock of one lineage: active time T(t) and cycles N(t).

    Activity periods are Exp(chi) and dormancy periods follow the wake-up
    mixture; migration plays no role in the clock.
    """
    ts = np.asarray(times, dtype=float)
    if np.any(np.diff(ts) <= 0):
        raise ValueError("times must be increasing")
    law = WakeTimeLaw.of(sb)
    cdf = np.cumsum(law.weights)
    cdf[-1] = 1.0
    T_act = np.zeros((ts.size, replicas))
    cycles = np.zeros((ts.size, replicas))
    active_now = np.zeros((ts.size, replicas), dtype=bool)
    horizon = ts[-1]
    for start, size, gen in rngmod.blocks(seed, replicas, "activity"):
        clock = np.zeros(size)
        act_acc = np.zeros(size)
        ncyc = np.zeros(size)
        active = np.full(size, start_active)
        sl = slice(start, start + size)
        live = np.ones(size, dtype=bool)
        while live.any():
            idx = np.nonzero(live)[0]
            dur = np.empty(idx.size)
            a = active[idx]
            dur[a] = gen.exponential(1.0 / law.chi, a.sum())
            nd = (~a).sum()
            m = np.searchsorted(cdf, gen.random(nd), side="right")
            dur[~a] = gen.exponential(1.0, nd) / law.rates[m]
            t0, t1 = clock[idx], clock[idx] + dur
            for j, t in enumerate(ts):
                inside = (t0 <= t) & (t < t1)
                if inside.any():
                    rows = idx[inside]
                    part = np.where(a[inside], t - t0[inside], 0.0)
                    T_act[j, start + rows] = act_acc[rows] + part
                    cycles[j, start + rows] = ncyc[rows]
                    active_now[j, start + rows] = a[inside]
            act_acc[idx] += np.where(a, dur, 0.0)
            ncyc[idx] += np.where(a, 0, 1)
            clock[idx] = t1
            active[idx] = ~a
            live[idx] = t1 <= horizon
    root = math.sqrt(replicas)
    p = active_now.mean(axis=1)
    return ActivityEstimate(
        ts,
        T_act.mean(axis=1),
        T_act.std(axis=1, ddof=1) / root,
        cycles.mean(axis=1),
        p,
        np.sqrt(p * (1 - p) / replicas),
        gamma_of(sb),
        replicas,
    )


# ---------------------------------------------------------------- exact oracle


class ExactDual:
    """Dense enumeration of the block-counting chain from a given start."""

    def __init__(self, system: SeedBankSystem, d: float, initial: Sequence[int], limit: int = 20000):
        self.system = system
        self.d = float(d)
        init = tuple(int(c) for c in initial)
        if len(init) != system.n_states:
            raise ValueError("initial counts must cover every effective site")
        S = system.n_states
        n0 = sum(init)
        n_states = sum(math.comb(S + k - 1, k) for k in range(1, n0 + 1))
        if n_states > limit:
            raise ValueError(f"state space of {n_states} exceeds the oracle limit {limit}")
        states = []
        for k in range(n0, 0, -1):
            for combo in combinations_with_replacement(range(S), k):
                c = [0] * S
                for u in combo:
                    c[u] += 1
                states.append(tuple(c))
        self.states = states
        self.index = {s: i for i, s in enumerate(states)}
        self.start = self.index[init]
        self.counts = np.array(states, dtype=np.int64)
        b = system.rate_matrix.tocoo()
        rows, cols, vals = [], [], []
        n = system.n_sites
        for i, s in enumerate(states):
            for u, v, r in zip(b.row, b.col, b.data):
                if s[u] == 0:
                    continue
                t = list(s)
                t[u] -= 1
                t[v] += 1
                rows.append(i)
                cols.append(self.index[tuple(t)])
                vals.append(s[u] * r)
            for site in range(n):
                m = s[site]
                if m >= 2:
                    t = list(s)
                    t[site] -= 1
                    rows.append(i)
                    cols.append(self.index[tuple(t)])
                    vals.append(self.d * m * (m - 1) / 2)
        N = len(states)
        off = sparse.coo_matrix((vals, (rows, cols)), shape=(N, N)).tocsr()
        self.generator = (off - sparse.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()

    def distribution(self, t: float) -> np.ndarray:
        p0 = np.zeros(len(self.states))
        p0[self.start] = 1.0
        if t == 0:
            return p0
        return expm_multiply(self.generator.T * float(t), p0)

    def semigroup(self, t: float) -> np.ndarray:
        from scipy.linalg import expm

        return expm(self.generator.toarray() * float(t))

    def expectation(self, z: np.ndarray, t: float) -> float:
        """E[prod_u z_u^{L_u(t)}]."""
        h = np.prod(np.asarray(z, dtype=float)[None, :] ** self.counts, axis=1)
        return float(self.distribution(t) @ h)

    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def coalescence_probability(self, t: float) -> float:
        """Probability that at least one merger happened by time t."""
        n0 = self.totals()[self.start]
        return float(self.distribution(t)[self.totals() < n0].sum())

    def mean_coalescence_time(self) -> float:
        """Expected time of the first merger."""
        n0 = self.totals()[self.start]
        keep = np.nonzero(self.totals() == n0)[0]
        Q = self.generator[keep][:, keep]
        rhs = -np.ones(keep.size)
        sol = spsolve(Q.tocsc(), rhs)
        return float(sol[list(keep).index(self.start)])


def exact_dual_oracle(
    system: SeedBankSystem, d: float, initial: Sequence[int], limit: int = 20000
) -> ExactDual:
    return ExactDual(system, d, initial, limit)
