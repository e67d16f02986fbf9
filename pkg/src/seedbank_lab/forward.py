"""Euler-Maruyama integration of the spatial seed-bank diffusions.

The drift of every coordinate u of the effective space is ``(Q z)_u`` with
Q the lineage generator of :class:`SeedBankSystem`; the active coordinates
additionally carry the noise ``sqrt(g(x_i)) dw_i``.  With this convention the
generator is ``drift . grad + (1/2) g d^2/dx^2`` on active coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.special import ndtr

from . import rng as rngmod
from .system import SeedBankSystem

__all__ = [
    "DiffusionFunction",
    "SystemState",
    "Monomial",
    "ForwardRun",
    "LyapunovPath",
    "drift",
    "em_step",
    "default_dt",
    "simulate",
    "theta_trajectory",
    "coupled_simulate",
    "generator_apply",
    "second_moment_formula",
    "constant_init",
    "uniform_init",
]


@dataclass(frozen=True)
class DiffusionFunction:
    """Resampling diffusion function g on [0, 1]."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    lipschitz: float
    fw_scale: float | None = None

    def __call__(self, x):
        return self.fn(x)

    @classmethod
    def fisher_wright(cls, d: float = 1.0) -> "DiffusionFunction":
        if d <= 0:
            raise ValueError("Fisher-Wright scale d must be positive")
        return cls(f"fisher_wright({d})", lambda x: d * x * (1 - x), float(d), float(d))

    @classmethod
    def kimura_ohta(cls, d: float = 1.0) -> "DiffusionFunction":
        if d <= 0:
            raise ValueError("Kimura-Ohta scale d must be positive")
        # max |d/dx [x(1-x)]^2| = 2 max |x(1-x)(1-2x)| = sqrt(3)/9
        return cls(f"kimura_ohta({d})", lambda x: d * (x * (1 - x)) ** 2, d * math.sqrt(3) / 9)

    @classmethod
    def tabulated(cls, xs: Sequence[float], gs: Sequence[float]) -> "DiffusionFunction":
        xs = np.asarray(xs, dtype=float)
        gs = np.asarray(gs, dtype=float)
        if xs[0] != 0 or xs[-1] != 1 or np.any(np.diff(xs) <= 0):
            raise ValueError("tabulation grid must increase from 0 to 1")
        lip = float(np.max(np.abs(np.diff(gs) / np.diff(xs))))
        g = cls("tabulated", lambda x: np.interp(x, xs, gs), lip)
        g.validate(xs)
        return g

    def validate(self, grid: Sequence[float] | None = None) -> None:
        """Check g(0) = g(1) = 0, positivity inside and the Lipschitz bound."""
        grid = np.linspace(0, 1, 1001) if grid is None else np.asarray(grid, dtype=float)
        vals = np.asarray(self(grid), dtype=float)
        ends = np.asarray(self(np.array([0.0, 1.0])), dtype=float)
        if np.any(np.abs(ends) > 1e-14):
            raise ValueError(f"{self.name}: g must vanish at 0 and 1")
        inner = (grid > 0) & (grid < 1)
        if np.any(vals[inner] <= 0):
            raise ValueError(f"{self.name}: g must be positive on (0, 1)")
        slopes = np.abs(np.diff(vals) / np.diff(grid))
        if np.any(slopes > self.lipschitz * (1 + 1e-9) + 1e-12):
            raise ValueError(f"{self.name}: Lipschitz bound {self.lipschitz} violated")


@dataclass(frozen=True)
class SystemState:
    """Active layer x (n,), dormant layers y (M, n), time t."""

    x: np.ndarray
    y: np.ndarray
    t: float = 0.0

    def __post_init__(self) -> None:
        for arr in (self.x, self.y):
            if np.any(arr < 0) or np.any(arr > 1):
                raise ValueError("state entries must lie in [0, 1]")
        if self.y.ndim != 2 or self.y.shape[1] != self.x.shape[0]:
            raise ValueError("dormant layers must have shape (colours, sites)")

    @classmethod
    def from_vector(cls, system: SeedBankSystem, z: np.ndarray, t: float = 0.0) -> "SystemState":
        x, y = system.split(np.asarray(z, dtype=float))
        return cls(np.array(x), np.array(y), t)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.y.ravel()])


def drift(state: SystemState, system: SeedBankSystem) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate drift (active, dormant) of the state."""
    dz = system.generator @ state.vector()
    x, y = system.split(dz)
    return np.array(x), np.array(y)


def _guard(system: SeedBankSystem, dt: float) -> None:
    if dt <= 0:
        raise ValueError("time step must be positive")
    load = dt * (system.kernel.total_rate + system.chi)
    if load > 0.1:
        raise ValueError(
            f"time step {dt} too large: dt * (migration rate + chi) = {load:.3g} > 0.1"
        )


def default_dt(system: SeedBankSystem, g: DiffusionFunction) -> float:
    return 0.01 / (system.kernel.total_rate + system.chi + g.lipschitz)


def _noise_scale(g: DiffusionFunction, x: np.ndarray, dt: float) -> np.ndarray:
    return np.sqrt(np.maximum(g(x), 0.0) * dt)


def _bounded_increment(y: np.ndarray, sigma: np.ndarray, xi: np.ndarray) -> tuple[np.ndarray, int]:
    """Mean-zero increments of variance sigma^2 that keep y + increment in [0, 1].

    Gaussian away from the boundary.  Within six sigma of it the increment is
    two-point: +-sigma when that fits, otherwise a jump onto the near boundary
    balanced by a small step the other way.  The uniform needed for the
    asymmetric choice is Phi(xi), so no extra random numbers are drawn.
    Returns the increments and the number of entries that still had to be clamped.
    """
    inc = sigma * xi
    near = (y < 6 * sigma) | (1 - y < 6 * sigma)
    if not near.any():
        return inc, 0
    yn, sn, xn = y[near], sigma[near], xi[near]
    var = sn * sn
    lo, hi = yn, 1 - yn
    out = np.where(xn >= 0, sn, -sn)
    asym = (sn > lo) | (sn > hi)
    if asym.any():
        u = ndtr(xn[asym])
        l, h, v = lo[asym], hi[asym], var[asym]
        low_side = l <= h
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            a = np.where(low_side, l, v / h)  # jump down
            b = np.where(low_side, v / l, h)  # jump up
            down = u < b / (a + b)
        out[asym] = np.where(down, -a, b)
    res = yn + out
    # a mean-zero step from y inside [0, 1] has variance at most y (1 - y)
    bad = ~np.isfinite(res) | (res < 0) | (res > 1) | (var > lo * hi * (1 + 1e-12))
    if bad.any():
        res[bad] = np.clip(yn[bad] + sn[bad] * xn[bad], 0.0, 1.0)
    inc[near] = res - yn
    return inc, int(np.count_nonzero(bad))


def em_step(
    state: SystemState,
    system: SeedBankSystem,
    g: DiffusionFunction,
    dt: float,
    rng: np.random.Generator,
) -> SystemState:
    """One Euler-Maruyama step; noise near 0 and 1 is bounded but keeps mean and variance."""
    _guard(system, dt)
    z = state.vector()
    n = system.n_sites
    z_new = z + dt * (system.generator @ z)
    x = z_new[:n]
    inc, _ = _bounded_increment(x, _noise_scale(g, x, dt), rng.standard_normal(n))
    z_new[:n] += inc
    np.clip(z_new, 0.0, 1.0, out=z_new)
    return SystemState.from_vector(system, z_new, state.t + dt)


class _Stepper:
    """Batch EM integrator over replicas stored as rows of a matrix."""

    def __init__(self, system: SeedBankSystem, g: DiffusionFunction, dt: float):
        _guard(system, dt)
        self.system = system
        self.g = g
        self.dt = dt
        # dense products are faster than sparse ones for small effective spaces
        QT = system.generator.T.tocsr()
        self.QT = QT.toarray() if system.n_states <= 512 else QT
        self.n = system.n_sites
        self.clamped = 0
        self.updates = 0

    def advance(self, Z: np.ndarray, horizon: float, rng: np.random.Generator,
                partner: np.ndarray | None = None) -> None:
        """Advance rows of Z (and optionally a coupled partner) by ``horizon`` in place."""
        if horizon <= 0:
            return
        steps = max(1, math.ceil(horizon / self.dt - 1e-9))
        h = horizon / steps
        sq = math.sqrt(h)
        n = self.n
        for _ in range(steps):
            xi = rng.standard_normal((Z.shape[0], n))
            for W in (Z,) if partner is None else (Z, partner):
                W += h * (W @ self.QT)
                x = W[:, :n]
                inc, bad = _bounded_increment(x, np.sqrt(np.maximum(self.g(x), 0.0)) * sq, xi)
                x += inc
                self.clamped += bad
                self.updates += x.size
                np.clip(W, 0.0, 1.0, out=W)


InitSpec = np.ndarray | Callable[[np.random.Generator, int], np.ndarray]


def constant_init(system: SeedBankSystem, x: float, y: float | Sequence[float]) -> np.ndarray:
    """Spatially constant state: x on active sites, y (scalar or per colour) dormant."""
    n, M = system.n_sites, system.n_colours
    yv = np.broadcast_to(np.asarray(y, dtype=float).reshape(-1, 1), (M, n))
    return system.join(np.full(n, float(x)), yv)


def uniform_init(system: SeedBankSystem) -> Callable[[np.random.Generator, int], np.ndarray]:
    """i.i.d. Uniform(0, 1) entries on every coordinate."""
    return lambda rng, size: rng.random((size, system.n_states))


def _initial_block(init: InitSpec, system: SeedBankSystem, rng, size: int) -> np.ndarray:
    if callable(init):
        Z = np.array(init(rng, size), dtype=float)
    else:
        z0 = np.asarray(init, dtype=float)
        if z0.shape != (system.n_states,):
            raise ValueError(f"initial state must have {system.n_states} entries")
        Z = np.tile(z0, (size, 1))
    if np.any(Z < 0) or np.any(Z > 1):
        raise ValueError("initial state must lie in [0, 1]")
    return Z


Observable = Callable[[np.ndarray], np.ndarray]


def standard_observables(system: SeedBankSystem, g: DiffusionFunction) -> dict[str, Observable]:
    n = system.n_sites
    return {
        "theta": system.theta,
        "heterozygosity": lambda Z: Z[:, 0] * (1 - Z[:, 0]),
        "mean_x0": lambda Z: Z[:, 0],
        "mean_y0": lambda Z: Z[:, n],
    }


@dataclass
class ForwardRun:
    """Per-replica observable samples at each output time."""

    times: np.ndarray
    samples: dict[str, np.ndarray]
    dt: float
    replicas: int
    clamp_fraction: float

    def estimate(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        s = self.samples[name]
        return s.mean(axis=1), s.std(axis=1, ddof=1) / math.sqrt(s.shape[1])

    def rows(self) -> list[tuple[float, str, float, float, int]]:
        out = []
        for name in self.samples:
            mean, se = self.estimate(name)
            for t, m, s in zip(self.times, mean, se):
                out.append((float(t), name, float(m), float(s), self.replicas))
        return out


def _check_times(times: Sequence[float]) -> np.ndarray:
    ts = np.asarray(times, dtype=float)
    if ts.ndim != 1 or ts.size == 0 or np.any(ts < 0) or np.any(np.diff(ts) <= 0):
        raise ValueError("output times must be a nonempty increasing sequence of t >= 0")
    return ts


def simulate(
    system: SeedBankSystem,
    g: DiffusionFunction,
    init: InitSpec,
    times: Sequence[float],
    replicas: int,
    seed: int,
    dt: float | None = None,
    observables: Mapping[str, Observable] | None = None,
    tag: str = "forward",
) -> ForwardRun:
    """Run independent replicas and record observables at the output times."""
    ts = _check_times(times)
    dt = default_dt(system, g) if dt is None else float(dt)
    obs = dict(standard_observables(system, g) if observables is None else observables)
    stepper = _Stepper(system, g, dt)
    samples = {k: np.empty((ts.size, replicas)) for k in obs}
    for start, size, gen in rngmod.blocks(seed, replicas, tag):
        Z = _initial_block(init, system, gen, size)
        now = 0.0
        for j, t in enumerate(ts):
            stepper.advance(Z, t - now, gen)
            now = t
            for k, f in obs.items():
                samples[k][j, start : start + size] = f(Z)
    frac = stepper.clamped / max(stepper.updates, 1)
    return ForwardRun(ts, samples, dt, replicas, frac)


def theta_trajectory(states: Sequence[SystemState], system: SeedBankSystem) -> np.ndarray:
    """Volume-averaged preserved density along a sequence of states."""
    return np.array([float(system.theta(s.vector())) for s in states])


def simulate_path(
    system: SeedBankSystem,
    g: DiffusionFunction,
    state: SystemState,
    times: Sequence[float],
    rng: np.random.Generator,
    dt: float | None = None,
) -> list[SystemState]:
    """A single replica path returned as states at the output times."""
    ts = _check_times(times)
    dt = default_dt(system, g) if dt is None else float(dt)
    stepper = _Stepper(system, g, dt)
    Z = state.vector()[None, :].copy()
    out, now = [], state.t
    for t in ts:
        stepper.advance(Z, t - now, rng)
        now = t
        out.append(SystemState.from_vector(system, Z[0], t))
    return out


@dataclass
class LyapunovPath:
    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    increment_mean: np.ndarray
    increment_se: np.ndarray
    replicas: int

    def non_increasing(self, k: float = 3.0) -> bool:
        """Every consecutive increment is <= k standard errors."""
        return bool(np.all(self.increment_mean <= k * self.increment_se))


def coupled_simulate(
    system: SeedBankSystem,
    g: DiffusionFunction,
    init_pair: tuple[InitSpec, InitSpec],
    times: Sequence[float],
    replicas: int,
    seed: int,
    dt: float | None = None,
    tag: str = "coupled",
) -> LyapunovPath:
    """Two copies driven by the same Brownian increments.

    Tracks the site average of |x1_i - x2_i| + sum_m K_m |y1_im - y2_im|.
    """
    if not math.isfinite(system.seedbank.rho):
        raise ValueError("coupling functional needs a seed-bank with finite rho")
    ts = _check_times(times)
    dt = default_dt(system, g) if dt is None else float(dt)
    stepper = _Stepper(system, g, dt)
    K = system.colours[0]
    n = system.n_sites

    def functional(Z1, Z2):
        diff = np.abs(Z1 - Z2)
        x, y = system.split(diff)
        return (x + np.tensordot(y, K, axes=([-2], [0]))).mean(axis=-1)

    vals = np.empty((ts.size, replicas))
    for start, size, gen in rngmod.blocks(seed, replicas, tag):
        Z1 = _initial_block(init_pair[0], system, gen, size)
        Z2 = _initial_block(init_pair[1], system, gen, size)
        now = 0.0
        for j, t in enumerate(ts):
            stepper.advance(Z1, t - now, gen, partner=Z2)
            now = t
            vals[j, start : start + size] = functional(Z1, Z2)
    inc = np.diff(vals, axis=0)
    root = math.sqrt(replicas)
    return LyapunovPath(
        ts,
        vals.mean(axis=1),
        vals.std(axis=1, ddof=1) / root,
        inc.mean(axis=1),
        inc.std(axis=1, ddof=1) / root if replicas > 1 else np.zeros(len(ts) - 1),
        replicas,
    )


class Monomial:
    """H(z) = prod_u z_u^k_u on the effective space."""

    def __init__(self, exponents: Mapping[int, int]):
        self.exponents = {int(u): int(k) for u, k in exponents.items() if k != 0}
        if any(k < 0 for k in self.exponents.values()):
            raise ValueError("exponents must be nonnegative")

    @property
    def coords(self) -> list[int]:
        return sorted(self.exponents)

    @property
    def degree(self) -> int:
        return sum(self.exponents.values())

    def value(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = np.ones(z.shape[:-1])
        for u, k in self.exponents.items():
            out = out * z[..., u] ** k
        return out

    def _others(self, z: np.ndarray, skip: int) -> float:
        out = 1.0
        for u, k in self.exponents.items():
            if u != skip:
                out *= z[u] ** k
        return out

    def grad(self, z: np.ndarray) -> dict[int, float]:
        return {u: k * z[u] ** (k - 1) * self._others(z, u) for u, k in self.exponents.items()}

    def hess_diag(self, z: np.ndarray) -> dict[int, float]:
        return {
            u: (k * (k - 1) * z[u] ** (k - 2) if k >= 2 else 0.0) * self._others(z, u)
            for u, k in self.exponents.items()
        }


def generator_apply(
    system: SeedBankSystem,
    f,
    z: np.ndarray,
    g: DiffusionFunction,
    second_order: float = 0.5,
) -> float:
    """(G f)(z) = sum_u drift_u d_u f + second_order * sum_{u active} g(z_u) d_u^2 f.

    ``f`` exposes ``grad(z)`` and ``hess_diag(z)`` as mappings from
    coordinate to partial derivative; coordinates absent are treated as 0.
    The default ``second_order = 1/2`` matches noise sqrt(g).
    """
    z = np.asarray(z, dtype=float)
    Q = system.generator
    n = system.n_sites
    total = 0.0
    for u, du in f.grad(z).items():
        lo, hi = Q.indptr[u], Q.indptr[u + 1]
        total += du * float(Q.data[lo:hi] @ z[Q.indices[lo:hi]])
    for u, duu in f.hess_diag(z).items():
        if u < n and duu != 0:
            total += second_order * float(g(z[u])) * duu
    return total


def second_moment_formula(
    system: SeedBankSystem,
    z0: np.ndarray,
    u: int,
    v: int,
    t: float,
    s_grid: np.ndarray,
    g_means: np.ndarray,
) -> float:
    """E[z_u(t) z_v(t)] from the two-walk term plus the resampling integral.

    ``g_means[j, k]`` is E[g(x_k(s_j))] on the increasing grid ``s_grid``
    ending at t.  With noise sqrt(g) the integral enters with weight 1.
    """
    Q = system.dense_generator()
    z0 = np.asarray(z0, dtype=float)
    Pt = expm(Q * t)
    walk = (Pt[u] @ z0) * (Pt[v] @ z0)
    n = system.n_sites
    vals = np.empty(len(s_grid))
    for j, s in enumerate(s_grid):
        P = expm(Q * (t - s))
        vals[j] = np.sum(P[u, :n] * P[v, :n] * g_means[j])
    from scipy.integrate import simpson

    return float(walk + simpson(vals, x=s_grid))
