"""Individual-based models: discrete Fisher-Wright colony and Moran switching."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numba
import numpy as np
from scipy.linalg import expm
from scipy.stats import wasserstein_distance

from . import rng as rngmod
from .forward import DiffusionFunction, simulate
from .lattice import Torus, simple_walk
from .seedbank import Explicit, Single
from .system import SeedBankSystem

__all__ = [
    "DiscreteColony",
    "fw_step",
    "fw_step_distribution",
    "fw_run",
    "FWLimitResult",
    "fw_diffusion_limit_check",
    "MoranParams",
    "MoranState",
    "MoranTrajectory",
    "moran_gillespie",
    "moran_ode",
    "moran_fixed_point",
    "moran_to_seedbank_transform",
]


# ---------------------------------------------------------------- Fisher-Wright


@dataclass(frozen=True)
class DiscreteColony:
    """N active and M dormant slots; X and Y count type-1 individuals."""

    N: int
    M: int
    c: int
    X: int
    Y: int

    def __post_init__(self) -> None:
        if self.N < 1 or self.M < 1:
            raise ValueError("population sizes must be positive")
        if not 0 <= self.c <= min(self.N, self.M):
            raise ValueError(f"exchange size c must lie in [0, min(N, M)], got {self.c}")
        if not (0 <= self.X <= self.N and 0 <= self.Y <= self.M):
            raise ValueError("type counts out of range")

    @property
    def x(self) -> float:
        return self.X / self.N

    @property
    def y(self) -> float:
        return self.Y / self.M

    @property
    def K(self) -> float:
        return self.M / self.N


def fw_step(col: DiscreteColony, rng: np.random.Generator) -> DiscreteColony:
    """One generation: c dormant individuals wake, c offspring go dormant.

    Z awakened type-1 seeds ~ Hyp(M, c, Y); U ~ Bin(N - c, x) active
    offspring; V ~ Bin(c, x) offspring entering the bank.
    """
    if col.c:
        Z = int(rng.hypergeometric(col.Y, col.M - col.Y, col.c))
        V = int(rng.binomial(col.c, col.x))
    else:
        Z = V = 0
    U = int(rng.binomial(col.N - col.c, col.x))
    return DiscreteColony(col.N, col.M, col.c, U + Z, col.Y + V - Z)


def fw_step_distribution(col: DiscreteColony) -> dict[tuple[int, int], Fraction]:
    """Exact one-step law of (X', Y') by enumeration over (Z, U, V)."""
    N, M, c, X, Y = col.N, col.M, col.c, col.X, col.Y
    x = Fraction(X, N)

    def binom(n, k, p):
        return math.comb(n, k) * p**k * (1 - p) ** (n - k)

    out: dict[tuple[int, int], Fraction] = {}
    for z in range(max(0, c - (M - Y)), min(c, Y) + 1):
        pz = Fraction(math.comb(Y, z) * math.comb(M - Y, c - z), math.comb(M, c))
        for u in range(N - c + 1):
            pu = binom(N - c, u, x)
            for v in range(c + 1):
                key = (u + z, Y + v - z)
                out[key] = out.get(key, Fraction(0)) + pz * pu * binom(c, v, x)
    return out


def fw_run(
    N: int, M: int, c: int, x0: float, y0: float, steps: int, replicas: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised discrete chain; returns final (X/N, Y/M) per replica."""
    X0, Y0 = round(x0 * N), round(y0 * M)
    DiscreteColony(N, M, c, X0, Y0)
    xs = np.empty(replicas)
    ys = np.empty(replicas)
    for start, size, gen in rngmod.blocks(seed, replicas, "ibm-fw"):
        X = np.full(size, X0, dtype=np.int64)
        Y = np.full(size, Y0, dtype=np.int64)
        for _ in range(steps):
            x = X / N
            if c:
                Z = gen.hypergeometric(Y, M - Y, c)
                V = gen.binomial(c, x)
            else:
                Z = V = 0
            U = gen.binomial(N - c, x)
            X, Y = U + Z, Y + V - Z
        xs[start : start + size] = X / N
        ys[start : start + size] = Y / M
    return xs, ys


def _chain_mean(N: int, M: int, c: int, x0: float, y0: float, steps: int) -> np.ndarray:
    """Exact mean of (x, y) after ``steps`` generations via the linear recursion."""
    step = np.array([[1 - c / N, c / N], [c / M, 1 - c / M]])
    return np.linalg.matrix_power(step, steps) @ np.array([x0, y0])


def _ode_mean(c: float, K: float, x0: float, y0: float, t: float) -> np.ndarray:
    A = np.array([[-c, c], [c / K, -c / K]])
    return expm(A * t) @ np.array([x0, y0])


@dataclass(frozen=True)
class FWLimitResult:
    N: tuple[int, ...]
    distance: tuple[float, ...]
    mean_error: tuple[float, ...]
    slope: float
    slope_se: float
    replicas: int
    reference_replicas: int

    def decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.distance, self.distance[1:]))


def fw_diffusion_limit_check(
    N_sweep: Sequence[int],
    t: float,
    replicas: int,
    seed: int,
    K: float = 1.0,
    c: int = 1,
    x0: float = 0.5,
    y0: float = 0.5,
    reference_replicas: int | None = None,
    dt: float | None = None,
) -> FWLimitResult:
    """W1 distance between the discrete chain after floor(N t) steps and the SDE at t.

    The SDE is dx = c (y - x) dt + sqrt(x (1 - x)) dw, dy = (c / K)(x - y) dt,
    i.e. a model-1 colony with K and e = c / K.  The mean error uses the
    exact chain mean, so its fitted log-log slope carries no sampling noise.
    """
    R_ref = replicas if reference_replicas is None else reference_replicas
    system = SeedBankSystem(1, simple_walk(Torus(1, 1)), Single(K, c / K))
    g = DiffusionFunction.fisher_wright(1.0)
    ref = simulate(system, g, np.array([x0, y0]), [t], R_ref, seed, dt,
                   observables={"x": lambda Z: Z[:, 0]}, tag="ibm-fw-sde").samples["x"][0]
    exact = _ode_mean(c, K, x0, y0, t)
    dists, errs = [], []
    for N in N_sweep:
        M = int(round(K * N))
        steps = int(math.floor(N * t))
        xs, _ = fw_run(N, M, c, x0, y0, steps, replicas, seed + N)
        dists.append(float(wasserstein_distance(xs, ref)))
        errs.append(float(abs(_chain_mean(N, M, c, x0, y0, steps)[0] - exact[0])))
    lN, le = np.log(np.asarray(N_sweep, float)), np.log(np.asarray(errs))
    coef, cov = np.polyfit(lN, le, 1, cov=True) if len(N_sweep) > 2 else (np.polyfit(lN, le, 1), np.zeros((2, 2)))
    return FWLimitResult(tuple(int(n) for n in N_sweep), tuple(dists), tuple(errs),
                         float(coef[0]), float(math.sqrt(cov[0, 0])), replicas, R_ref)


# ---------------------------------------------------------------- Moran


@dataclass(frozen=True)
class MoranParams:
    """Switching constants: eps_m = cA_m / N and delta_m = cD_m / N."""

    cA: tuple[float, ...]
    cD: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.cA) != len(self.cD) or not self.cA:
            raise ValueError("cA and cD must be nonempty and of equal length")
        if min(self.cA) <= 0 or min(self.cD) <= 0:
            raise ValueError("switching constants must be positive")

    @property
    def colours(self) -> int:
        return len(self.cA)

    @property
    def K(self) -> np.ndarray:
        return np.asarray(self.cA, float) / np.asarray(self.cD, float)

    @property
    def S(self) -> float:
        return float(1.0 + self.K.sum())

    @property
    def e(self) -> np.ndarray:
        return np.asarray(self.cD, float) / self.S

    def seedbank(self):
        if self.colours == 1:
            return Single(float(self.K[0]), float(self.e[0]))
        return Explicit(tuple(map(float, self.K)), tuple(map(float, self.e)))

    def matrix(self) -> np.ndarray:
        """Generator of (z_A, z_D1, ..., z_DM) in rescaled time."""
        M = self.colours
        A = np.zeros((M + 1, M + 1))
        for m, (a, d) in enumerate(zip(self.cA, self.cD)):
            A[0, 0] -= a
            A[0, 1 + m] += d
            A[1 + m, 0] += a
            A[1 + m, 1 + m] -= d
        return A


@dataclass(frozen=True)
class MoranState:
    """X type-1 of Z_A active; Y_m type-1 of Z_Dm dormant in colour m."""

    N: int
    X: int
    ZA: int
    Y: tuple[int, ...]
    ZD: tuple[int, ...]

    def __post_init__(self) -> None:
        if not 0 <= self.X <= self.ZA:
            raise ValueError("need 0 <= X <= Z_A")
        if len(self.Y) != len(self.ZD):
            raise ValueError("Y and Z_D must have one entry per colour")
        if any(not 0 <= y <= z for y, z in zip(self.Y, self.ZD)):
            raise ValueError("need 0 <= Y_m <= Z_Dm")
        if self.ZA + sum(self.ZD) != self.N:
            raise ValueError("sizes must add up to N")

    @classmethod
    def stationary(cls, N: int, params: MoranParams, x: float, y: Sequence[float]) -> "MoranState":
        """Sizes at (rounded) stationary proportions with type-1 fractions x, y_m."""
        zA, zD = moran_fixed_point(params)
        ZD = [int(round(N * v)) for v in zD]
        ZA = N - sum(ZD)
        Y = [int(round(f * z)) for f, z in zip(y, ZD)]
        return cls(N, int(round(x * ZA)), ZA, tuple(Y), tuple(ZD))


@numba.njit(cache=True)
def _moran_runs(X0, ZA0, Y0, ZD0, eps, dlt, times, seeds):
    R = seeds.shape[0]
    T = times.shape[0]
    C = eps.shape[0]
    outX = np.empty((R, T), dtype=np.int64)
    outZA = np.empty((R, T), dtype=np.int64)
    outY = np.empty((R, T, C), dtype=np.int64)
    outZD = np.empty((R, T, C), dtype=np.int64)
    Y = np.empty(C, dtype=np.int64)
    ZD = np.empty(C, dtype=np.int64)
    rates = np.empty(2 + 4 * C)
    for r in range(R):
        np.random.seed(seeds[r])
        X, ZA = X0, ZA0
        for m in range(C):
            Y[m] = Y0[m]
            ZD[m] = ZD0[m]
        t = 0.0
        k = 0
        while k < T:
            res = X * (ZA - X) / ZA if ZA > 0 else 0.0
            rates[0] = res
            rates[1] = res
            for m in range(C):
                rates[2 + 4 * m] = eps[m] * X
                rates[3 + 4 * m] = eps[m] * (ZA - X)
                rates[4 + 4 * m] = dlt[m] * Y[m]
                rates[5 + 4 * m] = dlt[m] * (ZD[m] - Y[m])
            total = rates.sum()
            tnext = t + np.random.exponential(1.0 / total) if total > 0 else np.inf
            while k < T and tnext > times[k]:
                outX[r, k] = X
                outZA[r, k] = ZA
                for m in range(C):
                    outY[r, k, m] = Y[m]
                    outZD[r, k, m] = ZD[m]
                k += 1
            if k >= T:
                break
            u = np.random.random() * total
            j = 0
            acc = rates[0]
            while acc <= u and j < rates.shape[0] - 1:
                j += 1
                acc += rates[j]
            if j == 0:
                X += 1
            elif j == 1:
                X -= 1
            else:
                m = (j - 2) // 4
                kind = (j - 2) % 4
                if kind == 0:
                    X -= 1
                    ZA -= 1
                    Y[m] += 1
                    ZD[m] += 1
                elif kind == 1:
                    ZA -= 1
                    ZD[m] += 1
                elif kind == 2:
                    X += 1
                    ZA += 1
                    Y[m] -= 1
                    ZD[m] -= 1
                else:
                    ZA += 1
                    ZD[m] -= 1
            t = tnext
    return outX, outZA, outY, outZD


@dataclass
class MoranTrajectory:
    """Counts at the output times, which are in units of N generations."""

    N: int
    times: np.ndarray
    X: np.ndarray
    ZA: np.ndarray
    Y: np.ndarray
    ZD: np.ndarray

    @property
    def replicas(self) -> int:
        return self.X.shape[0]


def moran_gillespie(
    state: MoranState,
    params: MoranParams,
    times: Sequence[float],
    replicas: int,
    seed: int,
) -> MoranTrajectory:
    """Exact runs of the switching Moran model recorded at real times N * t."""
    if len(state.Y) != params.colours:
        raise ValueError("state and parameters disagree on the number of colours")
    ts = np.asarray(times, dtype=float)
    if np.any(np.diff(ts) <= 0) or np.any(ts < 0):
        raise ValueError("times must be increasing and nonnegative")
    N = state.N
    eps = np.asarray(params.cA, float) / N
    dlt = np.asarray(params.cD, float) / N
    seeds = rngmod.replica_seeds(seed, replicas, "ibm-moran")
    X, ZA, Y, ZD = _moran_runs(state.X, state.ZA, np.asarray(state.Y, np.int64),
                               np.asarray(state.ZD, np.int64), eps, dlt, ts * N, seeds)
    return MoranTrajectory(N, ts, X, ZA, Y, ZD)


def moran_ode(params: MoranParams, z0: Sequence[float], times: Sequence[float]) -> np.ndarray:
    """Sizes (z_A, z_Dm) / N along exp(t A) z0; rows follow ``times``."""
    A = params.matrix()
    z0 = np.asarray(z0, float)
    return np.array([expm(A * float(t)) @ z0 for t in times])


def moran_fixed_point(params: MoranParams, exact: bool = False):
    """z_A = 1 / (1 + sum cA/cD), z_Dm = (cA_m / cD_m) z_A.

    With ``exact=True`` the inputs are read as rationals and Fractions are returned.
    """
    if exact:
        ratios = [Fraction(a).limit_denominator() / Fraction(d).limit_denominator()
                  for a, d in zip(params.cA, params.cD)]
        zA = 1 / (1 + sum(ratios))
        return zA, tuple(r * zA for r in ratios)
    K = params.K
    zA = 1.0 / (1.0 + K.sum())
    return zA, tuple(K * zA)


def moran_relaxation_rate(params: MoranParams) -> float:
    """Smallest nonzero |eigenvalue| of the size dynamics."""
    ev = np.sort(np.abs(np.linalg.eigvals(params.matrix()).real))
    return float(ev[ev > 1e-12][0])


def moran_to_seedbank_transform(
    traj: MoranTrajectory, params: MoranParams, tol: float = 0.05
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(t_bar, x_bar, y_bar) with x_bar = S X / N, y_bar_m = S Y_m / (N K_m), t_bar = S t.

    Warns when the active size at the first output time is more than ``tol``
    away from its fixed point.
    """
    zA, _ = moran_fixed_point(params)
    first = traj.ZA[:, 0].mean() / traj.N
    if abs(first - zA) > tol:
        warnings.warn(
            f"active size {first:.3f} is not yet near its fixed point {zA:.3f}; "
            "the transient has not elapsed",
            RuntimeWarning,
            stacklevel=2,
        )
    S = params.S
    xbar = S * traj.X / traj.N
    ybar = S * traj.Y / (traj.N * params.K[None, None, :])
    return S * traj.times, xbar, ybar


def transformed_first_moment_check(
    params: MoranParams,
    N: int,
    x0: float,
    y0: Sequence[float],
    times: Sequence[float],
    replicas: int,
    seed: int,
    threshold: float = 3.0,
) -> list[dict]:
    """Transformed Moran means against the seed-bank first-moment ODE."""
    state = MoranState.stationary(N, params, x0, y0)
    traj = moran_gillespie(state, params, times, replicas, seed)
    tbar, xbar, ybar = moran_to_seedbank_transform(traj, params)
    S = params.S
    start = np.concatenate([[S * state.X / N], S * np.asarray(state.Y) / (N * params.K)])
    K, e = params.K, params.e
    A = np.zeros((1 + len(K), 1 + len(K)))
    A[0, 0] = -np.sum(K * e)
    A[0, 1:] = K * e
    A[1:, 0] = e
    A[1:, 1:] = -np.diag(e)
    rows = []
    for j, t in enumerate(tbar):
        exact = expm(A * t) @ start
        m, se = xbar[:, j].mean(), xbar[:, j].std(ddof=1) / math.sqrt(replicas)
        gap = (m - exact[0]) / se if se > 0 else 0.0
        rows.append({"t_bar": float(t), "x_bar": float(m), "se": float(se),
                     "ode": float(exact[0]), "gap": float(gap), "passed": abs(gap) <= threshold})
    return rows
