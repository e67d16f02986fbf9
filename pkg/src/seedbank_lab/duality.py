"""Moment duality between the forward diffusion and the lineage-counting dual."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dual import exact_dual_oracle, simulate_lineages
from .forward import DiffusionFunction, Monomial, generator_apply, simulate
from .system import SeedBankSystem

__all__ = [
    "MomentSpec",
    "MomentEstimate",
    "DualityCase",
    "forward_moments",
    "forward_moment",
    "dual_moments",
    "dual_moment",
    "duality_gap",
    "run_battery",
    "generator_identity_check",
    "random_probe",
    "first_moment_check",
]

DEGREE_CAP = 4


@dataclass(frozen=True)
class MomentSpec:
    """Exponents on effective sites; also the dual's initial lineage counts."""

    exponents: tuple[tuple[int, int], ...]
    cap: int = DEGREE_CAP

    def __post_init__(self) -> None:
        if any(k < 0 or int(k) != k for _, k in self.exponents):
            raise ValueError("exponents must be nonnegative integers")
        deg = self.degree
        if deg < 1:
            raise ValueError("moment degree must be at least 1")
        if deg > self.cap:
            raise ValueError(f"moment degree {deg} exceeds the cap {self.cap}")

    @classmethod
    def of(cls, exponents: Mapping[int, int], cap: int = DEGREE_CAP) -> "MomentSpec":
        return cls(tuple(sorted((int(u), int(k)) for u, k in exponents.items() if k)), cap)

    @classmethod
    def from_sites(
        cls,
        system: SeedBankSystem,
        active: Mapping[int, int] | None = None,
        dormant: Mapping[tuple[int, int], int] | None = None,
        cap: int = DEGREE_CAP,
    ) -> "MomentSpec":
        """Active exponents by site; dormant exponents by (site, colour)."""
        ex: dict[int, int] = {}
        for i, m in (active or {}).items():
            ex[system.state_index(i, 0)] = ex.get(system.state_index(i, 0), 0) + m
        for (i, c), m in (dormant or {}).items():
            u = system.state_index(i, 1 + c)
            ex[u] = ex.get(u, 0) + m
        return cls.of(ex, cap)

    @property
    def degree(self) -> int:
        return sum(k for _, k in self.exponents)

    def counts(self, n_states: int) -> np.ndarray:
        c = np.zeros(n_states, dtype=np.int64)
        for u, k in self.exponents:
            c[u] = k
        return c

    @property
    def monomial(self) -> Monomial:
        return Monomial(dict(self.exponents))

    def value(self, z: np.ndarray) -> np.ndarray:
        return self.monomial.value(z)

    def label(self, system: SeedBankSystem | None = None) -> str:
        if system is None:
            return "*".join(f"z{u}^{k}" for u, k in self.exponents)
        return "*".join(f"{system.effective_label(u)}^{k}" for u, k in self.exponents)


@dataclass(frozen=True)
class MomentEstimate:
    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    replicas: int
    exact: np.ndarray | None = None


def _require_fw(g: DiffusionFunction) -> float:
    if g.fw_scale is None:
        raise ValueError(
            f"moment duality needs g = d * g_FW; diffusion function {g.name!r} has no dual"
        )
    return float(g.fw_scale)


def forward_moments(
    system: SeedBankSystem,
    g: DiffusionFunction,
    z0: np.ndarray,
    specs: Sequence[MomentSpec],
    times: Sequence[float],
    replicas: int,
    seed: int,
    dt: float | None = None,
) -> list[MomentEstimate]:
    """Monte Carlo E[H(z(t), spec)] for several specs from one forward run."""
    _require_fw(g)
    obs = {str(j): s.monomial.value for j, s in enumerate(specs)}
    run = simulate(system, g, np.asarray(z0, dtype=float), times, replicas, seed, dt,
                   observables=obs, tag="duality-forward")
    out = []
    for j in range(len(specs)):
        m, se = run.estimate(str(j))
        out.append(MomentEstimate(run.times, m, se, replicas))
    return out


def forward_moment(system, g, z0, spec, times, replicas, seed, dt=None) -> MomentEstimate:
    return forward_moments(system, g, z0, [spec], times, replicas, seed, dt)[0]


def dual_moments(
    system: SeedBankSystem,
    d: float,
    z: np.ndarray,
    specs: Sequence[MomentSpec],
    times: Sequence[float],
    replicas: int,
    seed: int,
    exact_limit: int = 5000,
) -> list[MomentEstimate]:
    """Monte Carlo E[prod_u z_u^{L_u(t)}] with L(0) given by each spec.

    When the enumerated chain has at most ``exact_limit`` states the exact
    value is attached as well.
    """
    z = np.asarray(z, dtype=float)
    out = []
    for j, spec in enumerate(specs):
        paths = simulate_lineages(system, d, spec.counts(system.n_states), times, replicas,
                                  seed, tag=f"duality-dual-{j}")
        vals = paths.monomial(z)
        exact = None
        try:
            ex = exact_dual_oracle(system, d, spec.counts(system.n_states), exact_limit)
            exact = np.array([ex.expectation(z, t) for t in paths.times])
        except ValueError:
            pass
        out.append(MomentEstimate(paths.times, vals.mean(axis=0),
                                  vals.std(axis=0, ddof=1) / math.sqrt(replicas), replicas, exact))
    return out


def dual_moment(system, d, z, spec, times, replicas, seed) -> MomentEstimate:
    return dual_moments(system, d, z, [spec], times, replicas, seed)[0]


def duality_gap(f_mean: float, f_se: float, d_mean: float, d_se: float) -> float:
    """(forward - dual) / combined standard error."""
    diff = float(f_mean) - float(d_mean)
    se = math.hypot(float(f_se), float(d_se))
    if se == 0.0:
        return 0.0 if abs(diff) < 1e-12 else math.copysign(math.inf, diff)
    return diff / se


@dataclass(frozen=True)
class DualityCase:
    model: int
    spec: str
    degree: int
    t: float
    forward: float
    forward_se: float
    dual: float
    dual_se: float
    exact: float | None
    gap: float
    passed: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def run_battery(
    system: SeedBankSystem,
    d: float,
    z0: np.ndarray,
    specs: Sequence[MomentSpec],
    times: Sequence[float],
    replicas: int,
    seed: int,
    dual_d: float | None = None,
    dt: float | None = None,
    threshold: float = 3.0,
) -> list[DualityCase]:
    """Forward side with noise sqrt(d g_FW) against the dual with rate ``dual_d`` (default d)."""
    g = DiffusionFunction.fisher_wright(d)
    fw = forward_moments(system, g, z0, specs, times, replicas, seed, dt)
    du = dual_moments(system, d if dual_d is None else dual_d, z0, specs, times, replicas, seed)
    cases = []
    for spec, f, b in zip(specs, fw, du):
        for j, t in enumerate(f.times):
            gap = duality_gap(f.mean[j], f.se[j], b.mean[j], b.se[j])
            cases.append(DualityCase(
                system.model, spec.label(system), spec.degree, float(t),
                float(f.mean[j]), float(f.se[j]), float(b.mean[j]), float(b.se[j]),
                None if b.exact is None else float(b.exact[j]), gap, abs(gap) <= threshold,
            ))
    return cases


def _dual_generator(system: SeedBankSystem, d: float, z: np.ndarray, counts: np.ndarray) -> float:
    """(F H(z, .))(L): dual transition rates times the change of prod z^L."""
    def H(c):
        return float(np.prod(z ** c))

    base = H(counts)
    b = system.rate_matrix
    total = 0.0
    for u in np.nonzero(counts)[0]:
        lo, hi = b.indptr[u], b.indptr[u + 1]
        for v, r in zip(b.indices[lo:hi], b.data[lo:hi]):
            c = counts.copy()
            c[u] -= 1
            c[v] += 1
            total += counts[u] * r * (H(c) - base)
        if u < system.n_sites and counts[u] >= 2:
            c = counts.copy()
            c[u] -= 1
            total += d * counts[u] * (counts[u] - 1) / 2 * (H(c) - base)
    return total


def generator_identity_check(
    system: SeedBankSystem, z: np.ndarray, spec: MomentSpec, d: float = 1.0
) -> float:
    """(G H(., L))(z) - (F H(z, .))(L) for g = d g_FW with noise sqrt(g)."""
    z = np.asarray(z, dtype=float)
    gh = generator_apply(system, spec.monomial, z, DiffusionFunction.fisher_wright(d))
    fh = _dual_generator(system, d, z, spec.counts(system.n_states))
    return gh - fh


def random_probe(
    system: SeedBankSystem, rng: np.random.Generator, max_degree: int = DEGREE_CAP
) -> tuple[np.ndarray, MomentSpec]:
    """A uniform state and a random spec of degree 1..max_degree."""
    z = rng.random(system.n_states)
    deg = int(rng.integers(1, max_degree + 1))
    sites = rng.integers(0, system.n_states, size=deg)
    # bias toward repeated active sites so coalescence terms are exercised
    if deg >= 2 and rng.random() < 0.5:
        sites[1] = sites[0] = int(rng.integers(0, system.n_sites))
    ex: dict[int, int] = {}
    for u in sites:
        ex[int(u)] = ex.get(int(u), 0) + 1
    return z, MomentSpec.of(ex, max(max_degree, DEGREE_CAP))


@dataclass(frozen=True)
class FirstMomentCase:
    diffusion: str
    t: float
    site: int
    forward: float
    forward_se: float
    exact: float
    gap: float
    passed: bool


def first_moment_check(
    system: SeedBankSystem,
    g: DiffusionFunction,
    z0: np.ndarray,
    times: Sequence[float],
    replicas: int,
    seed: int,
    sites: Sequence[int] = (0,),
    dt: float | None = None,
    threshold: float = 3.0,
) -> list[FirstMomentCase]:
    """Forward E[z_u(t)] against exp(tQ) z0; valid for any diffusion function."""
    z0 = np.asarray(z0, dtype=float)
    obs = {str(u): (lambda Z, u=u: Z[:, u]) for u in sites}
    run = simulate(system, g, z0, times, replicas, seed, dt, observables=obs, tag="first-moment")
    out = []
    for u in sites:
        m, se = run.estimate(str(u))
        for j, t in enumerate(run.times):
            ex = float(system.first_moment(z0, float(t))[u])
            gap = duality_gap(m[j], se[j], ex, 0.0)
            out.append(FirstMomentCase(g.name, float(t), int(u), float(m[j]), float(se[j]), ex,
                                       gap, abs(gap) <= threshold))
    return out
