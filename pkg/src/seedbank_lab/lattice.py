"""Torus geometry, translation-invariant walk kernels and return probabilities.

Two kinds of return probabilities are provided:

* torus values, obtained by summing the Fourier symbol over the ``L**d``
  torus frequencies (exact for the finite system);
* infinite-lattice values, obtained by Gauss-Legendre quadrature of the
  lattice symbol over the Brillouin zone.  These are what the long-time
  integrability questions are about, since a finite torus has a return
  probability that saturates at ``L**-d``.

``integrate_power_tail`` evaluates integrals over ``[1, inf)`` by log-spaced
quadrature on ``[1, t_max]`` plus a fitted power-law tail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.integrate import simpson
from scipy.special import gamma as gamma_fn
from scipy.special import zeta

__all__ = [
    "Torus",
    "WalkKernel",
    "TailIntegral",
    "DegreeEstimate",
    "simple_walk",
    "drifted_2d",
    "power_law_1d",
    "point_mass",
    "kernel_from_literal",
    "symmetrize",
    "return_probability",
    "transition_probability",
    "convolved_return",
    "lattice_return_probability",
    "lattice_convolved_return",
    "integrate_power_tail",
    "walk_degree",
]


@dataclass(frozen=True)
class Torus:
    """The group (Z/LZ)^d."""

    d: int
    L: int

    def __post_init__(self) -> None:
        if self.d < 1 or self.L < 1:
            raise ValueError(f"torus needs d >= 1 and L >= 1, got d={self.d}, L={self.L}")

    @property
    def n_sites(self) -> int:
        return self.L**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.L,) * self.d

    def wrap(self, v: Sequence[int]) -> tuple[int, ...]:
        return tuple(int(c) % self.L for c in v)

    def add(self, a: Sequence[int], b: Sequence[int]) -> tuple[int, ...]:
        return tuple((int(x) + int(y)) % self.L for x, y in zip(a, b))

    def neg(self, a: Sequence[int]) -> tuple[int, ...]:
        return tuple((-int(x)) % self.L for x in a)

    def index(self, v: Sequence[int]) -> int:
        return int(np.ravel_multi_index(self.wrap(v), self.shape))

    def coords(self, idx: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(idx, self.shape))

    def frequencies(self) -> np.ndarray:
        """All torus frequencies as an array of shape (L**d, d)."""
        grid = 2.0 * np.pi * np.arange(self.L) / self.L
        mesh = np.meshgrid(*([grid] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class WalkKernel:
    """Translation-invariant kernel stored as offsets from the origin.

    ``rates[k]`` is the rate (or probability when ``normalized``) of the jump
    by ``offsets[k]``.  Offsets are kept unwrapped so that the same kernel can
    also be read as a kernel on the infinite lattice.  ``lattice_gap_fn``
    optionally overrides the infinite-lattice ``total - Re a(phi)`` for
    kernels whose lattice support is larger than what fits on the torus.
    """

    torus: Torus
    offsets: tuple[tuple[int, ...], ...]
    rates: tuple[float, ...]
    normalized: bool = False
    name: str = "custom"
    lattice_gap_fn: Callable[[np.ndarray], np.ndarray] | None = field(
        default=None, compare=False, hash=False, repr=False
    )

    def __post_init__(self) -> None:
        if len(self.offsets) != len(self.rates):
            raise ValueError("offsets and rates must have equal length")
        if not self.offsets:
            raise ValueError("kernel support is empty")
        for o in self.offsets:
            if len(o) != self.torus.d:
                raise ValueError(f"offset {o} does not match torus dimension {self.torus.d}")
        if any(r < 0 or not math.isfinite(r) for r in self.rates):
            raise ValueError("kernel rates must be finite and nonnegative")
        if self.total_rate <= 0:
            raise ValueError("kernel total rate must be positive")
        if self.normalized and abs(self.total_rate - 1.0) > 1e-9:
            raise ValueError(f"normalized kernel must sum to 1, got {self.total_rate}")

    @property
    def total_rate(self) -> float:
        return float(sum(self.rates))

    def rate_map(self) -> dict[tuple[int, ...], float]:
        """Rates aggregated per wrapped torus offset."""
        out: dict[tuple[int, ...], float] = {}
        for o, r in zip(self.offsets, self.rates):
            w = self.torus.wrap(o)
            out[w] = out.get(w, 0.0) + r
        return out

    def rate_array(self) -> np.ndarray:
        arr = np.zeros(self.torus.shape)
        for o, r in self.rate_map().items():
            arr[o] += r
        return arr

    @cached_property
    def symbol(self) -> np.ndarray:
        """a(phi) = sum_o rate(o) exp(i phi.o) at all torus frequencies (flattened)."""
        arr = self.rate_array()
        return (np.fft.ifftn(arr) * arr.size).ravel()

    def transition_matrix(self, fmt: str = "csr") -> sparse.spmatrix:
        """Sparse rate matrix A[i, i+o] = rate(o); self-jumps are kept."""
        n = self.torus.n_sites
        coords = np.array(np.unravel_index(np.arange(n), self.torus.shape)).T
        rows, cols, vals = [], [], []
        for o, r in self.rate_map().items():
            if r == 0:
                continue
            tgt = (coords + np.array(o)) % self.torus.L
            rows.append(np.arange(n))
            cols.append(np.ravel_multi_index(tgt.T, self.torus.shape))
            vals.append(np.full(n, r))
        mat = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )
        return mat.asformat(fmt)

    def generator_matrix(self) -> np.ndarray:
        a = self.transition_matrix().toarray()
        return a - np.diag(a.sum(axis=1))

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        rm = self.rate_map()
        return all(abs(r - rm.get(self.torus.neg(o), 0.0)) <= tol for o, r in rm.items())

    def is_irreducible(self) -> bool:
        """Whether the offsets with positive rate generate the torus group."""
        n = self.torus.n_sites
        mat = self.transition_matrix()
        mat = mat + mat.T
        n_comp, _ = sparse.csgraph.connected_components(mat, directed=False)
        return n_comp == 1 or n == 1

    @property
    def axis_separable(self) -> bool:
        if self.lattice_gap_fn is not None:
            return self.torus.d == 1
        return all(sum(1 for c in o if c != 0) <= 1 for o in self.offsets)

    def lattice_gap(self, phi: np.ndarray) -> np.ndarray:
        """total - Re a(phi) on the infinite lattice; phi has shape (..., d)."""
        phi = np.asarray(phi, dtype=float)
        if self.lattice_gap_fn is not None:
            return self.lattice_gap_fn(phi)
        off = np.array(self.offsets, dtype=float)
        rates = np.array(self.rates)
        # 1 - cos(x) = 2 sin^2(x/2) avoids cancellation at small phi
        arg = phi @ off.T
        return (2.0 * np.sin(0.5 * arg) ** 2) @ rates

    def axis_gap(self, axis: int, phi: np.ndarray) -> np.ndarray:
        """Lattice gap restricted to the offsets along one coordinate axis."""
        if self.lattice_gap_fn is not None:
            return self.lattice_gap_fn(phi[..., None])
        phi = np.asarray(phi, dtype=float)
        out = np.zeros_like(phi)
        for o, r in zip(self.offsets, self.rates):
            if o[axis] != 0:
                out += r * 2.0 * np.sin(0.5 * phi * o[axis]) ** 2
        return out


# ---------------------------------------------------------------- presets


def _unit(d: int, k: int, sign: int = 1) -> tuple[int, ...]:
    return tuple(sign if j == k else 0 for j in range(d))


def simple_walk(torus: Torus, rate: float = 1.0) -> WalkKernel:
    """Nearest-neighbour walk with total jump rate ``rate``."""
    offs, rates = [], []
    for k in range(torus.d):
        for s in (1, -1):
            offs.append(_unit(torus.d, k, s))
            rates.append(rate / (2 * torus.d))
    return WalkKernel(torus, tuple(offs), tuple(rates), name="simple_walk")


def drifted_2d(torus: Torus, eta: float) -> WalkKernel:
    """Nearest-neighbour walk on a 2-d torus drifting up and to the right."""
    if torus.d != 2:
        raise ValueError("drifted_2d needs a 2-dimensional torus")
    if not 0 <= eta < 1:
        raise ValueError(f"eta must lie in [0, 1), got {eta}")
    hi, lo = 0.25 * (1 + eta), 0.25 * (1 - eta)
    offs = ((1, 0), (0, 1), (-1, 0), (0, -1))
    return WalkKernel(torus, offs, (hi, hi, lo, lo), name=f"drifted_2d({eta})")


def _power_law_gap(delta: float, n_terms: int = 40) -> Callable[[np.ndarray], np.ndarray]:
    """1 - Re Li_delta(e^{i phi}) / zeta(delta) for the kernel ~ |x|^-delta.

    Series around phi = 0.  The phi^(s-1) coefficient is written through the
    reflection formula so that even integer s is regular; at odd integer
    s = 2n + 1 it merges with the zeta(1) term into a phi^(2n) log(phi) term.
    """
    s = delta
    z = zeta(s)
    odd = abs(s - round(s)) < 1e-12 and int(round(s)) % 2 == 1
    n_log = (int(round(s)) - 1) // 2 if odd else -1
    lead = 0.0 if odd else math.pi / (2 * gamma_fn(s) * math.cos(math.pi * s / 2))
    coeffs = np.array([
        0.0 if j == n_log else zeta(s - 2 * j) * (-1) ** j / math.factorial(2 * j)
        for j in range(1, n_terms)
    ])
    harmonic = sum(1.0 / k for k in range(1, 2 * n_log + 1)) if odd else 0.0

    def gap(phi: np.ndarray) -> np.ndarray:
        p = np.abs(np.asarray(phi, dtype=float)[..., 0])
        p = np.where(p > np.pi, 2 * np.pi - p, p)
        series = np.zeros_like(p)
        for j in range(len(coeffs) - 1, -1, -1):
            series = series * p**2 + coeffs[j]
        series *= p**2
        if odd:
            with np.errstate(divide="ignore", invalid="ignore"):
                logterm = np.where(
                    p > 0,
                    (-1) ** n_log * p ** (2 * n_log) / math.factorial(2 * n_log)
                    * (harmonic - np.log(np.where(p > 0, p, 1.0))),
                    0.0,
                )
            return -(logterm + series) / z
        return -(lead * p ** (s - 1) + series) / z

    return gap


def power_law_1d(torus: Torus, delta: float) -> WalkKernel:
    """Symmetric probability kernel with a(0, x) proportional to |x|^-delta.

    On the torus the support is cut at ``|x| <= L // 2``; the lattice gap uses
    the untruncated kernel through its closed-form Fourier series.
    """
    if torus.d != 1:
        raise ValueError("power_law_1d needs a 1-dimensional torus")
    if not 1 < delta:
        raise ValueError(f"delta must exceed 1 for a summable kernel, got {delta}")
    half = max(torus.L // 2, 1)
    xs = np.arange(1, half + 1)
    w = xs.astype(float) ** (-delta)
    w = w / (2 * w.sum())
    offs = tuple((int(x),) for x in xs) + tuple((-int(x),) for x in xs)
    rates = tuple(float(v) for v in np.concatenate([w, w]))
    return WalkKernel(
        torus,
        offs,
        rates,
        normalized=True,
        name=f"power_law_1d({delta})",
        lattice_gap_fn=_power_law_gap(delta),
    )


def point_mass(torus: Torus) -> WalkKernel:
    return WalkKernel(torus, ((0,) * torus.d,), (1.0,), normalized=True, name="point_mass")


def kernel_from_literal(
    torus: Torus, literal: Iterable[Sequence], normalized: bool = False
) -> WalkKernel:
    """Build a kernel from ``[[offset, rate], ...]`` pairs."""
    offs, rates = [], []
    for item in literal:
        off, rate = item
        off = (int(off),) if np.isscalar(off) else tuple(int(c) for c in off)
        offs.append(off)
        rates.append(float(rate))
    return WalkKernel(torus, tuple(offs), tuple(rates), normalized=normalized)


# ---------------------------------------------------------------- operations


def symmetrize(k: WalkKernel) -> WalkKernel:
    """Kernel with rate(o) = (k.rate(o) + k.rate(-o)) / 2 on unwrapped offsets."""
    acc: dict[tuple[int, ...], float] = {}
    for o, r in zip(k.offsets, k.rates):
        neg = tuple(-c for c in o)
        acc[o] = acc.get(o, 0.0) + 0.5 * r
        acc[neg] = acc.get(neg, 0.0) + 0.5 * r
    offs = tuple(sorted(acc))
    return WalkKernel(
        k.torus,
        offs,
        tuple(acc[o] for o in offs),
        normalized=k.normalized,
        name=f"sym({k.name})" if not k.name.startswith("sym(") else k.name,
        lattice_gap_fn=k.lattice_gap_fn,
    )


def _as_times(t) -> tuple[np.ndarray, bool]:
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0):
        raise ValueError("time must be nonnegative")
    return np.atleast_1d(arr), arr.ndim == 0


def _semigroup_sum(exponents: np.ndarray, t: np.ndarray, phase: np.ndarray | None = None):
    out = np.empty(t.shape)
    chunk = max(1, 2_000_000 // max(exponents.size, 1))
    for s in range(0, t.size, chunk):
        tt = t[s : s + chunk, None]
        vals = np.exp(tt * exponents[None, :])
        if phase is not None:
            vals = vals * phase[None, :]
        out[s : s + chunk] = vals.real.mean(axis=1)
    return out


def return_probability(k: WalkKernel, t):
    """Torus return probability a_t(0, 0) via the Fourier sum."""
    ts, scalar = _as_times(t)
    out = _semigroup_sum(k.symbol - k.total_rate, ts)
    return float(out[0]) if scalar else out


def transition_probability(k: WalkKernel, t: float, site: Sequence[int]) -> float:
    """Torus transition probability a_t(0, site) via full Fourier inversion."""
    phi = k.torus.frequencies()
    phase = np.exp(-1j * phi @ np.asarray(site, dtype=float))
    return float(_semigroup_sum(k.symbol - k.total_rate, np.array([float(t)]), phase)[0])


def convolved_return(k1: WalkKernel, k2: WalkKernel, t):
    """(a1_t * a2_t)(0,0) on the torus with both symbols normalised to rate 1."""
    if k1.torus != k2.torus:
        raise ValueError(f"kernels live on different tori: {k1.torus} vs {k2.torus}")
    ts, scalar = _as_times(t)
    expo = (k1.symbol / k1.total_rate - 1.0) + (k2.symbol / k2.total_rate - 1.0)
    out = _semigroup_sum(expo, ts)
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------- infinite lattice


def _graded_rule(n_panels: int = 60, order: int = 16, lo: float = 1e-15):
    """Gauss-Legendre rule on [0, pi] with panels refined geometrically at 0."""
    edges = np.concatenate([[0.0], np.geomspace(lo, np.pi, n_panels)])
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
    weights = (0.5 * (b - a) * w).ravel()
    return nodes, weights


_RULE = _graded_rule()


def _factor_integral(gap_vals: np.ndarray, weights: np.ndarray, t: np.ndarray, norm: float):
    out = np.empty(t.shape)
    chunk = max(1, 4_000_000 // gap_vals.size)
    for s in range(0, t.size, chunk):
        out[s : s + chunk] = np.exp(-t[s : s + chunk, None] * gap_vals[None, :]) @ weights
    return out * norm


def _lattice_gap_profile(k: WalkKernel, scale: float):
    """Per-axis gap values on the quadrature rule (separable kernels)."""
    nodes, _ = _RULE
    return [k.axis_gap(ax, nodes) * scale for ax in range(k.torus.d)]


def _lattice_value(kernels: Sequence[tuple[WalkKernel, float]], t: np.ndarray) -> np.ndarray:
    """Lattice return probability of a sum of independent walks.

    ``kernels`` lists (kernel, time-scale) pairs; the combined gap is the sum
    of the scaled gaps.
    """
    d = kernels[0][0].torus.d
    nodes, weights = _RULE
    if all(k.axis_separable for k, _ in kernels):
        out = np.ones(t.shape)
        for ax in range(d):
            gap = sum(k.axis_gap(ax, nodes) * s for k, s in kernels)
            # even in phi, so integrate over [0, pi] and divide by pi
            out *= _factor_integral(gap, weights, t, 1.0 / np.pi)
        return out
    if d > 2:
        raise ValueError("non-axis kernels are supported on the lattice only for d <= 2")
    full_nodes = np.concatenate([-nodes[::-1], nodes])
    full_w = np.concatenate([weights[::-1], weights])
    grid = np.stack(np.meshgrid(*([full_nodes] * d), indexing="ij"), axis=-1).reshape(-1, d)
    w = np.prod(np.stack(np.meshgrid(*([full_w] * d), indexing="ij"), axis=-1), axis=-1).ravel()
    gap = sum(k.lattice_gap(grid) * s for k, s in kernels)
    return _factor_integral(gap, w, t, (2 * np.pi) ** (-d))


def lattice_return_probability(k: WalkKernel, t):
    """Return probability on the infinite lattice Z^d for the kernel's offsets."""
    ts, scalar = _as_times(t)
    out = _lattice_value([(k, 1.0)], ts)
    return float(out[0]) if scalar else out


def lattice_convolved_return(k1: WalkKernel, k2: WalkKernel, t):
    """(a1_t * a2_t)(0,0) on Z^d with both kernels run at jump rate 1."""
    if k1.torus.d != k2.torus.d:
        raise ValueError("kernels have different dimensions")
    ts, scalar = _as_times(t)
    out = _lattice_value([(k1, 1.0 / k1.total_rate), (k2, 1.0 / k2.total_rate)], ts)
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------- tail integrals


@dataclass(frozen=True)
class TailIntegral:
    """Result of an integral over [1, inf) with power-law tail extrapolation.

    ``verdict`` is ``"finite"``, ``"divergent"`` or ``"inconclusive"``.
    ``exponent`` is the extrapolated decay exponent p of the integrand.
    ``boundary`` is set when p lies within the boundary tolerance of 1.
    """

    value: float
    verdict: str
    exponent: float
    boundary: bool
    quadrature: float
    tail: float
    local_exponents: tuple[float, ...]
    certificate: str

    @property
    def finite(self) -> bool:
        return self.verdict == "finite"

    def as_dict(self) -> dict:
        return {
            "value": self.value if math.isfinite(self.value) else str(self.value),
            "verdict": self.verdict,
            "exponent": self.exponent,
            "boundary": self.boundary,
            "quadrature": self.quadrature,
            "tail": self.tail,
            "local_exponents": list(self.local_exponents),
            "certificate": self.certificate,
        }


def _decade_slope(lt: np.ndarray, lf: np.ndarray, lo: float, hi: float) -> float:
    sel = (lt >= lo - 1e-12) & (lt <= hi + 1e-12)
    slope = np.polyfit(lt[sel], lf[sel], 1)[0]
    return float(-slope)


def integrate_power_tail(
    f: Callable[[np.ndarray], np.ndarray],
    t_max: float = 1e6,
    boundary_tol: float = 0.02,
    points_per_decade: int = 200,
    log_tol: float = 1e-3,
) -> TailIntegral:
    """Integrate ``f`` over [1, inf).

    The integrand is evaluated on a log-spaced grid over [1, t_max] and
    integrated with Simpson's rule in log t.  The decay exponent p is fitted
    on the last three decades and extrapolated (Aitken) to remove slowly
    vanishing corrections.  A tail ``f(t_max) t_max / (p - 1)`` is added when
    p > 1 + boundary_tol, the integral is divergent when p < 1 - boundary_tol,
    and inside the band it is inconclusive unless ``t f(t)`` is flat to
    ``log_tol`` precision, which certifies logarithmic divergence.
    """
    if t_max <= 1000:
        raise ValueError("t_max must exceed 1e3 to fit three tail decades")
    decades = math.log10(t_max)
    n = int(points_per_decade * decades) | 1
    ts = np.logspace(0.0, decades, n)
    fs = np.asarray(f(ts), dtype=float)
    if np.any(~np.isfinite(fs)) or np.any(fs < 0):
        raise ValueError("integrand must be finite and nonnegative on [1, t_max]")
    lt = np.log(ts)
    quad = float(simpson(fs * ts, x=lt))
    positive = fs > 0
    if not np.all(positive[-n // 2 :]):
        # integrand vanishes identically in the tail
        return TailIntegral(quad, "finite", math.inf, False, quad, 0.0, (), "vanishing tail")
    lf = np.log(fs)
    top = lt[-1]
    ln10 = math.log(10.0)
    p = tuple(
        _decade_slope(lt, lf, top - (k + 1) * ln10, top - k * ln10) for k in (2, 1, 0)
    )
    p1, p2, p3 = p
    d1, d2 = p2 - p1, p3 - p2
    p_inf = p3
    if abs(d1) > 1e-12 and 0 < d2 / d1 < 0.9:
        p_inf = p3 - d2 * d2 / (d2 - d1)
    boundary = abs(p_inf - 1.0) <= boundary_tol
    if p_inf > 1.0 + boundary_tol:
        tail = float(fs[-1] * ts[-1] / (p_inf - 1.0))
        return TailIntegral(quad + tail, "finite", p_inf, False, quad, tail, p, "power tail")
    if p_inf < 1.0 - boundary_tol:
        return TailIntegral(math.inf, "divergent", p_inf, False, quad, math.inf, p, "power tail")
    last = ts >= t_max / 10
    tf = fs[last] * ts[last]
    flat = (tf.max() - tf.min()) / tf.mean()
    if abs(p_inf - 1.0) <= log_tol and flat <= 10 * log_tol:
        return TailIntegral(math.inf, "divergent", p_inf, True, quad, math.inf, p, "logarithmic")
    return TailIntegral(math.nan, "inconclusive", p_inf, True, quad, math.nan, p, "boundary")


@dataclass(frozen=True)
class DegreeEstimate:
    lower: float
    upper: float
    boundary: bool
    verdicts: tuple[tuple[float, str], ...]

    @property
    def estimate(self) -> float:
        if math.isinf(self.upper):
            return math.inf
        return 0.5 * (self.lower + self.upper)


def walk_degree(
    k: WalkKernel | Callable[[np.ndarray], np.ndarray],
    zeta_grid: Sequence[float],
    t_max: float = 1e6,
    boundary_tol: float = 0.02,
) -> DegreeEstimate:
    """Bracket sup{zeta > -1 : int_1^inf t^zeta a_t(0,0) dt < inf}.

    ``k`` is either a kernel (lattice return probability is used) or a
    callable giving the return probability directly.
    """
    grid = sorted(float(z) for z in zeta_grid)
    if any(z <= -1 for z in grid):
        raise ValueError("zeta grid must lie in (-1, inf)")
    ret = k if callable(k) and not isinstance(k, WalkKernel) else (
        lambda t: lattice_return_probability(k, t)
    )
    ts_cache: dict = {}

    def cached(t):
        key = (t[0], t[-1], t.size)
        if key not in ts_cache:
            ts_cache[key] = np.asarray(ret(t), dtype=float)
        return ts_cache[key]

    verdicts = []
    boundary = False
    lower, upper = -1.0, math.inf
    for z in grid:
        res = integrate_power_tail(lambda t, z=z: t**z * cached(t), t_max, boundary_tol)
        verdicts.append((z, res.verdict))
        boundary |= res.boundary
        if res.verdict == "finite":
            lower = max(lower, z)
        elif res.verdict == "divergent":
            upper = min(upper, z)
    return DegreeEstimate(lower, upper, boundary, tuple(verdicts))


def decay_exponent(ts: np.ndarray, fs: np.ndarray) -> float:
    """Least-squares exponent p of fs ~ ts^-p."""
    return float(-np.polyfit(np.log(ts), np.log(fs), 1)[0])
