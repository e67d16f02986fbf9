"""Clustering/coexistence dichotomy: integrals, regimes and verdicts."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad

from .lattice import (
    TailIntegral,
    WalkKernel,
    decay_exponent,
    drifted_2d,
    integrate_power_tail,
    lattice_convolved_return,
    lattice_return_probability,
    symmetrize,
    Torus,
)
from .seedbank import Asymptotic, SeedBankSpec, gamma_of

__all__ = [
    "SlowlyVarying",
    "RegimeVerdict",
    "AsymmetricResult",
    "regime_of",
    "dichotomy_integral",
    "classify",
    "asymmetric_diagnostic",
    "theta_of",
]

CLUSTERING = "clustering"
COEXISTENCE = "coexistence"
INCONCLUSIVE = "boundary-inconclusive"


@dataclass(frozen=True)
class SlowlyVarying:
    """A slowly varying modulation phi(t) > 0 of the wake-up density."""

    name: str
    phi: Callable[[np.ndarray], np.ndarray] = field(compare=False)

    @classmethod
    def constant(cls, c: float = 1.0) -> "SlowlyVarying":
        if c <= 0:
            raise ValueError("constant modulation must be positive")
        return cls(f"constant({c})", lambda t: np.full(np.shape(t), float(c)))

    @classmethod
    def log_power(cls, p: float) -> "SlowlyVarying":
        return cls(f"log^{p}", lambda t: np.log(np.e + np.asarray(t, dtype=float)) ** p)

    def phi_hat(self, t: np.ndarray, gamma: float) -> np.ndarray:
        """phi itself for gamma < 1, phi(1) + int_1^t phi(s)/s ds for gamma = 1.

        The constant phi(1) keeps the modulation positive at t = 1; only the
        behaviour at infinity matters for integrability.
        """
        t = np.asarray(t, dtype=float)
        if gamma < 1:
            return self.phi(t)
        top = float(np.max(t))
        grid = np.exp(np.linspace(0.0, math.log(max(top, 1.0)) + 1e-12, 20001))
        vals = cumulative_trapezoid(self.phi(grid), np.log(grid), initial=0.0)
        vals += float(self.phi(np.array([1.0]))[0])
        return np.interp(np.log(t), np.log(grid), vals)

    def variation(self, ts: Sequence[float]) -> np.ndarray:
        """|phi(2t)/phi(t) - 1| on a grid; tends to 0 for slowly varying phi."""
        ts = np.asarray(ts, dtype=float)
        return np.abs(self.phi(2 * ts) / self.phi(ts) - 1.0)


@dataclass(frozen=True)
class RegimeVerdict:
    verdict: str
    regime: str
    integral: TailIntegral
    gamma: float | None
    model: int

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "verdict": self.verdict,
            "regime": self.regime,
            "gamma": self.gamma if self.gamma is not None else "not applicable (rho<inf)",
            "integral": self.integral.as_dict(),
        }


def regime_of(sb: SeedBankSpec) -> str:
    g = gamma_of(sb)
    if g is None or g > 1:
        return "migration-dominated"
    if g >= 0.5:
        return "interplay"
    return "seedbank-dominated"


def _require_symmetric(k: WalkKernel, what: str) -> None:
    if not k.is_symmetric(1e-12):
        raise ValueError(f"{what} must be symmetric for this model")


def dichotomy_integral(
    model: int,
    k: WalkKernel | None,
    sb: SeedBankSpec,
    disp: WalkKernel | None = None,
    slow: SlowlyVarying | None = None,
    t_max: float = 1e6,
    boundary_tol: float = 0.02,
    return_prob: Callable[[np.ndarray], np.ndarray] | None = None,
) -> TailIntegral:
    """The integral whose divergence means clustering.

    ``return_prob`` replaces the lattice return probability, e.g. by a
    closed-form power law.
    """
    if model not in (1, 2, 3):
        raise ValueError(f"model must be 1, 2 or 3, got {model}")
    if return_prob is None:
        if k is None:
            raise ValueError("need a kernel or an explicit return probability")
        if model == 1:
            k = symmetrize(k)
        else:
            _require_symmetric(k, "migration kernel")
        if model == 3:
            if disp is None:
                raise ValueError("model 3 needs a displacement kernel")
            _require_symmetric(disp, "displacement kernel")
            return_prob = lambda t: lattice_convolved_return(k, disp, t)  # noqa: E731
        else:
            return_prob = lambda t: lattice_return_probability(k, t)  # noqa: E731

    gamma = gamma_of(sb) if model != 1 else None
    if gamma is None:
        if slow is not None:
            raise ValueError("slowly varying modulation applies only when rho is infinite")
        return integrate_power_tail(return_prob, t_max, boundary_tol)
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if gamma == 1 and slow is None:
        raise ValueError("gamma = 1 requires a slowly varying modulation")
    power = (1 - gamma) / gamma

    def integrand(t: np.ndarray) -> np.ndarray:
        w = t ** (-power)
        if slow is not None:
            w = w * slow.phi_hat(t, gamma) ** (-1.0 / gamma)
        return w * return_prob(t)

    return integrate_power_tail(integrand, t_max, boundary_tol)


def classify(
    model: int,
    k: WalkKernel | None,
    sb: SeedBankSpec,
    disp: WalkKernel | None = None,
    slow: SlowlyVarying | None = None,
    t_max: float = 1e6,
    boundary_tol: float = 0.02,
    return_prob: Callable[[np.ndarray], np.ndarray] | None = None,
) -> RegimeVerdict:
    """Clustering iff the dichotomy integral diverges."""
    res = dichotomy_integral(model, k, sb, disp, slow, t_max, boundary_tol, return_prob)
    verdict = {"finite": COEXISTENCE, "divergent": CLUSTERING}.get(res.verdict, INCONCLUSIVE)
    regime = "migration-dominated" if model == 1 else regime_of(sb)
    return RegimeVerdict(verdict, regime, res, gamma_of(sb) if model != 1 else None, model)


@dataclass(frozen=True)
class AsymmetricResult:
    exponent: float
    expected: float
    t_grid: tuple[float, ...]
    values: tuple[float, ...]
    integrable: bool
    symmetric_verdict: str


def _asym_f(t: float, gamma: float, c: float, A: float, B: float) -> float:
    """(2pi)^-2 int exp(-B t |phi|^2 - A t |c' (phi1+phi2)|^gamma) over the plane.

    In the rotated coordinates u = (phi1+phi2)/sqrt2, v = (phi1-phi2)/sqrt2
    the v-integral is Gaussian and the u-integral is done on a scale adapted
    to t.  Outside [-pi, pi]^2 the integrand is below exp(-B t pi^2 / 2).
    """
    a = A * t * (c * math.sqrt(2.0)) ** gamma
    scale = min(a ** (-1.0 / gamma), (B * t) ** -0.5)
    integrand = lambda w: math.exp(-B * t * (scale * w) ** 2 - a * (scale * w) ** gamma)  # noqa: E731
    u_int = 2.0 * scale * quad(integrand, 0.0, math.inf, limit=200, epsabs=0, epsrel=1e-11)[0]
    return (2 * math.pi) ** -2 * math.sqrt(math.pi / (B * t)) * u_int


def asymmetric_diagnostic(
    eta: float,
    gamma: float,
    t_grid: Sequence[float] | None = None,
    K: float = 1.0,
    e: float = 1.0,
    C: float = 1.0,
) -> AsymmetricResult:
    """Decay exponent of f(t) for the drifted 2-d walk with stable wake-ups.

    Uses A = chi/(1+rho) and B = 1/(1+rho) with a single colour (K, e) for
    the active-time scales and the constant C in front of eta.  The finite-t
    correction to the exponent decays like t^(1 - 2/gamma), so the default
    grid sits far out in t.
    """
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    if not 1 < gamma < 2:
        raise ValueError(f"gamma must lie in (1, 2), got {gamma}")
    ts = np.geomspace(1e12, 1e18, 13) if t_grid is None else np.asarray(t_grid, dtype=float)
    if np.min(ts) < 10:
        raise ValueError("t grid must start at t >= 10 for the plane approximation")
    A, B = K * e / (1 + K), 1.0 / (1 + K)
    c = 0.5 * C * eta
    fs = np.array([_asym_f(float(t), gamma, c, A, B) for t in ts])
    p = decay_exponent(ts, fs)
    sym = symmetrize(drifted_2d(Torus(2, 4), eta))
    ref = integrate_power_tail(lambda t: lattice_return_probability(sym, t))
    return AsymmetricResult(
        p, 1 / gamma + 0.5, tuple(ts), tuple(fs), p > 1.0, ref.verdict
    )


def asymmetric_f_plane(t: float, eta: float, gamma: float, K=1.0, e=1.0, C=1.0, n=801) -> float:
    """Brute-force tensor-grid evaluation of f(t) over [-pi, pi]^2 (check only)."""
    A, B = K * e / (1 + K), 1.0 / (1 + K)
    width = min(np.pi, 12.0 / math.sqrt(B * t))
    phi = np.linspace(-width, width, n)
    p1, p2 = np.meshgrid(phi, phi, indexing="ij")
    vals = np.exp(-(B * t * (p1**2 + p2**2) + A * t * np.abs(0.5 * C * eta * (p1 + p2)) ** gamma))
    h = phi[1] - phi[0]
    return float(vals.sum() * h * h / (2 * np.pi) ** 2)


def theta_of(
    x: float,
    y: Sequence[float],
    sb: SeedBankSpec,
    tol: float = 1e-2,
) -> float:
    """Preserved density of a single colony with active x and dormant y_m.

    For rho = inf the ratio (x + sum_{m<M} K_m y_m) / (1 + sum_{m<M} K_m) is
    evaluated at dyadic truncations M and must settle to ``tol``.
    """
    y = np.asarray(y, dtype=float)
    vals = np.concatenate([[x], y])
    if np.any(vals < 0) or np.any(vals > 1):
        raise ValueError("frequencies must lie in [0, 1]")
    if isinstance(sb, Asymptotic):
        K, _ = sb.colours(len(y))
    else:
        K, _ = sb.colours()
        if len(K) != len(y):
            raise ValueError(f"need {len(K)} dormant frequencies, got {len(y)}")
    if not (isinstance(sb, Asymptotic) and math.isinf(sb.rho)):
        return float((x + K @ y) / (1 + K.sum()))
    cuts = [len(y) // 2**j for j in range(3, -1, -1) if len(y) // 2**j >= 1]
    ratios = [(x + K[:m] @ y[:m]) / (1 + K[:m].sum()) for m in cuts]
    if len(ratios) < 2 or abs(ratios[-1] - ratios[-2]) > tol:
        raise ValueError(
            "truncated density ratio does not settle; the configuration is not colour-regular"
        )
    return float(ratios[-1])
