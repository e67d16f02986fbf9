"""Seed-bank parameters (K_m, e_m) and derived constants."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import zeta

__all__ = ["Single", "Explicit", "Asymptotic", "SeedBankSpec", "gamma_of"]


@dataclass(frozen=True)
class Single:
    """One dormant colour with relative size K and wake-up rate e."""

    K: float
    e: float

    def __post_init__(self) -> None:
        _check_positive("K", self.K)
        _check_positive("e", self.e)

    @property
    def rho(self) -> float:
        return float(self.K)

    @property
    def chi(self) -> float:
        return float(self.K * self.e)

    @property
    def truncation(self) -> int:
        return 1

    def colours(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array([self.K], dtype=float), np.array([self.e], dtype=float)

    @property
    def neglected_rate(self) -> float:
        return 0.0


@dataclass(frozen=True)
class Explicit:
    """Finitely many colours with listed (K_m, e_m)."""

    K: tuple[float, ...]
    e: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.K) != len(self.e) or not self.K:
            raise ValueError("K and e must be nonempty lists of equal length")
        for m, (k, e) in enumerate(zip(self.K, self.e)):
            _check_positive(f"K[{m}]", k)
            _check_positive(f"e[{m}]", e)

    @property
    def rho(self) -> float:
        return float(sum(self.K))

    @property
    def chi(self) -> float:
        return float(sum(k * e for k, e in zip(self.K, self.e)))

    @property
    def truncation(self) -> int:
        return len(self.K)

    def colours(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.K, dtype=float), np.array(self.e, dtype=float)

    @property
    def neglected_rate(self) -> float:
        return 0.0


@dataclass(frozen=True)
class Asymptotic:
    """K_m = A (m+1)^-alpha and e_m = B (m+1)^-beta.

    ``M`` is the number of colours kept by simulations; ``None`` means the
    spec is only used analytically.
    """

    A: float
    alpha: float
    B: float
    beta: float
    M: int | None = 1000

    def __post_init__(self) -> None:
        _check_positive("A", self.A)
        _check_positive("B", self.B)
        if not self.alpha + self.beta > 1:
            raise ValueError(
                f"alpha + beta must exceed 1 so that chi = sum K_m e_m is finite "
                f"(got alpha={self.alpha}, beta={self.beta})"
            )
        if self.M is not None and self.M < 1:
            raise ValueError(f"truncation M must be >= 1, got {self.M}")

    @property
    def rho(self) -> float:
        if self.alpha <= 1:
            return math.inf
        return float(self.A * zeta(self.alpha))

    @property
    def chi(self) -> float:
        return float(self.A * self.B * zeta(self.alpha + self.beta))

    @property
    def truncation(self) -> int:
        if self.M is None:
            raise ValueError("asymptotic seed-bank without truncation cannot be simulated")
        return int(self.M)

    def colours(self, M: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        n = self.truncation if M is None else int(M)
        m1 = np.arange(1, n + 1, dtype=float)
        return self.A * m1 ** (-self.alpha), self.B * m1 ** (-self.beta)

    @property
    def neglected_rate(self) -> float:
        """chi minus the exchange rate carried by the kept colours."""
        K, e = self.colours()
        return max(self.chi - float(np.sum(K * e)), 0.0)

    @property
    def gamma(self) -> float:
        return (self.alpha + self.beta - 1) / self.beta


SeedBankSpec = Union[Single, Explicit, Asymptotic]


def _check_positive(name: str, value: float) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")


def gamma_of(sb: SeedBankSpec) -> float | None:
    """Wake-up tail exponent gamma, or None when rho is finite."""
    if isinstance(sb, Asymptotic) and math.isinf(sb.rho):
        return sb.gamma
    return None

