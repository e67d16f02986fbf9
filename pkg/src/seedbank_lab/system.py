"""Effective geographic space G x {A, D_0, ..., D_{M-1}} and the lineage kernel.

Coordinates are laid out layer-major: index ``layer * n + site`` with layer 0
the active layer and layer ``1 + m`` the dormant layer of colour m.  The
same single-lineage rate matrix drives the forward drift (``Q z``) and the
dual lineage moves, so both sides are built from one place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import sparse

from .lattice import Torus, WalkKernel, point_mass
from .seedbank import Asymptotic, SeedBankSpec, Single

__all__ = ["SeedBankSystem"]


@dataclass(frozen=True)
class SeedBankSystem:
    """Model choice plus migration, seed-bank and displacement data.

    ``model`` is 1, 2 or 3.  Model 1 takes a ``Single`` seed-bank.  Model 3
    takes one displacement kernel shared by all colours or a sequence with
    one kernel per colour.
    """

    model: int
    kernel: WalkKernel
    seedbank: SeedBankSpec
    displacement: WalkKernel | tuple[WalkKernel, ...] | None = None

    def __post_init__(self) -> None:
        if self.model not in (1, 2, 3):
            raise ValueError(f"model must be 1, 2 or 3, got {self.model}")
        if self.model == 1 and not isinstance(self.seedbank, Single):
            raise ValueError("model 1 needs a single-colour seed-bank")
        if self.model == 3:
            if self.displacement is None:
                raise ValueError("model 3 needs displacement kernel(s)")
            for k in self.displacement_kernels:
                if not k.normalized:
                    raise ValueError("displacement kernels must be probability kernels")
                if k.torus != self.kernel.torus:
                    raise ValueError("displacement and migration kernels live on different tori")
        if isinstance(self.seedbank, Asymptotic):
            self.seedbank.truncation  # raises when untruncated

    @property
    def torus(self) -> Torus:
        return self.kernel.torus

    @property
    def n_sites(self) -> int:
        return self.torus.n_sites

    @cached_property
    def colours(self) -> tuple[np.ndarray, np.ndarray]:
        return self.seedbank.colours()

    @property
    def n_colours(self) -> int:
        return len(self.colours[0])

    @property
    def n_states(self) -> int:
        return self.n_sites * (1 + self.n_colours)

    @property
    def rho(self) -> float:
        """rho of the simulated (possibly truncated) colours."""
        return float(np.sum(self.colours[0]))

    @property
    def chi(self) -> float:
        K, e = self.colours
        return float(np.sum(K * e))

    @property
    def neglected_rate(self) -> float:
        return float(self.seedbank.neglected_rate)

    @cached_property
    def displacement_kernels(self) -> tuple[WalkKernel, ...]:
        if self.model != 3:
            return tuple(point_mass(self.torus) for _ in range(self.n_colours))
        disp = self.displacement
        if isinstance(disp, WalkKernel):
            return tuple(disp for _ in range(self.n_colours))
        disp = tuple(disp)
        if len(disp) != self.n_colours:
            raise ValueError(f"need {self.n_colours} displacement kernels, got {len(disp)}")
        return disp

    def state_index(self, site: int, layer: int) -> int:
        """layer 0 is active, layer 1 + m is dormant colour m."""
        return layer * self.n_sites + site

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(..., S) -> active (..., n) and dormant (..., M, n)."""
        n = self.n_sites
        x = z[..., :n]
        y = z[..., n:].reshape(z.shape[:-1] + (self.n_colours, n))
        return x, y

    def join(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.concatenate([x, y.reshape(y.shape[:-2] + (-1,))], axis=-1)

    @cached_property
    def rate_matrix(self) -> sparse.csr_matrix:
        """Off-diagonal lineage rates b(u, v) on the effective space."""
        n = self.n_sites
        K, e = self.colours
        rows, cols, vals = [], [], []
        mig = self.kernel.transition_matrix("coo")
        keep = mig.row != mig.col
        rows.append(mig.row[keep])
        cols.append(mig.col[keep])
        vals.append(mig.data[keep])
        for m, disp in enumerate(self.displacement_kernels):
            d = disp.transition_matrix("coo")
            # b((i,A),(j,D_m)) = K_m e_m a_m(j,i)
            rows.append(d.col)
            cols.append((1 + m) * n + d.row)
            vals.append(K[m] * e[m] * d.data)
            # b((i,D_m),(j,A)) = e_m a_m(i,j)
            rows.append((1 + m) * n + d.row)
            cols.append(d.col)
            vals.append(e[m] * d.data)
        S = self.n_states
        mat = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(S, S)
        ).tocsr()
        mat.sum_duplicates()
        return mat

    @cached_property
    def out_rates(self) -> np.ndarray:
        return np.asarray(self.rate_matrix.sum(axis=1)).ravel()

    @cached_property
    def generator(self) -> sparse.csr_matrix:
        """Q = b - diag(row sums); forward drift is Q z."""
        return (self.rate_matrix - sparse.diags(self.out_rates)).tocsr()

    def dense_generator(self) -> np.ndarray:
        return self.generator.toarray()

    @cached_property
    def jump_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Padded destination and cumulative-probability tables per state."""
        mat = self.rate_matrix
        S = self.n_states
        width = max(int(np.diff(mat.indptr).max()), 1)
        dest = np.full((S, width), -1, dtype=np.int64)
        cum = np.ones((S, width))
        for u in range(S):
            lo, hi = mat.indptr[u], mat.indptr[u + 1]
            if hi == lo:
                continue
            r = mat.data[lo:hi]
            dest[u, : hi - lo] = mat.indices[lo:hi]
            c = np.cumsum(r) / r.sum()
            c[-1] = 1.0
            cum[u, : hi - lo] = c
            cum[u, hi - lo :] = 1.0
            dest[u, hi - lo :] = mat.indices[hi - 1]
        return dest, cum

    def first_moment(self, z0: np.ndarray, t: float) -> np.ndarray:
        """Sum_v b_t(u, v) z_v: the lineage semigroup applied to z0."""
        from scipy.sparse.linalg import expm_multiply

        return expm_multiply(self.generator * float(t), np.asarray(z0, dtype=float))

    def theta(self, z: np.ndarray) -> np.ndarray:
        """Volume-averaged preserved density (x + sum K_m y_m) / (1 + rho)."""
        x, y = self.split(np.asarray(z, dtype=float))
        K, _ = self.colours
        tot = x + np.tensordot(y, K, axes=([-2], [0]))
        return tot.mean(axis=-1) / (1.0 + K.sum())

    def effective_label(self, u: int) -> str:
        layer, site = divmod(u, self.n_sites)
        tag = "A" if layer == 0 else f"D{layer - 1}"
        return f"({site},{tag})"
