"""Independent reference values, computed without the package and frozen here.

Each frozen table has a recomputation function; ``test_oracles.py`` checks
that the two still agree.
"""

from __future__ import annotations

import numpy as np

# e^{-t} I_0(t): rate-1 nearest-neighbour walk on Z returning to 0.
RETURN_1D = {1.0: 0.4657596075936404, 10.0: 0.12783333716342862, 100.0: 0.03994437929909668}

# (e^{-t/3} I_0(t/3))^3: rate-1 simple walk on Z^3.
RETURN_3D = {1.0: 0.3996211416146251, 10.0: 0.012001746542083165, 100.0: 0.000333713352744982}

# exp(tG)[0, 0] for the rate-1 walk on the 8-cycle, and exp(2G)[0, 3].
TORUS8_RETURN = {0.5: 0.6450352709114215, 2.0: 0.30851581995772415, 10.0: 0.13837488152721447}
TORUS8_P03_T2 = 0.03012098744109776

# 1 - Re Li_delta(e^{i phi}) / zeta(delta) from mpmath polylog.
POWER_LAW_GAP = {
    1.5: {0.01: 0.09594809309252861, 0.5: 0.6685279076757816, 2.0: 1.1955263994876972},
    2.0: {0.01: 0.009534098407967373, 0.5: 0.4394693854098093, 2.0: 1.3019322152487174},
    3.0: {0.01: 0.00025394683331481094, 0.5: 0.22824259980389427, 2.0: 1.389308917784934},
}

# Two lineages in one colony, K = e = d = 1.  States AA, AD, DD, merged with
# AA->AD 2, AA->merged 1, AD->AA 1, AD->DD 1, DD->AD 2.
PAIR_Q = np.array(
    [[-3.0, 2.0, 0.0, 1.0], [1.0, -2.0, 1.0, 0.0], [0.0, 2.0, -2.0, 0.0], [0.0, 0.0, 0.0, 0.0]]
)
PAIR_MEAN_MERGE_TIME = 4.0  # solved by hand from the first-step equations
PAIR_MERGED_BY = {0.5: 0.27567114677581145, 1.0: 0.3798603070625189, 5.0: 0.7131534659757303}
# E[(1/2)^{L(1)}] from AA: the x^2 moment at t = 1 from x = y = 1/2.
PAIR_X2_T1 = 0.3449650767656296


def return_1d(t: float) -> float:
    from scipy.special import ive

    return float(ive(0, t))


def return_3d(t: float) -> float:
    from scipy.special import ive

    return float(ive(0, t / 3) ** 3)


def cycle_generator(L: int) -> np.ndarray:
    A = np.zeros((L, L))
    for i in range(L):
        A[i, (i + 1) % L] += 0.5
        A[i, (i - 1) % L] += 0.5
    return A - np.diag(A.sum(axis=1))


def power_law_gap(delta: float, phi: float) -> float:
    import mpmath

    return float(1 - mpmath.re(mpmath.polylog(delta, mpmath.exp(1j * phi))) / mpmath.zeta(delta))


def pair_merged_by(t: float) -> float:
    from scipy.linalg import expm

    return float(expm(PAIR_Q * t)[0, 3])
