import numpy as np
import pytest
from scipy.linalg import expm

import oracles as O


@pytest.mark.parametrize("t", sorted(O.RETURN_1D))
def test_bessel_oracles_frozen(t):
    assert O.return_1d(t) == pytest.approx(O.RETURN_1D[t], rel=1e-13)
    assert O.return_3d(t) == pytest.approx(O.RETURN_3D[t], rel=1e-13)


def test_cycle_oracle_frozen():
    G = O.cycle_generator(8)
    for t, v in O.TORUS8_RETURN.items():
        assert expm(G * t)[0, 0] == pytest.approx(v, rel=1e-12)
    assert expm(G * 2.0)[0, 3] == pytest.approx(O.TORUS8_P03_T2, rel=1e-12)


def test_polylog_oracle_frozen():
    for delta, table in O.POWER_LAW_GAP.items():
        for phi, v in table.items():
            assert O.power_law_gap(delta, phi) == pytest.approx(v, rel=1e-12)


def test_pair_chain_oracle_frozen():
    for t, v in O.PAIR_MERGED_BY.items():
        assert O.pair_merged_by(t) == pytest.approx(v, rel=1e-12)
    T = O.PAIR_Q[:3, :3]
    assert np.linalg.solve(T, -np.ones(3))[0] == pytest.approx(O.PAIR_MEAN_MERGE_TIME, rel=1e-12)
