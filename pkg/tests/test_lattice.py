import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles as O
from seedbank_lab.lattice import (
    Torus,
    WalkKernel,
    convolved_return,
    decay_exponent,
    drifted_2d,
    integrate_power_tail,
    kernel_from_literal,
    lattice_convolved_return,
    lattice_return_probability,
    point_mass,
    power_law_1d,
    return_probability,
    simple_walk,
    symmetrize,
    transition_probability,
    walk_degree,
)


def test_torus_wraps_and_indexes():
    tor = Torus(2, 5)
    assert tor.n_sites == 25
    assert tor.wrap((-1, 7)) == (4, 2)
    assert tor.coords(tor.index((3, 4))) == (3, 4)


def test_kernel_rejects_bad_input():
    tor = Torus(1, 4)
    with pytest.raises(ValueError):
        WalkKernel(tor, ((1,),), (-1.0,))
    with pytest.raises(ValueError):
        WalkKernel(tor, ((1, 0),), (1.0,))
    with pytest.raises(ValueError):
        kernel_from_literal(tor, [[1, 0.3]], normalized=True)


@pytest.mark.parametrize("t", sorted(O.TORUS8_RETURN))
def test_torus_return_matches_cycle_expm(t):
    k = simple_walk(Torus(1, 8))
    assert return_probability(k, t) == pytest.approx(O.TORUS8_RETURN[t], rel=1e-12)


def test_transition_probability_matches_cycle_expm():
    k = simple_walk(Torus(1, 8))
    assert transition_probability(k, 2.0, (3,)) == pytest.approx(O.TORUS8_P03_T2, rel=1e-10)


def test_torus_return_saturates_at_inverse_volume():
    k = simple_walk(Torus(2, 6))
    assert return_probability(k, 1e4) == pytest.approx(1 / 36, rel=1e-9)


@pytest.mark.parametrize("t", sorted(O.RETURN_1D))
def test_lattice_return_1d_is_bessel(t):
    k = simple_walk(Torus(1, 4))
    assert lattice_return_probability(k, t) == pytest.approx(O.RETURN_1D[t], rel=1e-10)


@pytest.mark.parametrize("t", sorted(O.RETURN_3D))
def test_lattice_return_3d_is_bessel_cubed(t):
    k = simple_walk(Torus(3, 4))
    assert lattice_return_probability(k, t) == pytest.approx(O.RETURN_3D[t], rel=1e-10)


def test_nonseparable_grid_agrees_with_separable_route():
    tor = Torus(2, 4)
    sep = simple_walk(tor)
    diag = kernel_from_literal(tor, [[(1, 0), 0.25], [(-1, 0), 0.25], [(0, 1), 0.25],
                                     [(0, -1), 0.25], [(1, 1), 1e-300]])
    assert not diag.axis_separable
    ts = np.array([1.0, 30.0, 1000.0])
    np.testing.assert_allclose(lattice_return_probability(diag, ts),
                               lattice_return_probability(sep, ts), rtol=1e-8)


@pytest.mark.parametrize("delta", sorted(O.POWER_LAW_GAP))
def test_power_law_gap_matches_polylog(delta):
    k = power_law_1d(Torus(1, 64), delta)
    for phi, v in O.POWER_LAW_GAP[delta].items():
        assert float(k.lattice_gap(np.array([[phi]]))[0]) == pytest.approx(v, rel=1e-8)


def test_power_law_is_normalized_and_symmetric():
    k = power_law_1d(Torus(1, 16), 2.5)
    assert k.total_rate == pytest.approx(1.0)
    assert k.is_symmetric()


def test_symmetrize_drifted_kernel():
    k = drifted_2d(Torus(2, 4), 0.6)
    assert not k.is_symmetric()
    s = symmetrize(k)
    assert s.is_symmetric()
    assert s.total_rate == pytest.approx(k.total_rate)


def test_irreducibility():
    tor = Torus(1, 6)
    assert simple_walk(tor).is_irreducible()
    assert not kernel_from_literal(tor, [[2, 1.0]]).is_irreducible()


def test_convolved_return_rejects_mismatched_tori():
    with pytest.raises(ValueError):
        convolved_return(simple_walk(Torus(1, 4)), simple_walk(Torus(1, 6)), 1.0)


def test_convolved_with_point_mass_is_plain_return():
    tor = Torus(1, 8)
    k = simple_walk(tor)
    ts = np.array([0.5, 3.0])
    np.testing.assert_allclose(convolved_return(k, point_mass(tor), ts), return_probability(k, ts),
                               rtol=1e-12)
    np.testing.assert_allclose(lattice_convolved_return(k, point_mass(tor), ts),
                               lattice_return_probability(k, ts), rtol=1e-10)


@settings(max_examples=25, deadline=None)
@given(L=st.integers(2, 9), t=st.floats(0.01, 50.0))
def test_torus_return_between_volume_floor_and_one(L, t):
    p = return_probability(simple_walk(Torus(1, L)), t)
    assert 1.0 / L - 1e-12 <= p <= 1.0 + 1e-12


@settings(max_examples=25, deadline=None)
@given(s=st.floats(0.05, 20.0), t=st.floats(0.05, 20.0))
def test_lattice_return_is_nonincreasing_in_time(s, t):
    k = simple_walk(Torus(2, 4))
    a, b = sorted((s, t))
    assert lattice_return_probability(k, b) <= lattice_return_probability(k, a) + 1e-14


def test_tail_integral_power_laws():
    res = integrate_power_tail(lambda t: t**-1.5)
    assert res.verdict == "finite"
    assert res.value == pytest.approx(2.0, rel=1e-6)
    assert integrate_power_tail(lambda t: t**-0.5).verdict == "divergent"
    log = integrate_power_tail(lambda t: 1.0 / t)
    assert (log.verdict, log.certificate) == ("divergent", "logarithmic")
    near = integrate_power_tail(lambda t: t**-1.01)
    assert near.verdict == "inconclusive" and near.boundary


def test_tail_integral_rejects_negative_integrand():
    with pytest.raises(ValueError):
        integrate_power_tail(lambda t: -np.ones_like(t))


def test_walk_degree_brackets_half_dimension():
    est = walk_degree(simple_walk(Torus(3, 4)), [0.0, 0.25, 0.75, 1.0])
    assert est.lower == 0.25 and est.upper == 0.75
    assert est.estimate == pytest.approx(0.5)


def test_decay_exponent():
    ts = np.geomspace(10, 1e4, 9)
    assert decay_exponent(ts, 3 * ts**-1.7) == pytest.approx(1.7)
