import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seedbank_lab.dual import exact_dual_oracle
from seedbank_lab.forward import (
    DiffusionFunction,
    Monomial,
    SystemState,
    constant_init,
    coupled_simulate,
    default_dt,
    drift,
    em_step,
    generator_apply,
    second_moment_formula,
    simulate,
    simulate_path,
    uniform_init,
)
from seedbank_lab.lattice import Torus, simple_walk
from seedbank_lab.seedbank import Asymptotic, Explicit, Single
from seedbank_lab.system import SeedBankSystem


def _small():
    return SeedBankSystem(2, simple_walk(Torus(1, 3)), Explicit((1.0, 0.5), (1.0, 2.0)))


@pytest.fixture
def small():
    return _small()


def test_diffusion_functions_validate():
    DiffusionFunction.fisher_wright(2.0).validate()
    DiffusionFunction.kimura_ohta(1.0).validate()
    tab = DiffusionFunction.tabulated([0, 0.5, 1], [0, 0.25, 0])
    assert tab(0.25) == pytest.approx(0.125)
    with pytest.raises(ValueError):
        DiffusionFunction.tabulated([0, 0.5, 1], [0.1, 0.25, 0])
    with pytest.raises(ValueError):
        DiffusionFunction.fisher_wright(-1.0)


def test_kimura_ohta_lipschitz_is_tight():
    g = DiffusionFunction.kimura_ohta(1.0)
    xs = np.linspace(0, 1, 200001)
    assert np.max(np.abs(np.diff(g(xs)) / np.diff(xs))) == pytest.approx(g.lipschitz, rel=1e-6)


def test_state_validation(small):
    with pytest.raises(ValueError):
        SystemState(np.array([0.5, 1.2, 0.0]), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        SystemState(np.zeros(3), np.zeros((2, 4)))


def test_drift_of_constant_state_vanishes(small):
    x, y = drift(SystemState(np.full(3, 0.4), np.full((2, 3), 0.4)), small)
    np.testing.assert_allclose(x, 0, atol=1e-15)
    np.testing.assert_allclose(y, 0, atol=1e-15)


def test_em_step_guard_and_absorbing_state(small):
    rng = np.random.default_rng(0)
    g = DiffusionFunction.fisher_wright(1.0)
    with pytest.raises(ValueError, match="too large"):
        em_step(SystemState(np.ones(3), np.ones((2, 3))), small, g, 0.5, rng)
    s = SystemState(np.ones(3), np.ones((2, 3)))
    out = em_step(s, small, g, default_dt(small, g), rng)
    np.testing.assert_array_equal(out.vector(), s.vector())


def test_em_step_without_noise_is_euler(small):
    g = DiffusionFunction.tabulated([0, 1], [0, 0])
    z = np.linspace(0.1, 0.9, small.n_states)
    s = SystemState.from_vector(small, z)
    out = em_step(s, small, g, 0.01, np.random.default_rng(1))
    np.testing.assert_allclose(out.vector(), z + 0.01 * (small.generator @ z), atol=1e-15)


def test_default_dt_passes_guard(small):
    g = DiffusionFunction.kimura_ohta(3.0)
    dt = default_dt(small, g)
    assert dt * (small.kernel.total_rate + small.chi) <= 0.1


def test_simulation_is_reproducible_and_block_local(small):
    g = DiffusionFunction.fisher_wright(1.0)
    z0 = constant_init(small, 0.3, [0.6, 0.2])
    a = simulate(small, g, z0, [0.2], 2100, seed=9)
    b = simulate(small, g, z0, [0.2], 2100, seed=9)
    c = simulate(small, g, z0, [0.2], 2048, seed=9)
    np.testing.assert_array_equal(a.samples["theta"], b.samples["theta"])
    # the first block does not depend on how many replicas follow it
    np.testing.assert_array_equal(a.samples["theta"][:, :2048], c.samples["theta"])


def test_output_times_validated(small):
    g = DiffusionFunction.fisher_wright(1.0)
    with pytest.raises(ValueError):
        simulate(small, g, constant_init(small, 0.5, 0.5), [1.0, 0.5], 10, seed=1)


def test_single_colony_mean_follows_linear_ode():
    system = SeedBankSystem(1, simple_walk(Torus(1, 1)), Single(1.0, 1.0))
    g = DiffusionFunction.fisher_wright(1.0)
    z0 = np.array([1.0, 0.0])
    run = simulate(system, g, z0, [0.25, 0.5, 1.0], 4000, seed=3, dt=0.001)
    mean, se = run.estimate("mean_x0")
    exact = 0.5 * (1 + np.exp(-2 * run.times))
    assert np.all(np.abs(mean - exact) <= 4 * se + 2e-3)


def test_uniform_init_shapes(small):
    Z = uniform_init(small)(np.random.default_rng(0), 5)
    assert Z.shape == (5, small.n_states)


def test_simulate_path_states(small):
    g = DiffusionFunction.fisher_wright(1.0)
    start = SystemState.from_vector(small, np.full(small.n_states, 0.5))
    states = simulate_path(small, g, start, [0.1, 0.2], np.random.default_rng(2))
    assert [s.t for s in states] == [0.1, 0.2]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), u=st.integers(0, 8))
def test_generator_on_degree_one_is_the_drift(seed, u):
    small = _small()
    z = np.random.default_rng(seed).random(small.n_states)
    g = DiffusionFunction.fisher_wright(1.0)
    val = generator_apply(small, Monomial({u: 1}), z, g)
    assert val == pytest.approx(float((small.generator @ z)[u]), abs=1e-13)


def test_generator_on_square_adds_half_g(small):
    z = np.linspace(0.1, 0.9, small.n_states)
    g = DiffusionFunction.fisher_wright(2.0)
    expected = 2 * z[0] * (small.generator @ z)[0] + 0.5 * 2 * 2.0 * z[0] * (1 - z[0])
    assert generator_apply(small, Monomial({0: 2}), z, g) == pytest.approx(expected)


def test_monomial_derivatives():
    m = Monomial({0: 2, 3: 1})
    z = np.array([0.5, 0.0, 0.0, 0.2])
    assert m.value(z) == pytest.approx(0.05)
    assert m.grad(z) == pytest.approx({0: 0.2, 3: 0.25})
    assert m.hess_diag(z) == pytest.approx({0: 0.4, 3: 0.0})
    assert m.degree == 3


def test_second_moment_formula_agrees_with_exact_dual():
    # two routes to E[x_0(t) x_1(t)]: forward second-moment formula fed with
    # exact E[g(x_k(s))], and the enumerated two-lineage dual
    system = SeedBankSystem(1, simple_walk(Torus(1, 3)), Single(1.0, 2.0))
    d = 1.5
    z0 = np.array([0.9, 0.2, 0.5, 0.1, 0.7, 0.4])
    S = system.n_states
    t = 0.8
    s_grid = np.linspace(0.0, t, 81)
    n = system.n_sites
    g_means = np.empty((s_grid.size, n))
    for k in range(n):
        one = np.zeros(S, dtype=int)
        one[k] = 1
        two = np.zeros(S, dtype=int)
        two[k] = 2
        e1 = exact_dual_oracle(system, d, one)
        e2 = exact_dual_oracle(system, d, two)
        for j, s in enumerate(s_grid):
            g_means[j, k] = d * (e1.expectation(z0, s) - e2.expectation(z0, s))
    pair = np.zeros(S, dtype=int)
    pair[0] = pair[1] = 1
    exact = exact_dual_oracle(system, d, pair).expectation(z0, t)
    got = second_moment_formula(system, z0, 0, 1, t, s_grid, g_means)
    assert got == pytest.approx(exact, rel=1e-6)


def test_coupling_of_identical_copies_stays_zero(small):
    g = DiffusionFunction.fisher_wright(1.0)
    z0 = constant_init(small, 0.3, 0.6)
    path = coupled_simulate(small, g, (z0, z0), [0.1, 0.2], 50, seed=4)
    np.testing.assert_array_equal(path.mean, 0.0)


def test_coupling_rejects_infinite_rho():
    system = SeedBankSystem(2, simple_walk(Torus(1, 2)), Asymptotic(1.0, 0.5, 1.0, 1.0, M=8))
    assert math.isinf(system.seedbank.rho)
    with pytest.raises(ValueError, match="finite"):
        coupled_simulate(system, DiffusionFunction.fisher_wright(1.0),
                         (uniform_init(system), uniform_init(system)), [0.1], 10, seed=1)


@settings(max_examples=40, deadline=None)
@given(y=st.floats(0.0, 1.0), s=st.floats(1e-6, 0.3))
def test_bounded_increment_keeps_mean_variance_and_range(y, s):
    from scipy.special import ndtri

    from seedbank_lab.forward import _bounded_increment

    # Phi^-1 of a fine uniform grid: the empirical law of xi is nearly exact
    u = (np.arange(200_000) + 0.5) / 200_000
    xi = ndtri(u)
    inc, bad = _bounded_increment(np.full(u.size, y), np.full(u.size, s), xi)
    lands = y + inc
    if s * s > y * (1 - y):
        assert bad == u.size and lands.min() >= 0.0 and lands.max() <= 1.0
    else:
        assert bad == 0
        assert lands.min() >= 0.0 and lands.max() <= 1.0
        assert abs(inc.mean()) <= 1e-4 * s + 1e-12
        assert inc.var() == pytest.approx(s * s, rel=2e-3)
