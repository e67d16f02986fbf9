import numpy as np
import pytest

import oracles as O
from seedbank_lab.duality import (
    MomentSpec,
    dual_moment,
    duality_gap,
    first_moment_check,
    forward_moment,
    generator_identity_check,
    random_probe,
    run_battery,
)
from seedbank_lab.forward import DiffusionFunction
from seedbank_lab.lattice import Torus, kernel_from_literal, simple_walk
from seedbank_lab.seedbank import Explicit, Single
from seedbank_lab.system import SeedBankSystem


def colony():
    return SeedBankSystem(1, simple_walk(Torus(1, 1)), Single(1.0, 1.0))


def small(model):
    tor = Torus(1, 3)
    sb = Single(1.0, 2.0) if model == 1 else Explicit((1.0, 0.5), (1.0, 2.0))
    disp = kernel_from_literal(tor, [[0, 0.2], [1, 0.5], [-1, 0.3]], normalized=True) if model == 3 else None
    return SeedBankSystem(model, simple_walk(tor), sb, disp)


def test_moment_spec_validation():
    with pytest.raises(ValueError):
        MomentSpec.of({0: 3, 1: 2})
    with pytest.raises(ValueError):
        MomentSpec.of({})
    spec = MomentSpec.from_sites(small(2), {0: 1}, {(2, 1): 2})
    assert spec.degree == 3
    assert spec.label(small(2)) == "(0,A)^1*(2,D1)^2"


def test_forward_moment_rejects_non_fisher_wright():
    with pytest.raises(ValueError, match="g_FW"):
        forward_moment(colony(), DiffusionFunction.kimura_ohta(1.0), np.array([0.5, 0.5]),
                       MomentSpec.of({0: 2}), [1.0], 10, seed=1)


def test_trivial_identities():
    g = DiffusionFunction.fisher_wright(1.0)
    spec = MomentSpec.of({0: 2})
    ones = np.ones(2)
    f = forward_moment(colony(), g, ones, spec, [0.5], 50, seed=1)
    b = dual_moment(colony(), 1.0, ones, spec, [0.5], 50, seed=1)
    assert f.mean[0] == 1.0 and b.mean[0] == 1.0
    zeros = np.zeros(2)
    f0 = forward_moment(colony(), g, zeros, spec, [0.5], 50, seed=1)
    b0 = dual_moment(colony(), 1.0, zeros, spec, [0.5], 50, seed=1)
    assert duality_gap(f0.mean[0], f0.se[0], b0.mean[0], b0.se[0]) == 0.0
    z0 = np.array([0.3, 0.9])
    assert forward_moment(colony(), g, z0, spec, [0.0, 0.1], 20, seed=1).mean[0] == pytest.approx(0.09)


def test_one_colony_second_moment_both_sides():
    z0 = np.array([0.5, 0.5])
    spec = MomentSpec.of({0: 2})
    b = dual_moment(colony(), 1.0, z0, spec, [1.0], 20000, seed=2)
    assert b.exact[0] == pytest.approx(O.PAIR_X2_T1, rel=1e-9)
    assert abs(b.mean[0] - b.exact[0]) <= 3 * b.se[0]
    f = forward_moment(colony(), DiffusionFunction.fisher_wright(1.0), z0, spec, [1.0], 20000,
                       seed=2, dt=0.002)
    assert abs(duality_gap(f.mean[0], f.se[0], b.mean[0], b.se[0])) <= 3


def test_one_lineage_long_run_limit():
    K = 2.0
    system = SeedBankSystem(1, simple_walk(Torus(1, 1)), Single(K, 1.0))
    z = np.array([0.2, 0.8])
    b = dual_moment(system, 1.0, z, MomentSpec.of({0: 1}), [50.0], 100, seed=3)
    assert b.exact[0] == pytest.approx(0.2 / (1 + K) + 0.8 * K / (1 + K), rel=1e-9)


def test_duality_gap_edge_cases():
    assert duality_gap(1.0, 0.0, 1.0, 0.0) == 0.0
    assert duality_gap(1.0, 0.0, 0.5, 0.0) == float("inf")
    assert duality_gap(1.0, 0.3, 0.4, 0.4) == pytest.approx(1.2)


@pytest.mark.parametrize("model", [1, 2, 3])
def test_generator_identity_random_probes(model):
    system = small(model)
    rng = np.random.default_rng(model)
    worst = 0.0
    for _ in range(50):
        z, spec = random_probe(system, rng)
        worst = max(worst, abs(generator_identity_check(system, z, spec, d=1.7)))
    assert worst <= 1e-10


def test_generator_identity_degree_one_exact():
    system = small(3)
    z = np.random.default_rng(0).random(system.n_states)
    for u in range(system.n_states):
        assert abs(generator_identity_check(system, z, MomentSpec.of({u: 1}))) < 1e-14


def test_generator_identity_detects_wrong_rate():
    # the dual at rate 2d no longer matches noise sqrt(d g_FW)
    system = small(1)
    z = np.full(system.n_states, 0.4)
    spec = MomentSpec.of({0: 2})
    good = generator_identity_check(system, z, spec, d=1.0)
    from seedbank_lab.duality import _dual_generator
    from seedbank_lab.forward import Monomial, generator_apply

    gh = generator_apply(system, Monomial({0: 2}), z, DiffusionFunction.fisher_wright(1.0))
    bad = gh - _dual_generator(system, 2.0, z, spec.counts(system.n_states))
    assert abs(good) < 1e-14 and abs(bad) > 0.1


def test_small_battery_passes():
    system = small(2)
    specs = [MomentSpec.of({0: 2}), MomentSpec.of({0: 1, 4: 1})]
    z0 = np.linspace(0.2, 0.8, system.n_states)
    cases = run_battery(system, 1.0, z0, specs, [0.5, 1.0], 4000, seed=5)
    assert len(cases) == 4
    assert sum(c.passed for c in cases) >= 3
    assert all(c.exact is not None for c in cases)


def test_first_moment_check_kimura_ohta():
    system = small(2)
    z0 = np.linspace(0.1, 0.9, system.n_states)
    cases = first_moment_check(system, DiffusionFunction.kimura_ohta(1.0), z0, [0.5, 1.0], 3000,
                               seed=6, sites=(0, 4))
    assert sum(c.passed for c in cases) >= 3
