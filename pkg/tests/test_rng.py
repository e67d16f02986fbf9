import numpy as np
import pytest

from seedbank_lab import rng


def test_streams_are_keyed_by_tag_and_index():
    a = rng.generator(5, 0, "forward").random(4)
    assert np.array_equal(a, rng.generator(5, 0, "forward").random(4))
    assert not np.array_equal(a, rng.generator(5, 1, "forward").random(4))
    assert not np.array_equal(a, rng.generator(5, 0, "dual").random(4))
    assert not np.array_equal(a, rng.generator(6, 0, "forward").random(4))


def test_blocks_cover_all_replicas():
    spans = [(s, n) for s, n, _ in rng.blocks(1, 5000, "x", block_size=2048)]
    assert spans == [(0, 2048), (2048, 2048), (4096, 904)]


def test_replica_seeds_prefix_stable():
    a = rng.replica_seeds(3, 100, "t")
    b = rng.replica_seeds(3, 40, "t")
    assert np.array_equal(a[:40], b)


@pytest.mark.parametrize("bad", [None, -1])
def test_master_seed_required(bad):
    with pytest.raises(ValueError):
        rng.generator(bad, 0, "x")


def test_zero_replicas_rejected():
    with pytest.raises(ValueError):
        list(rng.blocks(1, 0, "x"))
