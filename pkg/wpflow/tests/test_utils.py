"""
Unit tests for seed derivation and the chunk pool
"""

import numpy as np

from wpflow.utils.parallel import map_chunks
from wpflow.utils.seeding import chunk_sizes, derive_rng, derive_seed, label_code


class TestSeeding:
    """Test reproducible stream derivation"""

    def test_label_code_is_stable(self):
        assert label_code("V_eps") == label_code("V_eps")
        assert label_code("V_eps") != label_code("E_rho")
        assert 0 <= label_code("anything") < 2 ** 32

    def test_same_key_same_stream(self):
        a = derive_rng(42, "escape", 3).random(5)
        b = derive_rng(42, "escape", 3).random(5)
        assert np.array_equal(a, b)

    def test_streams_differ_by_label_index_and_seed(self):
        base = derive_rng(42, "escape", 0).random(5)
        assert not np.array_equal(base, derive_rng(42, "drift", 0).random(5))
        assert not np.array_equal(base, derive_rng(42, "escape", 1).random(5))
        assert not np.array_equal(base, derive_rng(43, "escape", 0).random(5))

    def test_derive_seed_is_nonnegative_int(self):
        seed = derive_seed(7, "volume")
        assert isinstance(seed, int)
        assert seed >= 0
        assert seed == derive_seed(7, "volume")

    def test_chunk_sizes(self):
        assert chunk_sizes(10, 4) == [4, 4, 2]
        assert chunk_sizes(8, 4) == [4, 4]
        assert list(chunk_sizes(0, 4)) == []


class TestMapChunks:
    """Test ordered chunk evaluation"""

    def test_serial_order(self):
        assert map_chunks(abs, [-3, 1, -2]) == [3, 1, 2]

    def test_pool_keeps_order(self):
        tasks = list(range(-20, 0))
        assert map_chunks(abs, tasks, workers=2) == [abs(t) for t in tasks]

    def test_empty(self):
        assert map_chunks(abs, [], workers=4) == []
