import numpy as np
import pytest

from spikedlab.rng import as_generator, derive, partition


class TestDerive:
    def test_same_key_same_stream(self):
        np.testing.assert_array_equal(derive(5, 1, 2).random(8), derive(5, 1, 2).random(8))

    def test_distinct_keys_differ(self):
        a = derive(5, 1, 2).random(8)
        b = derive(5, 2, 1).random(8)
        assert not np.array_equal(a, b)

    def test_rejects_negative_and_empty(self):
        with pytest.raises(ValueError):
            derive(-1)
        with pytest.raises(ValueError):
            derive()


class TestAsGenerator:
    def test_int_is_recorded(self):
        g, seed = as_generator(7)
        assert seed == 7
        np.testing.assert_array_equal(g.random(3), derive(7).random(3))

    def test_generator_passthrough(self):
        g0 = derive(1)
        g, seed = as_generator(g0)
        assert g is g0 and seed is None

    def test_none_rejected(self):
        with pytest.raises(ValueError):
            as_generator(None)


class TestPartition:
    @pytest.mark.parametrize("count,workers", [(10, 3), (3, 5), (0, 2), (100, 1)])
    def test_contiguous_cover(self, count, workers):
        blocks = partition(count, workers)
        assert len(blocks) == workers
        flat = [i for b in blocks for i in b]
        assert flat == list(range(count))
        sizes = [len(b) for b in blocks]
        assert max(sizes) - min(sizes) <= 1
