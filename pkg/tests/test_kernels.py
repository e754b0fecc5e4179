import numpy as np
import pytest

from covr import _kernels as K

numba_only = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not importable")


def adam_args(rng, n=50):
    p, g = rng.standard_normal(n), rng.standard_normal(n)
    m, v = rng.standard_normal(n) * 0.1, rng.random(n) * 0.1
    return p, g, m, v


class TestFnv:
    @pytest.mark.parametrize("data, expected", [
        (b"", 0xCBF29CE484222325),
        (b"a", 0xAF63DC4C8601EC8C),
        (b"foobar", 0x85944171F73967E8),
    ])
    def test_reference_vectors(self, data, expected):
        assert K.fnv1a64_python(data) == expected
        assert K.fnv1a64(data) == expected

    @numba_only
    def test_numba_matches_python_on_long_input(self, rng):
        data = rng.integers(0, 256, 5000, dtype=np.uint8).tobytes()
        assert K.fnv1a64_numba(np.frombuffer(data, dtype=np.uint8)) == K.fnv1a64_python(data)


@numba_only
class TestBackendsAgree:
    @pytest.mark.parametrize("n, d, k", [(1, 3, 1), (50, 8, 5), (300, 16, 50), (20, 4, 40)])
    def test_topk(self, rng, n, d, k):
        m = rng.standard_normal((n, d))
        q = rng.standard_normal((7, d))
        i1, s1 = K.topk_numpy(m, q, k)
        i2, s2 = K.topk_numba(m, q, min(k, n))
        np.testing.assert_array_equal(i1, i2)
        np.testing.assert_allclose(s1, s2, rtol=0, atol=1e-12)

    def test_topk_ties_prefer_lower_row(self, rng):
        m = np.tile(rng.standard_normal(6), (30, 1))
        q = rng.standard_normal((2, 6))
        for fn in (K.topk_numpy, K.topk_numba):
            idx, _ = fn(m, q, 10)
            np.testing.assert_array_equal(idx, np.tile(np.arange(10), (2, 1)))

    def test_target_ranks(self, rng):
        m = rng.standard_normal((100, 8))
        m[50] = m[10]
        q = rng.standard_normal((20, 8))
        t = rng.integers(0, 100, 20)
        t[0] = 50
        np.testing.assert_array_equal(K.target_ranks_numpy(m, q, t), K.target_ranks_numba(m, q, t))

    @pytest.mark.parametrize("b", [1, 2, 5, 16])
    def test_hn_weights(self, rng, b):
        s = rng.uniform(-1, 1, (b, b))
        np.testing.assert_allclose(K.hn_weights_numpy(s, 0.5, 0.07),
                                   K.hn_weights_numba(s, 0.5, 0.07), rtol=1e-13, atol=0)

    def test_adam(self, rng):
        a = adam_args(rng)
        b = tuple(x.copy() for x in a)
        c1, c2 = 1 - 0.9 ** 3, 1 - 0.999 ** 3
        K.adam_update_numpy(*a, 1e-3, 0.9, 0.999, 1e-8, c1, c2)
        K.adam_update_numba(*b, 1e-3, 0.9, 0.999, 1e-8, c1, c2)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-14, atol=1e-15)


class TestDispatch:
    def test_topk_clamps_k(self, rng):
        idx, scores = K.topk(rng.standard_normal((3, 4)), rng.standard_normal((1, 4)), 10)
        assert idx.shape == (1, 3)
        assert np.all(np.diff(scores[0]) <= 0)

    def test_backend_flag_is_consistent(self):
        assert K.BACKEND == ("numba" if K.USE_NUMBA else "numpy")

    def test_adam_dispatch_updates_in_place(self, rng):
        p, g, m, v = adam_args(rng)
        before = p.copy()
        K.adam_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 1)
        assert not np.array_equal(p, before)
