import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from relu_rank_lab.linalg import (
    angle,
    frobenius_norm,
    numerical_rank,
    pinv,
    singular_values,
    spectral_norm,
    stable_rank,
    svd,
)

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


def matrices(max_dim=6):
    shapes = st.tuples(st.integers(1, max_dim), st.integers(1, max_dim))
    return shapes.flatmap(lambda s: arrays(np.float64, s, elements=finite))


def power_iteration_norm(a, iters=2000):
    """Independent spectral-norm oracle: power iteration on a^T a."""
    v = np.ones(a.shape[1]) / math.sqrt(a.shape[1]) + 1e-3 * np.arange(a.shape[1])
    for _ in range(iters):
        w = a.T @ (a @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
    return float(np.linalg.norm(a @ v))


class TestSvd:
    def test_identity(self):
        assert np.allclose(svd(np.eye(2)).s, [1, 1])

    def test_rank_one(self):
        s = svd(np.array([[1.0, 1.0], [2.0, 2.0]])).s
        assert s[0] == pytest.approx(math.sqrt(10), abs=1e-14)
        assert s[1] == 0.0

    def test_diagonal(self):
        assert np.allclose(svd(np.array([[3.0, 0.0], [0.0, 4.0]])).s, [4, 3], atol=1e-15)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            svd(np.array([[1.0, np.nan], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            svd(np.array([[np.inf]]))

    def test_thousand_random_reconstructions(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            r, c = rng.integers(1, 9, size=2)
            a = rng.standard_normal((r, c)) * 10.0 ** rng.uniform(-3, 3)
            f = svd(a)
            err = np.linalg.norm(f.reconstruct() - a)
            assert err <= 1e-10 * max(1.0, np.linalg.norm(a))
            assert np.all(np.diff(f.s) <= 0) and np.all(f.s >= 0)
            assert np.allclose(f.s, np.linalg.svd(a, compute_uv=False), rtol=1e-10, atol=1e-12 * f.s[0])

    @given(matrices())
    def test_factors_orthonormal(self, a):
        f = svd(a)
        k = f.s.size
        assert f.u.shape == (a.shape[0], k) and f.vt.shape == (k, a.shape[1])
        assert np.allclose(f.u.T @ f.u, np.eye(k), atol=1e-10)
        assert np.allclose(f.vt @ f.vt.T, np.eye(k), atol=1e-10)
        assert np.linalg.norm(f.reconstruct() - a) <= 1e-10 * max(1.0, np.linalg.norm(a))

    def test_rank_deficient_tall(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 4))
        f = svd(a)
        assert np.allclose(f.u.T @ f.u, np.eye(4), atol=1e-10)
        assert f.s[2] < 1e-12 * f.s[0]

    def test_zero_matrix(self):
        f = svd(np.zeros((3, 2)))
        assert np.all(f.s == 0) and np.allclose(f.u.T @ f.u, np.eye(2))


class TestNorms:
    def test_identity(self):
        assert spectral_norm(np.eye(2)) == pytest.approx(1.0)
        assert frobenius_norm(np.eye(2)) == pytest.approx(math.sqrt(2))

    def test_diagonal(self):
        a = np.array([[3.0, 0.0], [0.0, 4.0]])
        assert spectral_norm(a) == pytest.approx(4.0)
        assert frobenius_norm(a) == pytest.approx(5.0)

    def test_power_iteration_oracle(self, rng):
        for _ in range(20):
            a = rng.standard_normal((3, 3))
            assert spectral_norm(a) == pytest.approx(power_iteration_norm(a), rel=1e-8)
            assert spectral_norm(a) <= frobenius_norm(a)

    @given(matrices())
    def test_norm_sandwich(self, a):
        s, f = spectral_norm(a), frobenius_norm(a)
        assert s <= f * (1 + 1e-12) + 1e-300
        assert f <= math.sqrt(min(a.shape)) * s * (1 + 1e-10) + 1e-300


class TestStableRank:
    def test_examples(self):
        assert stable_rank(np.array([[1.0, 1.0], [2.0, 2.0]])) == pytest.approx(1.0, abs=1e-15)
        assert stable_rank(np.eye(2)) == pytest.approx(2.0)
        assert stable_rank(np.array([[3.0, 0.0], [0.0, 4.0]])) == pytest.approx(25 / 16)

    def test_zero_matrix_errors(self):
        with pytest.raises(ValueError, match="undefined stable rank"):
            stable_rank(np.zeros((2, 2)))

    @given(matrices(), st.floats(1e-3, 1e3), st.booleans())
    def test_scale_invariant_and_bounded(self, a, c, neg):
        if frobenius_norm(a) < 1e-6:
            return
        c = -c if neg else c
        r = stable_rank(a)
        assert 1 - 1e-10 <= r <= min(a.shape) + 1e-10
        assert stable_rank(c * a) == pytest.approx(r, rel=1e-9)

    def test_equals_one_iff_rank_one(self, rng):
        u, v = rng.standard_normal(4), rng.standard_normal(3)
        assert stable_rank(np.outer(u, v)) == pytest.approx(1.0, abs=1e-12)
        assert stable_rank(rng.standard_normal((4, 3))) > 1.0 + 1e-6


class TestNumericalRank:
    def test_examples(self):
        assert numerical_rank(np.array([[1.0, 1.0], [2.0, 2.0]]), 1e-8) == 1
        assert numerical_rank(np.eye(2), 1e-8) == 2
        assert numerical_rank(np.zeros((2, 3))) == 0

    def test_tolerance_validated(self):
        for bad in (0.0, 1.0, -1e-3, 2.0):
            with pytest.raises(ValueError):
                numerical_rank(np.eye(2), bad)

    def test_relative_threshold(self):
        a = np.diag([1.0, 1e-9])
        assert numerical_rank(a, 1e-8) == 1
        assert numerical_rank(a, 1e-10) == 2


class TestAngle:
    def test_examples(self):
        assert angle([1, 0], [0, 1]) == pytest.approx(math.pi / 2)
        assert angle([1, 0], [-1, 0]) == pytest.approx(math.pi)
        assert angle([1, 0], [-0.5, math.sqrt(3) / 2]) == pytest.approx(2 * math.pi / 3)

    def test_clamped(self):
        v = np.array([0.1, 0.7])
        assert angle(v, v) == 0.0 or angle(v, v) < 1e-7
        assert not math.isnan(angle(v, 3 * v))

    def test_zero_vector(self):
        with pytest.raises(ValueError):
            angle([0, 0], [1, 0])

    @given(arrays(np.float64, 3, elements=finite), arrays(np.float64, 3, elements=finite))
    def test_range_and_symmetry(self, u, v):
        if np.linalg.norm(u) < 1e-6 or np.linalg.norm(v) < 1e-6:
            return
        a = angle(u, v)
        assert 0.0 <= a <= math.pi
        assert a == pytest.approx(angle(v, u), abs=1e-12)


class TestPinv:
    def test_identity(self):
        assert np.allclose(pinv(np.eye(2)), np.eye(2))

    def test_diagonal(self):
        assert np.allclose(pinv(np.array([[2.0, 0.0], [0.0, 0.0]])), [[0.5, 0.0], [0.0, 0.0]])

    def test_matches_adjugate_inverse(self, rng):
        for _ in range(50):
            a = rng.standard_normal((2, 2))
            det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
            if abs(det) < 1e-3:
                continue
            adj = np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]]) / det
            assert np.allclose(pinv(a), adj, rtol=1e-9, atol=1e-9)

    def test_penrose_identities_rank_deficient(self, rng):
        for _ in range(200):
            r, c = rng.integers(1, 7, size=2)
            k = rng.integers(0, min(r, c) + 1)
            a = rng.standard_normal((r, k)) @ rng.standard_normal((k, c))
            p = pinv(a)
            assert np.allclose(a @ p @ a, a, atol=1e-9)
            assert np.allclose(p @ a @ p, p, atol=1e-9)
            assert np.allclose((a @ p).T, a @ p, atol=1e-9)
            assert np.allclose((p @ a).T, p @ a, atol=1e-9)

    def test_singular_values_helper(self):
        assert np.allclose(singular_values(np.diag([1.0, 5.0, 2.0])), [5, 2, 1])
