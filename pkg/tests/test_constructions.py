import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import nonneg_source, planar_dataset, random_net, unit
from relu_rank_lab.constructions import (
    balance_layers,
    deepen_classification,
    deepen_square,
    rank1_interpolator,
    solve_output_layer,
)
from relu_rank_lab.gradients import loss, margins
from relu_rank_lab.linalg import frobenius_norm, singular_values
from relu_rank_lab.network import Dataset, Params, forward_batch


class TestRank1:
    def check(self, d):
        p = rank1_interpolator(d)
        s = singular_values(p.layers[0])
        assert loss(p, d) <= 1e-10
        assert s[1] <= 1e-14 and s[0] > 0

    def test_random_planar_datasets(self, rng):
        for _ in range(100):
            x = rng.standard_normal((2, 2)) * rng.uniform(0.1, 10, size=2)
            if abs(np.linalg.det(x)) < 1e-6:
                continue
            self.check(Dataset(x, y=rng.standard_normal((2, 2))))

    def test_assumption_datasets(self, rng):
        for _ in range(100):
            a = rng.uniform(math.pi / 2 + 1e-3, math.pi - 1e-3)
            rot, t1 = rng.uniform(0, 2 * math.pi, size=2)
            t2 = t1 + rng.uniform(0.1, math.pi - 0.1)
            self.check(planar_dataset(a, rot, y=np.stack([unit(t1), unit(t2)], axis=1)))

    def test_explicit_rows(self):
        p = rank1_interpolator(planar_dataset(2 * math.pi / 3))
        w = p.layers[0]
        assert np.allclose(w[0], unit(0) - unit(2 * math.pi / 3)) and np.array_equal(w[1], -w[0])

    def test_opposite_inputs(self):
        d = Dataset(np.array([[1.0, -2.0], [0.0, 0.0]]), y=np.eye(2))
        assert loss(rank1_interpolator(d), d) <= 1e-20

    @pytest.mark.parametrize("d", [
        Dataset(np.array([[1.0, 2.0], [1.0, 2.0]]), y=np.eye(2)),
        Dataset(np.array([[1.0, 0.0], [0.0, 0.0]]), y=np.eye(2)),
        Dataset(np.eye(2), labels=[1, -1]),
        Dataset(np.eye(3), y=np.eye(3)),
    ])
    def test_rejects(self, d):
        with pytest.raises(ValueError):
            rank1_interpolator(d)


class TestSolveOutputLayer:
    def test_interpolates_random(self, rng):
        for _ in range(30):
            d = Dataset(rng.standard_normal((3, 4)), y=rng.standard_normal((2, 4)))
            w = rng.standard_normal((8, 3))
            try:
                v = solve_output_layer(w, d)
            except ValueError:
                continue
            assert np.allclose(v @ np.maximum(w @ d.x, 0), d.y, atol=1e-9)

    def test_rank_deficient(self):
        d = Dataset(np.eye(2), y=np.eye(2))
        with pytest.raises(ValueError, match="rank deficient"):
            solve_output_layer(np.array([[1.0, 0.0], [2.0, 0.0]]), d)
        with pytest.raises(ValueError):
            solve_output_layer(np.ones((2, 3)), d)


class TestDeepenSquare:
    def test_preserves_outputs(self, rng):
        for _ in range(50):
            k = int(rng.integers(2, 4))
            src = nonneg_source(rng, k)
            kp = k + int(rng.integers(1, 4))
            B = max(frobenius_norm(w) for w in src.layers) * rng.uniform(1, 2)
            x = rng.standard_normal((2, 6))
            d = Dataset(x, y=forward_batch(src, x))
            net = deepen_square(src, kp, B, d)
            assert net.depth == kp
            assert np.max(np.abs(forward_batch(net, x) - d.y)) <= 1e-9 * max(1.0, np.max(np.abs(d.y)))
            assert net.sq_norm() <= kp * B ** (2 * k / kp) * (1 + 1e-12)

    def test_balanced_equality_instance(self, rng):
        for _ in range(10):
            src = balance_layers(nonneg_source(rng, 2))
            src = Params([w * (2.0 / frobenius_norm(w)) for w in src.layers])
            assert deepen_square(src, 4, 2.0).sq_norm() == pytest.approx(8.0, abs=1e-9)

    def test_tail_weights(self):
        src = Params([np.eye(2), np.ones((1, 2))])
        net = deepen_square(src, 3, 4.0)
        b = net.layers[-1][0, 0]
        a = net.layers[0][0, 0]
        assert b == pytest.approx(4.0 ** (2 / 3)) and a == pytest.approx(4.0 ** (-1 / 3))
        assert a**2 * b == pytest.approx(1.0)

    def test_validation(self, rng):
        src = nonneg_source(rng, 2)
        B = max(frobenius_norm(w) for w in src.layers)
        with pytest.raises(ValueError):
            deepen_square(src, 2, B)
        with pytest.raises(ValueError):
            deepen_square(src, 3, 0.0)
        with pytest.raises(ValueError, match="exceeds"):
            deepen_square(src, 3, B / 2)
        with pytest.raises(ValueError):
            deepen_square(random_net(rng, (2, 3, 2)), 3, 10.0)
        neg = Params([np.eye(2), -np.ones((1, 2))])
        with pytest.raises(ValueError, match="negative"):
            deepen_square(neg, 3, 2.0, Dataset(np.eye(2), y=-np.ones((1, 2))))


class TestDeepenClassification:
    def test_preserves_outputs_of_any_sign(self, rng):
        for _ in range(50):
            k = int(rng.integers(2, 4))
            src = random_net(rng, (2,) + (3,) * (k - 1) + (1,))
            kp = k + int(rng.integers(1, 4))
            B = max(frobenius_norm(w) for w in src.layers) * rng.uniform(1, 2)
            x = rng.standard_normal((2, 6))
            net = deepen_classification(src, kp, B)
            ref = forward_batch(src, x)
            assert net.depth == kp
            assert np.max(np.abs(forward_batch(net, x) - ref)) <= 1e-9 * max(1.0, np.max(np.abs(ref)))

    def test_norm_bound_on_balanced_sources(self, rng):
        for _ in range(20):
            k, kp, B = 2, int(rng.integers(3, 7)), float(rng.uniform(1.5, 4))
            src = Params([w * (B / frobenius_norm(w)) for w in random_net(rng, (2, 3, 1)).layers])
            net = deepen_classification(src, kp, B)
            assert net.sq_norm() <= 2 * (B * B / 2) ** (k / kp) * (kp + 1) * (1 + 1e-12)

    def test_margins_unchanged(self, rng):
        src = random_net(rng, (2, 4, 1))
        d = Dataset(rng.standard_normal((2, 5)), labels=[1, -1, 1, 1, -1])
        net = deepen_classification(src, 5, 3.0)
        assert np.allclose(margins(net, d), margins(src, d), atol=1e-12)


class TestBalance:
    @given(st.integers(0, 10**6))
    def test_equal_norms_same_function(self, seed):
        rng = np.random.default_rng(seed)
        p = random_net(rng, (2, 3, 3, 1))
        b = balance_layers(p)
        norms = [frobenius_norm(w) for w in b.layers]
        assert max(norms) - min(norms) <= 1e-12 * max(norms)
        assert np.prod(norms) == pytest.approx(np.prod([frobenius_norm(w) for w in p.layers]), rel=1e-12)
        assert b.sq_norm() <= p.sq_norm() * (1 + 1e-12)
        x = rng.standard_normal((2, 4))
        assert np.allclose(forward_batch(b, x), forward_batch(p, x), rtol=1e-12, atol=1e-12)

    def test_zero_layer(self):
        with pytest.raises(ValueError):
            balance_layers(Params([np.zeros((2, 2)), np.ones((1, 2))]))
