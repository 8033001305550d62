import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lcmt import autodiff as ad
from lcmt.objective import (
    GraphConfig,
    LossWeights,
    breakdown,
    consistency_loss,
    cross_entropy,
    edge_weights,
    lc_brute_force_oracle,
    local_clustering_loss,
    total_loss,
    weights_from_sq_dist,
)

# frozen values, evaluated by hand
LN10 = 2.302585092994046
CE_HALF_QUARTER = 1.0397207708399179  # (ln 2 + ln 4) / 2
LC_345 = 15.163266492815836  # 25 exp(-1/2)
E_INV = 0.36787944117144233


def random_batch(rng, max_l=16, max_u=64, max_d=8):
    b_l, b_u, d = int(rng.integers(0, max_l + 1)), int(rng.integers(0, max_u + 1)), int(rng.integers(1, max_d + 1))
    scale = rng.uniform(0.3, 4.0)
    return rng.normal(size=(b_l, d)) * scale, rng.normal(size=(b_u, d)) * scale


class TestCrossEntropy:
    def test_confident_correct(self):
        logits = np.array([[800.0, 0.0], [0.0, 800.0]])
        assert cross_entropy(logits, [0, 1]).item() == 0.0

    def test_uniform_ten_classes(self):
        assert cross_entropy(np.zeros((3, 10)), [0, 4, 9]).item() == pytest.approx(LN10, abs=1e-12)

    def test_half_and_quarter(self):
        logits = np.log(np.array([[0.5, 0.5, 1e-300], [0.25, 0.25, 0.5]]) + 0.0)
        assert cross_entropy(logits, [0, 1]).item() == pytest.approx(CE_HALF_QUARTER, abs=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy(np.zeros((2, 3)), [0, 3])

    def test_label_count_mismatch(self):
        with pytest.raises(ad.DimensionError):
            cross_entropy(np.zeros((2, 3)), [0])


class TestConsistency:
    def test_identical(self):
        p = np.array([[0.2, 0.8], [0.6, 0.4]])
        assert consistency_loss(p, p).item() == 0.0

    def test_opposite_one_hot(self):
        assert consistency_loss([[1.0, 0.0]], [[0.0, 1.0]]).item() == 1.0

    def test_small_shift(self):
        assert consistency_loss([[0.6, 0.4]], [[0.5, 0.5]]).item() == pytest.approx(0.01, abs=1e-15)

    def test_teacher_gets_no_gradient(self):
        tape = ad.Tape()
        s = tape.watch(np.array([[0.6, 0.4]]), "s")
        t = tape.watch(np.array([[0.5, 0.5]]), "t")
        g = ad.backward(consistency_loss(s, t), tape)
        assert not g["t"].any()
        np.testing.assert_allclose(g["s"], [[0.1, -0.1]], atol=1e-15)

    @given(arrays(np.float64, (3, 4), elements=st.floats(0, 1)), arrays(np.float64, (3, 4), elements=st.floats(0, 1)))
    def test_symmetric_value(self, p, q):
        assert consistency_loss(p, q).item() == consistency_loss(q, p).item()

    def test_shape_mismatch(self):
        with pytest.raises(ad.DimensionError):
            consistency_loss(np.zeros((2, 2)), np.zeros((3, 2)))


class TestEdgeWeights:
    def test_coincident_features(self):
        g = edge_weights(np.array([[1.0, 2.0]]), np.array([[1.0, 2.0]]), GraphConfig(3.0))
        assert g.weights.tolist() == [[1.0]]
        assert g.pairing == "labeled-unlabeled"

    def test_boundary(self):
        eps = 25.0
        g = edge_weights(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]]), GraphConfig(eps))
        assert g.weights[0, 0] == pytest.approx(E_INV, abs=1e-12)

    def test_beyond_cutoff(self):
        assert weights_from_sq_dist(np.array([1.5 * 8.0]), 8.0).tolist() == [0.0]

    def test_self_pairs_excluded(self):
        z = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0]])
        g = edge_weights(z, cfg=GraphConfig(1.0))
        assert np.diag(g.weights).tolist() == [0.0, 0.0, 0.0]
        assert g.neighbours.tolist() == [[False, True, False], [True, False, False], [False, False, False]]
        assert g.pairing == "unlabeled-unlabeled"

    def test_epsilon_zero_no_neighbours(self):
        z = np.zeros((3, 2))
        assert not edge_weights(z, cfg=GraphConfig(0.0)).weights.any()

    def test_negative_epsilon(self):
        with pytest.raises(ValueError):
            GraphConfig(-1.0)

    @given(arrays(np.float64, (6, 2), elements=st.floats(-5, 5)), st.floats(0.01, 20))
    def test_weight_range(self, z, eps):
        w = edge_weights(z, cfg=GraphConfig(eps)).weights
        positive = w[w > 0]
        assert ((positive >= E_INV - 1e-15) & (positive <= 1.0)).all()
        d2 = ad.pairwise_sq_dist(z).value
        off = ~np.eye(6, dtype=bool)
        np.testing.assert_array_equal((w > 0)[off], (d2 <= eps)[off])


class TestLocalClustering:
    def test_all_pairs_far(self):
        z_l = np.array([[0.0, 0.0]])
        z_u = np.array([[10.0, 0.0], [0.0, -10.0]])
        assert local_clustering_loss(z_l, z_u, GraphConfig(1.0)).item() == 0.0

    def test_single_pair_hand_value(self):
        v = local_clustering_loss(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]]), GraphConfig(50.0)).item()
        assert v == pytest.approx(LC_345, abs=1e-12)

    def test_oracle_hand_value(self):
        v = lc_brute_force_oracle([[0.0, 0.0]], [[3.0, 4.0]], GraphConfig(50.0))
        assert v == pytest.approx(LC_345, abs=1e-12)

    def test_oracle_empty_unlabeled(self):
        assert lc_brute_force_oracle(np.zeros((3, 2)), np.zeros((0, 2)), GraphConfig(5.0)) == 0.0

    def test_matches_oracle_fixed_batch(self):
        rng = np.random.default_rng(21)
        z_l, z_u = rng.normal(size=(4, 3)), rng.normal(size=(8, 3))
        cfg = GraphConfig(5.0)
        assert abs(local_clustering_loss(z_l, z_u, cfg).item() - lc_brute_force_oracle(z_l, z_u, cfg)) < 1e-10

    def test_matches_oracle_200_batches(self):
        rng = np.random.default_rng(22)
        for i in range(200):
            z_l, z_u = random_batch(rng)
            cfg = GraphConfig([0.5, 5.0, 50.0][i % 3])
            got = local_clustering_loss(z_l, z_u, cfg).item()
            assert abs(got - lc_brute_force_oracle(z_l, z_u, cfg)) < 1e-10

    def test_labeled_pairs_ignored(self):
        z_u = np.array([[0.0, 0.0]])
        near = local_clustering_loss(np.array([[0.1, 0.0], [0.2, 0.0]]), z_u, GraphConfig(1.0)).item()
        pair = local_clustering_loss(np.array([[0.1, 0.0], [-0.2, 0.0]]), z_u, GraphConfig(1.0)).item()
        # the labeled pair spacing changes (0.1 vs 0.3) but each labeled-unlabeled term is the same
        assert near == pytest.approx(pair, abs=1e-15)

    def test_epsilon_zero_is_zero(self):
        rng = np.random.default_rng(23)
        assert local_clustering_loss(rng.normal(size=(3, 2)), rng.normal(size=(5, 2)), GraphConfig(0.0)).item() == 0.0

    def test_weights_are_detached(self):
        # gradient equals that of the frozen-weight surrogate, not of the full w(d) d
        tape = ad.Tape()
        z_u = tape.watch(np.array([[0.0, 0.0], [1.0, 0.0]]), "z")
        eps = 4.0
        g = ad.backward(local_clustering_loss(np.zeros((0, 2)), z_u, GraphConfig(eps)), tape)["z"]
        w = math.exp(-1.0 / eps)
        np.testing.assert_allclose(g, [[-2 * w, 0.0], [2 * w, 0.0]], atol=1e-15)

    def test_surrogate_gradient_fd(self):
        rng = np.random.default_rng(24)
        z_l, z_u = rng.normal(size=(3, 2)), rng.normal(size=(6, 2))
        cfg = GraphConfig(2.0)
        graphs = (edge_weights(z_l, z_u, cfg), edge_weights(z_u, cfg=cfg))
        err = ad.finite_diff_check(lambda z: local_clustering_loss(z_l, z, cfg, graphs), z_u)
        assert err < 1e-4
        err = ad.finite_diff_check(lambda z: local_clustering_loss(z, z_u, cfg, graphs), z_l)
        assert err < 1e-4

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        z_l, z_u = random_batch(rng, 6, 12, 4)
        cfg = GraphConfig(float(rng.uniform(0.5, 30)))
        base = local_clustering_loss(z_l, z_u, cfg).item()
        shuffled = local_clustering_loss(z_l[rng.permutation(len(z_l))], z_u[rng.permutation(len(z_u))], cfg).item()
        assert shuffled == pytest.approx(base, rel=1e-12, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.01, 100))
    def test_bounded_by_eps_over_e(self, seed, eps):
        z_l, z_u = random_batch(np.random.default_rng(seed), 6, 12, 4)
        v = local_clustering_loss(z_l, z_u, GraphConfig(eps)).item()
        # one mean per pairing, each bounded by eps/e
        assert 0.0 <= v <= 2 * eps / math.e + 1e-12
        for part in (local_clustering_loss(z_l, z_u[:1], GraphConfig(eps)).item(),
                     local_clustering_loss(np.zeros((0, z_u.shape[1])), z_u, GraphConfig(eps)).item()):
            assert part <= eps / math.e + 1e-12


class TestTotalLoss:
    def test_supervised_only(self):
        assert total_loss(1.3, ad.constant(0.7), ad.constant(0.2), LossWeights(0, 0)).item() == 1.3

    def test_paper_maxima_arithmetic(self):
        assert total_loss(1.0, ad.constant(0.5), ad.constant(0.25), LossWeights(100, 20)).item() == 56.0

    def test_linearity_in_lambda2(self):
        w1, w2 = LossWeights(3.0, 2.0), LossWeights(3.0, 4.0)
        a = total_loss(0.9, ad.constant(0.1), ad.constant(0.3), w1).item()
        b = total_loss(0.9, ad.constant(0.1), ad.constant(0.3), w2).item()
        assert b - a == pytest.approx(2.0 * 0.3, abs=1e-15)

    @given(st.floats(0, 10), st.floats(0, 1), st.floats(0, 5), st.floats(0, 100), st.floats(0, 50))
    def test_breakdown_identity(self, ce, cons, lc, l1, l2):
        w = LossWeights(l1, l2)
        t = total_loss(ce, ad.constant(cons), ad.constant(lc), w)
        b = breakdown(ce, cons, lc, t, w)
        assert abs(b.total - (b.ce + b.lambda1 * b.cons + b.lambda2 * b.lc)) <= 1e-12 * max(1.0, abs(b.total))

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(-1.0, 0.0)
