import numpy as np
import pytest

from ioparse import numeric as nm
from ioparse.chart import Chart, fill_chart
from ioparse.compose import CellValue, ModelParams
from ioparse.objective import (
    compute_loss,
    margin_loss,
    negative_cells,
    softmax_loss,
)

from oracles import margin_loss_oracle, softmax_loss_oracle


def _fake_chart(b_vectors, a_vectors):
    """A chart stub carrying given leaf inside/outside vectors."""
    T, d = np.shape(a_vectors)
    chart = Chart(T, d)
    for k in range(T):
        chart.inside_cell[(k, 1)] = CellValue(nm.constant(a_vectors[k]))
        chart.outside_cell[(k, 1)] = CellValue(nm.constant(b_vectors[k]))
    return chart


class TestMarginLoss:
    def test_inactive_hinge_gives_zero(self):
        # true dot 1, negative dot -1 => 1 - 1 + (-1) < 0
        a = np.array([[1.0, 0.0]])
        b = np.array([[1.0, 0.0]])
        negs = nm.constant(np.array([[-1.0, 0.0]]))
        report = margin_loss(_fake_chart(b, a), negs)
        assert report.value() == 0.0

    def test_equal_dots_give_t_times_n(self):
        rng = np.random.default_rng(0)
        T, N, d = 3, 4, 5
        a = rng.uniform(-1, 1, (T, d))
        b = rng.uniform(-1, 1, (T, d))
        # negatives identical to the true vectors make every term exactly 1
        report = margin_loss(_fake_chart(b, a), nm.constant(a[:1].repeat(N, 0)))
        chart_terms = sum(
            max(0.0, 1.0 - b[i] @ a[i] + b[i] @ a[0]) for i in range(T) for _ in range(N)
        )
        assert report.value() == pytest.approx(chart_terms)
        same = margin_loss(
            _fake_chart(a, a), nm.constant(a)
        )  # b=a and negatives=the true vectors
        # here every (i, i*=i) term is exactly 1; off-diagonal differ
        assert same.ranks.shape == (T,)

    def test_all_pairs_at_margin_boundary(self):
        # b.a == b.a* for every pair => every term is exactly the margin
        T, N, d = 3, 2, 4
        rng = np.random.default_rng(1)
        a = rng.uniform(-1, 1, (T, d))
        b = rng.uniform(-1, 1, (T, d))
        zero = np.zeros((N, d))
        report = margin_loss(_fake_chart(b, np.zeros((T, d)) + 0.0), nm.constant(zero))
        # true vectors zero and negatives zero: all dots 0 => T*N terms of 1
        assert report.value() == pytest.approx(T * N)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(2)
        T, N, d = 3, 2, 6
        a = rng.uniform(-1, 1, (T, d))
        b = rng.uniform(-1, 1, (T, d))
        negs = rng.uniform(-1, 1, (N, d))
        report = margin_loss(_fake_chart(b, a), nm.constant(negs))
        assert report.value() == pytest.approx(margin_loss_oracle(b, a, negs), rel=1e-12)

    def test_configurable_margin(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(-1, 1, (2, 4))
        b = rng.uniform(-1, 1, (2, 4))
        negs = rng.uniform(-1, 1, (3, 4))
        report = margin_loss(_fake_chart(b, a), nm.constant(negs), margin=0.25)
        assert report.value() == pytest.approx(
            margin_loss_oracle(b, a, negs, margin=0.25), rel=1e-12
        )

    def test_mismatched_counts_rejected(self):
        rng = np.random.default_rng(4)
        chart = _fake_chart(rng.uniform(-1, 1, (2, 4)), rng.uniform(-1, 1, (2, 4)))
        with pytest.raises(ValueError):
            margin_loss(chart, nm.constant(rng.uniform(-1, 1, 4)))  # not a matrix
        with pytest.raises(ValueError):
            margin_loss(
                chart, nm.constant(rng.uniform(-1, 1, (3, 4))),
                leaf_targets=[nm.constant(rng.uniform(-1, 1, 4))],
            )


class TestSoftmaxLoss:
    def test_single_equal_negative_gives_ln2(self):
        a = np.array([[0.5, 0.5]])
        b = np.array([[1.0, 0.0]])
        report = softmax_loss(_fake_chart(b, a), nm.constant(a))
        assert report.value() == pytest.approx(np.log(2.0))

    def test_dominant_true_dot_drives_loss_to_zero(self):
        a = np.array([[30.0, 0.0]])
        b = np.array([[1.0, 0.0]])
        negs = nm.constant(np.array([[-30.0, 0.0], [-25.0, 1.0]]))
        report = softmax_loss(_fake_chart(b, a), negs)
        assert report.value() < 1e-12

    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(5)
        T, N, d = 2, 3, 5
        a = rng.uniform(-1, 1, (T, d))
        b = rng.uniform(-1, 1, (T, d))
        negs = rng.uniform(-1, 1, (N, d))
        report = softmax_loss(_fake_chart(b, a), nm.constant(negs))
        assert report.value() == pytest.approx(softmax_loss_oracle(b, a, negs), rel=1e-10)

    def test_shift_invariance(self):
        # scaling pushes logits around; the loss stays the same within 1e-9
        rng = np.random.default_rng(6)
        a = rng.uniform(-1, 1, (2, 4))
        b = rng.uniform(-1, 1, (2, 4))
        negs = rng.uniform(-1, 1, (5, 4))
        direct = softmax_loss_oracle(b, a, negs)
        report = softmax_loss(_fake_chart(b, a), nm.constant(negs))
        assert abs(report.value() - direct) < 1e-9

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(7)
        for seed in range(5):
            r = np.random.default_rng(seed)
            a = r.uniform(-1, 1, (3, 4))
            b = r.uniform(-1, 1, (3, 4))
            negs = r.uniform(-1, 1, (4, 4))
            assert softmax_loss(_fake_chart(b, a), nm.constant(negs)).value() >= 0.0


class TestRanks:
    def test_rank_bounds_and_ordering(self):
        b = np.array([[1.0, 0.0]])
        a = np.array([[1.0, 0.0]])  # pos dot = 1
        negs = np.array([[2.0, 0.0], [0.5, 0.0], [-1.0, 0.0]])
        report = margin_loss(_fake_chart(b, a), nm.constant(negs))
        # one negative beats the true token => rank 2 of 4
        assert report.ranks.tolist() == [2]

    def test_true_token_wins_ties(self):
        b = np.array([[1.0, 0.0]])
        a = np.array([[0.7, 0.0]])
        negs = np.array([[0.7, 0.0], [0.7, 0.0]])
        report = margin_loss(_fake_chart(b, a), nm.constant(negs))
        assert report.ranks.tolist() == [1]


class TestEndToEndGradients:
    @pytest.mark.parametrize("kind", ["margin", "softmax"])
    def test_through_both_passes(self, kind):
        params = ModelParams(dim=4, input_dim=3, seed=31)
        rng = np.random.default_rng(8)
        leaves = rng.uniform(-1, 1, (3, 3))
        negv = rng.uniform(-1, 1, (3, 3))

        def f():
            views = params.views()
            chart = fill_chart(leaves, params)
            negs = negative_cells(negv, params, views)
            return compute_loss(kind, chart, negs).loss

        out = f()
        nm.zero_grads(params.parameters())
        out.backward()
        fd = nm.finite_difference_gradient(f, params.parameters(), step=1e-5)
        for t, g in zip(params.parameters(), fd):
            rel = np.abs(t.grad - g) / np.maximum(np.abs(g), 1.0)
            assert np.max(rel) < 1e-4

    def test_negatives_are_leaf_transformed_and_normalized(self):
        params = ModelParams(dim=4, input_dim=3, seed=32)
        rng = np.random.default_rng(9)
        negs = negative_cells(rng.uniform(-1, 1, (6, 3)), params)
        norms = np.linalg.norm(negs.data, axis=-1)
        assert np.allclose(norms, 1.0, atol=1e-9)
