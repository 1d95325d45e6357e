import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthrank import losses as L
from depthrank.sampling import PairQuery
from depthrank.tensor import Tensor, backward

from conftest import numerical_grad, relative_error

finite_scores = st.floats(min_value=-50, max_value=50, allow_nan=False)


# ---------------------------------------------------------------------------
# pair_loss values

def test_zero_margin_ordered_is_log2():
    assert L.pair_loss(1.3, 1.3, 1) == pytest.approx(math.log(2), abs=1e-12)
    assert L.pair_loss(1.3, 1.3, -1) == pytest.approx(math.log(2), abs=1e-12)


def test_satisfied_equality_is_zero():
    assert L.pair_loss(0.7, 0.7, 0) == 0.0


def test_margin_five_closed_form():
    assert L.pair_loss(5.0, 0.0, 1) == pytest.approx(math.log1p(math.exp(-5)), rel=1e-9)
    assert L.pair_loss(5.0, 0.0, 1) == pytest.approx(0.0067153, abs=1e-7)


def test_huge_margin_is_stable():
    # Violated by 500: the loss is ~500 and must not overflow.
    assert L.pair_loss(500.0, 0.0, -1) == pytest.approx(500.0, rel=1e-12)
    assert L.pair_loss(0.0, 500.0, 1) == pytest.approx(500.0, rel=1e-12)
    # Satisfied by 500: loss underflows to exactly exp(-500) ~ 0.
    assert L.pair_loss(500.0, 0.0, 1) == pytest.approx(0.0, abs=1e-200)


def test_invalid_relation_rejected():
    with pytest.raises(ValueError, match="relation"):
        L.pair_loss(0.0, 0.0, 2)
    with pytest.raises(ValueError, match="relation"):
        L.pair_loss_grad(0.0, 0.0, 7)


# ---------------------------------------------------------------------------
# gradients

def test_grad_at_zero_margin():
    gi, gj = L.pair_loss_grad(0.0, 0.0, 1)
    assert (gi, gj) == (pytest.approx(-0.5), pytest.approx(0.5))


def test_grad_equality_branch():
    gi, gj = L.pair_loss_grad(2.0, 1.0, 0)
    assert (gi, gj) == (2.0, -2.0)


@pytest.mark.parametrize("r", [1, -1, 0])
@pytest.mark.parametrize("seed", range(10))
def test_grad_matches_finite_difference(r, seed):
    rng = np.random.default_rng(seed)
    zi, zj = rng.normal(scale=2.0, size=2)
    gi, gj = L.pair_loss_grad(zi, zj, r)
    eps = 1e-6
    ni = (L.pair_loss(zi + eps, zj, r) - L.pair_loss(zi - eps, zj, r)) / (2 * eps)
    nj = (L.pair_loss(zi, zj + eps, r) - L.pair_loss(zi, zj - eps, r)) / (2 * eps)
    assert gi == pytest.approx(ni, abs=1e-6)
    assert gj == pytest.approx(nj, abs=1e-6)


@given(zi=finite_scores, zj=finite_scores, r=st.sampled_from([1, -1, 0]))
def test_grads_sum_to_zero(zi, zj, r):
    gi, gj = L.pair_loss_grad(zi, zj, r)
    assert gi + gj == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# invariants

@given(zi=finite_scores, zj=finite_scores, c=finite_scores,
       r=st.sampled_from([1, -1, 0]))
@settings(max_examples=200)
def test_translation_invariance(zi, zj, c, r):
    a = L.pair_loss(zi, zj, r)
    b = L.pair_loss(zi + c, zj + c, r)
    assert b == pytest.approx(a, abs=1e-9, rel=1e-9)


@given(zi=finite_scores, zj=finite_scores)
def test_antisymmetry(zi, zj):
    assert L.pair_loss(zi, zj, 1) == pytest.approx(L.pair_loss(zj, zi, -1), rel=1e-12)


@given(zi=finite_scores, zj=finite_scores, r=st.sampled_from([1, -1, 0]))
def test_nonnegative(zi, zj, r):
    assert L.pair_loss(zi, zj, r) >= 0.0


def test_ordered_loss_decreasing_in_margin():
    margins = np.linspace(-5, 5, 41)
    vals = [L.pair_loss(m, 0.0, 1) for m in margins]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_vectorized_matches_scalar(rng):
    diffs = rng.normal(scale=3.0, size=50)
    rels = rng.choice([1, -1, 0], size=50)
    vec = L.pair_losses(diffs, rels)
    for d, r, v in zip(diffs, rels, vec):
        assert v == pytest.approx(L.pair_loss(d, 0.0, int(r)), rel=1e-12)
    gvec = L.pair_loss_grads(diffs, rels)
    for d, r, g in zip(diffs, rels, gvec):
        assert g == pytest.approx(L.pair_loss_grad(d, 0.0, int(r))[0], rel=1e-9, abs=1e-12)


# ---------------------------------------------------------------------------
# image_loss

def test_image_loss_empty_is_zero():
    assert L.image_loss(np.ones((4, 4)), []) == 0.0


def test_image_loss_linearity():
    z = np.arange(16, dtype=np.float64).reshape(4, 4)
    q = PairQuery((0, 0), (1, 1), 1)
    single = L.image_loss(z, [q])
    assert L.image_loss(z, [q] * 7) == pytest.approx(7 * single, rel=1e-12)


def test_image_loss_hand_summed():
    z = np.array([[0.0, 1.0, 2.0, 3.0],
                  [1.0, 1.5, 0.5, 2.0],
                  [4.0, 0.0, 1.0, 2.5],
                  [3.0, 2.0, 1.0, 0.0]])
    queries = [
        PairQuery((0, 0), (2, 0), 1),   # softplus(-(0 - 4)) = softplus(4)
        PairQuery((1, 1), (0, 1), -1),  # softplus(1.5 - 1) = softplus(0.5)
        PairQuery((3, 3), (0, 0), 0),   # (0 - 0)^2 = 0
    ]
    expected = (math.log1p(math.exp(-4.0)) + 4.0) + math.log1p(math.exp(0.5)) + 0.0
    # softplus(4) evaluated the stable way: max(4,0) + log1p(exp(-4))
    assert L.image_loss(z, queries) == pytest.approx(expected, rel=1e-12)


def test_image_loss_out_of_bounds_names_index():
    z = np.ones((4, 4))
    queries = [PairQuery((0, 0), (1, 1), 1), PairQuery((0, 0), (4, 1), 1)]
    with pytest.raises(IndexError, match="query 1"):
        L.image_loss(z, queries)


# ---------------------------------------------------------------------------
# metric depth loss

def test_metric_loss_zero_at_truth(rng):
    gt = rng.uniform(1.0, 10.0, size=(5, 5))
    assert L.metric_depth_loss(gt, gt) == pytest.approx(0.0, abs=1e-15)


def test_metric_loss_constant_ratio():
    gt = np.full((3, 3), 2.0)
    assert L.metric_depth_loss(2 * gt, gt) == pytest.approx(math.log(2) ** 2, rel=1e-12)
    assert L.metric_depth_loss(2 * gt, gt) == pytest.approx(0.4805, abs=1e-4)


def test_metric_loss_matches_loop_oracle(rng):
    z = rng.uniform(0.5, 5.0, size=(4, 6))
    gt = rng.uniform(1.0, 10.0, size=(4, 6))
    acc = 0.0
    for y in range(4):
        for x in range(6):
            acc += (math.log(z[y, x]) - math.log(gt[y, x])) ** 2
    assert L.metric_depth_loss(z, gt) == pytest.approx(acc / 24, rel=1e-12)


def test_metric_loss_plain_mse_flag(rng):
    z = rng.uniform(0.5, 5.0, size=(3, 3))
    gt = rng.uniform(1.0, 10.0, size=(3, 3))
    assert L.metric_depth_loss(z, gt, log_space=False) == pytest.approx(
        np.mean((z - gt) ** 2), rel=1e-12)


def test_metric_loss_rejects_nonpositive_gt():
    with pytest.raises(ValueError, match="positive"):
        L.metric_depth_loss(np.ones((2, 2)), np.zeros((2, 2)))


def test_metric_loss_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        L.metric_depth_loss(np.ones((2, 2)), np.ones((3, 2)))


# ---------------------------------------------------------------------------
# graph ops

def test_ordinal_loss_op_value_and_grad(rng):
    z0 = rng.standard_normal((1, 1, 6, 6))
    y1 = np.array([0, 2, 5]); x1 = np.array([0, 3, 5])
    y2 = np.array([1, 2, 0]); x2 = np.array([1, 4, 0])
    r = np.array([1, -1, 0])
    queries = [PairQuery((int(a), int(b)), (int(c), int(d)), int(e))
               for a, b, c, d, e in zip(y1, x1, y2, x2, r)]

    def value(arr):
        z = Tensor(arr)
        return float(L.ordinal_loss_op(z, [(y1, x1, y2, x2, r)]).data)

    assert value(z0) == pytest.approx(L.image_loss(z0[0, 0], queries), rel=1e-6)
    z = Tensor(z0)
    out = L.ordinal_loss_op(z, [(y1, x1, y2, x2, r)])
    backward(out)
    g_num = numerical_grad(value, z0, eps=1e-4)
    assert relative_error(z.grad, g_num) < 1e-5


def test_ordinal_loss_op_repeated_pixel_accumulates(rng):
    z0 = rng.standard_normal((1, 1, 4, 4))
    y1 = np.array([0, 0]); x1 = np.array([0, 0])
    y2 = np.array([1, 2]); x2 = np.array([1, 2])
    r = np.array([1, 1])

    def value(arr):
        return float(L.ordinal_loss_op(Tensor(arr), [(y1, x1, y2, x2, r)]).data)

    z = Tensor(z0)
    backward(L.ordinal_loss_op(z, [(y1, x1, y2, x2, r)]))
    g_num = numerical_grad(value, z0, eps=1e-4)
    assert relative_error(z.grad, g_num) < 1e-5


def test_log_depth_loss_op_matches_function_and_fd(rng):
    z0 = rng.uniform(0.5, 4.0, size=(2, 1, 3, 3))
    gt = rng.uniform(1.0, 10.0, size=(2, 3, 3))

    def value(arr):
        return float(L.log_depth_loss_op(Tensor(arr), gt).data)

    per_image = [L.metric_depth_loss(z0[i, 0], gt[i]) for i in range(2)]
    assert value(z0) == pytest.approx(np.mean(per_image), rel=1e-6)
    z = Tensor(z0)
    backward(L.log_depth_loss_op(z, gt))
    g_num = numerical_grad(value, z0, eps=1e-5)
    assert relative_error(z.grad, g_num) < 1e-4
