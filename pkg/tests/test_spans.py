import math

import numpy as np
import pytest

from padalign.autodiff import ContractViolation, Tensor, tensor_sum
from padalign.significance import SignificancePrior
from padalign.spans import SpanConfig, aasa, span_scales


def prior_from(weights):
    w = np.asarray(weights, dtype=np.float64)
    return SignificancePrior(Tensor(w / w.sum()))


def test_uniform_prior_trace_n12_xi4():
    # all significances tie; stable descending order with ascending-index
    # tie-break admits 0, then the first index more than 2 away, and so on
    seq = Tensor(np.random.default_rng(0).normal(size=(12, 4)))
    pools = aasa(seq, SignificancePrior.uniform(12),
                 SpanConfig(base_scale=4, num_scales=2))
    assert pools.anchors == [0, 3, 6, 9]


def test_peaked_prior_trace_n8_xi4():
    # hand trace: order 5(.9), 7(.03), 6(.02), 0..4(.01 ties, ascending)
    # 5 admitted; 7 (gap 2) and 6 (gap 1) rejected; 0 (gap 5) admitted;
    # 1..4 all within 2 of an anchor -> rejected
    seq = Tensor(np.random.default_rng(1).normal(size=(8, 4)))
    prior = prior_from([.01, .01, .01, .01, .01, .9, .02, .03])
    pools = aasa(seq, prior, SpanConfig(base_scale=4, num_scales=1))
    assert pools.anchors == [5, 0]


def test_single_frame_degenerates():
    seq = Tensor(np.array([[1.0, 2.0, 3.0]]))
    pools = aasa(seq, SignificancePrior.uniform(1),
                 SpanConfig(base_scale=4, num_scales=3))
    assert pools.anchors == [0]
    for q in range(pools.c):
        assert np.allclose(pools.spans.data[0, q], [1.0, 2.0, 3.0])


def test_scale_set_enumeration():
    assert span_scales(SpanConfig(base_scale=8, num_scales=1)) == [4]
    assert span_scales(SpanConfig(base_scale=8, num_scales=3)) == [4, 8, 16]
    assert span_scales(SpanConfig(base_scale=4, num_scales=4)) == [2, 4, 8, 16]
    assert span_scales(SpanConfig(base_scale=8, num_scales=3,
                                  multi_scale=False)) == [4]


def test_random_priors_density_and_shape():
    rng = np.random.default_rng(2)
    cfg = SpanConfig(base_scale=4, num_scales=2)
    for _ in range(100):
        n = int(rng.integers(1, 30))
        d = int(rng.integers(1, 6))
        seq = Tensor(rng.normal(size=(n, d)))
        pools = aasa(seq, prior_from(rng.random(n) + 1e-6), cfg)
        gap = cfg.base_scale // 2
        anchors = pools.anchors
        for i in range(len(anchors)):
            for j in range(i + 1, len(anchors)):
                assert abs(anchors[i] - anchors[j]) > gap
        assert 1 <= len(anchors) <= math.ceil(n / (gap + 1)) + 1
        assert pools.spans.shape == (len(anchors), 2, d)


def test_whole_sequence_span_equals_global_average():
    rng = np.random.default_rng(3)
    seq_data = rng.normal(size=(5, 4))
    seq = Tensor(seq_data, dtype=np.float64)
    pools = aasa(seq, SignificancePrior.uniform(5),
                 SpanConfig(base_scale=16, num_scales=1))
    # half-width 8 covers [0, 4] from any anchor
    assert np.allclose(pools.spans.data[0, 0], seq_data.mean(axis=0), atol=1e-12)


def test_gradient_reaches_exactly_the_window():
    from padalign.autodiff import slice_rows

    seq = Tensor(np.random.default_rng(4).normal(size=(10, 3)),
                 requires_grad=True, dtype=np.float64)
    prior = prior_from([0, 0, 0, 0, 0, 1.0, 0, 0, 0, 0])
    pools = aasa(seq, prior, SpanConfig(base_scale=4, num_scales=1))
    assert pools.anchors[0] == 5
    # first flat row is the anchor-5 span; its gradient must touch only the
    # clamped half-width-2 window, rows 3..7
    tensor_sum(slice_rows(pools.flat(), 0, 1)).backward()
    touched = np.any(seq.grad != 0, axis=1)
    assert list(np.flatnonzero(touched)) == [3, 4, 5, 6, 7]


def test_even_stride_mode():
    seq = Tensor(np.random.default_rng(5).normal(size=(12, 4)))
    pools = aasa(seq, SignificancePrior.uniform(12),
                 SpanConfig(base_scale=4, num_scales=1, anchor_mode="even_stride"))
    assert pools.anchors == [0, 4, 8]


def test_max_pooling():
    data = np.array([[1.0, -5.0], [3.0, 2.0], [2.0, 7.0]])
    pools = aasa(Tensor(data), prior_from([1, 1, 1]),
                 SpanConfig(base_scale=2, num_scales=1, pooling="max"))
    # anchor 0, half-width 1, window rows 0..1, columnwise max
    assert np.allclose(pools.spans.data[0, 0], [3.0, 2.0])


def test_flat_time_ordered_sorts_anchors():
    seq_data = np.random.default_rng(6).normal(size=(9, 2))
    prior = prior_from([.01, .01, .01, .01, .01, .9, .01, .02, .03])
    pools = aasa(Tensor(seq_data, dtype=np.float64), prior,
                 SpanConfig(base_scale=4, num_scales=1))
    assert pools.anchors == [5, 8, 0]  # selection order, by significance
    ordered = pools.flat_time_ordered()
    sorted_anchors = sorted(pools.anchors)
    for row, anchor in enumerate(sorted_anchors):
        lo, hi = max(0, anchor - 2), min(8, anchor + 2)
        assert np.allclose(ordered.data[row], seq_data[lo:hi + 1].mean(axis=0),
                           atol=1e-12)


def test_config_validation():
    with pytest.raises(ContractViolation):
        SpanConfig(base_scale=3)
    with pytest.raises(ContractViolation):
        SpanConfig(base_scale=0)
    with pytest.raises(ContractViolation):
        SpanConfig(num_scales=0)
    with pytest.raises(ContractViolation):
        SpanConfig(pooling="median")


def test_prior_length_mismatch():
    with pytest.raises(ContractViolation):
        aasa(Tensor(np.ones((4, 2))), SignificancePrior.uniform(5), SpanConfig())
