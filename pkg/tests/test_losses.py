import math

import numpy as np
import pytest

from padalign.autodiff import ContractViolation, Tensor
from padalign.losses import (
    VARIANTS,
    LossSpec,
    ctc_ordered,
    global_l1,
    joint_loss,
    local_maxsim,
    pad_global,
    similarity_matrix,
    span_local,
    weighted_local,
)
from padalign.significance import SignificancePrior
from padalign.spans import SpanConfig, aasa


def cos(u, v):
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def one_hot_prior(n, i):
    w = np.zeros(n)
    w[i] = 1.0
    return SignificancePrior(Tensor(w, dtype=np.float64))


# -- global ---------------------------------------------------------------

def test_global_l1_identity_and_hand_value():
    v = Tensor(np.array([1.0, 2.0]))
    assert float(global_l1(v, v).data) == 0.0
    a = Tensor(np.array([1.0, 2.0]))
    b = Tensor(np.array([0.0, 0.0]))
    assert float(global_l1(a, b).data) == pytest.approx(3.0)


def test_global_l1_matches_naive_loop():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=8), rng.normal(size=8)
    got = float(global_l1(Tensor(x, dtype=np.float64),
                          Tensor(y, dtype=np.float64)).data)
    expect = sum(abs(x[k] - y[k]) for k in range(8))
    assert got == pytest.approx(expect, abs=1e-12)


def test_global_l1_dim_mismatch():
    with pytest.raises(ContractViolation):
        global_l1(Tensor(np.ones(3)), Tensor(np.ones(4)))


def test_pad_global_uniform_reduces_to_avr_bitwise():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n_s, n_t, d = (int(rng.integers(1, 9)) for _ in range(3))
        d = max(d, 1)
        s = Tensor(rng.normal(size=(n_s, d)), dtype=np.float64)
        t = Tensor(rng.normal(size=(n_t, d)), dtype=np.float64)
        from padalign.encoder import pool_global
        baseline = global_l1(pool_global(s, "avr"), pool_global(t, "avr"))
        padded = pad_global(s, t, SignificancePrior.uniform(n_s, np.float64),
                            SignificancePrior.uniform(n_t, np.float64))
        assert np.array_equal(baseline.data, padded.data)


def test_pad_global_one_hot_selects_rows():
    rng = np.random.default_rng(2)
    s = rng.normal(size=(4, 3))
    t = rng.normal(size=(5, 3))
    got = pad_global(Tensor(s, dtype=np.float64), Tensor(t, dtype=np.float64),
                     one_hot_prior(4, 2), one_hot_prior(5, 0))
    assert float(got.data) == pytest.approx(np.abs(s[2] - t[0]).sum(), abs=1e-12)


def test_pad_global_matches_composed_oracle():
    rng = np.random.default_rng(3)
    s = rng.normal(size=(3, 4))
    t = rng.normal(size=(5, 4))
    ws = rng.random(3); ws /= ws.sum()
    wt = rng.random(5); wt /= wt.sum()
    got = float(pad_global(
        Tensor(s, dtype=np.float64), Tensor(t, dtype=np.float64),
        SignificancePrior(Tensor(ws, dtype=np.float64)),
        SignificancePrior(Tensor(wt, dtype=np.float64))).data)
    pooled_s = (s * ws[:, None]).sum(axis=0)
    pooled_t = (t * wt[:, None]).sum(axis=0)
    assert got == pytest.approx(np.abs(pooled_s - pooled_t).sum(), abs=1e-10)


# -- local ----------------------------------------------------------------

def test_local_maxsim_perfect_match():
    t1 = np.array([0.6, 0.8, 0.0])
    s = np.stack([np.array([0.0, 0.0, 1.0]), t1])
    got = local_maxsim(Tensor(s, dtype=np.float64), Tensor(t1[None], dtype=np.float64))
    assert float(got.data) == pytest.approx(-1.0, abs=1e-12)


def test_local_maxsim_orthogonal_is_zero():
    s = Tensor(np.array([[1.0, 0.0]]), dtype=np.float64)
    t = Tensor(np.array([[0.0, 1.0], [0.0, -2.0]]), dtype=np.float64)
    assert float(local_maxsim(s, t).data) == pytest.approx(0.0, abs=1e-12)


def test_local_maxsim_matches_brute_force():
    rng = np.random.default_rng(4)
    s = rng.normal(size=(3, 5))
    t = rng.normal(size=(2, 5))
    got = float(local_maxsim(Tensor(s, dtype=np.float64),
                             Tensor(t, dtype=np.float64)).data)
    expect = -np.mean([max(cos(s[i], t[j]) for i in range(3)) for j in range(2)])
    assert got == pytest.approx(expect, abs=1e-12)


def test_weighted_local_uniform_reduces_bitwise():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n_s, n_t = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        s = Tensor(rng.normal(size=(n_s, 4)), dtype=np.float64)
        t = Tensor(rng.normal(size=(n_t, 4)), dtype=np.float64)
        uniform = np.full(n_t, 1.0 / n_t, dtype=np.float64)
        assert np.array_equal(local_maxsim(s, t).data,
                              weighted_local(s, t, uniform).data)


def test_weighted_local_one_hot():
    rng = np.random.default_rng(6)
    s = rng.normal(size=(4, 3))
    t = rng.normal(size=(3, 3))
    w = np.zeros(3); w[1] = 1.0
    got = float(weighted_local(Tensor(s, dtype=np.float64),
                               Tensor(t, dtype=np.float64), w).data)
    expect = -max(cos(s[i], t[1]) for i in range(4))
    assert got == pytest.approx(expect, abs=1e-12)


def test_weighted_local_matches_loop_oracle():
    rng = np.random.default_rng(7)
    s = rng.normal(size=(5, 4))
    t = rng.normal(size=(3, 4))
    w = rng.random(3)
    got = float(weighted_local(Tensor(s, dtype=np.float64),
                               Tensor(t, dtype=np.float64), w).data)
    expect = -sum(w[j] * max(cos(s[i], t[j]) for i in range(5)) for j in range(3))
    assert got == pytest.approx(expect, abs=1e-12)


def test_weighted_local_rejects_bad_weights():
    s, t = Tensor(np.ones((2, 3))), Tensor(np.eye(3))
    with pytest.raises(ContractViolation):
        weighted_local(s, t, np.array([0.5, 0.5]))  # length mismatch
    with pytest.raises(ContractViolation):
        weighted_local(s, t, np.array([0.5, -0.1, 0.6]))


def test_permutation_consistency():
    rng = np.random.default_rng(8)
    s = rng.normal(size=(4, 5))
    t = rng.normal(size=(3, 5))
    w = rng.random(3)
    base = float(weighted_local(Tensor(s, dtype=np.float64),
                                Tensor(t, dtype=np.float64), w).data)
    sp = rng.permutation(4)
    assert float(local_maxsim(Tensor(s[sp], dtype=np.float64),
                              Tensor(t, dtype=np.float64)).data) == pytest.approx(
        float(local_maxsim(Tensor(s, dtype=np.float64),
                           Tensor(t, dtype=np.float64)).data), abs=1e-12)
    tp = rng.permutation(3)
    permuted = float(weighted_local(Tensor(s, dtype=np.float64),
                                    Tensor(t[tp], dtype=np.float64), w[tp]).data)
    assert permuted == pytest.approx(base, abs=1e-12)


def test_gradients_reach_only_speech_when_text_detached():
    from padalign.autodiff import tensor_mean

    rng = np.random.default_rng(9)
    s = Tensor(rng.normal(size=(4, 5)), requires_grad=True, dtype=np.float64)
    t_leaf = Tensor(rng.normal(size=(3, 5)), requires_grad=True, dtype=np.float64)
    t = t_leaf.detach()
    losses = [
        local_maxsim(s, t),
        global_l1(tensor_mean(s, axis=0), tensor_mean(t, axis=0)),
        weighted_local(s, t, np.full(3, 1 / 3)),
    ]
    for loss in losses:
        s.zero_grad()
        loss.backward()
        assert s.grad is not None and np.any(s.grad != 0)
        assert t_leaf.grad is None


# -- spans ----------------------------------------------------------------

def test_span_local_perfect_single_span():
    t1 = np.array([3.0, 4.0])
    pools = aasa(Tensor(t1[None], dtype=np.float64), SignificancePrior.uniform(1),
                 SpanConfig(base_scale=2, num_scales=1))
    got = span_local(pools, Tensor(t1[None], dtype=np.float64), np.array([1.0]))
    assert float(got.data) == pytest.approx(-1.0, abs=1e-12)


def test_span_local_single_frame_equals_weighted_local():
    rng = np.random.default_rng(10)
    s = rng.normal(size=(1, 4))
    t = rng.normal(size=(3, 4))
    w = rng.random(3)
    pools = aasa(Tensor(s, dtype=np.float64), SignificancePrior.uniform(1),
                 SpanConfig(base_scale=2, num_scales=1))
    a = float(span_local(pools, Tensor(t, dtype=np.float64), w).data)
    b = float(weighted_local(Tensor(s, dtype=np.float64),
                             Tensor(t, dtype=np.float64), w).data)
    assert a == pytest.approx(b, abs=1e-12)


def test_span_local_matches_exhaustive_oracle():
    rng = np.random.default_rng(11)
    s = rng.normal(size=(9, 4))
    t = rng.normal(size=(3, 4))
    w = rng.random(3)
    raw = rng.random(9)
    prior = SignificancePrior(Tensor(raw / raw.sum(), dtype=np.float64))
    pools = aasa(Tensor(s, dtype=np.float64), prior,
                 SpanConfig(base_scale=4, num_scales=2))
    got = float(span_local(pools, Tensor(t, dtype=np.float64), w).data)
    flat = pools.spans.data.reshape(-1, 4)
    expect = -sum(w[j] * max(cos(flat[r], t[j]) for r in range(flat.shape[0]))
                  for j in range(3))
    assert got == pytest.approx(expect, abs=1e-10)


# -- ctc ------------------------------------------------------------------

def softmax_rows(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def ctc_brute_force(sim_values, targets, blank_logit=0.0):
    """Enumerate every CTC-valid monotonic path and sum its probability."""
    n_frames, n_pos = sim_values.shape
    logits = np.concatenate([sim_values, np.full((n_frames, 1), blank_logit)], axis=1)
    probs = softmax_rows(logits)
    blank = n_pos
    ext = [blank]
    for t in targets:
        ext.extend((int(t), blank))
    s_len = len(ext)
    total = 0.0

    def walk(frame, state, acc):
        nonlocal total
        acc = acc * probs[frame, ext[state]]
        if frame == n_frames - 1:
            if state >= s_len - 2:
                total += acc
            return
        for nxt in (state, state + 1, state + 2):
            if nxt >= s_len:
                continue
            if nxt == state + 2 and (ext[nxt] == blank or ext[nxt] == ext[state]):
                continue
            walk(frame + 1, nxt, acc)

    starts = (0, 1) if s_len > 1 else (0,)
    for s0 in starts:
        walk(0, s0, 1.0)
    return -math.log(total)


def test_ctc_single_frame_single_target():
    rng = np.random.default_rng(12)
    s = rng.normal(size=(1, 4))
    t = rng.normal(size=(1, 4))
    sim = similarity_matrix(Tensor(s, dtype=np.float64), Tensor(t, dtype=np.float64))
    got = float(ctc_ordered(sim, [0]).data)
    probs = softmax_rows(np.concatenate([sim.values.data, np.zeros((1, 1))], axis=1))
    assert got == pytest.approx(-math.log(probs[0, 0]), abs=1e-12)


def test_ctc_two_frames_one_target_path_sum():
    rng = np.random.default_rng(13)
    s = rng.normal(size=(2, 4))
    t = rng.normal(size=(1, 4))
    sim = similarity_matrix(Tensor(s, dtype=np.float64), Tensor(t, dtype=np.float64))
    got = float(ctc_ordered(sim, [0]).data)
    p = softmax_rows(np.concatenate([sim.values.data, np.zeros((2, 1))], axis=1))
    expect = -math.log(p[0, 0] * p[1, 0] + p[0, 0] * p[1, 1] + p[0, 1] * p[1, 0])
    assert got == pytest.approx(expect, abs=1e-12)


def test_ctc_empty_target_all_blank():
    rng = np.random.default_rng(14)
    s = rng.normal(size=(2, 3))
    t = rng.normal(size=(2, 3))
    sim = similarity_matrix(Tensor(s, dtype=np.float64), Tensor(t, dtype=np.float64))
    got = float(ctc_ordered(sim, []).data)
    p = softmax_rows(np.concatenate([sim.values.data, np.zeros((2, 1))], axis=1))
    assert got == pytest.approx(-math.log(p[0, 2] * p[1, 2]), abs=1e-12)


def test_ctc_matches_brute_force_randomized():
    rng = np.random.default_rng(15)
    for _ in range(40):
        n_s = int(rng.integers(1, 7))
        n_t = int(rng.integers(1, 4))
        n_targets = int(rng.integers(0, min(n_s, 3) + 1))
        targets = rng.integers(0, n_t, size=n_targets).tolist()
        repeats = sum(1 for i in range(len(targets) - 1)
                      if targets[i] == targets[i + 1])
        if n_s < len(targets) + repeats:
            continue
        s = rng.normal(size=(n_s, 4))
        t = rng.normal(size=(n_t, 4))
        sim = similarity_matrix(Tensor(s, dtype=np.float64),
                                Tensor(t, dtype=np.float64))
        got = float(ctc_ordered(sim, targets).data)
        expect = ctc_brute_force(sim.values.data, targets)
        assert got == pytest.approx(expect, abs=1e-6), (targets, n_s)


def test_ctc_infeasible_target_rejected():
    rng = np.random.default_rng(16)
    sim = similarity_matrix(Tensor(rng.normal(size=(1, 3)), dtype=np.float64),
                            Tensor(rng.normal(size=(3, 3)), dtype=np.float64))
    with pytest.raises(ContractViolation):
        ctc_ordered(sim, [0, 1])


# -- joint ----------------------------------------------------------------

def test_joint_weights():
    a = Tensor(np.asarray(2.0), dtype=np.float64)
    b = Tensor(np.asarray(3.0), dtype=np.float64)
    assert float(joint_loss([(a, 1.0), (b, 0.0)]).data) == 2.0
    assert float(joint_loss([(a, 1.0), (b, 1.0)]).data) == 5.0
    assert float(joint_loss([(a, 0.5), (b, 2.0)]).data) == pytest.approx(7.0)
    with pytest.raises(ContractViolation):
        joint_loss([(a, 0.0), (b, 0.0)])
    with pytest.raises(ContractViolation):
        joint_loss([])


def test_joint_matches_manual_sum_on_losses():
    rng = np.random.default_rng(17)
    s = Tensor(rng.normal(size=(4, 5)), dtype=np.float64)
    t = Tensor(rng.normal(size=(3, 5)), dtype=np.float64)
    from padalign.encoder import pool_global
    l_g = global_l1(pool_global(s, "avr"), pool_global(t, "avr"))
    l_t = local_maxsim(s, t)
    pools = aasa(s, SignificancePrior.uniform(4), SpanConfig(base_scale=2,
                                                             num_scales=1))
    l_s = span_local(pools, t, np.full(3, 1 / 3))
    joint = joint_loss([(l_g, 1.0), (l_t, 1.0), (l_s, 1.0)])
    assert float(joint.data) == pytest.approx(
        float(l_g.data) + float(l_t.data) + float(l_s.data), abs=1e-12)


def test_loss_spec_validation():
    with pytest.raises(ContractViolation):
        LossSpec.single("bogus")
    with pytest.raises(ContractViolation):
        LossSpec(weights={"tlocal": 0.0})
    spec = LossSpec(weights={"pad_glob": 1.0, "pad_tlocal": 0.0})
    assert spec.components == [("pad_glob", 1.0)]
    assert len(VARIANTS) == 9
