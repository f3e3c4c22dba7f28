"""Alignment losses between speech and text embedding sequences.

Covers the L1 distance of pooled sequence embeddings, per-token max-similarity
losses (uniform, significance-weighted, idf-weighted), span-level variants over
aggregated pools, an ordered CTC baseline over the similarity distribution, and
weighted joint combinations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import (
    ContractViolation,
    Tensor,
    concat_cols,
    l1_norm,
    log_softmax,
    matmul,
    mul,
    normalize_rows,
    scalar_mul,
    sub,
    tensor_max,
    tensor_sum,
    transpose,
)
from .significance import SignificancePrior, apply_prior
from .spans import SpanPoolSet

__all__ = [
    "VARIANTS",
    "LossSpec",
    "SimilarityMatrix",
    "similarity_matrix",
    "global_l1",
    "pad_global",
    "local_maxsim",
    "weighted_local",
    "span_local",
    "ctc_ordered",
    "joint_loss",
]

# canonical variant names accepted in config files and CLI flags
VARIANTS = (
    "glob_cls",
    "glob_avr",
    "pad_glob",
    "tlocal",
    "tlocal_idf",
    "pad_tlocal",
    "pad_slocal",
    "tlocal_or",
    "slocal_or",
)


@dataclass
class LossSpec:
    """A weighted combination of loss variants; single variants weigh 1."""

    weights: dict[str, float]

    def __post_init__(self):
        if not self.weights:
            raise ContractViolation("LossSpec: no components")
        for name, w in self.weights.items():
            if name not in VARIANTS:
                raise ContractViolation(
                    f"LossSpec: unknown variant {name!r}; valid: {', '.join(VARIANTS)}")
            if w < 0:
                raise ContractViolation(f"LossSpec: negative weight for {name}")
        if not any(w > 0 for w in self.weights.values()):
            raise ContractViolation("LossSpec: at least one weight must be positive")

    @classmethod
    def single(cls, variant: str) -> "LossSpec":
        return cls(weights={variant: 1.0})

    @property
    def components(self) -> list[tuple[str, float]]:
        return [(name, w) for name, w in self.weights.items() if w > 0]


@dataclass
class SimilarityMatrix:
    """Pairwise cosine similarities, speech rows by text columns."""

    values: Tensor

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ContractViolation(
                f"SimilarityMatrix: expected matrix, got {self.values.shape}")
        if np.any(np.abs(self.values.data) > 1.0 + 1e-5):
            raise ContractViolation("SimilarityMatrix: entry outside [-1, 1]")


def similarity_matrix(speech: Tensor, text: Tensor) -> SimilarityMatrix:
    if speech.ndim != 2 or text.ndim != 2 or speech.shape[1] != text.shape[1]:
        raise ContractViolation(
            f"similarity_matrix: shapes {speech.shape} and {text.shape} do not share a dim")
    values = matmul(normalize_rows(speech), transpose(normalize_rows(text)))
    return SimilarityMatrix(values=values)


def global_l1(pooled_speech: Tensor, pooled_text: Tensor) -> Tensor:
    if pooled_speech.shape != pooled_text.shape:
        raise ContractViolation(
            f"global_l1: dim mismatch {pooled_speech.shape} vs {pooled_text.shape}")
    return l1_norm(sub(pooled_speech, pooled_text))


def pad_global(speech: Tensor, text: Tensor, prior_speech: SignificancePrior,
               prior_text: SignificancePrior) -> Tensor:
    """L1 between sum-pooled prior-weighted sequences (weights sum to one,
    so each pool is a weighted average)."""
    pooled_s = tensor_sum(apply_prior(speech, prior_speech), axis=0)
    pooled_t = tensor_sum(apply_prior(text, prior_text), axis=0)
    return global_l1(pooled_s, pooled_t)


def _as_weights(weights, n: int, dtype) -> Tensor:
    if isinstance(weights, SignificancePrior):
        weights = weights.weights
    if not isinstance(weights, Tensor):
        weights = Tensor(np.asarray(weights, dtype=dtype))
    if weights.ndim != 1 or weights.shape[0] != n:
        raise ContractViolation(
            f"weights: expected length-{n} vector, got {weights.shape}")
    if np.any(weights.data < 0):
        raise ContractViolation("weights: negative entry")
    return weights


def weighted_local(speech: Tensor, text: Tensor, weights) -> Tensor:
    """Negative weighted sum over text positions of the best speech match."""
    sim = similarity_matrix(speech, text)
    best = tensor_max(sim.values, axis=0)
    w = _as_weights(weights, text.shape[0], best.dtype)
    return scalar_mul(tensor_sum(mul(w, best)), -1.0)


def local_maxsim(speech: Tensor, text: Tensor) -> Tensor:
    """Uniform-weight local loss; the 1/n factor is folded into the weights
    so the uniform-prior reduction is exact."""
    if speech.shape[0] < 1 or text.shape[0] < 1:
        raise ContractViolation("local_maxsim: empty sequence")
    n_t = text.shape[0]
    uniform = np.full(n_t, 1.0 / n_t, dtype=np.float64)
    return weighted_local(speech, text, uniform.astype(speech.dtype))


def span_local(pools: SpanPoolSet, text: Tensor, weights) -> Tensor:
    """Local loss where text tokens match against pooled spans instead of frames."""
    if pools.k < 1:
        raise ContractViolation("span_local: empty span pool")
    flat = pools.flat()
    if flat.shape[1] != text.shape[1]:
        raise ContractViolation(
            f"span_local: span dim {flat.shape[1]} vs text dim {text.shape[1]}")
    sim = similarity_matrix(flat, text)
    best = tensor_max(sim.values, axis=0)
    w = _as_weights(weights, text.shape[0], best.dtype)
    return scalar_mul(tensor_sum(mul(w, best)), -1.0)


def joint_loss(components: Sequence[tuple[Tensor, float]]) -> Tensor:
    if not components:
        raise ContractViolation("joint_loss: no components")
    if any(w < 0 for _, w in components):
        raise ContractViolation("joint_loss: negative weight")
    if not any(w > 0 for _, w in components):
        raise ContractViolation("joint_loss: all weights zero")
    acc: Tensor | None = None
    for loss, w in components:
        if w == 0:
            continue
        term = scalar_mul(loss, w)
        acc = term if acc is None else acc + term
    return acc


# -- ordered alignment via CTC --------------------------------------------------

def ctc_ordered(sim: SimilarityMatrix, targets: Sequence[int],
                blank_logit: float = 0.0) -> Tensor:
    """Negative log probability of all monotonic frame-to-position paths.

    Each frame's similarity row, extended with a fixed blank logit, is
    softmax-normalized into emission probabilities over text positions plus
    blank; the loss sums all CTC-valid paths for ``targets`` (positions in
    the transcript, so repeated words stay distinct states).
    """
    values = sim.values
    n_frames, n_positions = values.shape
    targets = [int(t) for t in targets]
    for t in targets:
        if not 0 <= t < n_positions:
            raise ContractViolation(f"ctc_ordered: target position {t} out of range")
    blank_col = Tensor(np.full((n_frames, 1), blank_logit, dtype=values.dtype))
    logits = concat_cols([values, blank_col])
    logp = log_softmax(logits, axis=1)
    return _ctc_neg_log_like(logp, targets, blank=n_positions)


def _ctc_neg_log_like(logp: Tensor, targets: list[int], blank: int) -> Tensor:
    """Fused CTC loss over a log-emission matrix (frames x classes).

    The forward/backward recursions run in float64 log space; the gradient
    is the standard state-posterior expression, scattered back onto the
    emission columns.
    """
    n_frames, n_classes = logp.shape
    ext = [blank]
    for t in targets:
        ext.extend((t, blank))
    ext_arr = np.array(ext, dtype=np.int64)
    s_len = len(ext)

    # a path may skip a blank only between distinct labels
    can_skip = np.zeros(s_len, dtype=bool)
    can_skip[2:] = (ext_arr[2:] != blank) & (ext_arr[2:] != ext_arr[:-2])

    repeats = sum(1 for i in range(len(targets) - 1) if targets[i] == targets[i + 1])
    min_frames = len(targets) + repeats
    if n_frames < max(min_frames, 1):
        raise ContractViolation(
            f"ctc_ordered: {n_frames} frames cannot emit {len(targets)} targets "
            f"({min_frames} CTC-feasible frames required)")

    lp = logp.data.astype(np.float64)
    lp_ext = lp[:, ext_arr]  # (n_frames, s_len)

    neg_inf = -np.inf
    alpha = np.full((n_frames, s_len), neg_inf)
    alpha[0, 0] = lp_ext[0, 0]
    if s_len > 1:
        alpha[0, 1] = lp_ext[0, 1]
    for t in range(1, n_frames):
        prev = alpha[t - 1]
        cand = prev.copy()
        cand[1:] = np.logaddexp(cand[1:], prev[:-1])
        cand[can_skip] = np.logaddexp(cand[can_skip],
                                      prev[np.flatnonzero(can_skip) - 2])
        alpha[t] = cand + lp_ext[t]

    if s_len > 1:
        log_z = np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    else:
        log_z = alpha[-1, -1]
    out_data = np.asarray(-log_z, dtype=logp.dtype)

    def backward(g):
        beta = np.full((n_frames, s_len), neg_inf)
        beta[-1, -1] = 0.0
        if s_len > 1:
            beta[-1, -2] = 0.0
        skip_from = np.zeros(s_len, dtype=bool)
        skip_from[:-2] = can_skip[2:]
        for t in range(n_frames - 2, -1, -1):
            nxt = beta[t + 1] + lp_ext[t + 1]
            cand = nxt.copy()
            cand[:-1] = np.logaddexp(cand[:-1], nxt[1:])
            cand[skip_from] = np.logaddexp(cand[skip_from],
                                           nxt[np.flatnonzero(skip_from) + 2])
            beta[t] = cand
        posterior = np.exp(alpha + beta - log_z)  # (n_frames, s_len)
        grad = np.zeros((n_frames, n_classes), dtype=np.float64)
        np.add.at(grad.T, ext_arr, posterior.T)
        logp._accumulate((-float(g) * grad).astype(logp.data.dtype))

    return Tensor._from_op(out_data, (logp,), "ctc", backward)
