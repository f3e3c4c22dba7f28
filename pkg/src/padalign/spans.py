"""Anchor-based adaptive span aggregation.

Anchors are frame indices picked greedily in order of decreasing
significance, subject to a minimum pairwise distance (density control).
Around each anchor, windows at geometrically growing half-widths are pooled
into span embeddings; gradients flow back to exactly the pooled frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ContractViolation,
    Tensor,
    reshape,
    slice_rows,
    stack_rows,
    tensor_max,
    tensor_mean,
)
from .significance import SignificancePrior

__all__ = ["SpanConfig", "SpanPoolSet", "aasa", "span_scales"]


@dataclass
class SpanConfig:
    base_scale: int = 8
    num_scales: int = 3
    pooling: str = "mean"
    anchor_mode: str = "prior"
    multi_scale: bool = True

    def __post_init__(self):
        if self.base_scale < 2 or self.base_scale % 2 != 0:
            raise ContractViolation(
                f"SpanConfig: base_scale must be even and >= 2, got {self.base_scale}")
        if self.num_scales < 1:
            raise ContractViolation("SpanConfig: num_scales must be >= 1")
        if self.pooling not in ("mean", "max"):
            raise ContractViolation(f"SpanConfig: unknown pooling {self.pooling!r}")
        if self.anchor_mode not in ("prior", "even_stride"):
            raise ContractViolation(
                f"SpanConfig: unknown anchor_mode {self.anchor_mode!r}")


@dataclass
class SpanPoolSet:
    """Anchors plus the pooled spans around them, shaped k x c x d."""

    anchors: list[int]
    scales: list[int]
    spans: Tensor
    _per_anchor: list[list[Tensor]] = field(repr=False, default_factory=list)

    @property
    def k(self) -> int:
        return len(self.anchors)

    @property
    def c(self) -> int:
        return len(self.scales)

    def flat(self) -> Tensor:
        """Spans as a (k*c) x d matrix, anchors in selection order."""
        k, c, d = self.spans.shape
        return reshape(self.spans, (k * c, d))

    def flat_time_ordered(self) -> Tensor:
        """Spans as a (k*c) x d matrix with anchors sorted by frame position."""
        order = np.argsort(self.anchors, kind="stable")
        rows = [v for i in order for v in self._per_anchor[i]]
        return stack_rows(rows)


def span_scales(cfg: SpanConfig) -> list[int]:
    """Half-widths used per anchor: xi/2 then doubling, truncated to c."""
    if not cfg.multi_scale:
        return [cfg.base_scale // 2]
    scales = [cfg.base_scale // 2]
    width = cfg.base_scale
    while len(scales) < cfg.num_scales:
        scales.append(width)
        width *= 2
    return scales


def _select_anchors(prior: SignificancePrior, n: int, cfg: SpanConfig) -> list[int]:
    if cfg.anchor_mode == "even_stride":
        return list(range(0, n, cfg.base_scale))
    # stable descending sort; ties broken by ascending index
    sig = prior.weights.data.astype(np.float64)
    order = np.argsort(-sig, kind="stable")
    min_gap = cfg.base_scale // 2
    anchors: list[int] = []
    for idx in order:
        idx = int(idx)
        if all(abs(idx - a) > min_gap for a in anchors):
            anchors.append(idx)
    return anchors


def aasa(seq: Tensor, prior: SignificancePrior, cfg: SpanConfig) -> SpanPoolSet:
    """Pool multi-scale windows around significance-ranked anchor frames."""
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ContractViolation(f"aasa: expected nonempty n x d sequence, got {seq.shape}")
    n = seq.shape[0]
    if len(prior) != n:
        raise ContractViolation(f"aasa: prior length {len(prior)} vs sequence length {n}")

    anchors = _select_anchors(prior, n, cfg)
    scales = span_scales(cfg)

    per_anchor: list[list[Tensor]] = []
    for a in anchors:
        pooled = []
        for s in scales:
            lo = max(0, a - s)
            hi = min(n - 1, a + s)
            window = slice_rows(seq, lo, hi + 1)
            if cfg.pooling == "mean":
                pooled.append(tensor_mean(window, axis=0))
            else:
                pooled.append(tensor_max(window, axis=0))
        per_anchor.append(pooled)

    flat = stack_rows([v for group in per_anchor for v in group])
    spans = reshape(flat, (len(anchors), len(scales), seq.shape[1]))
    return SpanPoolSet(anchors=anchors, scales=scales, spans=spans,
                       _per_anchor=per_anchor)
