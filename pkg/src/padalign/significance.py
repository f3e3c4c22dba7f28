"""Significance priors over sequence positions.

The main prior scores each position by the attention mass it receives,
averaged over the layers of a row-stochastic attention stack and normalized
to a distribution. An idf table provides the corpus-frequency alternative
for text tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .autodiff import (
    ContractViolation,
    Tensor,
    add,
    div_scalar,
    scalar_mul,
    scale_rows,
    tensor_sum,
)

__all__ = ["SignificancePrior", "IdfTable", "asp", "apply_prior", "idf_weights"]


@dataclass
class SignificancePrior:
    """Nonnegative per-position weights summing to one."""

    weights: Tensor

    def __post_init__(self):
        w = self.weights.data
        if w.ndim != 1 or w.shape[0] < 1:
            raise ContractViolation(f"prior: expected nonempty vector, got {w.shape}")
        if np.any(w < -1e-9):
            raise ContractViolation("prior: negative weight")
        total = float(np.sum(w, dtype=np.float64))
        if abs(total - 1.0) > 1e-6:
            raise ContractViolation(f"prior: weights sum to {total}, expected 1")

    def __len__(self) -> int:
        return self.weights.shape[0]

    def detach(self) -> "SignificancePrior":
        return SignificancePrior(self.weights.detach())

    @staticmethod
    def uniform(n: int, dtype=np.float32) -> "SignificancePrior":
        if n < 1:
            raise ContractViolation("prior: length must be positive")
        return SignificancePrior(Tensor(np.full(n, 1.0 / n, dtype=dtype)))


def asp(stack, layer_mode: str = "all") -> SignificancePrior:
    """Prior from an attention stack: per-layer column sums over total mass.

    ``layer_mode`` selects all layers or only the last one. Column sums
    measure the attention each position receives under the row=query
    convention; each layer term is normalized by the layer's total mass, so
    the averaged output sums to one for any row-stochastic stack.
    """
    maps: Sequence[Tensor] = getattr(stack, "maps", stack)
    if len(maps) == 0:
        raise ContractViolation("asp: empty attention stack")
    if layer_mode not in ("all", "last"):
        raise ContractViolation(f"asp: unknown layer_mode {layer_mode!r}")
    selected = maps if layer_mode == "all" else maps[-1:]

    acc: Tensor | None = None
    for attn in selected:
        col = tensor_sum(attn, axis=0)
        total = tensor_sum(attn)
        term = div_scalar(col, total)
        acc = term if acc is None else add(acc, term)
    return SignificancePrior(scalar_mul(acc, 1.0 / len(selected)))


def apply_prior(seq: Tensor, prior: SignificancePrior) -> Tensor:
    """Scale row i of ``seq`` by the prior weight of position i."""
    if seq.ndim != 2 or seq.shape[0] != len(prior):
        raise ContractViolation(
            f"apply_prior: sequence {seq.shape} vs prior length {len(prior)}")
    return scale_rows(seq, prior.weights)


@dataclass
class IdfTable:
    """Smoothed inverse document frequencies fitted on a token corpus."""

    df: dict[int, int] = field(default_factory=dict)
    num_docs: int = 0

    @classmethod
    def fit(cls, corpus: Iterable[Sequence[int]]) -> "IdfTable":
        df: dict[int, int] = {}
        n = 0
        for doc in corpus:
            n += 1
            for tok in set(doc):
                df[tok] = df.get(tok, 0) + 1
        if n == 0:
            raise ContractViolation("IdfTable.fit: empty corpus")
        return cls(df=df, num_docs=n)

    def weight(self, token: int) -> float:
        # unseen tokens get df=0, i.e. the maximal idf under this smoothing
        return math.log((1 + self.num_docs) / (1 + self.df.get(token, 0))) + 1.0


def idf_weights(tokens: Sequence[int], table: IdfTable,
                normalize: bool = True) -> np.ndarray:
    """Per-token idf weights; normalized they are usable as a prior."""
    if len(tokens) == 0:
        raise ContractViolation("idf_weights: empty token sequence")
    w = np.array([table.weight(t) for t in tokens], dtype=np.float64)
    if normalize:
        w = w / w.sum()
    return w
