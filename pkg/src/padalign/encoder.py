"""Toy transformer encoders exposing per-layer attention maps.

Two flavours share one implementation: a frozen "teacher" that embeds token
ids and a trainable "student" that projects continuous feature frames. Heads
are averaged into one row-stochastic map per layer, which is what the
significance prior consumes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ContractViolation,
    Tensor,
    concat_cols,
    linear,
    matmul,
    relu,
    reshape,
    scalar_mul,
    scale_rows,
    slice_rows,
    softmax,
    tensor_sum,
    transpose,
)
from .significance import SignificancePrior

__all__ = ["EncoderConfig", "AttentionStack", "EncoderOutput", "Encoder",
           "LinearMap", "pool_global"]


@dataclass
class EncoderConfig:
    num_layers: int = 2
    num_heads: int = 2
    model_dim: int = 32
    ffn_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.num_layers < 0 or self.num_heads < 1 or self.model_dim < 1 \
                or self.ffn_dim < 1:
            raise ContractViolation("EncoderConfig: sizes must be positive")
        if self.model_dim % self.num_heads != 0:
            raise ContractViolation(
                f"EncoderConfig: model_dim {self.model_dim} not divisible by "
                f"{self.num_heads} heads")


@dataclass
class AttentionStack:
    """One head-averaged n x n row-stochastic map per layer."""

    maps: list[Tensor]

    def __len__(self) -> int:
        return len(self.maps)

    def validate(self, tol: float = 1e-6) -> None:
        for i, m in enumerate(self.maps):
            a = m.data
            if a.ndim != 2 or a.shape[0] != a.shape[1]:
                raise ContractViolation(f"attention map {i}: not square, {a.shape}")
            if np.any(a < -tol) or np.any(a > 1 + tol):
                raise ContractViolation(f"attention map {i}: entries outside [0, 1]")
            sums = np.sum(a, axis=1, dtype=np.float64)
            if np.max(np.abs(sums - 1.0)) > tol:
                raise ContractViolation(
                    f"attention map {i}: row sums deviate from 1 by "
                    f"{np.max(np.abs(sums - 1.0)):.2e}")

    @classmethod
    def from_array(cls, arr: np.ndarray, tol: float = 1e-4) -> "AttentionStack":
        """Wrap an L x n x n array (e.g. loaded from a bundle) as constants."""
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise ContractViolation(f"attention stack: expected rank 3, got {arr.shape}")
        stack = cls(maps=[Tensor(layer) for layer in arr])
        stack.validate(tol=tol)
        return stack


@dataclass
class EncoderOutput:
    hidden: Tensor
    attention: AttentionStack


def _positional_encoding(n: int, d: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    idx = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2 * (idx // 2)) / d)
    pe = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return pe.astype(np.float32)


class Encoder:
    """Transformer encoder; ``teacher`` embeds token ids with frozen weights,
    ``student`` projects feature frames with trainable ones."""

    def __init__(self, config: EncoderConfig, mode: str,
                 vocab_size: int | None = None, input_dim: int | None = None):
        if mode not in ("teacher", "student"):
            raise ContractViolation(f"Encoder: unknown mode {mode!r}")
        if mode == "teacher" and not vocab_size:
            raise ContractViolation("Encoder: teacher mode needs vocab_size")
        if mode == "student" and not input_dim:
            raise ContractViolation("Encoder: student mode needs input_dim")
        self.config = config
        self.mode = mode
        self.vocab_size = vocab_size
        self.input_dim = input_dim
        self.trainable = mode == "student"
        self._params: dict[str, Tensor] = {}
        self._init_params()

    def _param(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data.astype(np.float32), requires_grad=self.trainable)
        self._params[name] = t
        return t

    def _init_params(self) -> None:
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        d = cfg.model_dim
        dh = d // cfg.num_heads
        scale = 1.0 / np.sqrt(d)
        if self.mode == "teacher":
            self._param("embed", rng.normal(0.0, 1.0, size=(self.vocab_size, d)))
        else:
            self._param("w_in", rng.normal(0.0, scale, size=(self.input_dim, d)))
            self._param("b_in", np.zeros(d))
        for layer in range(cfg.num_layers):
            # projections are stored per head; same math as slicing column
            # blocks out of full d x d maps, with fewer graph nodes
            for head in range(cfg.num_heads):
                for name in ("wq", "wk", "wv"):
                    self._param(f"l{layer}.{name}.h{head}",
                                rng.normal(0.0, scale, size=(d, dh)))
            self._param(f"l{layer}.wo", rng.normal(0.0, scale, size=(d, d)))
            self._param(f"l{layer}.w1", rng.normal(0.0, scale, size=(d, cfg.ffn_dim)))
            self._param(f"l{layer}.b1", np.zeros(cfg.ffn_dim))
            self._param(f"l{layer}.w2",
                        rng.normal(0.0, 1.0 / np.sqrt(cfg.ffn_dim), size=(cfg.ffn_dim, d)))
            self._param(f"l{layer}.b2", np.zeros(d))

    # -- parameter access ---------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self._params):
            h.update(name.encode())
            h.update(self._params[name].data.tobytes())
        return h.hexdigest()

    # -- forward ------------------------------------------------------------

    def _embed(self, inputs) -> Tensor:
        if self.mode == "teacher":
            ids = np.asarray(inputs, dtype=np.int64)
            if ids.ndim != 1 or ids.size == 0:
                raise ContractViolation("encode: expected nonempty token id sequence")
            if np.any(ids < 0) or np.any(ids >= self.vocab_size):
                raise ContractViolation(
                    f"encode: token id out of vocabulary (size {self.vocab_size})")
            onehot = np.zeros((ids.size, self.vocab_size), dtype=np.float32)
            onehot[np.arange(ids.size), ids] = 1.0
            return matmul(Tensor(onehot), self._params["embed"])
        frames = inputs if isinstance(inputs, Tensor) else Tensor(np.asarray(inputs))
        if frames.ndim != 2 or frames.shape[0] == 0:
            raise ContractViolation("encode: expected nonempty n x d_in frame matrix")
        return linear(frames, self._params["w_in"], self._params["b_in"])

    def forward(self, inputs) -> EncoderOutput:
        cfg = self.config
        h = self._embed(inputs)
        n, d = h.shape
        maps: list[Tensor] = []
        if cfg.num_layers > 0:
            # positions only matter to attention; a layer-free encoder stays
            # a pure embedding lookup
            h = h + Tensor(_positional_encoding(n, d))
        dh = d // cfg.num_heads
        inv_sqrt_dh = 1.0 / np.sqrt(dh)
        for layer in range(cfg.num_layers):
            head_outs = []
            head_maps = []
            for head in range(cfg.num_heads):
                qh = matmul(h, self._params[f"l{layer}.wq.h{head}"])
                kh = matmul(h, self._params[f"l{layer}.wk.h{head}"])
                vh = matmul(h, self._params[f"l{layer}.wv.h{head}"])
                attn = softmax(scalar_mul(matmul(qh, transpose(kh)), inv_sqrt_dh),
                               axis=1)
                head_maps.append(attn)
                head_outs.append(matmul(attn, vh))
            avg = head_maps[0]
            for m in head_maps[1:]:
                avg = avg + m
            maps.append(scalar_mul(avg, 1.0 / cfg.num_heads))
            attended = matmul(concat_cols(head_outs), self._params[f"l{layer}.wo"])
            h = h + attended
            hidden = relu(linear(h, self._params[f"l{layer}.w1"],
                                 self._params[f"l{layer}.b1"]))
            h = h + linear(hidden, self._params[f"l{layer}.w2"],
                           self._params[f"l{layer}.b2"])
        if not self.trainable:
            h = h.detach()
            maps = [m.detach() for m in maps]
        return EncoderOutput(hidden=h, attention=AttentionStack(maps=maps))


class LinearMap:
    """Trainable projection for externally imported embeddings whose width
    differs from the model dimension."""

    def __init__(self, in_dim: int, out_dim: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.weight = Tensor(rng.normal(0.0, 1.0 / np.sqrt(in_dim),
                                        size=(in_dim, out_dim)).astype(np.float32),
                             requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight)


def pool_global(hidden: Tensor, mode: str,
                prior: SignificancePrior | None = None) -> Tensor:
    """Sequence embedding: first row, mean of rows, or prior-weighted sum.

    Mean pooling runs through the uniform-weighted-sum path so that pooling
    with an explicitly uniform prior is bit-identical to it.
    """
    if hidden.ndim != 2 or hidden.shape[0] < 1:
        raise ContractViolation(f"pool_global: expected n x d matrix, got {hidden.shape}")
    n, d = hidden.shape
    if mode == "cls":
        return reshape(slice_rows(hidden, 0, 1), (d,))
    if mode == "avr":
        uniform = Tensor(np.full(n, 1.0 / n, dtype=hidden.dtype))
        return tensor_sum(scale_rows(hidden, uniform), axis=0)
    if mode == "prior":
        if prior is None:
            raise ContractViolation("pool_global: prior mode needs a prior")
        if len(prior) != n:
            raise ContractViolation(
                f"pool_global: prior length {len(prior)} vs {n} rows")
        return tensor_sum(scale_rows(hidden, prior.weights), axis=0)
    raise ContractViolation(f"pool_global: unknown mode {mode!r}")
