"""Synthetic paired speech/text data with gold frame-to-token alignment.

Each text token is realized as a run of noisy copies of a per-token
prototype frame; optional blank frames (pure noise, gold index -1) are
interleaved so that significance priors have something to suppress.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractViolation

__all__ = ["GenConfig", "PairedExample", "Dataset", "generate", "split",
           "nearest_prototype"]


@dataclass
class GenConfig:
    vocab_size: int = 50
    text_len: tuple[int, int] = (4, 8)
    repeats: tuple[int, int] = (2, 4)
    blank_prob: float = 0.2
    noise_std: float = 0.1
    frame_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        self.text_len = (int(self.text_len[0]), int(self.text_len[1]))
        self.repeats = (int(self.repeats[0]), int(self.repeats[1]))
        if self.vocab_size < 1 or self.frame_dim < 1:
            raise ContractViolation("GenConfig: sizes must be positive")
        if not (1 <= self.text_len[0] <= self.text_len[1]):
            raise ContractViolation(f"GenConfig: bad text_len range {self.text_len}")
        if not (1 <= self.repeats[0] <= self.repeats[1]):
            raise ContractViolation(f"GenConfig: bad repeat range {self.repeats}")
        if not 0.0 <= self.blank_prob <= 1.0:
            raise ContractViolation("GenConfig: blank_prob outside [0, 1]")
        if self.noise_std < 0:
            raise ContractViolation("GenConfig: negative noise_std")
        if self.blank_prob > 0 and self.noise_std == 0:
            # zero-noise blanks would be zero vectors, which break cosine
            raise ContractViolation("GenConfig: blank_prob > 0 requires noise_std > 0")


@dataclass
class PairedExample:
    text: np.ndarray    # (n_t,) token ids
    speech: np.ndarray  # (n_s, frame_dim) float32
    gold: np.ndarray    # (n_s,) source token index per frame, -1 for blanks

    def __post_init__(self):
        if self.speech.shape[0] < self.text.shape[0]:
            raise ContractViolation("PairedExample: fewer frames than tokens")
        non_blank = self.gold[self.gold >= 0]
        if np.any(np.diff(non_blank) < 0):
            raise ContractViolation("PairedExample: gold map not monotone")
        if set(non_blank.tolist()) != set(range(self.text.shape[0])):
            raise ContractViolation("PairedExample: gold map not onto all tokens")


@dataclass
class Dataset:
    examples: list[PairedExample]
    prototypes: np.ndarray  # (vocab_size, frame_dim), unit rows
    config: GenConfig = field(repr=False, default=None)

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)


def generate(cfg: GenConfig, count: int,
             prototypes: np.ndarray | None = None) -> Dataset:
    """Build paired examples whose frames are noisy repeats of per-token
    prototype vectors.

    ``prototypes`` is normally the frozen teacher's token embedding table so
    the speech side is built from teacher-side embeddings; without one, a
    seeded unit-norm table stands in (standalone dataset generation).
    """
    if count < 1:
        raise ContractViolation("generate: count must be positive")
    rng = np.random.default_rng(cfg.seed)
    if prototypes is not None:
        protos = np.asarray(prototypes, dtype=np.float32)
        if protos.shape != (cfg.vocab_size, cfg.frame_dim):
            raise ContractViolation(
                f"generate: prototype table {protos.shape} does not match "
                f"vocab {cfg.vocab_size} x frame_dim {cfg.frame_dim}")
        if np.any(np.linalg.norm(protos, axis=1) == 0):
            raise ContractViolation("generate: zero-norm prototype row")
    else:
        protos = rng.normal(0.0, 1.0, size=(cfg.vocab_size, cfg.frame_dim))
        protos /= np.linalg.norm(protos, axis=1, keepdims=True)
        protos = protos.astype(np.float32)

    examples = []
    for _ in range(count):
        n_t = int(rng.integers(cfg.text_len[0], cfg.text_len[1] + 1))
        tokens = rng.integers(0, cfg.vocab_size, size=n_t)
        frames: list[np.ndarray] = []
        gold: list[int] = []
        for j, tok in enumerate(tokens):
            if rng.random() < cfg.blank_prob:
                frames.append(rng.normal(0.0, cfg.noise_std, size=cfg.frame_dim))
                gold.append(-1)
            r = int(rng.integers(cfg.repeats[0], cfg.repeats[1] + 1))
            noise = rng.normal(0.0, cfg.noise_std, size=(r, cfg.frame_dim))
            for row in protos[tok] + noise:
                frames.append(row)
                gold.append(j)
        if rng.random() < cfg.blank_prob:
            frames.append(rng.normal(0.0, cfg.noise_std, size=cfg.frame_dim))
            gold.append(-1)
        examples.append(PairedExample(
            text=np.asarray(tokens, dtype=np.int64),
            speech=np.asarray(frames, dtype=np.float32),
            gold=np.asarray(gold, dtype=np.int64)))
    return Dataset(examples=examples, prototypes=protos, config=cfg)


def split(dataset: Dataset, dev_fraction: float = 0.1,
          seed: int = 0) -> tuple[list[PairedExample], list[PairedExample]]:
    """Seeded 90/10 train/dev split by example."""
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_dev = max(1, int(round(n * dev_fraction))) if n > 1 else 0
    dev_idx = set(order[:n_dev].tolist())
    train = [dataset.examples[i] for i in range(n) if i not in dev_idx]
    dev = [dataset.examples[i] for i in range(n) if i in dev_idx]
    return train, dev


def nearest_prototype(frames: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    """Index of the nearest prototype per frame (used as an oracle self-check)."""
    sims = frames @ prototypes.T
    norms = (np.linalg.norm(frames, axis=1, keepdims=True)
             * np.linalg.norm(prototypes, axis=1)[None, :])
    return np.argmax(sims / np.maximum(norms, 1e-12), axis=1)
