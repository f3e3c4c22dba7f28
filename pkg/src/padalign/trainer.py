"""Alignment training loop: frozen text teacher, trainable speech student.

Teacher encodings are precomputed once per dataset (the freeze contract
makes them constants), so each step only runs the student forward/backward.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractViolation, Tensor, no_grad, scalar_mul
from .encoder import Encoder, EncoderConfig, EncoderOutput, pool_global
from .losses import (
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
from .significance import IdfTable, SignificancePrior, asp, idf_weights
from .spans import SpanConfig, aasa
from .synthdata import Dataset, PairedExample, split

__all__ = ["TrainConfig", "EpochMetrics", "MetricsHistory", "TrainResult",
           "TrainingDiverged", "make_teacher", "train", "eval_retrieval",
           "eval_frame_alignment"]


class TrainingDiverged(RuntimeError):
    """Raised when the training loss leaves the finite range."""


@dataclass
class TrainConfig:
    loss: LossSpec = field(default_factory=lambda: LossSpec.single("pad_tlocal"))
    lr: float = 1e-3
    optimizer: str = "adam"
    epochs: int = 10
    batch_size: int = 8
    seed: int = 0
    layer_mode: str = "all"
    span: SpanConfig = field(default_factory=SpanConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    prior_grad: bool = False
    ctc_blank_logit: float = 0.0
    dev_fraction: float = 0.1
    # ablation toggles: uniform priors / weights when disabled
    glob_speech_prior: bool = True
    glob_text_prior: bool = True
    slocal_text_prior: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractViolation("TrainConfig: lr must be positive")
        if self.epochs < 1:
            raise ContractViolation("TrainConfig: epochs must be >= 1")
        if self.batch_size < 1:
            raise ContractViolation("TrainConfig: batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ContractViolation(f"TrainConfig: unknown optimizer {self.optimizer!r}")
        if self.layer_mode not in ("all", "last"):
            raise ContractViolation(f"TrainConfig: unknown layer_mode {self.layer_mode!r}")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    dev_loss: float
    retrieval_acc: float
    frame_acc: float

    def __post_init__(self):
        for name in ("train_loss", "dev_loss", "retrieval_acc", "frame_acc"):
            if not np.isfinite(getattr(self, name)):
                raise ContractViolation(f"EpochMetrics: non-finite {name}")


@dataclass
class MetricsHistory:
    rows: list[EpochMetrics] = field(default_factory=list)

    def dev_loss_reduction(self) -> float:
        return self.rows[0].dev_loss - self.rows[-1].dev_loss

    def to_csv(self, path) -> None:
        lines = ["epoch,train_loss,dev_loss,retrieval_acc,frame_acc"]
        for r in self.rows:
            lines.append(f"{r.epoch},{r.train_loss:.8f},{r.dev_loss:.8f},"
                         f"{r.retrieval_acc:.6f},{r.frame_acc:.6f}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


@dataclass
class TrainResult:
    history: MetricsHistory
    student: Encoder
    teacher: Encoder
    teacher_digest: str


@dataclass
class _TeacherCache:
    hidden: Tensor                      # constant n_t x d
    prior: SignificancePrior            # text significance prior (constant)
    idf: np.ndarray                     # normalized idf weights
    pooled_avr: np.ndarray
    pooled_cls: np.ndarray
    pooled_prior: np.ndarray


class _Optimizer:
    def __init__(self, params: dict[str, Tensor], lr: float):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        raise NotImplementedError

    def zero(self) -> None:
        for p in self.params.values():
            p.zero_grad()


class Sgd(_Optimizer):
    def step(self) -> None:
        for p in self.params.values():
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad


class Adam(_Optimizer):
    def __init__(self, params, lr, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros(p.shape, dtype=np.float64) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape, dtype=np.float64) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64)
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1 ** self.t)
            v_hat = self.v[name] / (1 - b2 ** self.t)
            p.data = (p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)) \
                .astype(p.data.dtype)


def _make_optimizer(cfg: TrainConfig, params: dict[str, Tensor]) -> _Optimizer:
    if cfg.optimizer == "adam":
        return Adam(params, cfg.lr)
    return Sgd(params, cfg.lr)


def _speech_prior(cfg: TrainConfig, out: EncoderOutput, uniform: bool) -> SignificancePrior:
    n = out.hidden.shape[0]
    if uniform or cfg.encoder.num_layers == 0:
        return SignificancePrior.uniform(n)
    prior = asp(out.attention, cfg.layer_mode)
    # the student would otherwise game its own prior to shrink the loss
    return prior if cfg.prior_grad else prior.detach()


class VariantLoss:
    """Computes any loss variant for one paired example."""

    def __init__(self, cfg: TrainConfig, teacher: Encoder,
                 train_texts: list[np.ndarray]):
        self.cfg = cfg
        self.teacher = teacher
        self.idf_table = IdfTable.fit([t.tolist() for t in train_texts])
        self._cache: dict[bytes, _TeacherCache] = {}

    def teacher_side(self, text: np.ndarray) -> _TeacherCache:
        key = text.tobytes()
        if key not in self._cache:
            out = self.teacher.forward(text)
            n_t = out.hidden.shape[0]
            if self.cfg.encoder.num_layers == 0:
                prior = SignificancePrior.uniform(n_t)
            else:
                prior = asp(out.attention, self.cfg.layer_mode).detach()
            self._cache[key] = _TeacherCache(
                hidden=out.hidden,
                prior=prior,
                idf=idf_weights(text.tolist(), self.idf_table, normalize=True),
                pooled_avr=pool_global(out.hidden, "avr").data.copy(),
                pooled_cls=pool_global(out.hidden, "cls").data.copy(),
                pooled_prior=pool_global(out.hidden, "prior", prior).data.copy(),
            )
        return self._cache[key]

    def compute(self, variant: str, example: PairedExample,
                student_out: EncoderOutput) -> Tensor:
        cfg = self.cfg
        tc = self.teacher_side(example.text)
        s_hidden, t_hidden = student_out.hidden, tc.hidden
        n_t = t_hidden.shape[0]

        if variant == "glob_cls":
            return global_l1(pool_global(s_hidden, "cls"), Tensor(tc.pooled_cls))
        if variant == "glob_avr":
            return global_l1(pool_global(s_hidden, "avr"), Tensor(tc.pooled_avr))
        if variant == "pad_glob":
            p_s = _speech_prior(cfg, student_out, uniform=not cfg.glob_speech_prior)
            p_t = tc.prior if cfg.glob_text_prior \
                else SignificancePrior.uniform(n_t)
            return pad_global(s_hidden, t_hidden, p_s, p_t)
        if variant == "tlocal":
            return local_maxsim(s_hidden, t_hidden)
        if variant == "tlocal_idf":
            return weighted_local(s_hidden, t_hidden, tc.idf)
        if variant == "pad_tlocal":
            return weighted_local(s_hidden, t_hidden, tc.prior)
        if variant == "pad_slocal":
            pools = self._span_pools(student_out)
            w = tc.prior if cfg.slocal_text_prior else SignificancePrior.uniform(n_t)
            return span_local(pools, t_hidden, w)
        if variant == "tlocal_or":
            sim = similarity_matrix(s_hidden, t_hidden)
            return ctc_ordered(sim, list(range(n_t)), cfg.ctc_blank_logit)
        if variant == "slocal_or":
            pools = self._span_pools(student_out)
            sim = similarity_matrix(pools.flat_time_ordered(), t_hidden)
            return ctc_ordered(sim, list(range(n_t)), cfg.ctc_blank_logit)
        raise ContractViolation(f"unknown variant {variant!r}")

    def _span_pools(self, student_out: EncoderOutput):
        cfg = self.cfg
        if cfg.span.anchor_mode == "prior":
            prior = _speech_prior(cfg, student_out, uniform=False)
        else:
            prior = SignificancePrior.uniform(student_out.hidden.shape[0])
        return aasa(student_out.hidden, prior, cfg.span)

    def example_loss(self, example: PairedExample,
                     student_out: EncoderOutput) -> Tensor:
        parts = [(self.compute(name, example, student_out), w)
                 for name, w in self.cfg.loss.components]
        return joint_loss(parts)


def eval_retrieval(student_pooled: np.ndarray, teacher_pooled: np.ndarray) -> float:
    """Fraction of items whose pooled embedding retrieves its own pair by cosine."""
    if student_pooled.shape[0] < 2 or student_pooled.shape != teacher_pooled.shape:
        raise ContractViolation("eval_retrieval: need matching batches of size >= 2")
    s = student_pooled / np.maximum(
        np.linalg.norm(student_pooled, axis=1, keepdims=True), 1e-12)
    t = teacher_pooled / np.maximum(
        np.linalg.norm(teacher_pooled, axis=1, keepdims=True), 1e-12)
    pred = np.argmax(s @ t.T, axis=1)
    return float(np.mean(pred == np.arange(s.shape[0])))


def eval_frame_alignment(speech: np.ndarray, text: np.ndarray,
                         gold: np.ndarray) -> float:
    """Fraction of non-blank frames whose best cosine match is the gold token."""
    s = speech / np.maximum(np.linalg.norm(speech, axis=1, keepdims=True), 1e-12)
    t = text / np.maximum(np.linalg.norm(text, axis=1, keepdims=True), 1e-12)
    pred = np.argmax(s @ t.T, axis=1)
    mask = gold >= 0
    if not np.any(mask):
        raise ContractViolation("eval_frame_alignment: gold has no non-blank frames")
    return float(np.mean(pred[mask] == gold[mask]))


def make_teacher(cfg: TrainConfig, vocab_size: int) -> Encoder:
    """The frozen teacher a run with this config will use; callers that build
    datasets from teacher-side embeddings construct it the same way."""
    teacher_cfg = dataclasses.replace(cfg.encoder, seed=cfg.encoder.seed + 1)
    return Encoder(teacher_cfg, "teacher", vocab_size=vocab_size)


def train(cfg: TrainConfig, dataset: Dataset) -> TrainResult:
    """Run the alignment loop; the teacher digest is asserted unchanged."""
    if len(dataset) == 0:
        raise ContractViolation("train: empty dataset")
    train_set, dev_set = split(dataset, cfg.dev_fraction, seed=cfg.seed)
    if not train_set or not dev_set:
        raise ContractViolation("train: dataset too small to split")

    teacher = make_teacher(cfg, dataset.config.vocab_size)
    student = Encoder(cfg.encoder, "student", input_dim=dataset.config.frame_dim)
    digest_before = teacher.digest()

    loss_fn = VariantLoss(cfg, teacher, [ex.text for ex in train_set])
    optimizer = _make_optimizer(cfg, student.parameters())
    rng = np.random.default_rng(cfg.seed)

    history = MetricsHistory()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        loss_total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_set[i] for i in order[start:start + cfg.batch_size]]
            optimizer.zero()
            try:
                batch_loss = None
                for ex in batch:
                    out = student.forward(ex.speech)
                    term = loss_fn.example_loss(ex, out)
                    batch_loss = term if batch_loss is None else batch_loss + term
                batch_loss = scalar_mul(batch_loss, 1.0 / len(batch))
            except ContractViolation as err:
                raise TrainingDiverged(
                    f"epoch {epoch}: non-finite forward pass ({err})") from err
            value = float(batch_loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(f"epoch {epoch}: loss became {value}")
            batch_loss.backward()
            optimizer.step()
            loss_total += value * len(batch)
            seen += len(batch)

        dev_loss, s_pooled, t_pooled, frame_accs = 0.0, [], [], []
        with no_grad():
            for ex in dev_set:
                out = student.forward(ex.speech)
                dev_loss += float(loss_fn.example_loss(ex, out).data)
                tc = loss_fn.teacher_side(ex.text)
                s_pooled.append(pool_global(out.hidden, "avr").data.copy())
                t_pooled.append(tc.pooled_avr)
                frame_accs.append(eval_frame_alignment(out.hidden.data,
                                                       tc.hidden.data, ex.gold))
        retrieval = eval_retrieval(np.stack(s_pooled), np.stack(t_pooled)) \
            if len(dev_set) >= 2 else 0.0
        history.rows.append(EpochMetrics(
            epoch=epoch,
            train_loss=loss_total / seen,
            dev_loss=dev_loss / len(dev_set),
            retrieval_acc=retrieval,
            frame_acc=float(np.mean(frame_accs))))

    digest_after = teacher.digest()
    if digest_after != digest_before:
        raise ContractViolation("train: teacher parameters changed during run")
    return TrainResult(history=history, student=student, teacher=teacher,
                       teacher_digest=digest_after)
