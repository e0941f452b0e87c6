"""Single-task training loop: batching, optimizer, best-epoch selection."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .corpus import Dataset, Document
from .encoder import TaskPipeline
from .errors import NonFiniteGradient
from .metrics import MetricsReport, evaluate_predictions


def derive_seed(*parts) -> int:
    """Stable 63-bit sub-seed from arbitrary labelled parts."""
    digest = hashlib.blake2b(repr(parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFFFFFFFFFFFFFF


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-5
    weight_decay: float = 0.01
    lr_decay_per_epoch: float = 0.9
    epochs: int = 20
    batch_sentence_cap: int = 32
    max_tokens: int = 128
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.lr_decay_per_epoch <= 0 or self.batch_sentence_cap < 1:
            raise ValueError("lr, lr decay and batch cap must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.epochs < 0 or self.max_tokens < 1 or self.weight_decay < 0:
            raise ValueError("epochs/max_tokens/weight_decay out of range")


@dataclass(frozen=True)
class Batch:
    documents: tuple[Document, ...]

    @property
    def n_sentences(self) -> int:
        return sum(len(d) for d in self.documents)


def make_batches(data, cap: int, seed: int | None = None) -> list[Batch]:
    """Greedily pack whole documents into batches of at most ``cap`` sentences.

    A document larger than the cap is never split; it forms a singleton
    batch.  ``seed=None`` keeps the input order, otherwise documents are
    shuffled first.
    """
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    docs = list(data.documents) if isinstance(data, Dataset) else list(data)
    if seed is not None:
        order = np.random.default_rng([seed, len(docs)]).permutation(len(docs))
        docs = [docs[i] for i in order]
    batches: list[Batch] = []
    current: list[Document] = []
    count = 0
    for doc in docs:
        if current and count + len(doc) > cap:
            batches.append(Batch(tuple(current)))
            current, count = [], 0
        current.append(doc)
        count += len(doc)
        if count > cap:  # oversized document on its own
            batches.append(Batch(tuple(current)))
            current, count = [], 0
    if current:
        batches.append(Batch(tuple(current)))
    return batches


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay over named arrays.

    Moment state is keyed by array name, so arrays shared between tasks
    accumulate moments across all tasks that touch them.  Arrays whose
    ``.grad`` is None are skipped entirely (no decay, no moment update):
    a step updates exactly the arrays the loss touched.
    """

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8
    CLIP_NORM = 1.0

    def __init__(self, arrays: dict[str, torch.Tensor], cfg: TrainConfig):
        self.arrays = dict(arrays)
        self.cfg = cfg
        self._m: dict[str, torch.Tensor] = {}
        self._v: dict[str, torch.Tensor] = {}
        self._t: dict[str, int] = {}

    def effective_lr(self, epoch: int) -> float:
        return self.cfg.lr * self.cfg.lr_decay_per_epoch ** epoch

    def zero_grad(self) -> None:
        for tensor in self.arrays.values():
            tensor.grad = None

    def step(self, epoch: int) -> None:
        live = [(n, t) for n, t in self.arrays.items() if t.grad is not None]
        if not live:
            return
        for name, tensor in live:
            if not torch.isfinite(tensor.grad).all():
                raise NonFiniteGradient(f"non-finite gradient in {name!r}")
        total = math.sqrt(sum(float((t.grad ** 2).sum()) for _, t in live))
        scale = self.CLIP_NORM / total if total > self.CLIP_NORM else 1.0
        lr = self.effective_lr(epoch)
        wd = self.cfg.weight_decay
        with torch.no_grad():
            for name, tensor in live:
                g = tensor.grad if scale == 1.0 else tensor.grad * scale
                m = self._m.setdefault(name, torch.zeros_like(tensor))
                v = self._v.setdefault(name, torch.zeros_like(tensor))
                t = self._t.get(name, 0) + 1
                self._t[name] = t
                m.mul_(self.BETA1).add_(g, alpha=1.0 - self.BETA1)
                v.mul_(self.BETA2).addcmul_(g, g, value=1.0 - self.BETA2)
                m_hat = m / (1.0 - self.BETA1 ** t)
                v_hat = v / (1.0 - self.BETA2 ** t)
                tensor.add_(-lr * (m_hat / (v_hat.sqrt() + self.EPS) + wd * tensor))


def snapshot_arrays(arrays: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    return {name: t.detach().clone() for name, t in arrays.items()}


def restore_arrays(arrays: dict[str, torch.Tensor], snap: dict[str, torch.Tensor]) -> None:
    with torch.no_grad():
        for name, tensor in arrays.items():
            tensor.copy_(snap[name])


def evaluate(pipeline: TaskPipeline, docs) -> MetricsReport:
    docs = list(docs.documents) if isinstance(docs, Dataset) else list(docs)
    gold = [[s.label for s in d.sentences] for d in docs]
    pred = pipeline.predict_many(docs)
    return evaluate_predictions(gold, pred, len(pipeline.scheme))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_weighted_f1: float
    val_accuracy: float
    lr: float

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_weighted_f1": self.val_weighted_f1,
            "val_accuracy": self.val_accuracy,
            "lr": self.lr,
        }


@dataclass
class TrainResult:
    best_arrays: dict[str, torch.Tensor]
    best_epoch: int
    log: list[EpochRecord] = field(default_factory=list)


def train_single_task(pipeline: TaskPipeline, train: Dataset, val: Dataset,
                      cfg: TrainConfig) -> TrainResult:
    """Run the epoch loop; keep the parameter snapshot from the epoch with
    the best validation weighted F1 (ties resolve to the earlier epoch)."""
    pipeline.dropout = cfg.dropout
    pipeline.max_tokens = cfg.max_tokens
    pipeline.dropout_rng = torch.Generator().manual_seed(derive_seed(cfg.seed, "dropout"))
    arrays = pipeline.named_arrays()
    opt = AdamW(arrays, cfg)
    best = snapshot_arrays(arrays)
    best_f1 = -1.0
    best_epoch = -1
    log: list[EpochRecord] = []
    for epoch in range(cfg.epochs):
        batches = make_batches(train, cfg.batch_sentence_cap,
                               seed=derive_seed(cfg.seed, "batches", epoch))
        losses = []
        for batch in batches:
            opt.zero_grad()
            loss = pipeline.batch_loss(list(batch.documents), training=True)
            loss.backward()
            opt.step(epoch)
            losses.append(float(loss.detach()))
        val_report = evaluate(pipeline, val)
        log.append(EpochRecord(epoch, float(np.mean(losses)), val_report.weighted_f1,
                               val_report.accuracy, opt.effective_lr(epoch)))
        if val_report.weighted_f1 > best_f1:
            best_f1 = val_report.weighted_f1
            best_epoch = epoch
            best = snapshot_arrays(arrays)
    return TrainResult(best, best_epoch, log)
