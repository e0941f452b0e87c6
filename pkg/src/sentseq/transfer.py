"""Sequential transfer and multi-task parameter sharing.

Sharing modes wire tasks to parameter groups:

* ``MULT_ALL``      one sentence encoder, one context encoder, one output head per task
* ``MULT_GRP``      context encoders split by text type (abstract vs full paper)
* ``MULT_ALL_SHO``  everything shared, single output head (requires one common scheme)
* ``MULT_GRP_SHO``  context encoder and output head split by text type

Sequential transfer (INIT) copies tuned groups from a source model into a
freshly initialised target: INIT1 moves sentence encoding + context
enrichment, INIT2 only sentence encoding.  Output layers always stay at
their random initialisation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import torch

from .corpus import Dataset, LabelScheme, TextType
from .encoder import (
    ContextEncoderParams,
    ModelDims,
    OutputHead,
    SentenceEncoderParams,
    TaskPipeline,
)
from .errors import DimMismatch, SchemeMismatchForSHO
from .trainer import (
    AdamW,
    EpochRecord,
    TrainConfig,
    TrainResult,
    derive_seed,
    evaluate,
    make_batches,
    snapshot_arrays,
)


class InitMode(Enum):
    INIT1 = "init1"  # sentence encoding + context enrichment
    INIT2 = "init2"  # sentence encoding only


class SharingMode(Enum):
    MULT_ALL = "mult_all"
    MULT_GRP = "mult_grp"
    MULT_ALL_SHO = "mult_all_sho"
    MULT_GRP_SHO = "mult_grp_sho"

    @property
    def shares_output(self) -> bool:
        return self in (SharingMode.MULT_ALL_SHO, SharingMode.MULT_GRP_SHO)

    @property
    def groups_by_text_type(self) -> bool:
        return self in (SharingMode.MULT_GRP, SharingMode.MULT_GRP_SHO)


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    dataset: Dataset

    @property
    def text_type(self) -> TextType:
        return self.dataset.text_type

    @property
    def scheme(self) -> LabelScheme:
        return self.dataset.scheme


def _check_group(name: str, src: dict[str, torch.Tensor], dst: dict[str, torch.Tensor]) -> None:
    if set(src) != set(dst):
        raise DimMismatch(name, "array sets differ")
    for key in dst:
        if tuple(src[key].shape) != tuple(dst[key].shape):
            raise DimMismatch(name, f"{key}: {tuple(src[key].shape)} vs {tuple(dst[key].shape)}")


def init_transfer(source: TaskPipeline, target: TaskPipeline, mode: InitMode) -> TaskPipeline:
    """Copy tuned layers from ``source`` into ``target`` (source untouched).

    The word-embedding provider and the output layer keep whatever the
    target already has.  All transferred groups are shape-checked before
    anything is copied, so a mismatch leaves the target untouched.
    """
    groups = []
    if mode is InitMode.INIT1:
        groups.append((
            "context_encoder",
            source.ctx_enc.arrays(key=None),
            target.ctx_enc.arrays(key=None),
        ))
    groups.append(("sentence_encoder", source.sent_enc.arrays(), target.sent_enc.arrays()))
    for name, src, dst in groups:
        _check_group(name, src, dst)
    with torch.no_grad():
        for _, src, dst in groups:
            for key in dst:
                dst[key].copy_(src[key])
    return target


@dataclass
class MultiTaskModel:
    provider: object
    dims: ModelDims
    sent_enc: SentenceEncoderParams
    ctx_encs: dict[str, ContextEncoderParams]
    heads: dict[str, OutputHead]
    wiring: dict[str, tuple[str, str]]  # task_id -> (context key, head key)
    tasks: dict[str, TaskSpec]
    mode: SharingMode
    max_tokens: int = 128
    dropout: float = 0.0
    dropout_rng: torch.Generator | None = field(default=None, repr=False)

    def pipeline(self, task_id: str) -> TaskPipeline:
        """A per-task view sharing this model's parameter groups."""
        ctx_key, head_key = self.wiring[task_id]
        spec = self.tasks[task_id]
        return TaskPipeline(
            task_id=task_id,
            provider=self.provider,
            dims=self.dims,
            scheme=spec.scheme,
            text_type=spec.text_type,
            sent_enc=self.sent_enc,
            ctx_enc=self.ctx_encs[ctx_key],
            head=self.heads[head_key],
            max_tokens=self.max_tokens,
            dropout=self.dropout,
            dropout_rng=self.dropout_rng,
        )

    def named_arrays(self) -> dict[str, torch.Tensor]:
        out = dict(self.provider.trainable_arrays())
        out.update(self.sent_enc.arrays())
        for ctx in self.ctx_encs.values():
            out.update(ctx.arrays())
        for head in self.heads.values():
            out.update(head.arrays())
        return out

    def arrays_for_task(self, task_id: str) -> dict[str, torch.Tensor]:
        ctx_key, head_key = self.wiring[task_id]
        out = dict(self.provider.trainable_arrays())
        out.update(self.sent_enc.arrays())
        out.update(self.ctx_encs[ctx_key].arrays())
        out.update(self.heads[head_key].arrays())
        return out

    def topology_counts(self) -> tuple[int, int, int]:
        """(sentence-encoder sets, context sets, output sets)."""
        return 1, len(self.ctx_encs), len(self.heads)

    def to_manifest(self) -> dict:
        return {
            "format_version": 1,
            "kind": "task_graph",
            "mode": self.mode.value,
            "dims": self.dims.to_json(),
            "context_sets": sorted(self.ctx_encs),
            "output_sets": sorted(self.heads),
            "tasks": [
                {
                    "task_id": tid,
                    "dataset": spec.dataset.name,
                    "text_type": spec.text_type.value,
                    "classes": list(spec.scheme.classes),
                    "context_set": self.wiring[tid][0],
                    "output_set": self.wiring[tid][1],
                }
                for tid, spec in self.tasks.items()
            ],
        }


def build_multitask(provider, dims: ModelDims, tasks: list[TaskSpec], mode: SharingMode,
                    seed: int, max_tokens: int = 128, dropout: float = 0.0) -> MultiTaskModel:
    """Wire parameter groups for the given sharing mode."""
    if len({t.task_id for t in tasks}) != len(tasks):
        raise ValueError("task ids must be unique")
    if mode.shares_output:
        schemes = {t.scheme.classes for t in tasks}
        if len(schemes) != 1:
            raise SchemeMismatchForSHO(
                f"{mode.value} needs one shared scheme, got {len(schemes)}"
            )
    gen = torch.Generator().manual_seed(derive_seed(seed, "multitask"))
    sent_enc = SentenceEncoderParams.init(dims, gen)

    if mode.groups_by_text_type:
        ctx_keys = []
        for t in tasks:
            if t.text_type.value not in ctx_keys:
                ctx_keys.append(t.text_type.value)
    else:
        ctx_keys = [None]
    ctx_encs = {
        (k or "shared"): ContextEncoderParams.init(dims, gen, key=k) for k in ctx_keys
    }

    heads: dict[str, OutputHead] = {}
    wiring: dict[str, tuple[str, str]] = {}
    if mode is SharingMode.MULT_ALL_SHO:
        heads["shared"] = OutputHead.init(len(tasks[0].scheme), dims.d_h, gen, key="shared")
    elif mode is SharingMode.MULT_GRP_SHO:
        for k in ctx_keys:
            heads[k] = OutputHead.init(len(tasks[0].scheme), dims.d_h, gen, key=k)
    for t in tasks:
        ctx_key = t.text_type.value if mode.groups_by_text_type else "shared"
        if mode is SharingMode.MULT_ALL_SHO:
            head_key = "shared"
        elif mode is SharingMode.MULT_GRP_SHO:
            head_key = t.text_type.value
        else:
            heads[t.task_id] = OutputHead.init(len(t.scheme), dims.d_h, gen, key=t.task_id)
            head_key = t.task_id
        wiring[t.task_id] = (ctx_key, head_key)

    return MultiTaskModel(
        provider=provider,
        dims=dims,
        sent_enc=sent_enc,
        ctx_encs=ctx_encs,
        heads=heads,
        wiring=wiring,
        tasks={t.task_id: t for t in tasks},
        mode=mode,
        max_tokens=max_tokens,
        dropout=dropout,
    )


def proportional_schedule(batch_counts: dict[str, int], seed: int) -> list[tuple[str, int]]:
    """One epoch's batch order: every (task, batch) pair exactly once, in a
    seeded random interleaving, so draw frequency is proportional to batch count."""
    entries = [(task, i) for task, count in batch_counts.items() for i in range(count)]
    for task, count in batch_counts.items():
        if count < 1:
            raise ValueError(f"task {task!r} has no batches")
    rng = np.random.default_rng([seed, len(entries)])
    order = rng.permutation(len(entries))
    return [entries[i] for i in order]


def train_multitask(model: MultiTaskModel, splits: dict[str, tuple[Dataset, Dataset]],
                    cfg: TrainConfig) -> dict[str, TrainResult]:
    """Alternate over the proportional schedule, updating per batch only the
    shared encoder plus the groups wired to that batch's task.  Best-epoch
    selection runs independently per task on its validation split."""
    model.dropout = cfg.dropout
    model.max_tokens = cfg.max_tokens
    model.dropout_rng = torch.Generator().manual_seed(derive_seed(cfg.seed, "mt-dropout"))
    pipes = {tid: model.pipeline(tid) for tid in model.tasks}
    opt = AdamW(model.named_arrays(), cfg)
    results = {
        tid: TrainResult(snapshot_arrays(model.arrays_for_task(tid)), -1, [])
        for tid in model.tasks
    }
    best_f1 = {tid: -1.0 for tid in model.tasks}
    for epoch in range(cfg.epochs):
        batches = {
            tid: make_batches(splits[tid][0], cfg.batch_sentence_cap,
                              seed=derive_seed(cfg.seed, "batches", epoch, tid))
            for tid in model.tasks
        }
        schedule = proportional_schedule(
            {tid: len(b) for tid, b in batches.items()},
            seed=derive_seed(cfg.seed, "schedule", epoch),
        )
        losses = {tid: [] for tid in model.tasks}
        for tid, b_idx in schedule:
            opt.zero_grad()
            loss = pipes[tid].batch_loss(list(batches[tid][b_idx].documents), training=True)
            loss.backward()
            opt.step(epoch)
            losses[tid].append(float(loss.detach()))
        for tid in model.tasks:
            val_report = evaluate(pipes[tid], splits[tid][1])
            results[tid].log.append(EpochRecord(
                epoch, float(np.mean(losses[tid])), val_report.weighted_f1,
                val_report.accuracy, opt.effective_lr(epoch),
            ))
            if val_report.weighted_f1 > best_f1[tid]:
                best_f1[tid] = val_report.weighted_f1
                results[tid].best_epoch = epoch
                results[tid].best_arrays = snapshot_arrays(model.arrays_for_task(tid))
    return results
