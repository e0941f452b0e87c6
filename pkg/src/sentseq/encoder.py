"""Hierarchical document encoder.

Pipeline per document: word embeddings -> token-level Bi-LSTM ->
multi-head attention pooling into one sentence vector per sentence ->
sentence-level Bi-LSTM (context enrichment) -> linear projection to
per-label logits.  The CRF head consumes those logits.

The Bi-LSTM is written out explicitly (gates i, f, g, o; forget-gate bias
starts at 1; weights uniform in +/- 1/sqrt(fan_in)) so every weight is an
addressable named array: names are the stable contract for checkpoints and
layer transfer.  All tensors are float64, which keeps finite-difference
gradient checks tight; checkpoints narrow to float32 on disk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from . import crf as crf_mod
from .container import read_container, slice_array, write_container
from .corpus import Document, LabelScheme, TextType
from .crf import CrfParams
from .embeddings import embed, provider_from_config, tokenize
from .errors import ShapeMismatch


@dataclass(frozen=True)
class ModelDims:
    """Layer widths.  d_h = 2 * d_lstm is the token/context representation width."""

    d_w: int
    d_lstm: int = 758
    d_u: int = 200
    r: int = 15

    def __post_init__(self):
        for name in ("d_w", "d_lstm", "d_u", "r"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def d_h(self) -> int:
        return 2 * self.d_lstm

    @property
    def sentence_dim(self) -> int:
        return self.r * self.d_h

    def to_json(self) -> dict:
        return {"d_w": self.d_w, "d_lstm": self.d_lstm, "d_u": self.d_u, "r": self.r}


def _uniform(gen: torch.Generator, shape, fan_in: int) -> torch.Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    t = torch.empty(*shape, dtype=torch.float64)
    t.uniform_(-bound, bound, generator=gen)
    t.requires_grad_(True)
    return t


@dataclass
class LstmDirParams:
    W_ih: torch.Tensor  # (4H, I)
    W_hh: torch.Tensor  # (4H, H)
    b: torch.Tensor     # (4H,)

    @classmethod
    def init(cls, input_dim: int, hidden: int, gen: torch.Generator) -> "LstmDirParams":
        b = torch.zeros(4 * hidden, dtype=torch.float64)
        b[hidden : 2 * hidden] = 1.0  # forget gate opens at start of training
        b.requires_grad_(True)
        return cls(
            W_ih=_uniform(gen, (4 * hidden, input_dim), input_dim),
            W_hh=_uniform(gen, (4 * hidden, hidden), hidden),
            b=b,
        )

    @property
    def hidden(self) -> int:
        return self.W_hh.shape[1]

    def arrays(self, prefix: str) -> dict[str, torch.Tensor]:
        return {f"{prefix}.W_ih": self.W_ih, f"{prefix}.W_hh": self.W_hh, f"{prefix}.b": self.b}


@dataclass
class BiLstmParams:
    fwd: LstmDirParams
    bwd: LstmDirParams

    @classmethod
    def init(cls, input_dim: int, hidden: int, gen: torch.Generator) -> "BiLstmParams":
        return cls(LstmDirParams.init(input_dim, hidden, gen),
                   LstmDirParams.init(input_dim, hidden, gen))

    @property
    def input_dim(self) -> int:
        return self.fwd.W_ih.shape[1]

    def arrays(self, prefix: str) -> dict[str, torch.Tensor]:
        return {**self.fwd.arrays(f"{prefix}.fwd"), **self.bwd.arrays(f"{prefix}.bwd")}


def _lstm_direction(p: LstmDirParams, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Run one LSTM direction over padded input (B, T, I) -> (B, T, H).

    Positions at or beyond each row's length carry the last valid state;
    callers must mask them out.
    """
    B, T, _ = x.shape
    H = p.hidden
    h = x.new_zeros(B, H)
    c = x.new_zeros(B, H)
    xz = torch.einsum("bti,ki->btk", x, p.W_ih) + p.b
    outs = []
    for t in range(T):
        z = xz[:, t] + h @ p.W_hh.T
        i = torch.sigmoid(z[:, :H])
        f = torch.sigmoid(z[:, H : 2 * H])
        g = torch.tanh(z[:, 2 * H : 3 * H])
        o = torch.sigmoid(z[:, 3 * H :])
        c_new = f * c + i * g
        h_new = o * torch.tanh(c_new)
        m = (lengths > t).to(x.dtype).unsqueeze(1)
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
        outs.append(h)
    return torch.stack(outs, dim=1)


def _reverse_padded(x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Reverse each row's valid prefix in place-order; padding stays put."""
    B, T = x.shape[0], x.shape[1]
    ar = torch.arange(T).unsqueeze(0).expand(B, T)
    lens = lengths.unsqueeze(1)
    idx = torch.where(ar < lens, lens - 1 - ar, ar)
    return torch.gather(x, 1, idx.unsqueeze(-1).expand_as(x))


def bilstm(p: BiLstmParams, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Bidirectional pass over padded input: (B, T, I) -> (B, T, 2H)."""
    if x.shape[-1] != p.input_dim:
        raise ShapeMismatch(f"LSTM expects input dim {p.input_dim}, got {x.shape[-1]}")
    fwd = _lstm_direction(p.fwd, x, lengths)
    bwd = _reverse_padded(_lstm_direction(p.bwd, _reverse_padded(x, lengths), lengths), lengths)
    return torch.cat([fwd, bwd], dim=-1)


@dataclass
class SentenceEncoderParams:
    """Token Bi-LSTM plus the attention-pooling parameters (shared group)."""

    lstm: BiLstmParams
    W: torch.Tensor  # (d_u, d_h)
    b: torch.Tensor  # (d_u,)
    U: torch.Tensor  # (r, d_u) -- one context vector per attention head

    @classmethod
    def init(cls, dims: ModelDims, gen: torch.Generator) -> "SentenceEncoderParams":
        return cls(
            lstm=BiLstmParams.init(dims.d_w, dims.d_lstm, gen),
            W=_uniform(gen, (dims.d_u, dims.d_h), dims.d_h),
            b=torch.zeros(dims.d_u, dtype=torch.float64, requires_grad=True),
            U=_uniform(gen, (dims.r, dims.d_u), dims.d_u),
        )

    def arrays(self) -> dict[str, torch.Tensor]:
        out = self.lstm.arrays("sentence_encoder.token_lstm")
        out["sentence_encoder.attention.W"] = self.W
        out["sentence_encoder.attention.b"] = self.b
        out["sentence_encoder.attention.U"] = self.U
        return out


@dataclass
class ContextEncoderParams:
    """Sentence-level Bi-LSTM; ``key`` distinguishes sharing groups in a model."""

    lstm: BiLstmParams
    key: str | None = None

    @classmethod
    def init(cls, dims: ModelDims, gen: torch.Generator, key: str | None = None):
        return cls(lstm=BiLstmParams.init(dims.sentence_dim, dims.d_lstm, gen), key=key)

    def arrays(self, key: str | None = "__own__") -> dict[str, torch.Tensor]:
        k = self.key if key == "__own__" else key
        prefix = "context_encoder" if k is None else f"context_encoder.{k}"
        return self.lstm.arrays(f"{prefix}.lstm")


@dataclass
class OutputParams:
    """Linear projection from contextualised sentence vectors to label scores."""

    W_O: torch.Tensor  # (|L|, d_h)
    b_O: torch.Tensor  # (|L|,)

    @classmethod
    def init(cls, n_labels: int, d_h: int, gen: torch.Generator) -> "OutputParams":
        return cls(
            W_O=_uniform(gen, (n_labels, d_h), d_h),
            b_O=torch.zeros(n_labels, dtype=torch.float64, requires_grad=True),
        )


@dataclass
class OutputHead:
    """Per-task output group: linear projection + CRF parameters."""

    linear: OutputParams
    crf: CrfParams
    key: str = "task"

    @classmethod
    def init(cls, n_labels: int, d_h: int, gen: torch.Generator, key: str) -> "OutputHead":
        return cls(OutputParams.init(n_labels, d_h, gen), CrfParams.init(n_labels, gen), key)

    @property
    def n_labels(self) -> int:
        return self.linear.W_O.shape[0]

    def arrays(self, key: str | None = None) -> dict[str, torch.Tensor]:
        k = key if key is not None else self.key
        prefix = f"output.{k}"
        out = {f"{prefix}.W_O": self.linear.W_O, f"{prefix}.b_O": self.linear.b_O}
        out.update(self.crf.arrays(prefix))
        return out


# ------------------------------------------------------------------------
# functional layers

def apply_dropout(x: torch.Tensor, rate: float, training: bool,
                  rng: torch.Generator | None = None) -> torch.Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    if not training or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (torch.rand(x.shape, generator=rng, dtype=x.dtype) < keep).to(x.dtype)
    return x * mask / keep


def _attention_pool(p: SentenceEncoderParams, h: torch.Tensor,
                    lengths: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Pool token representations (B, T, d_h) into (B, r*d_h) sentence vectors.

    Per head k: scores u_k . tanh(W h_t + b), softmax over valid t, then a
    weighted average of the h_t.  Heads are concatenated head-major.
    Returns (vectors, weights) with weights of shape (B, r, T).
    """
    B, T, _ = h.shape
    a = torch.tanh(torch.einsum("bth,uh->btu", h, p.W) + p.b)
    scores = torch.einsum("btu,ru->btr", a, p.U)
    valid = (torch.arange(T).unsqueeze(0) < lengths.unsqueeze(1)).unsqueeze(-1)
    scores = scores.masked_fill(~valid, float("-inf"))
    alpha = torch.softmax(scores, dim=1)
    pooled = torch.einsum("btr,bth->brh", alpha, h)
    return pooled.reshape(B, -1), alpha.permute(0, 2, 1)


def encode_sentences(p: SentenceEncoderParams, x: torch.Tensor, lengths: torch.Tensor,
                     dropout: float = 0.0, training: bool = False,
                     rng: torch.Generator | None = None) -> torch.Tensor:
    """Batched sentence encoding: padded embeddings (B, T, d_w) -> (B, r*d_h)."""
    h = bilstm(p.lstm, x, lengths)
    e, _ = _attention_pool(p, h, lengths)
    return apply_dropout(e, dropout, training, rng)


def encode_sentence(p: SentenceEncoderParams, emb: torch.Tensor, dropout: float = 0.0,
                    training: bool = False, rng: torch.Generator | None = None,
                    return_weights: bool = False):
    """Encode one sentence's embedding matrix (m, d_w) into a vector in R^{r*d_h}."""
    if emb.ndim != 2 or emb.shape[0] == 0:
        raise ShapeMismatch(f"expected a non-empty (m, d_w) matrix, got {tuple(emb.shape)}")
    if emb.shape[1] != p.lstm.input_dim:
        raise ShapeMismatch(f"embedding dim {emb.shape[1]} != d_w {p.lstm.input_dim}")
    lengths = torch.tensor([emb.shape[0]])
    h = bilstm(p.lstm, emb.unsqueeze(0), lengths)
    e, alpha = _attention_pool(p, h, lengths)
    e = apply_dropout(e, dropout, training, rng)
    if return_weights:
        return e[0], alpha[0]
    return e[0]


def enrich_context_batch(p: ContextEncoderParams, sents: torch.Tensor,
                         lengths: torch.Tensor, dropout: float = 0.0,
                         training: bool = False,
                         rng: torch.Generator | None = None) -> torch.Tensor:
    """Contextualise padded per-document sentence vectors (B, N, r*d_h) -> (B, N, d_h)."""
    c = bilstm(p.lstm, sents, lengths)
    return apply_dropout(c, dropout, training, rng)


def enrich_context(p: ContextEncoderParams, sents, dropout: float = 0.0,
                   training: bool = False, rng: torch.Generator | None = None) -> torch.Tensor:
    """Contextualise one document's sentence vectors (n, r*d_h) -> (n, d_h)."""
    if not isinstance(sents, torch.Tensor):
        sents = torch.stack(list(sents))
    if sents.ndim != 2 or sents.shape[0] == 0:
        raise ShapeMismatch(f"expected (n, {p.lstm.input_dim}), got {tuple(sents.shape)}")
    lengths = torch.tensor([sents.shape[0]])
    return enrich_context_batch(p, sents.unsqueeze(0), lengths, dropout, training, rng)[0]


def project_logits(p: OutputParams, ctx: torch.Tensor) -> torch.Tensor:
    """Per-sentence label scores: l_i = W_O c_i + b_O."""
    if not isinstance(ctx, torch.Tensor):
        ctx = torch.stack(list(ctx))
    if ctx.shape[-1] != p.W_O.shape[1]:
        raise ShapeMismatch(f"context dim {ctx.shape[-1]} != {p.W_O.shape[1]}")
    return ctx @ p.W_O.T + p.b_O


# ------------------------------------------------------------------------
# task pipeline

@dataclass
class TaskPipeline:
    """Everything needed to run one task end to end.

    In a multi-task model several pipelines alias the same parameter
    groups; which groups are shared is decided by the sharing mode.
    """

    task_id: str
    provider: object
    dims: ModelDims
    scheme: LabelScheme
    text_type: TextType
    sent_enc: SentenceEncoderParams
    ctx_enc: ContextEncoderParams
    head: OutputHead
    max_tokens: int = 128
    dropout: float = 0.0
    dropout_rng: torch.Generator | None = field(default=None, repr=False)

    def named_arrays(self) -> dict[str, torch.Tensor]:
        out = dict(self.provider.trainable_arrays())
        out.update(self.sent_enc.arrays())
        out.update(self.ctx_enc.arrays())
        out.update(self.head.arrays())
        return out

    def _embed_doc(self, doc: Document) -> list[torch.Tensor]:
        return [
            embed(self.provider, tokenize(s.text, self.max_tokens),
                  doc_id=doc.id, sent_idx=j)
            for j, s in enumerate(doc.sentences)
        ]

    def document_logits(self, docs: list[Document], training: bool = False) -> list[torch.Tensor]:
        mats = []
        for doc in docs:
            mats.extend(self._embed_doc(doc))
        tok_lens = torch.tensor([m.shape[0] for m in mats])
        t_max = int(tok_lens.max())
        x = torch.stack([
            torch.nn.functional.pad(m, (0, 0, 0, t_max - m.shape[0])) for m in mats
        ])
        x = apply_dropout(x, self.dropout, training, self.dropout_rng)
        e = encode_sentences(self.sent_enc, x, tok_lens,
                             self.dropout, training, self.dropout_rng)
        counts = [len(doc) for doc in docs]
        n_max = max(counts)
        per_doc = torch.split(e, counts, dim=0)
        stacked = torch.stack([
            torch.nn.functional.pad(block, (0, 0, 0, n_max - block.shape[0]))
            for block in per_doc
        ])
        c = enrich_context_batch(self.ctx_enc, stacked, torch.tensor(counts),
                                 self.dropout, training, self.dropout_rng)
        logits = project_logits(self.head.linear, c)
        return [logits[i, : counts[i]] for i in range(len(docs))]

    def forward(self, doc: Document, training: bool = False) -> torch.Tensor:
        return self.document_logits([doc], training)[0]

    def batch_loss(self, docs: list[Document], training: bool = True) -> torch.Tensor:
        pairs = []
        for logits, doc in zip(self.document_logits(docs, training), docs):
            pairs.append((logits, [s.label for s in doc.sentences]))
        return crf_mod.batch_nll(self.head.crf, pairs)

    def predict(self, doc: Document) -> list[int]:
        with torch.no_grad():
            logits = self.forward(doc, training=False)
        labels, _ = crf_mod.viterbi_decode(self.head.crf, logits)
        return labels

    def predict_many(self, docs: list[Document]) -> list[list[int]]:
        with torch.no_grad():
            all_logits = self.document_logits(list(docs), training=False)
        return [crf_mod.viterbi_decode(self.head.crf, lg)[0] for lg in all_logits]


def build_pipeline(provider, scheme: LabelScheme, dims: ModelDims, seed: int,
                   task_id: str = "task", text_type: TextType = TextType.ABSTRACT,
                   max_tokens: int = 128, dropout: float = 0.0) -> TaskPipeline:
    """Freshly initialised single-task pipeline."""
    gen = torch.Generator().manual_seed(seed & 0x7FFFFFFFFFFFFFFF)
    return TaskPipeline(
        task_id=task_id,
        provider=provider,
        dims=dims,
        scheme=scheme,
        text_type=text_type,
        sent_enc=SentenceEncoderParams.init(dims, gen),
        ctx_enc=ContextEncoderParams.init(dims, gen),
        head=OutputHead.init(len(scheme), dims.d_h, gen, key=task_id),
        max_tokens=max_tokens,
        dropout=dropout,
    )


# ------------------------------------------------------------------------
# checkpoints

def checkpoint_arrays(pipeline: TaskPipeline) -> dict[str, torch.Tensor]:
    """Named arrays under canonical single-task names (context group unkeyed)."""
    out = dict(pipeline.provider.trainable_arrays())
    out.update(pipeline.sent_enc.arrays())
    out.update(pipeline.ctx_enc.arrays(key=None))
    out.update(pipeline.head.arrays(key=pipeline.task_id))
    return out


def save_checkpoint(path, pipeline: TaskPipeline) -> None:
    arrays = checkpoint_arrays(pipeline)
    entries = []
    payload = []
    offset = 0
    for name, tensor in arrays.items():
        a = tensor.detach().cpu().numpy()
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        payload.append(a)
        offset += a.size
    manifest = {
        "kind": "checkpoint",
        "dims": pipeline.dims.to_json(),
        "task": {
            "task_id": pipeline.task_id,
            "text_type": pipeline.text_type.value,
            "scheme": {"name": pipeline.scheme.name, "classes": list(pipeline.scheme.classes)},
        },
        "max_tokens": pipeline.max_tokens,
        "embeddings": pipeline.provider.config(),
        "named_arrays": entries,
    }
    write_container(path, manifest, payload)


def load_checkpoint(path) -> TaskPipeline:
    manifest, payload = read_container(path)
    if manifest.get("kind") != "checkpoint":
        raise ShapeMismatch(f"{path} is not a checkpoint container")
    dims = ModelDims(**manifest["dims"])
    task = manifest["task"]
    scheme = LabelScheme(task["scheme"]["name"], tuple(task["scheme"]["classes"]))
    provider = provider_from_config(manifest["embeddings"])
    pipe = build_pipeline(
        provider, scheme, dims, seed=0, task_id=task["task_id"],
        text_type=TextType(task["text_type"]), max_tokens=manifest.get("max_tokens", 128),
    )
    stored = {e["name"]: e for e in manifest["named_arrays"]}
    for name, tensor in checkpoint_arrays(pipe).items():
        entry = stored.get(name)
        if entry is None:
            raise ShapeMismatch(f"checkpoint missing array {name!r}")
        value = slice_array(payload, entry["offset"], entry["shape"]).astype(np.float64)
        if tuple(value.shape) != tuple(tensor.shape):
            raise ShapeMismatch(f"array {name!r}: stored {value.shape}, model {tuple(tensor.shape)}")
        with torch.no_grad():
            tensor.copy_(torch.from_numpy(value))
    return pipe
