"""Tokenization and per-token word-embedding providers.

The word-embedding layer is pluggable: contextual vectors computed offline
land in a precomputed file, small-scale experiments train a lookup table,
and tests use deterministic hash-seeded vectors.  Every provider returns a
float64 matrix with one row per token.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np
import torch

from .container import read_container, write_container
from .corpus import Dataset
from .errors import EmptyAfterTokenization, MissingPrecomputedEntry

UNK = "<unk>"


def tokenize(text: str, max_tokens: int = 128) -> list[str]:
    """Whitespace tokenization, keeping the first ``max_tokens`` tokens."""
    tokens = text.split()
    if not tokens:
        raise EmptyAfterTokenization(f"no tokens in {text!r}")
    return tokens[:max_tokens]


class PrecomputedFileProvider:
    """Reads exact per-sentence token vectors keyed by (doc id, sentence index)."""

    mode = "precomputed"

    def __init__(self, path):
        self.path = str(path)
        manifest, payload = read_container(path)
        self.d_w = int(manifest["d_w"])
        self._entries = {}
        for e in manifest["entries"]:
            key = (str(e["doc_id"]), int(e["sent_idx"]))
            self._entries[key] = (int(e["offset"]), int(e["n_tokens"]))
        self._payload = payload

    def embed(self, tokens, *, doc_id=None, sent_idx=None) -> torch.Tensor:
        key = (str(doc_id), int(sent_idx))
        if key not in self._entries:
            raise MissingPrecomputedEntry(doc_id, sent_idx)
        offset, n_tokens = self._entries[key]
        if n_tokens != len(tokens):
            raise MissingPrecomputedEntry(
                doc_id, sent_idx,
                f"stored {n_tokens} token vectors, tokenizer produced {len(tokens)}",
            )
        mat = self._payload[offset : offset + n_tokens * self.d_w]
        mat = mat.reshape(n_tokens, self.d_w).astype(np.float64)
        return torch.from_numpy(mat)

    def trainable_arrays(self) -> dict[str, torch.Tensor]:
        return {}

    def config(self) -> dict:
        return {"mode": self.mode, "d_w": self.d_w, "path": self.path}


def write_precomputed_file(path, d_w: int, entries) -> None:
    """Write a precomputed-embedding file.

    ``entries`` is an iterable of (doc_id, sent_idx, matrix) with matrices
    of shape (n_tokens, d_w).
    """
    manifest_entries = []
    arrays = []
    offset = 0
    for doc_id, sent_idx, mat in entries:
        mat = np.asarray(mat, dtype=np.float32)
        if mat.ndim != 2 or mat.shape[1] != d_w:
            raise ValueError(f"matrix for ({doc_id}, {sent_idx}) has shape {mat.shape}")
        manifest_entries.append(
            {"doc_id": str(doc_id), "sent_idx": int(sent_idx),
             "n_tokens": int(mat.shape[0]), "offset": offset}
        )
        arrays.append(mat)
        offset += mat.size
    write_container(path, {"d_w": d_w, "entries": manifest_entries}, arrays)


class TrainableLookupProvider:
    """Trainable embedding table over a whitespace-token vocabulary.

    Unknown tokens share one UNK row (index 0).  The table participates in
    gradient updates alongside the encoder parameters.
    """

    mode = "trainable"

    def __init__(self, vocab: list[str], d_w: int, seed: int = 0, table=None):
        self.d_w = d_w
        self.seed = seed
        self.vocab = [UNK] + [t for t in vocab if t != UNK]
        self.index = {t: i for i, t in enumerate(self.vocab)}
        if table is None:
            rng = np.random.default_rng([seed, len(self.vocab), d_w])
            scale = 1.0 / np.sqrt(d_w)
            init = rng.uniform(-scale, scale, size=(len(self.vocab), d_w))
            table = torch.tensor(init, dtype=torch.float64, requires_grad=True)
        self.table = table

    @classmethod
    def from_datasets(cls, datasets, d_w: int, seed: int = 0, max_tokens: int = 128):
        vocab: dict[str, None] = {}
        for ds in datasets:
            for doc in ds.documents:
                for sent in doc.sentences:
                    for tok in tokenize(sent.text, max_tokens):
                        vocab.setdefault(tok)
        return cls(list(vocab), d_w, seed)

    def embed(self, tokens, *, doc_id=None, sent_idx=None) -> torch.Tensor:
        ids = torch.tensor([self.index.get(t, 0) for t in tokens], dtype=torch.long)
        return self.table.index_select(0, ids)

    def trainable_arrays(self) -> dict[str, torch.Tensor]:
        return {"embeddings.lookup.table": self.table}

    def config(self) -> dict:
        return {"mode": self.mode, "d_w": self.d_w, "seed": self.seed, "vocab": self.vocab}


class HashingRandomProvider:
    """Frozen per-token vectors derived from a stable hash; for tests and demos."""

    mode = "hashing"

    def __init__(self, d_w: int, seed: int = 0):
        self.d_w = d_w
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def _vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(
                f"{self.seed}\x00{token}".encode("utf-8"), digest_size=16
            ).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vec = rng.standard_normal(self.d_w) / np.sqrt(self.d_w)
            self._cache[token] = vec
        return vec

    def embed(self, tokens, *, doc_id=None, sent_idx=None) -> torch.Tensor:
        mat = np.stack([self._vector(t) for t in tokens])
        return torch.from_numpy(mat)

    def trainable_arrays(self) -> dict[str, torch.Tensor]:
        return {}

    def config(self) -> dict:
        return {"mode": self.mode, "d_w": self.d_w, "seed": self.seed}


def embed(provider, tokens, *, doc_id=None, sent_idx=None) -> torch.Tensor:
    """Embed a token sequence; output shape is always (len(tokens), d_w)."""
    mat = provider.embed(tokens, doc_id=doc_id, sent_idx=sent_idx)
    if mat.shape != (len(tokens), provider.d_w):
        raise MissingPrecomputedEntry(doc_id, sent_idx, f"bad stored shape {tuple(mat.shape)}")
    if not torch.isfinite(mat).all():
        raise MissingPrecomputedEntry(doc_id, sent_idx, "non-finite embedding values")
    return mat


def provider_from_config(cfg: dict, datasets: list[Dataset] | None = None,
                         max_tokens: int = 128):
    """Build a provider from its JSON config (as stored in checkpoints)."""
    mode = cfg.get("mode")
    if mode == "precomputed":
        return PrecomputedFileProvider(cfg["path"])
    if mode == "trainable":
        if "vocab" in cfg:
            return TrainableLookupProvider(cfg["vocab"], cfg["d_w"], cfg.get("seed", 0))
        if datasets is None:
            raise ValueError("trainable provider needs a vocab or datasets")
        return TrainableLookupProvider.from_datasets(
            datasets, cfg["d_w"], cfg.get("seed", 0), max_tokens
        )
    if mode == "hashing":
        return HashingRandomProvider(cfg["d_w"], cfg.get("seed", 0))
    raise ValueError(f"unknown embedding mode {mode!r}")


def provider_config_json(provider) -> str:
    return json.dumps(provider.config(), sort_keys=True)
