"""Cross-scheme semantic relatedness of sentence classes.

For every gold class, the predictions that all task models emit on its
sentences are tallied into a semantic vector over the union of all tasks'
classes (qualified as ``DATASET:Class``).  Cosine similarity between such
vectors measures how related two classes are; silhouette scores grade a
hand-assigned clustering of the classes, and a 2-D PCA projection supports
visual inspection.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateRank,
    EmptyClass,
    InputError,
    SingleCluster,
    ZeroVector,
)

PREDICTION_COLUMNS = ("dataset", "doc_id", "sent_idx", "gold_label", "task_id", "pred_label")


@dataclass(frozen=True)
class PredictionRecord:
    dataset: str
    doc_id: str
    sent_idx: int
    gold_label: str
    task_id: str
    pred_label: str


def qualified(owner: str, cls: str) -> str:
    return f"{owner}:{cls}"


@dataclass(frozen=True)
class SemanticVector:
    """Prediction-distribution vector for one gold class.

    ``counts`` holds integer tallies; ``v = counts / support`` where
    ``support`` is the number of distinct sentence instances, so the
    components sum to the number of tasks exactly (in integer arithmetic:
    counts.sum() == n_tasks * support).
    """

    label: str
    axis: tuple[str, ...]
    counts: np.ndarray
    support: int
    n_tasks: int

    @property
    def v(self) -> np.ndarray:
        return self.counts.astype(np.float64) / self.support


def semantic_vectors(
    records: Sequence[PredictionRecord],
    task_classes: Mapping[str, Sequence[str]],
    dataset_classes: Mapping[str, Sequence[str]],
    on_empty: str = "raise",
) -> list[SemanticVector]:
    """Tally predictions into one semantic vector per gold class.

    Every task must have predicted every sentence instance the same number
    of times (once per restart); sentences are identified by
    (dataset, doc_id, sent_idx).  ``on_empty`` is ``"raise"`` or ``"skip"``
    for gold classes without sentences.
    """
    axis = tuple(
        qualified(task, cls) for task in task_classes for cls in task_classes[task]
    )
    axis_index = {q: i for i, q in enumerate(axis)}
    n_tasks = len(task_classes)

    missing = {(t, d) for t in task_classes for d in dataset_classes}
    per_sentence: dict[tuple[str, str, int], dict[str, int]] = {}
    gold_of: dict[tuple[str, str, int], str] = {}
    counts: dict[str, np.ndarray] = {}
    rows_per_gold: dict[str, int] = {}

    for rec in records:
        if rec.task_id not in task_classes:
            raise InputError(f"prediction from unknown task {rec.task_id!r}")
        if rec.dataset not in dataset_classes:
            raise InputError(f"prediction for unknown dataset {rec.dataset!r}")
        missing.discard((rec.task_id, rec.dataset))
        key = (rec.dataset, rec.doc_id, rec.sent_idx)
        gold_q = qualified(rec.dataset, rec.gold_label)
        if gold_of.setdefault(key, gold_q) != gold_q:
            raise InputError(f"inconsistent gold label for sentence {key}")
        per_sentence.setdefault(key, {}).setdefault(rec.task_id, 0)
        per_sentence[key][rec.task_id] += 1
        pred_q = qualified(rec.task_id, rec.pred_label)
        if pred_q not in axis_index:
            raise InputError(f"prediction {pred_q!r} outside the task's class set")
        vec = counts.setdefault(gold_q, np.zeros(len(axis), dtype=np.int64))
        vec[axis_index[pred_q]] += 1
        rows_per_gold[gold_q] = rows_per_gold.get(gold_q, 0) + 1

    if missing:
        gaps = ", ".join(f"{t} x {d}" for t, d in sorted(missing))
        raise InputError(f"prediction dump misses task x dataset pairs: {gaps}")
    for key, by_task in per_sentence.items():
        reps = set(by_task.values())
        if len(by_task) != n_tasks or len(reps) != 1:
            raise InputError(f"sentence {key} not predicted uniformly by all tasks")

    out = []
    for dataset in dataset_classes:
        for cls in dataset_classes[dataset]:
            gold_q = qualified(dataset, cls)
            if gold_q not in counts:
                if on_empty == "skip":
                    continue
                raise EmptyClass(gold_q)
            n_rows = rows_per_gold[gold_q]
            out.append(SemanticVector(
                label=gold_q,
                axis=axis,
                counts=counts[gold_q],
                support=n_rows // n_tasks,
                n_tasks=n_tasks,
            ))
    return out


def relatedness(v_k, v_l) -> float:
    """Cosine similarity between two semantic vectors."""
    a = v_k.v if isinstance(v_k, SemanticVector) else np.asarray(v_k, dtype=np.float64)
    b = v_l.v if isinstance(v_l, SemanticVector) else np.asarray(v_l, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine undefined for a zero vector")
    return float(a @ b / (na * nb))


def relatedness_matrix(vectors: Sequence[SemanticVector]) -> tuple[list[str], np.ndarray]:
    labels = [v.label for v in vectors]
    mat = np.zeros((len(vectors), len(vectors)))
    for i, vi in enumerate(vectors):
        for j, vj in enumerate(vectors):
            mat[i, j] = relatedness(vi, vj)
    return labels, mat


def silhouette(
    vectors: Sequence[SemanticVector],
    clusters: Mapping[str, str],
) -> tuple[dict[str, float], float]:
    """Silhouette scores with distance 1 - cosine similarity.

    Returns (per-cluster mean, overall mean).  Members of singleton
    clusters score 0 by convention.
    """
    labels = [v.label for v in vectors]
    for lab in labels:
        if lab not in clusters:
            raise InputError(f"no cluster assignment for {lab!r}")
    assign = [clusters[lab] for lab in labels]
    cluster_names = list(dict.fromkeys(assign))
    if len(cluster_names) < 2:
        raise SingleCluster(f"need >= 2 clusters, got {cluster_names}")

    n = len(vectors)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = 1.0 - relatedness(vectors[i], vectors[j])
            dist[i, j] = dist[j, i] = d

    members = {c: [i for i, a in enumerate(assign) if a == c] for c in cluster_names}
    scores = np.zeros(n)
    for i in range(n):
        own = members[assign[i]]
        if len(own) == 1:
            scores[i] = 0.0
            continue
        a = float(np.mean([dist[i, j] for j in own if j != i]))
        b = min(
            float(np.mean([dist[i, j] for j in members[c]]))
            for c in cluster_names
            if c != assign[i]
        )
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    per_cluster = {
        c: float(np.mean([scores[i] for i in members[c]])) for c in cluster_names
    }
    return per_cluster, float(np.mean(scores))


def pca_2d(vectors) -> np.ndarray:
    """Project row vectors onto the two leading principal directions.

    Components are the top eigenvectors of the covariance matrix
    (descending eigenvalue); each is sign-fixed so its largest-magnitude
    loading is positive.
    """
    if isinstance(vectors, (list, tuple)) and vectors and isinstance(vectors[0], SemanticVector):
        X = np.stack([v.v for v in vectors])
    else:
        X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3:
        raise ValueError(f"need >= 3 vectors, got shape {getattr(X, 'shape', None)}")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / X.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    rank = int(np.sum(eigvals > 1e-12 * max(eigvals[0], 1.0)))
    if rank < 2:
        raise DegenerateRank(rank)
    W = eigvecs[:, :2].copy()
    for k in range(2):
        lead = np.argmax(np.abs(W[:, k]))
        if W[lead, k] < 0:
            W[:, k] = -W[:, k]
    return centered @ W


# ------------------------------------------------------------------------
# prediction dumps

def predict_records(pipelines: Mapping[str, object], datasets: Mapping[str, "Dataset"],
                    documents: Mapping[str, Sequence] | None = None) -> list[PredictionRecord]:
    """Run every task pipeline over every dataset's documents.

    ``documents`` optionally restricts each dataset to a subset (e.g. its
    held-out test portion); defaults to all documents.
    """
    records = []
    for ds_name, ds in datasets.items():
        docs = documents[ds_name] if documents is not None else ds.documents
        for task_id, pipe in pipelines.items():
            preds = pipe.predict_many(list(docs))
            for doc, labels in zip(docs, preds):
                for j, (sent, y) in enumerate(zip(doc.sentences, labels)):
                    records.append(PredictionRecord(
                        dataset=ds_name,
                        doc_id=doc.id,
                        sent_idx=j,
                        gold_label=ds.scheme.classes[sent.label],
                        task_id=task_id,
                        pred_label=pipe.scheme.classes[y],
                    ))
    return records


def write_prediction_csv(records: Sequence[PredictionRecord], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(PREDICTION_COLUMNS)
    for r in records:
        writer.writerow([r.dataset, r.doc_id, r.sent_idx, r.gold_label, r.task_id, r.pred_label])


def read_prediction_csv(stream) -> list[PredictionRecord]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != PREDICTION_COLUMNS:
        raise InputError(f"prediction dump must start with header {','.join(PREDICTION_COLUMNS)}")
    out = []
    for row in reader:
        if not row:
            continue
        if len(row) != len(PREDICTION_COLUMNS):
            raise InputError(f"bad prediction row: {row!r}")
        out.append(PredictionRecord(row[0], row[1], int(row[2]), row[3], row[4], row[5]))
    return out


# ------------------------------------------------------------------------
# figures

def save_heatmap_svg(labels: Sequence[str], matrix: np.ndarray, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = len(labels)
    fig, ax = plt.subplots(figsize=(max(6, 0.4 * n), max(5, 0.4 * n)))
    im = ax.imshow(matrix, cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(n), labels, rotation=90, fontsize=7)
    ax.set_yticks(range(n), labels, fontsize=7)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def save_scatter_svg(points: np.ndarray, labels: Sequence[str],
                     clusters: Mapping[str, str], path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cluster_names = list(dict.fromkeys(clusters[lab] for lab in labels))
    cmap = plt.get_cmap("tab10")
    fig, ax = plt.subplots(figsize=(8, 6))
    for ci, cname in enumerate(cluster_names):
        idx = [i for i, lab in enumerate(labels) if clusters[lab] == cname]
        ax.scatter(points[idx, 0], points[idx, 1], color=cmap(ci % 10), label=cname, s=30)
    for i, lab in enumerate(labels):
        ax.annotate(lab, (points[i, 0], points[i, 1]), fontsize=6, alpha=0.8)
    ax.legend(fontsize=8)
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
