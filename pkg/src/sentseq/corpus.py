"""Data model and ingestion for sentence-labelled document collections.

Two on-disk formats are supported: the PubMed-RCT text format (one parser,
used for the biomedical abstracts corpus) and a canonical JSONL format that
everything else is converted to.  Datasets are immutable once built; all
operations here return new values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Mapping

import numpy as np

from .errors import (
    DuplicateDocId,
    EmptyDocument,
    MalformedLine,
    MissingHeader,
    TooFewDocuments,
    UnknownLabel,
    UnmappedClass,
)

GENERIC_CLASSES = (
    "Background",
    "Problem",
    "Methods",
    "Results",
    "Conclusions",
    "FutureWork",
)


class TextType(Enum):
    ABSTRACT = "abstract"
    FULL_PAPER = "full_paper"


@dataclass(frozen=True)
class Sentence:
    text: str
    label: int

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("sentence text is empty")
        if self.label < 0:
            raise ValueError("label index must be non-negative")


@dataclass(frozen=True)
class Document:
    id: str
    sentences: tuple[Sentence, ...]

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if not self.sentences:
            raise EmptyDocument(self.id)

    def __len__(self) -> int:
        return len(self.sentences)


@dataclass(frozen=True)
class LabelScheme:
    name: str
    classes: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if not 2 <= len(self.classes) <= 64:
            raise ValueError(f"scheme must have 2..64 classes, got {len(self.classes)}")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("scheme classes must be unique")

    def index_of(self, name: str, line_no: int | None = None) -> int:
        """Resolve a class name case-insensitively, trimming whitespace."""
        key = name.strip().lower()
        for i, cls in enumerate(self.classes):
            if cls.lower() == key:
                return i
        raise UnknownLabel(name, line_no)

    def __len__(self) -> int:
        return len(self.classes)


@dataclass(frozen=True)
class Dataset:
    name: str
    text_type: TextType
    scheme: LabelScheme
    documents: tuple[Document, ...]

    def __post_init__(self):
        object.__setattr__(self, "documents", tuple(self.documents))
        seen = set()
        for doc in self.documents:
            if doc.id in seen:
                raise DuplicateDocId(doc.id)
            seen.add(doc.id)
            for sent in doc.sentences:
                if sent.label >= len(self.scheme):
                    raise UnknownLabel(f"index {sent.label}")

    @property
    def n_sentences(self) -> int:
        return sum(len(d) for d in self.documents)

    def class_counts(self) -> dict[str, int]:
        counts = {cls: 0 for cls in self.scheme.classes}
        for doc in self.documents:
            for sent in doc.sentences:
                counts[self.scheme.classes[sent.label]] += 1
        return counts

    def subset(self, doc_ids: Iterable[str]) -> "Dataset":
        """New dataset keeping only the given documents, in original order."""
        keep = set(doc_ids)
        docs = tuple(d for d in self.documents if d.id in keep)
        return Dataset(self.name, self.text_type, self.scheme, docs)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: Mapping[str, int] = field(default_factory=dict)

    def fold_ids(self, fold: int) -> tuple[str, ...]:
        return tuple(d for d, f in self.assignment.items() if f == fold)


# ------------------------------------------------------------------------
# parsing

def parse_pubmed_rct(text: str, scheme: LabelScheme) -> Dataset:
    """Parse the PubMed-RCT text format.

    Documents start with a ``###<id>`` header line, followed by
    ``LABEL<TAB>sentence`` body lines; a blank line ends the document.
    """
    documents: list[Document] = []
    doc_id: str | None = None
    sentences: list[Sentence] = []

    def flush():
        nonlocal doc_id, sentences
        if doc_id is not None:
            if not sentences:
                raise EmptyDocument(doc_id)
            documents.append(Document(doc_id, tuple(sentences)))
        doc_id, sentences = None, []

    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            flush()
            continue
        if line.startswith("###"):
            flush()
            doc_id = line[3:].strip()
            if not doc_id:
                raise MalformedLine(line_no, "header without document id")
            continue
        if doc_id is None:
            raise MalformedLine(line_no, "body line outside a document")
        if "\t" not in line:
            raise MalformedLine(line_no, "expected LABEL<TAB>sentence")
        label_str, sent_text = line.split("\t", 1)
        if not sent_text.strip():
            raise MalformedLine(line_no, "empty sentence text")
        label = scheme.index_of(label_str, line_no)
        sentences.append(Sentence(sent_text.strip(), label))
    flush()
    return Dataset("pubmed-rct", TextType.ABSTRACT, scheme, tuple(documents))


def parse_canonical_jsonl(stream: IO[str] | Iterable[str]) -> Dataset:
    """Parse the canonical JSONL format (header object, then one doc per line)."""
    lines = iter(stream)
    header = None
    for line in lines:
        if line.strip():
            try:
                header = json.loads(line)
            except json.JSONDecodeError as e:
                raise MissingHeader(f"first line is not valid JSON: {e}") from e
            break
    if header is None or "dataset" not in header or "classes" not in header:
        raise MissingHeader("expected a header object with dataset/text_type/classes")
    try:
        text_type = TextType(header.get("text_type", "abstract"))
    except ValueError as e:
        raise MissingHeader(f"bad text_type {header.get('text_type')!r}") from e
    scheme = LabelScheme(header["dataset"], tuple(header["classes"]))

    documents = []
    for line_no, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedLine(line_no, str(e)) from e
        if "doc_id" not in obj or "sentences" not in obj:
            raise MalformedLine(line_no, "expected doc_id and sentences")
        sents = tuple(
            Sentence(s["text"], scheme.index_of(s["label"], line_no))
            for s in obj["sentences"]
        )
        if not sents:
            raise EmptyDocument(obj["doc_id"])
        documents.append(Document(str(obj["doc_id"]), sents))
    return Dataset(header["dataset"], text_type, scheme, tuple(documents))


def export_canonical_jsonl(ds: Dataset, stream: IO[str]) -> None:
    """Write ``ds`` in the canonical JSONL format (UTF-8 text, LF endings).

    Deterministic, so parse -> export -> parse is a fixed point.
    """
    header = {
        "dataset": ds.name,
        "text_type": ds.text_type.value,
        "classes": list(ds.scheme.classes),
    }
    stream.write(json.dumps(header, ensure_ascii=False) + "\n")
    for doc in ds.documents:
        obj = {
            "doc_id": doc.id,
            "sentences": [
                {"text": s.text, "label": ds.scheme.classes[s.label]}
                for s in doc.sentences
            ],
        }
        stream.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_canonical_jsonl(path) -> Dataset:
    with open(path, encoding="utf-8") as f:
        return parse_canonical_jsonl(f)


def save_canonical_jsonl(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        export_canonical_jsonl(ds, f)


# ------------------------------------------------------------------------
# splitting

def split_folds(ds: Dataset, k: int, seed: int) -> FoldPlan:
    """Assign documents to k folds, round-robin over a seeded shuffle.

    Fold sizes differ by at most one, which keeps the train/val/test
    proportions at (k-2)/k, 1/k, 1/k within rounding.
    """
    if k < 3:
        raise ValueError(f"need k >= 3, got {k}")
    if len(ds.documents) < k:
        raise TooFewDocuments(f"{len(ds.documents)} documents for k={k}")
    rng = np.random.default_rng([seed, k])
    order = rng.permutation(len(ds.documents))
    assignment = {ds.documents[j].id: i % k for i, j in enumerate(order)}
    return FoldPlan(k, assignment)


def fold_split(ds: Dataset, plan: FoldPlan, fold: int) -> tuple[Dataset, Dataset, Dataset]:
    """Materialize (train, val, test) for one fold.

    Fold ``fold`` is the test set and fold ``(fold + 1) % k`` the
    validation set; everything else trains.
    """
    test_f, val_f = fold % plan.k, (fold + 1) % plan.k
    test_ids = set(plan.fold_ids(test_f))
    val_ids = set(plan.fold_ids(val_f))
    train_ids = [d.id for d in ds.documents if d.id not in test_ids and d.id not in val_ids]
    return ds.subset(train_ids), ds.subset(val_ids), ds.subset(test_ids)


def proportional_split(
    ds: Dataset, proportions: tuple[float, float, float], seed: int
) -> tuple[Dataset, Dataset, Dataset]:
    """Single seeded train/val/test split with the given proportions."""
    if not math.isclose(sum(proportions), 1.0, rel_tol=1e-9):
        raise ValueError(f"proportions must sum to 1, got {proportions}")
    rng = np.random.default_rng([seed, len(ds.documents)])
    order = rng.permutation(len(ds.documents))
    n = len(order)
    n_train = int(round(proportions[0] * n))
    n_val = int(round(proportions[1] * n))
    train = [ds.documents[j].id for j in order[:n_train]]
    val = [ds.documents[j].id for j in order[n_train : n_train + n_val]]
    test = [ds.documents[j].id for j in order[n_train + n_val :]]
    return ds.subset(train), ds.subset(val), ds.subset(test)


def truncate_fraction(ds: Dataset, fraction, seed: int) -> Dataset:
    """Keep ceil(fraction * n_documents) documents, sampled uniformly.

    Used to build the size-reduced dataset variants; callers apply this to
    training splits only, leaving validation and test at original size.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n_keep = math.ceil(fraction * len(ds.documents))
    rng = np.random.default_rng([seed, n_keep])
    chosen = rng.choice(len(ds.documents), size=n_keep, replace=False)
    keep_ids = [ds.documents[j].id for j in sorted(chosen)]
    return ds.subset(keep_ids)


# ------------------------------------------------------------------------
# label collapse

@dataclass(frozen=True)
class LabelMapping:
    """Maps (dataset name, source class) pairs to generic classes."""

    generic_scheme: LabelScheme
    entries: Mapping[tuple[str, str], str]

    @classmethod
    def from_json(cls, obj: dict) -> "LabelMapping":
        generic = LabelScheme("generic", tuple(obj["generic_classes"]))
        entries = {}
        for dataset, table in obj["map"].items():
            for source, target in table.items():
                if target not in generic.classes:
                    raise UnmappedClass(dataset, f"{source} -> unknown generic {target}")
                entries[(dataset, source)] = target
        return cls(generic, entries)

    @classmethod
    def load(cls, path) -> "LabelMapping":
        with open(path, encoding="utf-8") as f:
            return cls.from_json(json.load(f))


def collapse_labels(ds: Dataset, mapping: LabelMapping) -> Dataset:
    """Replace every label by its generic class; documents are untouched."""
    generic = mapping.generic_scheme
    lut = []
    for cls in ds.scheme.classes:
        target = mapping.entries.get((ds.name, cls))
        if target is None:
            raise UnmappedClass(ds.name, cls)
        lut.append(generic.classes.index(target))
    docs = tuple(
        Document(d.id, tuple(Sentence(s.text, lut[s.label]) for s in d.sentences))
        for d in ds.documents
    )
    return Dataset(ds.name, ds.text_type, generic, docs)
