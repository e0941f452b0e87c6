"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""

import json
import math
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
import torch

from oracles import (
    brute_force_best,
    brute_force_log_partition,
    brute_force_scores,
    finite_difference_grads,
    relative_group_error,
)
from sentseq.corpus import (
    LabelMapping,
    TextType,
    collapse_labels,
    fold_split,
    load_canonical_jsonl,
    split_folds,
)
from sentseq.crf import CrfParams, log_partition, viterbi_decode
from sentseq.embeddings import HashingRandomProvider, TrainableLookupProvider
from sentseq.encoder import ModelDims, build_pipeline
from sentseq.metrics import report
from sentseq.relatedness import (
    PredictionRecord,
    relatedness,
    relatedness_matrix,
    semantic_vectors,
    silhouette,
    SemanticVector,
)
from sentseq.trainer import (
    AdamW,
    TrainConfig,
    evaluate,
    restore_arrays,
    snapshot_arrays,
    train_single_task,
)
from sentseq.transfer import (
    InitMode,
    SharingMode,
    TaskSpec,
    build_multitask,
    init_transfer,
    proportional_schedule,
)
from synthdata import synth_dataset, variable_size_docs


@contextmanager
def criterion(number, description):
    try:
        yield
    except BaseException:
        print(f"FAIL  criterion {number:>2}: {description}")
        raise
    print(f"PASS  criterion {number:>2}: {description}")


def random_crf_instances(n_instances=200, seed=2024):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_instances):
        L = int(rng.choice([2, 3, 4]))
        n = int(rng.integers(1, 7))
        p = CrfParams(
            T=torch.tensor(rng.uniform(-2, 2, (L, L)), dtype=torch.float64),
            b_begin=torch.tensor(rng.uniform(-2, 2, L), dtype=torch.float64),
            e_end=torch.tensor(rng.uniform(-2, 2, L), dtype=torch.float64),
        )
        logits = torch.tensor(rng.uniform(-2, 2, (n, L)), dtype=torch.float64)
        out.append((p, logits))
    return out


def test_criterion_01_crf_oracle_equivalence():
    with criterion(1, "CRF forward/viterbi match exhaustive enumeration (200 instances)"):
        start = time.monotonic()
        for p, logits in random_crf_instances():
            args = (logits.numpy(), p.T.numpy(), p.b_begin.numpy(), p.e_end.numpy())
            logz = float(log_partition(p, logits))
            expected = brute_force_log_partition(*args)
            assert abs(logz - expected) <= 1e-6 * max(1.0, abs(expected))
            labels, score = viterbi_decode(p, logits)
            best_seq, best_score, unique = brute_force_best(*args)
            assert abs(score - best_score) < 1e-9
            if unique:
                assert tuple(labels) == best_seq
        elapsed = time.monotonic() - start
        assert elapsed < 5.0, f"took {elapsed:.2f}s"


def test_criterion_02_distribution_normalization():
    with criterion(2, "sum of exp(score - logZ) over all sequences = 1 +/- 1e-6"):
        for p, logits in random_crf_instances():
            args = (logits.numpy(), p.T.numpy(), p.b_begin.numpy(), p.e_end.numpy())
            logz = float(log_partition(p, logits))
            total = sum(math.exp(s - logz) for s in brute_force_scores(*args).values())
            assert abs(total - 1.0) <= 1e-6


def test_criterion_03_full_stack_gradients():
    with criterion(3, "analytic gradients match central finite differences (< 1e-4)"):
        start = time.monotonic()
        ds = synth_dataset(n_docs=1, seed=5, name="grad")
        provider = HashingRandomProvider(d_w=5, seed=3)
        dims = ModelDims(d_w=5, d_lstm=4, d_u=3, r=2)
        pipe = build_pipeline(provider, ds.scheme, dims, seed=1, dropout=0.0)

        from sentseq.corpus import Document, Sentence
        doc = Document("g0", tuple(
            Sentence(" ".join(f"tok{i}_{j}" for j in range(m)), i % 3)
            for i, m in enumerate([3, 6, 1, 5])  # 4 sentences, <= 6 tokens each
        ))
        groups = {
            "token_lstm_fwd": pipe.sent_enc.lstm.fwd.arrays("f"),
            "token_lstm_bwd": pipe.sent_enc.lstm.bwd.arrays("b"),
            "attention": {"W": pipe.sent_enc.W, "b": pipe.sent_enc.b, "U": pipe.sent_enc.U},
            "context_lstm_fwd": pipe.ctx_enc.lstm.fwd.arrays("cf"),
            "context_lstm_bwd": pipe.ctx_enc.lstm.bwd.arrays("cb"),
            "output_linear": {"W_O": pipe.head.linear.W_O, "b_O": pipe.head.linear.b_O},
            "crf": {"T": pipe.head.crf.T, "b_begin": pipe.head.crf.b_begin,
                    "e_end": pipe.head.crf.e_end},
        }

        def loss_fn():
            with torch.no_grad():
                return pipe.batch_loss([doc], training=False)

        for tensor in pipe.named_arrays().values():
            tensor.grad = None
        loss = pipe.batch_loss([doc], training=False)
        loss.backward()

        for group_name, arrays in groups.items():
            numeric = finite_difference_grads(loss_fn, arrays, h=1e-4)
            for name, tensor in arrays.items():
                assert tensor.grad is not None, f"{group_name}.{name}"
                err = relative_group_error(tensor.grad, numeric[name])
                assert err < 1e-4, f"{group_name}.{name}: rel err {err:.2e}"
        elapsed = time.monotonic() - start
        assert elapsed < 60.0, f"took {elapsed:.2f}s"


def test_criterion_04_overfit_smoke():
    with criterion(4, "synthetic 3-class set reaches >= 99% training accuracy"):
        start = time.monotonic()
        ds = synth_dataset(n_docs=50, seed=8, name="smoke")
        provider = TrainableLookupProvider.from_datasets([ds], d_w=24, seed=0)
        dims = ModelDims(d_w=24, d_lstm=10, d_u=6, r=2)
        pipe = build_pipeline(provider, ds.scheme, dims, seed=2,
                              task_id="smoke", text_type=ds.text_type)
        cfg = TrainConfig(lr=1e-2, weight_decay=0.0, epochs=30, batch_sentence_cap=32,
                          dropout=0.0, seed=4)
        result = train_single_task(pipe, ds, ds, cfg)
        restore_arrays(pipe.named_arrays(), result.best_arrays)
        train_report = evaluate(pipe, ds)
        elapsed = time.monotonic() - start
        assert train_report.accuracy >= 0.99, f"accuracy {train_report.accuracy:.4f}"
        assert elapsed < 120.0, f"took {elapsed:.2f}s"


def _mixed_tasks():
    return [
        TaskSpec("absA", synth_dataset(6, seed=1, name="absA", text_type=TextType.ABSTRACT)),
        TaskSpec("absB", synth_dataset(6, seed=2, name="absB", text_type=TextType.ABSTRACT)),
        TaskSpec("fullC", synth_dataset(6, seed=3, name="fullC", text_type=TextType.FULL_PAPER)),
        TaskSpec("fullD", synth_dataset(6, seed=4, name="fullD", text_type=TextType.FULL_PAPER)),
    ]


def test_criterion_05_sharing_topology():
    with criterion(5, "parameter-set counts per sharing mode are exact"):
        provider = HashingRandomProvider(d_w=6, seed=0)
        dims = ModelDims(d_w=6, d_lstm=3, d_u=3, r=2)
        expected = {
            SharingMode.MULT_ALL: (1, 1, 4),
            SharingMode.MULT_GRP: (1, 2, 4),
            SharingMode.MULT_ALL_SHO: (1, 1, 1),
            SharingMode.MULT_GRP_SHO: (1, 2, 2),
        }
        for mode, counts in expected.items():
            model = build_multitask(provider, dims, _mixed_tasks(), mode, seed=0)
            assert model.topology_counts() == counts, mode
            # counting distinct tensor identities must agree with the group count
            n_ctx_tensors = len({id(t) for ctx in model.ctx_encs.values()
                                 for t in ctx.arrays().values()})
            assert n_ctx_tensors == counts[1] * 6  # 6 arrays per Bi-LSTM group


def test_criterion_06_update_isolation():
    with criterion(6, "one step on task A leaves other tasks' arrays bit-identical"):
        provider = HashingRandomProvider(d_w=6, seed=0)
        dims = ModelDims(d_w=6, d_lstm=3, d_u=3, r=2)
        model = build_multitask(provider, dims, _mixed_tasks(), SharingMode.MULT_ALL, seed=3)
        before = snapshot_arrays(model.named_arrays())
        cfg = TrainConfig(lr=1e-3, weight_decay=0.01, epochs=1, dropout=0.0, seed=0)
        opt = AdamW(model.named_arrays(), cfg)
        pipe = model.pipeline("absA")
        opt.zero_grad()
        loss = pipe.batch_loss(list(model.tasks["absA"].dataset.documents[:2]),
                               training=False)
        loss.backward()
        opt.step(epoch=0)
        for other in ("absB", "fullC", "fullD"):
            for name, tensor in model.heads[other].arrays().items():
                assert torch.equal(tensor, before[name]), name
        assert all(
            not torch.equal(t, before[n]) for n, t in model.sent_enc.arrays().items()
        ), "shared sentence encoder must change"
        changed = {n for n, t in model.named_arrays().items()
                   if not torch.equal(t, before[n])}
        assert changed <= set(model.arrays_for_task("absA"))


def test_criterion_07_init_semantics():
    with criterion(7, "INIT2 copies the sentence encoder, INIT1 adds context; outputs never"):
        provider = HashingRandomProvider(d_w=6, seed=0)
        dims = ModelDims(d_w=6, d_lstm=3, d_u=3, r=2)
        ds = synth_dataset(4, seed=0)

        def fresh(seed):
            return build_pipeline(provider, ds.scheme, dims, seed=seed, task_id="t")

        src = fresh(1)
        tgt2 = init_transfer(src, fresh(2), InitMode.INIT2)
        for name, t in src.sent_enc.arrays().items():
            assert torch.equal(tgt2.sent_enc.arrays()[name], t)
        ctx_src = src.ctx_enc.arrays(key=None)
        assert any(not torch.equal(tgt2.ctx_enc.arrays(key=None)[n], ctx_src[n])
                   for n in ctx_src)

        tgt1 = init_transfer(src, fresh(3), InitMode.INIT1)
        for name, t in src.sent_enc.arrays().items():
            assert torch.equal(tgt1.sent_enc.arrays()[name], t)
        for name, t in ctx_src.items():
            assert torch.equal(tgt1.ctx_enc.arrays(key=None)[name], t)
        head_src = src.head.arrays(key="k")
        for tgt in (tgt1, tgt2):
            assert any(not torch.equal(tgt.head.arrays(key="k")[n], head_src[n])
                       for n in head_src)


def test_criterion_08_proportional_schedule():
    with criterion(8, "schedule multiplicities exact; 1000-entry windows in [0.75, 0.85]"):
        flat = []
        for epoch in range(100):
            sched = proportional_schedule({"A": 80, "B": 20}, seed=epoch)
            assert len(sched) == 100
            assert sum(1 for t, _ in sched if t == "A") == 80
            assert sorted(i for t, i in sched if t == "A") == list(range(80))
            assert sorted(i for t, i in sched if t == "B") == list(range(20))
            flat.extend(t for t, _ in sched)
        indicator = np.array([1 if t == "A" else 0 for t in flat])
        windows = np.convolve(indicator, np.ones(1000, dtype=int), mode="valid") / 1000.0
        assert windows.min() >= 0.75
        assert windows.max() <= 0.85


def test_criterion_09_semantic_vectors():
    with criterion(9, "semantic vectors: exact row sums, identity matrix, hand fixture"):
        # single perfect task -> identity relatedness matrix
        perfect = [PredictionRecord("D1", "doc", i, g, "D1", g)
                   for i, g in enumerate(["X", "Y", "X"])]
        vectors = semantic_vectors(perfect, {"D1": ["X", "Y"]}, {"D1": ["X", "Y"]})
        _, matrix = relatedness_matrix(vectors)
        assert np.allclose(matrix, np.eye(2), atol=1e-12)

        # hand-built two-task fixture
        records = [
            PredictionRecord("D1", "d", 0, "X", "D1", "X"),
            PredictionRecord("D1", "d", 1, "Y", "D1", "Y"),
            PredictionRecord("D1", "d", 0, "X", "D2", "P"),
            PredictionRecord("D1", "d", 1, "Y", "D2", "Q"),
            PredictionRecord("D2", "d", 0, "P", "D1", "X"),
            PredictionRecord("D2", "d", 1, "Q", "D1", "X"),
            PredictionRecord("D2", "d", 0, "P", "D2", "P"),
            PredictionRecord("D2", "d", 1, "Q", "D2", "Q"),
        ]
        vectors = semantic_vectors(
            records, {"D1": ["X", "Y"], "D2": ["P", "Q"]},
            {"D1": ["X", "Y"], "D2": ["P", "Q"]})
        by_label = {v.label: v for v in vectors}
        hand_counts = {
            "D1:X": [1, 0, 1, 0], "D1:Y": [0, 1, 0, 1],
            "D2:P": [1, 0, 1, 0], "D2:Q": [1, 0, 0, 1],
        }
        for label, counts in hand_counts.items():
            assert by_label[label].counts.tolist() == counts
        for v in vectors:
            assert int(v.counts.sum()) == v.n_tasks * v.support  # row sum == |T| exactly
        hand_cosines = {
            ("D1:X", "D2:P"): 1.0, ("D1:X", "D1:Y"): 0.0, ("D1:X", "D2:Q"): 0.5,
            ("D1:Y", "D2:P"): 0.0, ("D1:Y", "D2:Q"): 0.5, ("D2:P", "D2:Q"): 0.5,
        }
        for (a, b), want in hand_cosines.items():
            assert abs(relatedness(by_label[a], by_label[b]) - want) < 1e-9


def test_criterion_10_silhouette_conventions():
    with criterion(10, "silhouette: orthogonal fixture scores 1.0; singleton scores 0"):
        def sv(label, vec):
            return SemanticVector(label, ("a", "b"), np.asarray(vec, dtype=np.int64), 1, 1)

        orthogonal = [sv("a1", [1, 0]), sv("a2", [1, 0]), sv("b1", [0, 1]), sv("b2", [0, 1])]
        per_cluster, overall = silhouette(
            orthogonal, {"a1": "A", "a2": "A", "b1": "B", "b2": "B"})
        assert abs(overall - 1.0) <= 1e-9

        with_singleton = [sv("a1", [1, 0]), sv("a2", [1, 0]), sv("solo", [0, 1])]
        per_cluster, _ = silhouette(with_singleton, {"a1": "A", "a2": "A", "solo": "S"})
        assert per_cluster["S"] == 0.0


def test_criterion_11_weighted_f1():
    with criterion(11, "cm [[5,5],[0,10]] -> weighted F1 0.7333..., accuracy 0.75"):
        rep = report(np.array([[5, 5], [0, 10]]))
        assert abs(rep.weighted_f1 - 11 / 15) <= 1e-9
        assert rep.accuracy == 0.75


def test_criterion_12_fold_protocol():
    with criterion(12, "k=10 over 40 docs -> 32/4/4; each doc tested exactly once"):
        ds = variable_size_docs([3] * 40, name="folds")
        plan = split_folds(ds, k=10, seed=3)
        tested = []
        for f in range(10):
            train, val, test = fold_split(ds, plan, f)
            sizes = (len(train.documents), len(val.documents), len(test.documents))
            assert sizes == (32, 4, 4)
            tested.extend(d.id for d in test.documents)
        assert sorted(tested) == sorted(d.id for d in ds.documents)


PUBLISHED_GENERIC_COUNTS = {
    "PMD": {"Background": 1220, "Problem": 953, "Methods": 3927,
            "Results": 3760, "Conclusions": 1878, "FutureWork": 0},
    "NIC": {"Background": 2548, "Problem": 0, "Methods": 2700,
            "Results": 4523, "Conclusions": 0, "FutureWork": 0},
    "DRI": {"Background": 1760, "Problem": 449, "Methods": 5038,
            "Results": 1394, "Conclusions": 0, "FutureWork": 136},
    "ART": {"Background": 1657, "Problem": 529, "Methods": 2752,
            "Results": 3672, "Conclusions": 918, "FutureWork": 0},
}

CORPORA_ENV = "SENTSEQ_CORPORA_DIR"


def test_criterion_13_generic_compilation_counts():
    corpora_dir = os.environ.get(CORPORA_ENV)
    if not corpora_dir:
        pytest.skip(
            f"criterion 13 is conditional: set {CORPORA_ENV} to a directory with "
            "pmd.jsonl/nic.jsonl/dri.jsonl/art.jsonl (canonical JSONL at the sizes "
            "used for the generic compilation) to run it")
    with criterion(13, "generic compilation reproduces the published per-class counts"):
        from importlib.resources import files
        mapping = LabelMapping.from_json(json.loads(
            files("sentseq.data").joinpath("generic_label_map.json").read_text()))
        for name, expected in PUBLISHED_GENERIC_COUNTS.items():
            path = Path(corpora_dir) / f"{name.lower()}.jsonl"
            ds = load_canonical_jsonl(path)
            out = collapse_labels(ds, mapping)
            counts = out.class_counts()
            for cls, want in expected.items():
                assert counts[cls] == want, f"{name} {cls}: {counts[cls]} != {want}"


def test_criterion_14_extended_reproduction():
    pytest.skip(
        "criterion 14 is an optional reproduction experiment (truncated biomedical "
        "corpus with user-supplied precomputed contextual embeddings, target "
        "weighted F1 >= 88); it is documented in README.md and not a CI check")
