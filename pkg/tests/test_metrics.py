import numpy as np
import pytest
from sklearn.metrics import accuracy_score, f1_score

from sentseq import errors
from sentseq.metrics import confusion, evaluate_predictions, report


def test_confusion_perfect_is_diagonal():
    cm = confusion([0, 1, 2, 1], [0, 1, 2, 1], 3)
    assert np.array_equal(cm, np.diag([1, 2, 1]))


def test_confusion_anti_diagonal():
    cm = confusion([0, 1], [1, 0], 2)
    assert np.array_equal(cm, np.array([[0, 1], [1, 0]]))


def test_confusion_length_mismatch():
    with pytest.raises(errors.LengthMismatch):
        confusion([0, 1], [0], 2)


def test_confusion_row_sums_match_gold_counts():
    rng = np.random.default_rng(0)
    gold = rng.integers(0, 5, size=1000)
    pred = rng.integers(0, 5, size=1000)
    cm = confusion(gold, pred, 5)
    for c in range(5):
        assert cm[c].sum() == int((gold == c).sum())
    assert cm.sum() == 1000


def test_report_perfect():
    rep = report(np.diag([3, 4, 5]))
    assert rep.weighted_f1 == 1.0
    assert rep.accuracy == 1.0
    assert rep.per_class_f1 == (1.0, 1.0, 1.0)


def test_report_hand_arithmetic():
    # class 0: P=1, R=1/2 -> F1=2/3; class 1: P=2/3, R=1 -> F1=4/5
    # weighted F1 = 1/2 * 2/3 + 1/2 * 4/5 = 11/15; accuracy = 15/20
    rep = report(np.array([[5, 5], [0, 10]]))
    assert rep.per_class_f1[0] == pytest.approx(2 / 3, abs=1e-12)
    assert rep.per_class_f1[1] == pytest.approx(0.8, abs=1e-12)
    assert rep.weighted_f1 == pytest.approx(11 / 15, abs=1e-12)
    assert rep.accuracy == pytest.approx(0.75, abs=1e-12)
    assert rep.support == (10, 10)


def test_report_zero_support_class():
    rep = report(np.array([[4, 0, 0], [0, 6, 0], [0, 0, 0]]))
    assert rep.per_class_f1[2] == 0.0
    assert rep.weighted_f1 == 1.0  # zero-support class carries zero weight
    assert rep.accuracy == 1.0


def test_report_zero_division_f1_is_zero():
    # class 1 never occurs in gold or predictions at all
    rep = report(np.array([[7, 0], [0, 0]]))
    assert rep.per_class_f1[1] == 0.0


def test_report_empty_matrix():
    with pytest.raises(errors.EmptyMatrix):
        report(np.zeros((2, 2), dtype=int))


def test_report_matches_sklearn_on_random_data():
    rng = np.random.default_rng(42)
    gold = rng.integers(0, 4, size=500)
    pred = rng.integers(0, 4, size=500)
    rep = report(confusion(gold, pred, 4))
    assert rep.weighted_f1 == pytest.approx(
        f1_score(gold, pred, average="weighted", zero_division=0), abs=1e-12)
    assert rep.accuracy == pytest.approx(accuracy_score(gold, pred), abs=1e-12)


def test_report_permutation_equivariant():
    rng = np.random.default_rng(7)
    cm = rng.integers(0, 20, size=(4, 4))
    cm[0, 0] += 5
    base = report(cm)
    perm = np.array([2, 0, 3, 1])
    permuted = report(cm[np.ix_(perm, perm)])
    assert permuted.accuracy == pytest.approx(base.accuracy, abs=1e-12)
    assert permuted.weighted_f1 == pytest.approx(base.weighted_f1, abs=1e-12)
    for new_i, old_i in enumerate(perm):
        assert permuted.per_class_f1[new_i] == pytest.approx(
            base.per_class_f1[old_i], abs=1e-12)


def test_accuracy_equals_weighted_recall_and_f1_bounds():
    rng = np.random.default_rng(3)
    cm = rng.integers(0, 15, size=(3, 3))
    cm += np.eye(3, dtype=cm.dtype)  # ensure non-empty
    rep = report(cm)
    support = cm.sum(axis=1)
    recalls = np.divide(np.diag(cm), support, out=np.zeros(3), where=support > 0)
    weighted_recall = float((support / cm.sum() * recalls).sum())
    assert rep.accuracy == pytest.approx(weighted_recall, abs=1e-12)
    supported = [rep.per_class_f1[i] for i in range(3) if support[i] > 0]
    assert min(supported) - 1e-12 <= rep.weighted_f1 <= max(supported) + 1e-12


def test_evaluate_predictions_flattens_sequences():
    rep = evaluate_predictions([[0, 1], [1]], [[0, 1], [0]], 2)
    assert rep.accuracy == pytest.approx(2 / 3)
