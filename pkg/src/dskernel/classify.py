"""Precomputed-kernel classifiers: k-NN and one-vs-one SVM with max-wins voting.

Every routine takes Gram matrices rather than samples, so any kernel from the
other modules (SK, DSK, the metric kernels) plugs in unchanged. ``k_cross`` is
always the ``(n_test, n_train)`` block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .criteria import SvmDual, class_pairs, solve_svm_dual
from .errors import EmptyTrainingSet, Infeasible, LengthMismatch

K_GRID = tuple(range(1, 12, 2))


@dataclass(frozen=True)
class KnnConfig:
    k: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")


def knn_predict(
    k_cross: np.ndarray,
    train_labels,
    cfg: KnnConfig = KnnConfig(),
    test_diag: np.ndarray | None = None,
    train_diag: np.ndarray | None = None,
) -> np.ndarray:
    """Majority vote among the ``k`` nearest training samples.

    Distances are ``k(x,x) + k(y,y) - 2 k(x,y)``; omitted diagonals default to
    ones (normalized kernels). Distance ties go to the lower training index,
    vote ties to the smaller label.
    """
    train_labels = np.asarray(train_labels)
    k_cross = np.atleast_2d(np.asarray(k_cross, dtype=float))
    n_train = train_labels.size
    if n_train == 0:
        raise EmptyTrainingSet("k-NN needs at least one training sample")
    if k_cross.shape[1] != n_train:
        raise LengthMismatch(f"kernel has {k_cross.shape[1]} columns for {n_train} training labels")
    if cfg.k > n_train:
        raise ValueError(f"k={cfg.k} exceeds the training size {n_train}")
    tx = np.ones(k_cross.shape[0]) if test_diag is None else np.asarray(test_diag, dtype=float)
    ty = np.ones(n_train) if train_diag is None else np.asarray(train_diag, dtype=float)
    dist = tx[:, None] + ty[None, :] - 2.0 * k_cross
    order = np.argsort(dist, axis=1, kind="stable")[:, : cfg.k]
    classes = np.unique(train_labels)
    out = np.empty(k_cross.shape[0], dtype=train_labels.dtype)
    for r, nearest in enumerate(order):
        counts = np.array([np.sum(train_labels[nearest] == c) for c in classes])
        out[r] = classes[int(np.argmax(counts))]
    return out


@dataclass(frozen=True)
class PairSvm:
    pair: tuple[int, int]
    index: np.ndarray  # positions in the training set
    t: np.ndarray  # +1 for pair[0], -1 for pair[1]
    dual: SvmDual

    @property
    def bias(self) -> float:
        return self.dual.bias

    def decision(self, k_cross: np.ndarray) -> np.ndarray:
        return k_cross[:, self.index] @ (self.dual.eta * self.t) + self.bias


@dataclass(frozen=True)
class OvoSvmModel:
    classes: tuple[int, ...]
    c: float
    machines: tuple[PairSvm, ...]

    def duals(self) -> dict:
        return {m.pair: (m.dual.eta, m.dual.bias) for m in self.machines}


def ovo_train(k_train: np.ndarray, labels, c: float, **qp_options) -> OvoSvmModel:
    """One L2-margin SVM per class pair, each on ``K + I/C`` restricted to the pair."""
    labels = np.asarray(labels)
    k_train = np.asarray(k_train, dtype=float)
    if not c > 0:
        raise ValueError("C must be positive")
    if k_train.shape != (labels.size, labels.size):
        raise LengthMismatch("training Gram matrix and labels disagree in size")
    classes = tuple(int(v) for v in np.unique(labels))
    if len(classes) < 2:
        raise ValueError("one-vs-one SVM needs at least two classes")
    machines = []
    for a, b in class_pairs(classes):
        idx = np.flatnonzero((labels == a) | (labels == b))
        t = np.where(labels[idx] == a, 1.0, -1.0)
        kt = k_train[np.ix_(idx, idx)] + np.eye(idx.size) / c
        try:
            dual = solve_svm_dual(kt, t, **qp_options)
        except Infeasible as exc:
            raise Infeasible(f"class pair {(a, b)}: {exc}", pair=(a, b)) from exc
        machines.append(PairSvm((a, b), idx, t, dual))
    return OvoSvmModel(classes, c, tuple(machines))


def ovo_scores(model: OvoSvmModel, k_cross: np.ndarray) -> np.ndarray:
    """Antisymmetric score tensor ``s[n, i, j]`` over class positions."""
    k_cross = np.atleast_2d(np.asarray(k_cross, dtype=float))
    pos = {c: i for i, c in enumerate(model.classes)}
    m = len(model.classes)
    s = np.zeros((k_cross.shape[0], m, m))
    for svm in model.machines:
        i, j = pos[svm.pair[0]], pos[svm.pair[1]]
        v = svm.decision(k_cross)
        s[:, i, j] = v
        s[:, j, i] = -v
    return s


def ovo_predict(model: OvoSvmModel, k_cross: np.ndarray) -> np.ndarray:
    """Max-wins rule: argmax over classes of the summed signs; ties go to the smaller label."""
    votes = np.sign(ovo_scores(model, k_cross)).sum(axis=2)
    return np.asarray(model.classes)[np.argmax(votes, axis=1)]


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class Evaluation:
    accuracy: float
    per_class: dict
    confusion: np.ndarray  # rows: truth, columns: prediction, over ``labels``
    labels: tuple


def evaluate(predictions, truth) -> Evaluation:
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape:
        raise LengthMismatch(f"{predictions.size} predictions for {truth.size} labels")
    if truth.size == 0:
        raise LengthMismatch("nothing to evaluate")
    labels = tuple(int(v) for v in np.union1d(truth, predictions))
    pos = {c: i for i, c in enumerate(labels)}
    confusion = np.zeros((len(labels), len(labels)), dtype=int)
    for t, p in zip(truth, predictions):
        confusion[pos[int(t)], pos[int(p)]] += 1
    per_class = {
        int(c): float(np.mean(predictions[truth == c] == c)) for c in np.unique(truth)
    }
    return Evaluation(float(np.mean(predictions == truth)), per_class, confusion, labels)


def paired_t_test(a, b) -> tuple[float, float]:
    """Two-sided paired t-test on per-split scores; returns ``(t, p)``.

    Zero-variance differences are resolved by convention: p = 1 when the mean
    difference is zero too, p = 0 otherwise (t is then 0 or signed infinity).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"paired vectors have lengths {a.size} and {b.size}")
    if a.size < 2:
        raise ValueError("a paired t-test needs at least two splits")
    diff = a - b
    if np.all(diff == diff[0]):
        mean = float(diff[0])
        if mean == 0.0:
            return 0.0, 1.0
        return float(np.copysign(np.inf, mean)), 0.0
    res = stats.ttest_rel(a, b)
    return float(res.statistic), float(res.pvalue)
