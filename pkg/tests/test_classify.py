import numpy as np
import pytest
from scipy import stats

from dskernel.classify import (
    K_GRID,
    KnnConfig,
    evaluate,
    knn_predict,
    ovo_predict,
    ovo_scores,
    ovo_train,
    paired_t_test,
)
from dskernel.criteria import solve_svm_dual
from dskernel.errors import EmptyTrainingSet, Infeasible, LengthMismatch
from dskernel.spd import stein_gram


class TestKnn:
    def test_grid(self):
        assert K_GRID == (1, 3, 5, 7, 9, 11)

    def test_exact_match(self, small_task):
        k = stein_gram(list(small_task.samples), theta=1.0)
        pred = knn_predict(k, small_task.labels, KnnConfig(1))
        assert np.array_equal(pred, small_task.labels)

    def test_hand_dataset(self):
        # explicit Gram with unnormalized diagonals; distances sorted by hand
        k_train = np.diag([1.0, 4.0, 2.0])
        labels = np.array([2, 1, 1])
        k_cross = np.array([[0.2, 1.5, 0.9]])
        test_diag = np.array([1.0])
        d2 = 1.0 + np.diag(k_train) - 2 * k_cross[0]
        order = np.argsort(d2, kind="stable")
        for k in (1, 3):
            votes = np.bincount(labels[order[:k]], minlength=3)
            want = int(np.argmax(votes))
            got = knn_predict(k_cross, labels, KnnConfig(k), test_diag, np.diag(k_train))
            assert got[0] == want

    def test_normalized_ranking(self, rng):
        k_cross = rng.uniform(0.1, 0.9, (6, 9))
        labels = rng.integers(1, 4, 9)
        for k in (1, 3, 5):
            by_dist = knn_predict(k_cross, labels, KnnConfig(k))
            by_sim = knn_predict(np.exp(3 * k_cross) / np.exp(3.0), labels, KnnConfig(k))
            assert np.array_equal(by_dist, by_sim)

    def test_vote_tie_smallest_label(self):
        pred = knn_predict(np.array([[0.9, 0.8, 0.1]]), np.array([3, 2, 1]), KnnConfig(2))
        assert pred[0] == 2

    def test_distance_tie_lowest_index(self):
        pred = knn_predict(np.array([[0.5, 0.5]]), np.array([2, 1]), KnnConfig(1))
        assert pred[0] == 2

    def test_errors(self):
        with pytest.raises(EmptyTrainingSet):
            knn_predict(np.zeros((1, 0)), np.array([], dtype=int))
        with pytest.raises(ValueError):
            knn_predict(np.zeros((1, 2)), np.array([1, 2]), KnnConfig(3))
        with pytest.raises(ValueError):
            KnnConfig(0)


class TestOvo:
    def test_binary_agrees_with_dual(self, small_task):
        k = stein_gram(list(small_task.samples), theta=1.0)
        model = ovo_train(k, small_task.labels, 2.0)
        assert len(model.machines) == 1
        t = np.where(small_task.labels == 1, 1.0, -1.0)
        dual = solve_svm_dual(k + np.eye(12) / 2.0, t)
        assert np.allclose(model.machines[0].dual.eta, dual.eta)
        scores = k @ (dual.eta * t) + dual.bias
        assert np.array_equal(ovo_predict(model, k), np.where(scores > 0, 1, 2))

    def test_degenerate_pair(self):
        k = np.ones((2, 2))
        with pytest.raises(Infeasible) as info:
            ovo_train(k, np.array([1, 2]), 1e300)
        assert info.value.pair == (1, 2)

    def test_three_class_pairs(self, three_class):
        k = stein_gram(list(three_class.samples), theta=1.0)
        model = ovo_train(k, three_class.labels, 10.0)
        assert [m.pair for m in model.machines] == [(1, 2), (1, 3), (2, 3)]
        for m in model.machines:
            a, b = m.pair
            idx = np.flatnonzero(np.isin(three_class.labels, (a, b)))
            t = np.where(three_class.labels[idx] == a, 1.0, -1.0)
            ref = solve_svm_dual(k[np.ix_(idx, idx)] + np.eye(idx.size) / 10.0, t)
            assert m.dual.objective == pytest.approx(ref.objective, rel=1e-10)

    def test_vote_table(self, three_class):
        k = stein_gram(list(three_class.samples), theta=1.0)
        model = ovo_train(k, three_class.labels, 10.0)
        s = ovo_scores(model, k)
        pred = ovo_predict(model, k)
        for n in range(len(three_class)):
            table = {c: 0 for c in (1, 2, 3)}
            for i in range(3):
                for j in range(3):
                    if i != j:
                        table[i + 1] += np.sign(s[n, i, j])
            best = max(table.values())
            assert pred[n] == min(c for c, v in table.items() if v == best)

    def test_training_accuracy_separable(self, three_class):
        k = stein_gram(list(three_class.samples), theta=1.0)
        model = ovo_train(k, three_class.labels, 1e6)
        assert np.array_equal(ovo_predict(model, k), three_class.labels)

    def test_vote_tie_smallest_label(self):
        # a perfect cycle: every class wins once, loses once
        from dskernel.classify import OvoSvmModel

        class Fixed:
            def __init__(self, pair, value):
                self.pair, self.value = pair, value

            def decision(self, k_cross):
                return np.full(k_cross.shape[0], self.value)

        model = OvoSvmModel((1, 2, 3), 1.0, (Fixed((1, 2), 1.0), Fixed((1, 3), -1.0), Fixed((2, 3), 1.0)))
        assert ovo_predict(model, np.zeros((1, 1)))[0] == 1


class TestEvaluate:
    def test_perfect(self):
        ev = evaluate(np.array([1, 2, 2]), np.array([1, 2, 2]))
        assert ev.accuracy == 1.0 and ev.per_class == {1: 1.0, 2: 1.0}

    def test_confusion_and_weights(self, rng):
        truth = rng.integers(1, 4, 50)
        pred = np.where(rng.uniform(size=50) < 0.7, truth, rng.integers(1, 4, 50))
        ev = evaluate(pred, truth)
        assert ev.confusion.sum() == 50
        assert 0 <= ev.accuracy <= 1
        weighted = sum(ev.per_class[c] * np.sum(truth == c) for c in ev.per_class) / 50
        assert weighted == pytest.approx(ev.accuracy, abs=1e-12)
        assert np.trace(ev.confusion) == np.sum(pred == truth)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            evaluate(np.array([1]), np.array([1, 2]))


class TestTTest:
    def test_identical(self):
        a = np.array([0.8, 0.9, 0.85])
        assert paired_t_test(a, a) == (0.0, 1.0)

    def test_constant_shift(self):
        a = np.array([0.8, 0.9, 0.85])
        t, p = paired_t_test(a + 0.01, a)
        assert p == 0.0 and t == np.inf

    def test_textbook_formula(self, rng):
        a = rng.uniform(0.7, 0.9, 20)
        b = a - rng.normal(0.01, 0.02, 20)
        d = a - b
        t_want = d.mean() / (d.std(ddof=1) / np.sqrt(20))
        p_want = 2 * stats.t.sf(abs(t_want), 19)
        t, p = paired_t_test(a, b)
        assert t == pytest.approx(t_want, abs=1e-10)
        assert p == pytest.approx(p_want, abs=1e-10)

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            paired_t_test([1, 2], [1, 2, 3])
        with pytest.raises(ValueError):
            paired_t_test([1.0], [1.0])
