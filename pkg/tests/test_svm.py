import io
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from interrec.pose_core import InteractionLabel as L
from interrec.svm import (DegenerateTraining, NonConvergenceWarning, OmittedPairWarning, SvcConfig,
                          SvmError, decision_value, dual_objective, load_model, predict, rbf,
                          rbf_matrix, save_model, smo_solve, train_binary, train_multiclass)

from oracles import dual_value, projected_gradient_dual

CFG = SvcConfig()
TWO_X = np.array([[0.0], [1.0]])
TWO_Y = np.array([1.0, -1.0])


def blobs(n_per, centers, spread=0.3, seed=0):
    rng = np.random.default_rng(seed)
    X = np.concatenate([rng.normal(c, spread, (n_per, len(c))) for c in centers])
    lab = np.repeat(np.arange(len(centers)), n_per)
    return X, lab


class TestRbf:
    def test_self(self):
        assert rbf([0.2, 0.3], [0.2, 0.3], 0.0625) == 1.0

    def test_unit_distance(self):
        assert rbf([0.0], [1.0], 0.0625) == pytest.approx(0.9394130628134758, abs=1e-15)

    def test_mismatch(self):
        with pytest.raises(SvmError):
            rbf([0.0, 1.0], [1.0], 0.5)

    def test_matrix_matches_scalar(self, rng):
        A, B = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
        K = rbf_matrix(A, B, 0.3)
        for i in range(4):
            for j in range(5):
                assert K[i, j] == pytest.approx(rbf(A[i], B[j], 0.3), rel=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(2, 8), st.integers(1, 4)),
                  elements=st.floats(-3, 3)))
    def test_gram_psd(self, X):
        ev = np.linalg.eigvalsh(rbf_matrix(X, X, 0.5))
        assert ev.min() > -1e-9


class TestTwoPoint:
    def test_alphas_at_bound(self):
        res = smo_solve(TWO_X, TWO_Y, CFG)
        np.testing.assert_allclose(res.alpha, [8.0, 8.0], atol=1e-12)
        assert res.converged

    def test_model(self):
        m = train_binary(TWO_X, TWO_Y, CFG)
        np.testing.assert_allclose(m.coef, [8.0, -8.0])
        assert abs(m.bias) <= 1e-6
        assert decision_value(m, [0.5]) == pytest.approx(0.0, abs=1e-12)

    def test_decision_at_training_points(self):
        m = train_binary(TWO_X, TWO_Y, CFG)
        expected = 8 * (1 - math.exp(-0.0625))
        assert decision_value(m, [0.0]) == pytest.approx(expected, abs=1e-6)
        assert decision_value(m, [1.0]) == pytest.approx(-expected, abs=1e-6)
        assert expected == pytest.approx(0.4847, abs=1e-4)

    def test_wrong_dimension(self):
        m = train_binary(TWO_X, TWO_Y, CFG)
        with pytest.raises(SvmError):
            decision_value(m, [0.0, 1.0])


class TestBinary:
    def test_separable_blobs(self):
        X, lab = blobs(20, [(0, 0), (3, 3)])
        y = np.where(lab == 0, 1.0, -1.0)
        m = train_binary(X, y, SvcConfig(gamma=0.5))
        assert np.all(np.sign(m.decision(X)) == y)

    def test_feasibility(self, rng):
        X = rng.normal(size=(30, 4))
        y = np.where(rng.random(30) < 0.5, 1.0, -1.0)
        y[:2] = [1, -1]
        res = smo_solve(X, y, SvcConfig(c=2.0, gamma=0.5))
        assert abs(res.alpha @ y) < 1e-9
        assert np.all(res.alpha >= 0) and np.all(res.alpha <= 2.0)

    def test_objective_matches_helper(self, rng):
        X = rng.normal(size=(12, 2))
        y = np.array([1.0, -1.0] * 6)
        res = smo_solve(X, y, CFG)
        assert dual_objective(res.alpha, X, y, CFG.gamma) == pytest.approx(
            dual_value(res.alpha, X, y, CFG.gamma), rel=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(DegenerateTraining):
            train_binary(TWO_X, np.array([1.0, 1.0]), CFG)

    def test_nan_rejected(self):
        with pytest.raises(SvmError, match="finite"):
            train_binary(np.array([[np.nan], [1.0]]), TWO_Y, CFG)

    def test_bad_labels(self):
        with pytest.raises(SvmError):
            smo_solve(TWO_X, np.array([1.0, 0.0]), CFG)

    def test_iteration_cap_warns(self, rng):
        X = rng.normal(size=(40, 3))
        y = np.where(rng.random(40) < 0.5, 1.0, -1.0)
        y[:2] = [1, -1]
        with pytest.warns(NonConvergenceWarning):
            m = train_binary(X, y, SvcConfig(c=100, gamma=2.0, tol=1e-12, max_passes=1))
        assert not m.converged

    def test_lru_path_matches_full_gram(self, rng):
        X = rng.normal(size=(25, 3))
        y = np.where(np.arange(25) % 2, 1.0, -1.0)
        full = smo_solve(X, y, CFG)
        tiny = smo_solve(X, y, SvcConfig(cache_mb=0.001))
        # row-wise and blocked kernel products round differently, so compare objectives
        assert dual_value(full.alpha, X, y, CFG.gamma) == pytest.approx(
            dual_value(tiny.alpha, X, y, CFG.gamma), abs=1e-3)

    @pytest.mark.parametrize("bad", [dict(c=0), dict(gamma=0), dict(tol=-1), dict(max_passes=0)])
    def test_config_validation(self, bad):
        with pytest.raises(SvmError):
            SvcConfig(**bad)


def test_oracle_agreement_small():
    rng = np.random.default_rng(3)
    for _ in range(5):
        n, d = int(rng.integers(6, 20)), int(rng.integers(1, 4))
        X = rng.normal(size=(n, d))
        y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        y[:2] = [1, -1]
        res = smo_solve(X, y, SvcConfig(c=1.0, gamma=0.5, tol=1e-5))
        _, ref = projected_gradient_dual(X, y, 1.0, 0.5, iters=3000)
        assert dual_value(res.alpha, X, y, 0.5) == pytest.approx(ref, abs=1e-3)


class TestMulticlass:
    def test_eight_classes(self):
        X, lab = blobs(5, [(3 * k, (-1) ** k) for k in range(8)], seed=1)
        m = train_multiclass(X, [L(v) for v in lab], SvcConfig(gamma=0.5))
        assert len(m.binaries) == 28
        assert [int(p) for p in m.predict_many(X)] == lab.tolist()

    def test_two_classes(self):
        X, lab = blobs(5, [(0, 0), (3, 3)])
        m = train_multiclass(X, [L(v) for v in lab], CFG)
        assert len(m.binaries) == 1

    def test_three_class_toy(self):
        X, lab = blobs(10, [(0, 0), (4, 0), (0, 4)], seed=2)
        labels = [L.KICKING, L.HUGGING, L.PUSHING]
        ys = [labels[v] for v in lab]
        m = train_multiclass(X, ys, SvcConfig(gamma=0.5))
        assert predict(m, np.array([4.1, 0.1])) is L.HUGGING
        assert predict(m, np.array([0.0, 3.9])) is L.PUSHING
        assert sum(p == t for p, t in zip(m.predict_many(X), ys)) == 30

    def test_bit_identical_retrain(self):
        X, lab = blobs(6, [(0, 0), (2, 0), (0, 2)], spread=0.8, seed=4)
        a = train_multiclass(X, [L(v) for v in lab], CFG)
        b = train_multiclass(X, [L(v) for v in lab], CFG)
        for p, q in zip(a.binaries, b.binaries):
            assert p.coef.tobytes() == q.coef.tobytes() and p.bias == q.bias

    def test_tie_rule_with_forced_votes(self):
        X, lab = blobs(3, [(0, 0), (3, 0), (0, 3)])
        m = train_multiclass(X, [L(v + 2) for v in lab], CFG)
        for b in m.binaries:
            b.coef = np.zeros(0)
            b.support_vectors = np.zeros((0, 2))
        # bias 0 votes for the first class of every pair: 2->2 votes, 3->1, 4->0
        for b in m.binaries:
            b.bias = 0.0
        assert predict(m, np.zeros(2)) is L.PUNCHING
        # make it a 3-way tie: (2,3)->2, (2,4)->4, (3,4)->3
        m.binaries[1].bias = -1.0
        assert list(m.votes(np.zeros((1, 2)))[0][2:5]) == [1, 1, 1]
        assert predict(m, np.zeros(2)) is L.PUNCHING

    def test_single_label_rejected(self):
        with pytest.raises(DegenerateTraining):
            train_multiclass(np.zeros((3, 2)), [L.HUGGING] * 3, CFG)

    def test_omitted_pair_warns(self):
        X, lab = blobs(3, [(0, 0), (3, 0)])
        with pytest.warns(OmittedPairWarning):
            m = train_multiclass(X, [L(v) for v in lab], CFG, classes=[L(0), L(1), L(2)])
        assert len(m.binaries) == 1 and m.warnings

    def test_nan_rejected(self):
        X = np.zeros((4, 2))
        X[1, 1] = np.inf
        with pytest.raises(SvmError):
            train_multiclass(X, [L(0), L(0), L(1), L(1)], CFG)

    def test_dimension_mismatch_on_predict(self):
        X, lab = blobs(3, [(0, 0), (3, 0)])
        m = train_multiclass(X, [L(v) for v in lab], CFG)
        with pytest.raises(SvmError):
            predict(m, np.zeros(3))

    def test_standardize(self):
        X, lab = blobs(8, [(0, 0), (300, 0)], spread=30)
        m = train_multiclass(X, [L(v) for v in lab], SvcConfig(standardize=True))
        assert [int(p) for p in m.predict_many(X)] == lab.tolist()


def test_persistence_round_trip(rng):
    X, lab = blobs(6, [(0, 0), (2, 1), (1, 3)], spread=0.7)
    m = train_multiclass(X, [L(v) for v in lab], SvcConfig(standardize=True))
    buf = io.StringIO()
    save_model(m, buf)
    m2 = load_model(io.StringIO(buf.getvalue()))
    probe = rng.normal(size=(40, 2)) * 2
    for a, b in zip(m.binaries, m2.binaries):
        assert np.array_equal(a.decision((probe - m.scale_mean) / m.scale_std),
                              b.decision((probe - m2.scale_mean) / m2.scale_std))
    assert m.predict_many(probe) == m2.predict_many(probe)


def test_load_rejects_foreign_json():
    with pytest.raises(SvmError):
        load_model(io.StringIO('{"format": "other"}'))
