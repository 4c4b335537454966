import numpy as np
import pytest
import scipy.optimize

from eegphon.baselines import (Standardizer, acoustic_only, fit_lda,
                               fit_logistic_regression, pool_features,
                               pooled_lr_accuracy)
from eegphon.core import PHONEMES, EpochSet, LabelRecord


def _epochs_of(data):
    labels = tuple(LabelRecord.create("S01", "b") for _ in range(data.shape[0]))
    return EpochSet(data=data, labels=labels, feature_kind="ERP")


class TestPoolFeatures:
    def test_constant_epoch(self):
        data = np.full((1, 10, 3), 7.0)
        feats = pool_features(_epochs_of(data))
        assert feats.shape == (1, 6)
        assert np.allclose(feats[0, :3], 7.0)   # means
        assert np.allclose(feats[0, 3:], 0.0)   # stds

    def test_column_counts(self, rng):
        feats = pool_features(_epochs_of(rng.standard_normal((5, 20, 64))))
        assert feats.shape == (5, 128)
        feats = pool_features(_epochs_of(rng.standard_normal((5, 20, 192))))
        assert feats.shape == (5, 384)

    def test_permutation_equivariance(self, rng):
        data = rng.standard_normal((8, 15, 4))
        feats = pool_features(_epochs_of(data))
        perm = rng.permutation(8)
        feats_p = pool_features(_epochs_of(data[perm]))
        assert np.array_equal(feats[perm], feats_p)

    def test_empty_rejected(self):
        es = EpochSet(data=np.zeros((0, 5, 2)), labels=(), feature_kind="ERP")
        with pytest.raises(ValueError):
            pool_features(es)


def _blobs(rng, n=60, shift=4.0, d=5, k=2):
    y = np.arange(n) % k
    x = rng.standard_normal((n, d))
    for c in range(k):
        x[y == c, c % d] += shift * (c + 1)
    return x, y


class TestLogisticRegression:
    def test_separable_blobs_perfect(self, rng):
        x, y = _blobs(rng)
        model = fit_logistic_regression(x, y)
        assert float(np.mean(model.predict(x) == y)) == 1.0

    def test_shuffled_labels_chance(self, rng):
        accs = []
        for seed in range(8):
            r = np.random.default_rng(seed)
            x = r.standard_normal((80, 5))
            y = r.permutation(np.arange(80) % 2)
            xt = r.standard_normal((200, 5))
            yt = r.integers(0, 2, 200)
            model = fit_logistic_regression(x, y)
            accs.append(float(np.mean(model.predict(xt) == yt)))
        assert abs(np.mean(accs) - 0.5) < 0.06

    def test_scipy_convex_oracle_decision_identical(self, rng):
        # same objective optimized by an independent optimizer
        x, y = _blobs(rng, n=40, shift=2.0, d=3, k=3)
        l2 = 1.0
        model = fit_logistic_regression(x, y, l2=l2)

        n, d = x.shape
        k = 3
        xb = np.concatenate([x, np.ones((n, 1))], axis=1)
        onehot = np.eye(k)[y]

        def objective(w_flat):
            w = w_flat.reshape(d + 1, k)
            z = xb @ w
            z -= z.max(axis=1, keepdims=True)
            log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
            nll = -np.sum(onehot * log_probs) / n
            return nll + 0.5 * l2 * np.sum(w[:-1] ** 2) / n

        res = scipy.optimize.minimize(objective, np.zeros((d + 1) * k),
                                      method="L-BFGS-B",
                                      options={"maxiter": 2000})
        w_ref = res.x.reshape(d + 1, k)
        ref_preds = np.argmax(xb @ w_ref, axis=1)
        got_preds = np.searchsorted(model.classes,
                                    model.predict(x))
        assert np.array_equal(got_preds, ref_preds)

    def test_huge_l2_majority_class(self, rng):
        x = rng.standard_normal((50, 3))
        y = np.array([0] * 35 + [1] * 15)
        model = fit_logistic_regression(x, y, l2=1e8)
        preds = model.predict(x)
        assert np.mean(preds == 0) > 0.95

    def test_single_class_rejected(self, rng):
        with pytest.raises(ValueError):
            fit_logistic_regression(rng.standard_normal((10, 2)), np.zeros(10))

    def test_convergence_flag(self, rng):
        x, y = _blobs(rng, n=30)
        model = fit_logistic_regression(x, y, max_iter=2)
        assert not model.converged   # cap hit, predictions still usable
        assert model.predict(x).shape == (30,)


class TestLda:
    def test_separated_gaussians(self, rng):
        n = 200
        y = np.arange(n) % 2
        x = rng.standard_normal((n, 4))
        x[y == 1, 0] += 5.0
        model = fit_lda(x, y)
        xt = rng.standard_normal((100, 4))
        yt = np.arange(100) % 2
        xt[yt == 1, 0] += 5.0
        assert np.mean(model.predict(xt) == yt) > 0.95

    def test_identical_distributions_chance(self, rng):
        accs = []
        for seed in range(6):
            r = np.random.default_rng(seed)
            x = r.standard_normal((100, 4))
            y = np.arange(100) % 2
            model = fit_lda(x, y)
            xt = r.standard_normal((200, 4))
            yt = np.arange(200) % 2
            accs.append(np.mean(model.predict(xt) == yt))
        assert abs(np.mean(accs) - 0.5) < 0.07

    def test_hand_computed_2d_boundary(self):
        # equal priors, identity covariance: boundary is the perpendicular
        # bisector of the class means; discriminant difference is analytic
        mu0, mu1 = np.array([-1.0, 0.0]), np.array([1.0, 0.0])
        rng = np.random.default_rng(5)
        x0 = rng.standard_normal((2000, 2)) + mu0
        x1 = rng.standard_normal((2000, 2)) + mu1
        x = np.vstack([x0, x1])
        y = np.array([0] * 2000 + [1] * 2000)
        model = fit_lda(x, y, shrinkage=0.0)
        # hand discriminant with the same estimated moments
        means = np.stack([x0.mean(axis=0), x1.mean(axis=0)])
        pooled = ((x0 - means[0]).T @ (x0 - means[0])
                  + (x1 - means[1]).T @ (x1 - means[1])) / (4000 - 2)
        pooled = pooled + 1e-12 * np.eye(2) * max(np.trace(pooled) / 2, 1.0)
        inv = np.linalg.inv(pooled)
        pts = rng.standard_normal((50, 2)) * 2
        hand = (pts @ inv @ means.T
                - 0.5 * np.sum((means @ inv) * means, axis=1)
                + np.log(0.5))
        got = model.decision(pts)
        assert np.abs(got - hand).max() < 1e-9

    def test_singular_covariance_escalates(self, rng):
        x = np.zeros((20, 3))
        x[:, 0] = rng.standard_normal(20)    # two constant columns
        y = np.arange(20) % 2
        model = fit_lda(x, y, shrinkage=0.0)
        assert model.predict(x).shape == (20,)


class TestAcoustic:
    def _labels(self, subjects=("S01", "S02"), reps=3):
        labels = []
        for s in subjects:
            for _ in range(reps):
                for p in PHONEMES:
                    labels.append(LabelRecord.create(s, p))
        return labels

    def test_binary_tasks_perfect(self):
        labels = self._labels()
        cons = [l for l in labels if l.category == "consonant"]
        train = [l for l in cons if l.subject == "S01"]
        test = [l for l in cons if l.subject == "S02"]
        for task in ("manner", "place", "voicing"):
            assert acoustic_only(train, test, task) == 1.0

    def test_phoneme_identity_perfect(self):
        labels = self._labels()
        train = [l for l in labels if l.subject == "S01"]
        test = [l for l in labels if l.subject == "S02"]
        assert acoustic_only(train, test, "phoneme") == 1.0

    def test_constant_features_majority(self, rng):
        # replacing informative features with constants -> majority class
        y = np.array([0] * 30 + [1] * 10)
        x = np.ones((40, 2))
        model = fit_logistic_regression(x, y)
        assert np.mean(model.predict(x) == 0) == 1.0


class TestStandardizer:
    def test_no_eval_leakage(self, rng):
        train = rng.standard_normal((30, 4)) * 3 + 1
        scaler = Standardizer.fit(train)
        eval_a = rng.standard_normal((10, 4)) * 100
        eval_b = rng.standard_normal((10, 4)) * 0.001
        # the transform is a fixed affine map from train stats only:
        # transforming different eval sets applies identical parameters
        assert np.allclose(scaler.apply(eval_a) * scaler.std + scaler.mean,
                           eval_a)
        assert np.allclose(scaler.apply(eval_b) * scaler.std + scaler.mean,
                           eval_b)
        got = scaler.apply(train)
        assert np.abs(got.mean(axis=0)).max() < 1e-12

    def test_constant_column_safe(self):
        train = np.ones((10, 2))
        scaler = Standardizer.fit(train)
        out = scaler.apply(train)
        assert np.isfinite(out).all()


def test_pooled_lr_accuracy_end_to_end(rng):
    x, y = _blobs(rng, n=60)
    xt, yt = _blobs(rng, n=30)
    assert pooled_lr_accuracy(x, y, xt, yt) == 1.0
