"""Classical matched-split comparators: pooled features, multinomial logistic
regression, shrinkage LDA, and the acoustic-only metadata baseline.

The LR optimizer is deterministic full-batch gradient descent with a
backtracking line search, so permutation-test results do not depend on any
stochastic optimizer state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import PHONEME_INDEX, EpochSet, LabelRecord


def pool_features(epochs: EpochSet) -> np.ndarray:
    """Per trial: mean and std over time of each feature channel, [means|stds].

    ERP with C channels gives 2C columns; DDA with 3C features gives 6C.
    """
    if epochs.n_epochs == 0:
        raise ValueError("empty EpochSet")
    means = epochs.data.mean(axis=1)
    stds = epochs.data.std(axis=1)
    return np.concatenate([means, stds], axis=1)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, train: np.ndarray) -> "Standardizer":
        mean = train.mean(axis=0)
        std = train.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)
        return cls(mean=mean, std=std)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class LogisticRegressionModel:
    weights: np.ndarray       # (n_features + 1) x n_classes, bias row last
    classes: np.ndarray
    converged: bool
    n_iter: int

    def decision(self, x: np.ndarray) -> np.ndarray:
        xb = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
        return xb @ self.weights

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(self.decision(x), axis=1)]


def _lr_objective(w: np.ndarray, xb: np.ndarray, y_onehot: np.ndarray,
                  l2: float) -> tuple[float, np.ndarray]:
    n = xb.shape[0]
    probs = _softmax(xb @ w)
    nll = -np.sum(y_onehot * np.log(np.clip(probs, 1e-300, None))) / n
    penalty = 0.5 * l2 * np.sum(w[:-1] ** 2) / n   # bias unpenalized
    grad = xb.T @ (probs - y_onehot) / n
    grad[:-1] += l2 * w[:-1] / n
    return nll + penalty, grad


def fit_logistic_regression(x: np.ndarray, y: Sequence[int], l2: float = 1.0,
                            tol: float = 1e-6, max_iter: int = 1000
                            ) -> LogisticRegressionModel:
    """Multinomial LR with L2 penalty, full-batch gradient descent.

    Stops at gradient norm <= tol or the iteration cap; non-convergence is
    flagged but the fitted weights are still usable.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError(f"need >= 2 classes in training data, got {len(classes)}")
    class_idx = np.searchsorted(classes, y)
    n, d = x.shape
    k = len(classes)
    y_onehot = np.zeros((n, k))
    y_onehot[np.arange(n), class_idx] = 1.0
    xb = np.concatenate([x, np.ones((n, 1))], axis=1)

    w = np.zeros((d + 1, k))
    step = 1.0
    loss, grad = _lr_objective(w, xb, y_onehot, l2)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = np.linalg.norm(grad)
        if gnorm <= tol:
            converged = True
            break
        # backtracking line search (Armijo)
        step = min(step * 2.0, 1e6)
        g2 = gnorm ** 2
        while True:
            w_new = w - step * grad
            loss_new, grad_new = _lr_objective(w_new, xb, y_onehot, l2)
            if loss_new <= loss - 1e-4 * step * g2 or step < 1e-16:
                break
            step *= 0.5
        w, loss, grad = w_new, loss_new, grad_new
    return LogisticRegressionModel(weights=w, classes=classes,
                                   converged=converged, n_iter=it)


def pooled_lr_accuracy(train_x: np.ndarray, train_y: np.ndarray,
                       test_x: np.ndarray, test_y: np.ndarray,
                       l2: float = 1.0) -> float:
    """Fixed-settings pooled-LR decode used by the confound controls."""
    scaler = Standardizer.fit(train_x)
    model = fit_logistic_regression(scaler.apply(train_x), train_y, l2=l2)
    preds = model.predict(scaler.apply(test_x))
    return float(np.mean(preds == np.asarray(test_y)))


@dataclass
class LdaModel:
    means: np.ndarray         # n_classes x n_features
    cov_inv: np.ndarray
    log_priors: np.ndarray
    classes: np.ndarray
    shrinkage: float
    escalated: bool

    def decision(self, x: np.ndarray) -> np.ndarray:
        # delta_c(x) = x' S^-1 mu_c - mu_c' S^-1 mu_c / 2 + log pi_c
        a = self.means @ self.cov_inv                     # classes x features
        return x @ a.T - 0.5 * np.sum(a * self.means, axis=1) + self.log_priors

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(self.decision(x), axis=1)]


def fit_lda(x: np.ndarray, y: Sequence[int], shrinkage: float = 0.1) -> LdaModel:
    """Shared-covariance linear discriminant with shrinkage toward diagonal.

    A singular pooled covariance escalates the shrinkage (flagged) until the
    solve succeeds.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("need >= 2 classes")
    n, d = x.shape
    means = np.stack([x[y == c].mean(axis=0) for c in classes])
    pooled = np.zeros((d, d))
    for i, c in enumerate(classes):
        xc = x[y == c] - means[i]
        pooled += xc.T @ xc
    pooled /= max(n - len(classes), 1)
    priors = np.array([(y == c).mean() for c in classes])

    gamma = shrinkage
    escalated = False
    while True:
        cov = (1.0 - gamma) * pooled + gamma * np.diag(np.diag(pooled))
        # guard fully-zero diagonals
        cov = cov + 1e-12 * np.eye(d) * max(np.trace(pooled) / d, 1.0)
        try:
            cov_inv = np.linalg.inv(cov)
            cond_ok = np.linalg.cond(cov) < 1e12
        except np.linalg.LinAlgError:
            cond_ok = False
        if cond_ok:
            break
        escalated = True
        gamma = min(1.0, gamma * 2.0 + 1e-3)
        if gamma >= 1.0:
            cov = np.diag(np.diag(pooled)) + 1e-9 * np.eye(d)
            cov_inv = np.linalg.inv(cov)
            break
    return LdaModel(means=means, cov_inv=cov_inv,
                    log_priors=np.log(np.clip(priors, 1e-300, None)),
                    classes=classes, shrinkage=gamma, escalated=escalated)


def phoneme_onehot(labels: Sequence[LabelRecord]) -> np.ndarray:
    """One-hot phoneme-identity metadata features (the acoustic baseline)."""
    out = np.zeros((len(labels), len(PHONEME_INDEX)))
    for i, lab in enumerate(labels):
        out[i, PHONEME_INDEX[lab.phoneme]] = 1.0
    return out


def acoustic_only(train_labels: Sequence[LabelRecord],
                  test_labels: Sequence[LabelRecord], task: str) -> float:
    """Accuracy of LR on stimulus metadata alone (no EEG signal).

    Because every derived articulatory task is a deterministic function of
    phoneme identity, this baseline is perfectly separable by construction.
    The penalty is negligible on purpose: with a material L2 and imbalanced
    classes the shared bias can out-vote a rare phoneme's shrunken one-hot
    weight, which would understate how diagnostic the metadata is.
    """
    train_y = np.array([lab.task_index(task) for lab in train_labels])
    test_y = np.array([lab.task_index(task) for lab in test_labels])
    if np.any(train_y < 0) or np.any(test_y < 0):
        raise ValueError(f"task {task!r} undefined for some trials; filter first")
    model = fit_logistic_regression(phoneme_onehot(train_labels), train_y,
                                    l2=1e-6)
    preds = model.predict(phoneme_onehot(test_labels))
    return float(np.mean(preds == test_y))
