"""Classification metrics and phoneme-sequence error rates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Minimal insertions + deletions + substitutions, unit costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            cur.append(min(prev[j] + 1, cur[-1] + 1, prev[j - 1] + cost))
        prev = cur
    return prev[-1]


def wer(refs: Sequence[Sequence], hyps: Sequence[Sequence]) -> float:
    """Mean per-word edit distance normalized by reference length."""
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references but {len(hyps)} hypotheses")
    rates = []
    for i, (ref, hyp) in enumerate(zip(refs, hyps)):
        if len(ref) == 0:
            raise ValueError(f"empty reference at index {i}")
        rates.append(levenshtein(ref, hyp) / len(ref))
    return float(np.mean(rates)) if rates else 0.0


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float
    macro_f1: float
    top3: float
    confusion: np.ndarray    # true x predicted counts


def classification_metrics(logits: np.ndarray, truths: Sequence[int],
                           n_classes: int) -> ClassificationMetrics:
    """Accuracy, macro-F1 over classes present in truths, top-3, confusion.

    Top-3 ties break toward the lower class index. Macro-F1 averages only
    over classes that occur in the truths, since small held-out folds can
    miss classes entirely.
    """
    logits = np.asarray(logits, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[1] != n_classes:
        raise ValueError(f"logits must be (n, {n_classes})")
    if len(truths) != logits.shape[0]:
        raise ValueError("truths length does not match logits")
    if truths.size and (truths.min() < 0 or truths.max() >= n_classes):
        bad = truths[(truths < 0) | (truths >= n_classes)][0]
        raise ValueError(f"label {bad} outside [0, {n_classes})")

    preds = np.argmax(logits, axis=1)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(truths, preds):
        confusion[t, p] += 1
    total = confusion.sum()
    accuracy = float(np.trace(confusion) / total) if total else 0.0

    # stable argsort on -logits: equal logits rank by ascending class index
    order = np.argsort(-logits, axis=1, kind="stable")
    top3 = float(np.mean([t in order[i, :3] for i, t in enumerate(truths)])) \
        if truths.size else 0.0

    f1s = []
    for c in range(n_classes):
        support = confusion[c].sum()
        if support == 0:
            continue
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = support - tp
        f1s.append(2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0)
    macro_f1 = float(np.mean(f1s)) if f1s else 0.0
    return ClassificationMetrics(accuracy=accuracy, macro_f1=macro_f1,
                                 top3=top3, confusion=confusion)
