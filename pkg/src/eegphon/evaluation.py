"""LOSO orchestration, fold reports, and the confound-control procedures."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import baselines
from .core import EpochSet, LabelRecord, PHONEME_INDEX, TASK_CLASSES, \
    make_loso_folds
from .metrics import classification_metrics, wer
from .model import ModelConfig, batched_logits, ctc_greedy_decode, \
    predict_word_sequences
from .stats import PermutationReport, bootstrap_ci, permute_within_blocks
from .training import TrainConfig, build_model, task_targets, train, \
    zscore_per_sample


@dataclass(frozen=True)
class FoldReport:
    fold_id: int
    test_subject: str
    n_samples: int
    accuracy: float
    macro_f1: float
    top3: float
    confusion: np.ndarray
    wer_real: float | None = None
    wer_pseudo: float | None = None
    n_words_real: int = 0
    n_words_pseudo: int = 0
    failed: bool = False


def task_trial_mask(labels: Sequence[LabelRecord], task: str) -> np.ndarray:
    """Which trials a classification task is evaluated on.

    Binary articulatory tasks use single-phoneme consonant trials only (the
    features are undefined for vowels); phoneme and category use all
    single-phoneme trials; complexity uses everything.
    """
    if task == "complexity":
        return np.ones(len(labels), dtype=bool)
    single = np.array([lab.complexity == "single" for lab in labels])
    if task in ("phoneme", "category"):
        return single
    defined = np.array([lab.task_index(task) >= 0 for lab in labels])
    return single & defined


def subject_mask(labels: Sequence[LabelRecord], subjects) -> np.ndarray:
    subjects = set(subjects)
    return np.array([lab.subject in subjects for lab in labels])


def filter_null_only(epochs: EpochSet) -> EpochSet:
    """Keep only trials recorded under the NULL (no-TMS) condition."""
    return epochs.select(np.array([lab.tms == "NULL" for lab in epochs.labels]))


def mask_early_window(epochs: EpochSet,
                      mask_ms: tuple[float, float] = (0.0, 200.0)) -> EpochSet:
    """Zero all time steps whose post-onset time falls in [mask_lo, mask_hi) ms.

    Index arithmetic: idx = round((t - t0) * T / span); the mask is the
    half-open index range [idx(mask_lo), idx(mask_hi)).
    """
    lo_ms, hi_ms = epochs.window_ms
    span = hi_ms - lo_ms
    t_len = epochs.n_times
    lo_idx = int(round((mask_ms[0] - lo_ms) / span * t_len))
    hi_idx = int(round((mask_ms[1] - lo_ms) / span * t_len))
    lo_idx = max(lo_idx, 0)
    hi_idx = min(hi_idx, t_len)
    if hi_idx <= lo_idx:
        return epochs
    data = np.array(epochs.data)
    data[:, lo_idx:hi_idx, :] = 0.0
    return EpochSet(data=data, labels=epochs.labels,
                    feature_kind=epochs.feature_kind,
                    window_ms=epochs.window_ms,
                    n_edge_skipped=epochs.n_edge_skipped,
                    n_amplitude_rejected=epochs.n_amplitude_rejected)


def _audit_fold(split, train_labels, test_labels) -> None:
    split.check()
    train_subjects = {lab.subject for lab in train_labels}
    test_subjects = {lab.subject for lab in test_labels}
    if train_subjects & test_subjects:
        raise AssertionError(
            f"leakage: subjects {train_subjects & test_subjects} appear in "
            f"both train and test of one fold")
    if not test_subjects <= set(split.test_subjects):
        raise AssertionError("test trials outside the fold's test subject")


@dataclass(frozen=True)
class LosoRunConfig:
    task: str = "phoneme"
    decoder: str = "lr"                   # lr | lda | conformer
    seed: int = 0
    compute_wer: bool = False
    ctc_decode: bool = False
    model: ModelConfig | None = None
    train: TrainConfig | None = None


def _pooled_fold_logits(train_x, train_y, test_x, decoder: str, n_classes: int):
    scaler = baselines.Standardizer.fit(train_x)
    tr, te = scaler.apply(train_x), scaler.apply(test_x)
    if decoder == "lr":
        model = baselines.fit_logistic_regression(tr, train_y)
    elif decoder == "lda":
        model = baselines.fit_lda(tr, train_y)
    else:
        raise ValueError(f"unknown pooled decoder {decoder!r}")
    scores = model.decision(te)
    # expand decision scores to the full class space for top-3/confusion
    full = np.full((scores.shape[0], n_classes), -1e30)
    for j, c in enumerate(model.classes):
        full[:, int(c)] = scores[:, j]
    return full


def _word_eval(model, test_epochs: EpochSet, lexicality: str,
               ctc_decode: bool) -> tuple[float | None, int]:
    mask = np.array([lab.complexity == "triphone"
                     and lab.lexicality == lexicality
                     for lab in test_epochs.labels])
    if not mask.any():
        return None, 0
    subset = test_epochs.select(mask)
    data = zscore_per_sample(subset.data)
    refs = [[PHONEME_INDEX[p] for p in lab.word_phonemes]
            for lab in subset.labels]
    if ctc_decode:
        frames = _ctc_frames(model, data)
        hyps = ctc_greedy_decode(frames)
    else:
        lengths = [len(lab.word_phonemes) for lab in subset.labels]
        hyps = predict_word_sequences(model, data, subset.window_ms, lengths)
    return wer(refs, hyps), len(refs)


def _ctc_frames(model, data: np.ndarray) -> np.ndarray:
    import torch
    model.eval()
    chunks = []
    with torch.no_grad():
        for lo in range(0, data.shape[0], 64):
            x = torch.as_tensor(data[lo:lo + 64], dtype=torch.float32)
            chunks.append(model(x).ctc_frames.numpy())
    return np.concatenate(chunks, axis=0)


def run_loso(epochs: EpochSet, cfg: LosoRunConfig
             ) -> tuple[list[FoldReport], dict]:
    """Train on all-but-one subject and evaluate on the held-out subject,
    once per subject. Summary reports mean and population std over folds."""
    subjects = epochs.subjects()
    folds = make_loso_folds(subjects)
    n_classes = TASK_CLASSES[cfg.task]
    reports: list[FoldReport] = []

    eval_mask = task_trial_mask(epochs.labels, cfg.task)
    targets = task_targets(epochs.labels, cfg.task)

    for fold_id, split in enumerate(folds):
        test_subj = next(iter(split.test_subjects))
        in_test = subject_mask(epochs.labels, split.test_subjects)
        in_train = subject_mask(epochs.labels, split.train_subjects)
        try:
            if cfg.decoder == "conformer":
                report = _conformer_fold(epochs, cfg, fold_id, split,
                                         in_train, in_test, eval_mask,
                                         targets, n_classes, test_subj)
            else:
                report = _pooled_fold(epochs, cfg, fold_id, in_train, in_test,
                                      eval_mask, targets, n_classes,
                                      test_subj, split)
        except Exception as exc:   # fold marked failed, summary excludes it
            warnings.warn(f"fold {fold_id} ({test_subj}) failed: {exc}")
            report = FoldReport(fold_id=fold_id, test_subject=test_subj,
                                n_samples=0, accuracy=float("nan"),
                                macro_f1=float("nan"), top3=float("nan"),
                                confusion=np.zeros((n_classes, n_classes),
                                                   dtype=np.int64),
                                failed=True)
        reports.append(report)
    return reports, summarize_folds(reports)


def _pooled_fold(epochs, cfg, fold_id, in_train, in_test, eval_mask, targets,
                 n_classes, test_subj, split) -> FoldReport:
    train_sel = in_train & eval_mask
    test_sel = in_test & eval_mask
    _audit_fold(split,
                [epochs.labels[i] for i in np.flatnonzero(train_sel)],
                [epochs.labels[i] for i in np.flatnonzero(test_sel)])
    feats = baselines.pool_features(epochs)
    logits = _pooled_fold_logits(feats[train_sel], targets[train_sel],
                                 feats[test_sel], cfg.decoder, n_classes)
    m = classification_metrics(logits, targets[test_sel], n_classes)
    return FoldReport(fold_id=fold_id, test_subject=test_subj,
                      n_samples=int(test_sel.sum()), accuracy=m.accuracy,
                      macro_f1=m.macro_f1, top3=m.top3, confusion=m.confusion)


def _conformer_fold(epochs, cfg, fold_id, split, in_train, in_test, eval_mask,
                    targets, n_classes, test_subj) -> FoldReport:
    if cfg.model is None or cfg.train is None:
        raise ValueError("conformer decoder needs model and train configs")
    _audit_fold(split,
                [epochs.labels[i] for i in np.flatnonzero(in_train)],
                [epochs.labels[i] for i in np.flatnonzero(in_test)])
    train_set = epochs.select(in_train)
    test_set = epochs.select(in_test)
    model = build_model(cfg.model, epochs.n_features,
                        seed=cfg.train.seed + fold_id)
    train(model, train_set, None, cfg.train)

    test_sel = task_trial_mask(test_set.labels, cfg.task)
    test_data = zscore_per_sample(test_set.data[test_sel])
    test_targets = task_targets(test_set.labels, cfg.task)[test_sel]
    logits = batched_logits(model, test_data, cfg.task)
    m = classification_metrics(logits, test_targets, n_classes)

    wer_real = wer_pseudo = None
    n_real = n_pseudo = 0
    if cfg.compute_wer:
        wer_real, n_real = _word_eval(model, test_set, "real", cfg.ctc_decode)
        wer_pseudo, n_pseudo = _word_eval(model, test_set, "pseudo",
                                          cfg.ctc_decode)
    return FoldReport(fold_id=fold_id, test_subject=test_subj,
                      n_samples=int(test_sel.sum()), accuracy=m.accuracy,
                      macro_f1=m.macro_f1, top3=m.top3, confusion=m.confusion,
                      wer_real=wer_real, wer_pseudo=wer_pseudo,
                      n_words_real=n_real, n_words_pseudo=n_pseudo)


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())   # population std over folds


def summarize_folds(reports: Sequence[FoldReport]) -> dict:
    ok = [r for r in reports if not r.failed]
    if len(ok) < len(reports):
        warnings.warn(f"{len(reports) - len(ok)} failed fold(s) excluded "
                      f"from the summary")
    summary: dict = {"folds": len(ok), "folds_failed": len(reports) - len(ok),
                     "samples": int(sum(r.n_samples for r in ok))}
    if not ok:
        return summary
    for name in ("accuracy", "macro_f1", "top3"):
        mean, std = _mean_std([getattr(r, name) for r in ok])
        summary[f"{name}_mean"] = mean
        summary[f"{name}_std"] = std
    for kind in ("real", "pseudo"):
        vals = [getattr(r, f"wer_{kind}") for r in ok
                if getattr(r, f"wer_{kind}") is not None]
        if vals:
            mean, std = _mean_std(vals)
            summary[f"wer_{kind}_mean"] = mean
            summary[f"wer_{kind}_std"] = std
            summary[f"words_{kind}"] = int(
                sum(getattr(r, f"n_words_{kind}") for r in ok))
    return summary


def loso_block_permutation(epochs: EpochSet, task: str, n_perm: int = 50,
                           seed: int = 0) -> PermutationReport:
    """Block-aware permutation control over all LOSO folds.

    Training labels are permuted within TMS blocks, the pooled-LR decoder is
    retrained per permutation, and accuracies are pooled across folds by
    permutation index before computing one add-one empirical p per task.
    """
    sel = task_trial_mask(epochs.labels, task)
    sub = epochs.select(sel)
    feats = baselines.pool_features(sub)
    targets = task_targets(sub.labels, task)
    blocks = np.array([lab.tms for lab in sub.labels])
    folds = make_loso_folds(sub.subjects())

    true_accs = []
    perm_accs = np.zeros((n_perm, len(folds)))
    warn_sink: list[str] = []
    for fold_id, split in enumerate(folds):
        in_test = subject_mask(sub.labels, split.test_subjects)
        in_train = ~in_test
        tr_x, tr_y = feats[in_train], targets[in_train]
        te_x, te_y = feats[in_test], targets[in_test]
        tr_blocks = blocks[in_train]
        true_accs.append(baselines.pooled_lr_accuracy(tr_x, tr_y, te_x, te_y))
        for p in range(n_perm):
            rng = np.random.default_rng([seed, 402, fold_id, p])
            y_perm = permute_within_blocks(tr_y, tr_blocks, rng,
                                           warn_sink if p == 0 else None)
            perm_accs[p, fold_id] = baselines.pooled_lr_accuracy(
                tr_x, y_perm, te_x, te_y)
    true_acc = float(np.mean(true_accs))
    pooled = perm_accs.mean(axis=1)
    n_ge = int(np.sum(pooled >= true_acc))
    p_val = (1.0 + n_ge) / (1.0 + n_perm)
    return PermutationReport(true_acc=true_acc,
                             perm_accs=tuple(float(a) for a in pooled),
                             empirical_p=p_val, warnings=tuple(warn_sink))


def loso_pooled_control(epochs: EpochSet, task: str, decoder: str = "lr",
                        n_boot: int = 10000, seed: int = 0) -> dict:
    """NULL-style pooled-feature LOSO control with a bootstrap CI."""
    reports, summary = run_loso(epochs, LosoRunConfig(task=task,
                                                      decoder=decoder,
                                                      seed=seed))
    accs = [r.accuracy for r in reports if not r.failed]
    lo, hi = bootstrap_ci(accs, n_boot=n_boot, seed=seed)
    return {"task": task, "decoder": decoder,
            "acc_mean": summary["accuracy_mean"],
            "acc_std": summary["accuracy_std"],
            "ci_low": lo, "ci_high": hi, "folds": summary["folds"],
            "fold_accs": accs}


def loso_acoustic_control(epochs: EpochSet, task: str) -> dict:
    """Acoustic-only baseline under LOSO: metadata features, no EEG."""
    sel = task_trial_mask(epochs.labels, task)
    labels = [epochs.labels[i] for i in np.flatnonzero(sel)]
    folds = make_loso_folds(sorted({lab.subject for lab in labels}))
    accs = []
    for split in folds:
        train_labels = [l for l in labels if l.subject in split.train_subjects]
        test_labels = [l for l in labels if l.subject in split.test_subjects]
        accs.append(baselines.acoustic_only(train_labels, test_labels, task))
    return {"task": task, "decoder": "acoustic-only",
            "acc_mean": float(np.mean(accs)),
            "acc_std": float(np.std(accs)),
            "folds": len(folds), "fold_accs": accs}
