"""Statistical tests, bootstrap intervals, and the block-aware permutation test.

p-value CDFs are computed by adaptive Simpson integration of the t / F
densities to 1e-8 absolute tolerance, so no closed-form distribution library
is required.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_INTEGRATION_TOL = 1e-8


def _adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                      tol: float = _INTEGRATION_TOL, depth: int = 40) -> float:
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, fa, b, fb, m, fm, whole, tol, depth):
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return (recurse(a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
                + recurse(m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1))

    return recurse(a, fa, b, fb, m, fm, whole, tol, depth)


def _t_pdf(x: float, df: float) -> float:
    log_c = (math.lgamma((df + 1.0) / 2.0) - math.lgamma(df / 2.0)
             - 0.5 * math.log(df * math.pi))
    return math.exp(log_c - (df + 1.0) / 2.0 * math.log1p(x * x / df))


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided p for a t statistic, via numeric integration of the pdf."""
    if df <= 0:
        raise ValueError(f"df must be positive, got {df}")
    at = abs(t)
    if at == 0.0:
        return 1.0
    body = _adaptive_simpson(lambda x: _t_pdf(x, df), 0.0, at)
    return float(min(1.0, max(0.0, 1.0 - 2.0 * body)))


def _f_log_c(d1: float, d2: float) -> float:
    return (math.lgamma((d1 + d2) / 2.0) - math.lgamma(d1 / 2.0)
            - math.lgamma(d2 / 2.0) + (d1 / 2.0) * math.log(d1 / d2))


def _f_pdf_u(u: float, d1: float, d2: float) -> float:
    # F density under the substitution x = u^2, which keeps the d1 = 1
    # endpoint singularity integrable: pdf(x) dx = 2u * pdf(u^2) du
    if u <= 0.0:
        return 2.0 * math.exp(_f_log_c(d1, d2)) if d1 == 1.0 else 0.0
    log_val = (_f_log_c(d1, d2) + (d1 - 1.0) * math.log(u)
               - (d1 + d2) / 2.0 * math.log1p(d1 * u * u / d2))
    return 2.0 * math.exp(log_val)


def f_right_tail_p(f_stat: float, d1: float, d2: float) -> float:
    """P(F >= f_stat) via numeric integration of the F density."""
    if d1 <= 0 or d2 <= 0:
        raise ValueError("degrees of freedom must be positive")
    if f_stat <= 0:
        return 1.0
    body = _adaptive_simpson(lambda u: _f_pdf_u(u, d1, d2),
                             0.0, math.sqrt(f_stat))
    return float(min(1.0, max(0.0, 1.0 - body)))


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: int
    degenerate: bool = False


def paired_ttest(x: Sequence[float], y: Sequence[float]) -> TTestResult:
    """Two-sided paired t-test with df = n - 1.

    Zero-variance differences give an explicit degenerate result rather
    than a NaN statistic.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be equal-length 1-D vectors")
    n = len(x)
    if n < 2:
        raise ValueError(f"need >= 2 pairs, got {n}")
    d = x - y
    sd = d.std(ddof=1)
    if sd < 1e-300:
        return TTestResult(t=0.0, p=1.0, df=n - 1, degenerate=True)
    t = float(d.mean() / (sd / math.sqrt(n)))
    return TTestResult(t=t, p=t_two_sided_p(t, n - 1), df=n - 1)


@dataclass(frozen=True)
class AnovaResult:
    f: float
    p: float
    df_between: int
    df_within: int
    degenerate: bool = False


def oneway_anova(groups: Sequence[Sequence[float]]) -> AnovaResult:
    """One-way ANOVA: between/within mean-square ratio with F p-value."""
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(arrays) < 2:
        raise ValueError("need >= 2 groups")
    for g in arrays:
        if len(g) < 2:
            raise ValueError("each group needs >= 2 values")
    n_total = sum(len(g) for g in arrays)
    grand = np.concatenate(arrays).mean()
    ss_between = sum(len(g) * (g.mean() - grand) ** 2 for g in arrays)
    ss_within = sum(((g - g.mean()) ** 2).sum() for g in arrays)
    df_b = len(arrays) - 1
    df_w = n_total - len(arrays)
    if ss_within < 1e-300:
        if ss_between < 1e-300:
            return AnovaResult(f=0.0, p=1.0, df_between=df_b, df_within=df_w,
                               degenerate=True)
        return AnovaResult(f=math.inf, p=0.0, df_between=df_b, df_within=df_w,
                           degenerate=True)
    f_stat = float((ss_between / df_b) / (ss_within / df_w))
    return AnovaResult(f=f_stat, p=f_right_tail_p(f_stat, df_b, df_w),
                       df_between=df_b, df_within=df_w)


def bootstrap_ci(fold_values: Sequence[float], n_boot: int = 10000,
                 level: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap CI of the mean over fold values.

    RNG contract: numpy default_rng(seed); index draws are a single
    rng.integers(0, n, size=(n_boot, n)) call; bounds are linear-interpolated
    quantiles of the resampled means.
    """
    values = np.asarray(fold_values, dtype=np.float64)
    if len(values) < 2:
        raise ValueError(f"need >= 2 folds, got {len(values)}")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(values), size=(n_boot, len(values)))
    means = values[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha], method="linear")
    return float(lo), float(hi)


@dataclass(frozen=True)
class PermutationReport:
    true_acc: float
    perm_accs: tuple[float, ...]
    empirical_p: float
    warnings: tuple[str, ...] = ()


def permute_within_blocks(labels: np.ndarray, blocks: Sequence,
                          rng: np.random.Generator,
                          warn_sink: list[str] | None = None) -> np.ndarray:
    """Permute labels only inside each block; singleton blocks stay fixed."""
    labels = np.asarray(labels)
    blocks = np.asarray(blocks)
    out = labels.copy()
    for b in np.unique(blocks):
        idx = np.flatnonzero(blocks == b)
        if len(idx) < 2:
            if warn_sink is not None:
                warn_sink.append(f"block {b!r} has {len(idx)} trial(s); "
                                 f"left unpermuted")
            continue
        out[idx] = labels[idx[rng.permutation(len(idx))]]
    return out


def block_permutation_test(train_x: np.ndarray, train_y: np.ndarray,
                           test_x: np.ndarray, test_y: np.ndarray,
                           train_blocks: Sequence, n_perm: int = 50,
                           seed: int = 0,
                           decode_fn: Callable[[np.ndarray, np.ndarray,
                                                np.ndarray, np.ndarray], float]
                           | None = None) -> PermutationReport:
    """Permutation test that respects block structure in the training labels.

    The decoder is retrained on each within-block permutation of the training
    labels and scored on the untouched test set. Empirical p uses the add-one
    formulation (1 + #{perm >= true}) / (1 + n_perm), so it is bounded away
    from zero.
    """
    if decode_fn is None:
        from .baselines import pooled_lr_accuracy
        decode_fn = pooled_lr_accuracy
    warn_sink: list[str] = []
    true_acc = decode_fn(train_x, train_y, test_x, test_y)
    perm_accs = []
    for i in range(n_perm):
        rng = np.random.default_rng([seed, 401, i])
        y_perm = permute_within_blocks(np.asarray(train_y), train_blocks, rng,
                                       warn_sink if i == 0 else None)
        perm_accs.append(decode_fn(train_x, y_perm, test_x, test_y))
    n_ge = sum(1 for a in perm_accs if a >= true_acc)
    p = (1.0 + n_ge) / (1.0 + n_perm)
    for msg in warn_sink:
        warnings.warn(msg)
    return PermutationReport(true_acc=float(true_acc),
                             perm_accs=tuple(float(a) for a in perm_accs),
                             empirical_p=float(p),
                             warnings=tuple(warn_sink))
