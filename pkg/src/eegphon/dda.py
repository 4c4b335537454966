"""Delay-differential coefficient extraction on the broadband signal.

Each sliding window is z-scored and fit with the three-term model

    dx/dt = a1 * x(t - tau1) + a2 * x(t - tau2) + a3 * x(t - tau1)^2

where the derivative is a central difference. The 3x3 normal equations are
solved by Cramer's rule. Windows are self-contained: delayed references
resolve inside the segment, so every window is a pure function of its 60
samples and can be recomputed in isolation or in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import EpochSet, Event, Recording

DEGENERACY_RTOL = 1e-12
ZSCORE_MIN_STD = 1e-12


@dataclass(frozen=True)
class DdaParams:
    window_len: int = 60
    shift: int = 2
    tau1: int = 6
    tau2: int = 16
    stride: int = 4          # applied at the epoching stage, not here
    dt: float = 1.0 / 2048.0

    def __post_init__(self) -> None:
        if not 0 < self.tau1 < self.tau2 < self.window_len - 2:
            raise ValueError(
                f"need 0 < tau1 < tau2 < window_len - 2, got "
                f"tau1={self.tau1} tau2={self.tau2} window={self.window_len}")
        if self.shift < 1 or self.stride < 1:
            raise ValueError("shift and stride must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class DdaSeries:
    coeffs: np.ndarray           # window x channel x 3
    centers: np.ndarray          # window-center sample indices
    degenerate_mask: np.ndarray  # bool, window x channel
    fs: float
    params: DdaParams

    def __post_init__(self) -> None:
        if self.coeffs.shape[2] != 3:
            raise ValueError("coeffs last dimension must be 3")
        if np.any(np.diff(self.centers) <= 0):
            raise ValueError("window centers must be strictly increasing")


def central_difference(x: np.ndarray, dt: float) -> np.ndarray:
    """Interior central-difference derivative; endpoints are excluded.

    Returns a length n-2 vector for points k = 1 .. n-2.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 3:
        raise ValueError(f"need at least 3 samples, got {x.shape[-1]}")
    return (x[..., 2:] - x[..., :-2]) / (2.0 * dt)


def zscore_segment(segment: np.ndarray) -> tuple[np.ndarray, bool]:
    """Population z-score; constant segments flag degenerate and map to zero."""
    mean = segment.mean(axis=-1, keepdims=True)
    std = segment.std(axis=-1, keepdims=True)
    if np.any(std < ZSCORE_MIN_STD):
        return np.zeros_like(segment), True
    return (segment - mean) / std, False


def regression_design(segment: np.ndarray, params: DdaParams) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix and central-difference target for one window.

    Regression points are k in [tau2 + 1, window_len - 2] (segment-local), so
    all delayed references and the derivative stay inside the segment. Columns
    are [x(k - tau1), x(k - tau2), x(k - tau1)^2].
    """
    seg = np.asarray(segment, dtype=np.float64)
    if seg.shape[-1] != params.window_len:
        raise ValueError(f"segment length {seg.shape[-1]} != window_len "
                         f"{params.window_len}")
    k = np.arange(params.tau2 + 1, params.window_len - 1)
    x1 = seg[..., k - params.tau1]
    x2 = seg[..., k - params.tau2]
    y = (seg[..., k + 1] - seg[..., k - 1]) / (2.0 * params.dt)
    design = np.stack([x1, x2, x1 ** 2], axis=-1)
    return design, y


def _cramer3(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched Cramer's rule for A x = b with A (... x 3 x 3), b (... x 3).

    Returns (solutions, degenerate_mask). Degenerate systems get zeros. The
    degeneracy threshold is relative to a trace-based scale so it is invariant
    to overall feature magnitude.
    """
    def det3(m):
        return (m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
                - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
                + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0]))

    det_a = det3(a)
    scale = (np.trace(a, axis1=-2, axis2=-1) / 3.0) ** 3
    degenerate = np.abs(det_a) < DEGENERACY_RTOL * np.maximum(scale, 0.0)
    degenerate |= scale <= 0.0
    safe_det = np.where(degenerate, 1.0, det_a)
    sol = np.zeros(a.shape[:-1])
    for col in range(3):
        a_col = a.copy()
        a_col[..., :, col] = b
        sol[..., col] = det3(a_col) / safe_det
    sol[degenerate] = 0.0
    return sol, degenerate


def _solve_batch(z: np.ndarray, params: DdaParams
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Cramer solve for z-scored segments (... x window_len); one code path
    shared by solve_window and sliding_dda so single-window recomputation is
    bit-identical to the batch result."""
    design, y = regression_design(z, params)
    a = np.einsum("...ki,...kj->...ij", design, design)
    b = np.einsum("...ki,...k->...i", design, y)
    return _cramer3(a, b)


def solve_window(segment: np.ndarray, params: DdaParams = DdaParams()
                 ) -> tuple[float, float, float, bool]:
    """Fit one window; returns (a1, a2, a3, degenerate)."""
    seg = np.asarray(segment, dtype=np.float64)
    if seg.ndim != 1 or seg.shape[0] != params.window_len:
        raise ValueError(f"segment must be 1-D of length {params.window_len}")
    z, const = zscore_segment(seg)
    if const:
        return 0.0, 0.0, 0.0, True
    sol, degenerate = _solve_batch(z, params)
    a1, a2, a3 = sol
    return float(a1), float(a2), float(a3), bool(degenerate)


def sliding_dda(rec: Recording, params: DdaParams = DdaParams()) -> DdaSeries:
    """All-window DDA coefficients, vectorized over (window, channel).

    Window starts are s = 0, shift, 2*shift, ... with s + window_len <= N;
    the window count is floor((N - window_len) / shift) + 1 and each center
    is s + window_len // 2.
    """
    n = rec.n_times
    w = params.window_len
    if n < w:
        raise ValueError(f"recording length {n} shorter than one window ({w})")
    starts = np.arange(0, n - w + 1, params.shift)
    # (n_win, channels, window_len)
    segments = np.lib.stride_tricks.sliding_window_view(
        rec.samples, w, axis=0)[starts]
    segments = np.ascontiguousarray(segments)

    mean = segments.mean(axis=-1, keepdims=True)
    std = segments.std(axis=-1, keepdims=True)
    const = (std < ZSCORE_MIN_STD)[..., 0]
    safe_std = np.where(std < ZSCORE_MIN_STD, 1.0, std)
    z = (segments - mean) / safe_std
    z[const] = 0.0

    coeffs, degenerate = _solve_batch(z, params)
    degenerate |= const
    coeffs[const] = 0.0
    centers = starts + w // 2
    return DdaSeries(coeffs=coeffs, centers=centers,
                     degenerate_mask=degenerate, fs=rec.fs, params=params)


def epoch_dda(series: DdaSeries, events: Sequence[Event],
              window_ms: tuple[float, float] = (-200.0, 800.0),
              stride: int | None = None) -> EpochSet:
    """Align DDA windows to stimulus onsets and apply the temporal stride.

    An epoch takes the windows lying fully inside [onset + window_lo,
    onset + window_hi), then every stride-th of them, and flattens
    (T x C x 3) to (T x 3C) channel-major. Epochs near a recording edge come
    up short and are dropped with a counter so every kept epoch shares one T.
    """
    if stride is None:
        stride = series.params.stride
    fs = series.fs
    half = series.params.window_len / 2.0
    lo_off = window_ms[0] / 1000.0 * fs
    hi_off = window_ms[1] / 1000.0 * fs

    per_event: list[np.ndarray] = []
    for ev in events:
        lo = ev.onset_sample + lo_off
        hi = ev.onset_sample + hi_off
        mask = (series.centers - half >= lo) & (series.centers + half <= hi)
        idx = np.flatnonzero(mask)[::stride]
        per_event.append(idx)

    t_full = max((len(idx) for idx in per_event), default=0)
    kept = []
    labels = []
    n_skipped = 0
    for ev, idx in zip(events, per_event):
        if len(idx) < t_full or t_full == 0:
            n_skipped += 1
            continue
        block = series.coeffs[idx]               # T x C x 3
        kept.append(block.reshape(len(idx), -1))
        labels.append(ev.label)
    n_feat = 3 * series.coeffs.shape[1]
    data = np.stack(kept) if kept else np.zeros((0, t_full, n_feat))
    return EpochSet(data=data, labels=tuple(labels), feature_kind="DDA",
                    window_ms=(float(window_ms[0]), float(window_ms[1])),
                    n_edge_skipped=n_skipped)


def dda_pipeline(rec: Recording, params: DdaParams = DdaParams()) -> EpochSet:
    """Full path B: sliding-window DDA on the raw signal, then epoching."""
    series = sliding_dda(rec, params)
    return epoch_dda(series, rec.events)
