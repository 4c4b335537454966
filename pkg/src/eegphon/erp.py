"""ERP path: resampling, zero-phase FIR filtering, re-referencing, fixed-point
ICA artifact rejection, and stimulus-locked epoching.

All filters are Hamming-window FIR applied forward-backward, so the passband
response is squared and the phase is zero. Transition bandwidths follow
common EEG-tooling defaults: max(0.25 Hz, 0.25 x low_edge) at the low edge,
0.25 x high_edge capped at 10 Hz at the high edge, and half the notch
bandwidth for the notch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal

from .core import EpochSet, Event, Recording

DEFAULT_FRONTAL_CHANNELS = ("Fp1", "Fp2", "AF7", "AF8")
EOG_CORRELATION_THRESHOLD = 0.8
MUSCLE_HF_CUTOFF_HZ = 30.0
MUSCLE_HF_FRACTION = 0.6
ICA_MAX_ITER = 200
ICA_TOL = 1e-4


@dataclass(frozen=True)
class FilterSpec:
    kind: str                       # "notch" or "bandpass"
    edges: tuple[float, float]      # (low, high) Hz, stopband edges for notch
    window: str = "hamming"
    transition_bw: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.kind not in ("notch", "bandpass"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if not self.edges[0] < self.edges[1]:
            raise ValueError(f"filter edges reversed: {self.edges}")


@dataclass(frozen=True)
class IcaResult:
    unmixing: np.ndarray            # components x channels
    mixing: np.ndarray              # channels x components
    rejected: frozenset[int]
    converged: bool

    def __post_init__(self) -> None:
        n_comp = self.unmixing.shape[0]
        if len(self.rejected) > n_comp // 3:
            raise ValueError("rejected more than one third of components")


def _num_taps(fs: float, transition_bw: float) -> int:
    """Hamming design length: ~3.3 / normalized transition width, forced odd."""
    n = int(math.ceil(3.3 * fs / transition_bw))
    return n + 1 if n % 2 == 0 else n


def _apply_fir(samples: np.ndarray, taps: np.ndarray) -> np.ndarray:
    padlen = min(3 * len(taps), samples.shape[0] - 1)
    return signal.filtfilt(taps, [1.0], samples, axis=0, padlen=padlen)


def resample(rec: Recording, target_fs: float) -> Recording:
    """Polyphase resampling with anti-aliasing; event onsets rescaled."""
    if target_fs <= 0:
        raise ValueError(f"target_fs must be positive, got {target_fs}")
    if target_fs > rec.fs:
        raise ValueError(f"upsampling unsupported: target {target_fs} Hz "
                         f"> recording {rec.fs} Hz")
    if target_fs == rec.fs:
        return rec
    frac = Fraction(target_fs / rec.fs).limit_denominator(10000)
    up, down = frac.numerator, frac.denominator
    out = signal.resample_poly(rec.samples, up, down, axis=0)
    n_out = int(round(rec.n_times * target_fs / rec.fs))
    out = out[:n_out]
    ratio = target_fs / rec.fs
    events = []
    for ev in rec.events:
        onset = int(round(ev.onset_sample * ratio))
        onset = min(onset, n_out - 1)
        events.append(Event(onset_sample=onset, label=ev.label))
    return Recording(samples=out, fs=target_fs,
                     channel_names=rec.channel_names, events=tuple(events))


def notch_spec(fs: float, center: float, bandwidth: float) -> FilterSpec:
    lo, hi = center - bandwidth / 2.0, center + bandwidth / 2.0
    if bandwidth <= 0 or not 0 < lo < hi < fs / 2:
        raise ValueError(f"notch band ({lo}, {hi}) Hz outside (0, {fs / 2})")
    tb = bandwidth / 2.0
    return FilterSpec(kind="notch", edges=(lo, hi), transition_bw=(tb, tb))


def design_notch(fs: float, center: float, bandwidth: float) -> np.ndarray:
    spec = notch_spec(fs, center, bandwidth)
    return signal.firwin(_num_taps(fs, min(spec.transition_bw)), list(spec.edges),
                         window=spec.window, pass_zero=True, fs=fs)


def notch_filter(rec: Recording, center: float, bandwidth: float = 2.0) -> Recording:
    out = _apply_fir(rec.samples, design_notch(rec.fs, center, bandwidth))
    return rec.replace_samples(out)


def bandpass_spec(fs: float, low: float, high: float) -> FilterSpec:
    """Transition bandwidths: max(0.25 Hz, 0.25 x low) at the low edge,
    0.25 x high capped at 10 Hz at the high edge."""
    if not 0 < low < high < fs / 2:
        raise ValueError(f"bandpass edges ({low}, {high}) Hz outside (0, {fs / 2})")
    return FilterSpec(kind="bandpass", edges=(low, high),
                      transition_bw=(max(0.25, 0.25 * low),
                                     min(0.25 * high, 10.0)))


def design_bandpass(fs: float, low: float, high: float) -> np.ndarray:
    spec = bandpass_spec(fs, low, high)
    # a single window design has one transition width; the narrower edge wins
    return signal.firwin(_num_taps(fs, min(spec.transition_bw)), list(spec.edges),
                         window=spec.window, pass_zero=False, fs=fs)


def bandpass_filter(rec: Recording, low: float, high: float) -> Recording:
    out = _apply_fir(rec.samples, design_bandpass(rec.fs, low, high))
    return rec.replace_samples(out)


def common_average_reference(rec: Recording) -> Recording:
    if rec.n_channels < 2:
        raise ValueError("CAR needs at least 2 channels")
    out = rec.samples - rec.samples.mean(axis=1, keepdims=True)
    return rec.replace_samples(out)


def _whiten(x: np.ndarray, n_components: int):
    """PCA whitening of (channels x time) data; returns sources, transform."""
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    cov = xc @ xc.T / xc.shape[1]
    eigval, eigvec = np.linalg.eigh(cov)
    order = np.argsort(eigval)[::-1][:n_components]
    eigval = np.clip(eigval[order], 1e-18, None)
    eigvec = eigvec[:, order]
    whitener = (eigvec / np.sqrt(eigval)).T      # comps x channels
    return whitener @ xc, whitener, mean


def _fastica_deflation(z: np.ndarray, rng: np.random.Generator):
    """Fixed-point FastICA with tanh nonlinearity, deflation scheme.

    z is whitened (components x time). Returns (w_matrix, converged).
    """
    k, n = z.shape
    w_all = np.zeros((k, k))
    converged = True
    for i in range(k):
        w = rng.standard_normal(k)
        w /= np.linalg.norm(w)
        ok = False
        for _ in range(ICA_MAX_ITER):
            wx = w @ z
            g = np.tanh(wx)
            g_prime = 1.0 - g ** 2
            w_new = (z * g).mean(axis=1) - g_prime.mean() * w
            w_new -= w_all[:i].T @ (w_all[:i] @ w_new)   # deflation
            norm = np.linalg.norm(w_new)
            if norm < 1e-12:
                break
            w_new /= norm
            if abs(abs(w_new @ w)) > 1.0 - ICA_TOL:
                w = w_new
                ok = True
                break
            w = w_new
        if not ok:
            converged = False
        w_all[i] = w
    return w_all, converged


def _hf_power_fraction(source: np.ndarray, fs: float) -> float:
    spec = np.abs(np.fft.rfft(source - source.mean())) ** 2
    freqs = np.fft.rfftfreq(len(source), d=1.0 / fs)
    total = spec.sum()
    if total <= 0:
        return 0.0
    return float(spec[freqs > MUSCLE_HF_CUTOFF_HZ].sum() / total)


def select_rejections(candidate_scores: dict[int, float], n_components: int) -> frozenset[int]:
    """Cap flagged components at one third, keeping the worst offenders.

    Ties break toward lower component index for determinism.
    """
    cap = n_components // 3
    ranked = sorted(candidate_scores, key=lambda i: (-candidate_scores[i], i))
    return frozenset(ranked[:cap])


def fastica_reject(rec: Recording, max_components: int = 15,
                   frontal_channels=DEFAULT_FRONTAL_CHANNELS,
                   seed: int = 0) -> tuple[Recording, IcaResult]:
    """Estimate independent components; remove EOG- and muscle-like ones.

    A component is a candidate when its time course correlates with any
    frontal channel at |r| >= 0.8, or its spectral power fraction above 30 Hz
    exceeds 0.6. At most one third of components are removed. The cleaned
    signal subtracts only the rejected components, so with no rejections the
    recording passes through unchanged.
    """
    if max_components > rec.n_channels:
        raise ValueError(f"max_components {max_components} exceeds channel "
                         f"count {rec.n_channels}")
    x = rec.samples.T                                    # channels x time
    k = min(max_components, rec.n_channels)
    z, whitener, mean = _whiten(x, k)
    rng = np.random.default_rng([seed, 31337])
    w_rot, converged = _fastica_deflation(z, rng)
    unmixing = w_rot @ whitener                          # comps x channels
    sources = w_rot @ z                                  # comps x time
    mixing = np.linalg.pinv(unmixing)                    # channels x comps

    if not converged:
        result = IcaResult(unmixing=unmixing, mixing=mixing,
                           rejected=frozenset(), converged=False)
        return rec, result

    frontal_idx = [i for i, name in enumerate(rec.channel_names)
                   if name in set(frontal_channels)]
    scores: dict[int, float] = {}
    for ci in range(k):
        s = sources[ci]
        score = 0.0
        for fi in frontal_idx:
            f = x[fi]
            denom = s.std() * f.std()
            if denom > 0:
                r = abs(float(np.corrcoef(s, f)[0, 1]))
                if r >= EOG_CORRELATION_THRESHOLD:
                    score = max(score, r)
        hf = _hf_power_fraction(s, rec.fs)
        if hf > MUSCLE_HF_FRACTION:
            score = max(score, hf)
        if score > 0:
            scores[ci] = score
    rejected = select_rejections(scores, k)

    cleaned = rec.samples.copy()
    if rejected:
        idx = sorted(rejected)
        artifact = mixing[:, idx] @ sources[idx]         # channels x time
        cleaned = cleaned - artifact.T
    result = IcaResult(unmixing=unmixing, mixing=mixing,
                       rejected=rejected, converged=True)
    return rec.replace_samples(cleaned), result


def epoch_erp(rec: Recording, window_ms: tuple[float, float] = (-200.0, 800.0),
              baseline_ms: tuple[float, float] = (-200.0, 0.0),
              reject_uv: float | None = 150.0) -> EpochSet:
    """Stimulus-locked epochs with baseline correction and amplitude rejection.

    Each epoch spans round((window_hi - window_lo) * fs) samples. The per
    channel mean over the baseline window is subtracted, then epochs where any
    channel exceeds reject_uv in absolute value are dropped.
    """
    if not rec.events:
        raise ValueError("recording has no events to epoch")
    fs = rec.fs
    n_len = int(round((window_ms[1] - window_ms[0]) / 1000.0 * fs))
    start_off = int(round(window_ms[0] / 1000.0 * fs))
    base_lo = int(round((baseline_ms[0] - window_ms[0]) / 1000.0 * fs))
    base_hi = int(round((baseline_ms[1] - window_ms[0]) / 1000.0 * fs))
    base_hi = max(base_hi, base_lo + 1)

    kept = []
    labels = []
    n_skipped = 0
    n_rejected = 0
    for ev in rec.events:
        lo = ev.onset_sample + start_off
        hi = lo + n_len
        if lo < 0 or hi > rec.n_times:
            n_skipped += 1
            continue
        epoch = rec.samples[lo:hi].copy()
        epoch -= epoch[base_lo:base_hi].mean(axis=0, keepdims=True)
        if reject_uv is not None and np.abs(epoch).max() > reject_uv:
            n_rejected += 1
            continue
        kept.append(epoch)
        labels.append(ev.label)
    data = (np.stack(kept) if kept
            else np.zeros((0, n_len, rec.n_channels)))
    return EpochSet(data=data, labels=tuple(labels), feature_kind="ERP",
                    window_ms=(float(window_ms[0]), float(window_ms[1])),
                    n_edge_skipped=n_skipped, n_amplitude_rejected=n_rejected)


def erp_pipeline(rec: Recording, target_fs: float = 256.0,
                 notch_hz: float = 50.0, band: tuple[float, float] = (0.5, 40.0),
                 ica_components: int = 15, reject_uv: float | None = 150.0,
                 seed: int = 0) -> tuple[EpochSet, IcaResult]:
    """Full path A: resample, notch, bandpass, CAR, ICA rejection, epoching.

    Pass band=(0.5, 100.0) for the wideband control variant.
    """
    rec = resample(rec, target_fs)
    rec = notch_filter(rec, notch_hz)
    rec = bandpass_filter(rec, band[0], band[1])
    rec = common_average_reference(rec)
    n_comp = min(ica_components, rec.n_channels)
    rec, ica = fastica_reject(rec, max_components=n_comp, seed=seed)
    return epoch_erp(rec, reject_uv=reject_uv), ica
