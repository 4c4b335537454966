"""Losses, augmentation, sampling, schedule, and the multi-task training loop."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .core import PHONEME_INDEX, TASK_CLASSES, EpochSet
from .model import CTC_BLANK, ModelConfig, PhonemeConformer


@dataclass(frozen=True)
class TrainConfig:
    lr_max: float = 5e-4
    lr_min: float = 1e-6
    warmup_epochs: int = 10
    max_epochs: int = 150
    patience: int = 30
    batch: int = 64
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.98)
    clip_norm: float = 1.0
    label_smoothing: float = 0.1
    mixup_alpha: float = 0.1
    mixup_fraction: float = 0.9
    ctc_weight: float = 0.1
    seed: int = 0
    augment: bool = True
    use_class_weights: bool = True     # ablation flags; both on by default
    use_sampler: bool = True

    def __post_init__(self) -> None:
        if not self.warmup_epochs < self.max_epochs:
            raise ValueError("warmup_epochs must be < max_epochs")
        for name in ("lr_max", "lr_min", "label_smoothing", "mixup_alpha",
                     "ctc_weight", "weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class AugmentSpec:
    noise_sigma_rel: float = 0.02
    chan_drop: tuple[float, float] = (0.05, 0.10)
    time_shift_erp: int = 5
    time_shift_dda: int = 20
    time_mask: tuple[float, float] = (0.05, 0.10)
    amp_scale: tuple[float, float] = (0.85, 1.15)


def zscore_per_sample(data: np.ndarray) -> np.ndarray:
    """Z-score each feature channel of each sample over time.

    Constant channels map to zero rather than raising, since channel dropout
    can legitimately produce them.
    """
    mean = data.mean(axis=1, keepdims=True)
    std = data.std(axis=1, keepdims=True)
    std = np.where(std < 1e-12, 1.0, std)
    out = (data - mean) / std
    out[np.broadcast_to(data.std(axis=1, keepdims=True) < 1e-12, out.shape)] = 0.0
    return out


def class_weights(counts: Sequence[int]) -> np.ndarray:
    """Inverse-frequency weights, normalized to mean 1 over present classes,
    clipped to [0.25, 4.0]. Absent classes get weight 1 (they never occur)."""
    counts = np.asarray(counts, dtype=np.float64)
    present = counts > 0
    if not present.any():
        raise ValueError("need at least one class with count > 0")
    inv = np.zeros_like(counts)
    inv[present] = 1.0 / counts[present]
    inv[present] /= inv[present].mean()
    weights = np.ones_like(counts)
    weights[present] = np.clip(inv[present], 0.25, 4.0)
    return weights


def label_smoothing_ce(logits: torch.Tensor, targets: torch.Tensor,
                       epsilon: float = 0.1,
                       weights: torch.Tensor | None = None) -> torch.Tensor:
    """Label-smoothing cross-entropy, sample-weighted by the target's class
    weight and averaged as sum(w_i * l_i) / sum(w_i)."""
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must be in [0, 1), got {epsilon}")
    if not torch.isfinite(logits).all():
        raise ValueError("non-finite logits")
    n_classes = logits.shape[1]
    log_probs = F.log_softmax(logits, dim=1)
    nll = -log_probs.gather(1, targets.unsqueeze(1)).squeeze(1)
    uniform = -log_probs.mean(dim=1)
    per_sample = (1.0 - epsilon) * nll + epsilon * uniform
    if weights is None:
        return per_sample.mean()
    w = weights[targets]
    return (w * per_sample).sum() / w.sum()


def lr_schedule(t: float, cfg: TrainConfig) -> float:
    """Linear warmup to lr_max over warmup_epochs, then cosine to lr_min."""
    if t < cfg.warmup_epochs:
        return cfg.lr_max * t / cfg.warmup_epochs
    progress = (t - cfg.warmup_epochs) / (cfg.max_epochs - cfg.warmup_epochs)
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (
        1.0 + math.cos(math.pi * progress))


def mixup_batch(x: torch.Tensor, alpha: float, rng: np.random.Generator
                ) -> tuple[torch.Tensor, np.ndarray, float]:
    """Convex batch mixing with one Beta(alpha, alpha) draw per batch.

    Returns (mixed inputs, partner permutation, lambda). A single-sample
    batch passes through unchanged (lambda = 1).
    """
    n = x.shape[0]
    if n < 2:
        return x, np.arange(n), 1.0
    lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(n)
    mixed = lam * x + (1.0 - lam) * x[torch.as_tensor(perm)]
    return mixed, perm, lam


def augment(x: np.ndarray, spec: AugmentSpec, rng: np.random.Generator,
            feature_kind: str = "ERP") -> np.ndarray:
    """Training-time augmentation, applied in a fixed order: additive noise,
    channel dropout, circular time shift, contiguous time mask, amplitude
    scale. Fully determined by the generator state."""
    out = np.array(x, dtype=np.float64)
    t_len, n_chan = out.shape

    sigma = spec.noise_sigma_rel * out.std()
    if sigma > 0:
        out += rng.normal(0.0, sigma, size=out.shape)

    frac = rng.uniform(*spec.chan_drop)
    n_drop = int(round(frac * n_chan))
    if n_drop > 0:
        drop = rng.choice(n_chan, size=n_drop, replace=False)
        out[:, drop] = 0.0

    max_shift = (spec.time_shift_erp if feature_kind == "ERP"
                 else spec.time_shift_dda)
    shift = int(rng.integers(-max_shift, max_shift + 1))
    if shift != 0:
        out = np.roll(out, shift, axis=0)

    mask_frac = rng.uniform(*spec.time_mask)
    mask_len = int(round(mask_frac * t_len))
    if mask_len > 0:
        start = int(rng.integers(0, max(t_len - mask_len, 0) + 1))
        out[start:start + mask_len] = 0.0

    out *= rng.uniform(*spec.amp_scale)
    return out


def weighted_sampler(labels: Sequence[int], seed: int,
                     n_classes: int | None = None) -> Iterator[int]:
    """Infinite index stream, sampling with replacement with per-trial
    probability proportional to 1 / count(class).

    When n_classes is given, every class in [0, n_classes) must be present;
    an absent class is rejected at construction (not at first draw).
    """
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if n_classes is not None:
        missing = sorted(set(range(n_classes)) - set(classes.tolist()))
        if missing:
            raise ValueError(f"classes {missing} absent from labels")
    count_of = dict(zip(classes.tolist(), counts.tolist()))
    probs = np.array([1.0 / count_of[int(l)] for l in labels])
    probs /= probs.sum()

    def stream() -> Iterator[int]:
        rng = np.random.default_rng(seed)
        while True:
            for idx in rng.choice(len(labels), size=1024, p=probs):
                yield int(idx)

    return stream()


def sample_epoch_indices(labels: Sequence[int], seed: int, epoch: int,
                         n: int, balanced: bool = True) -> np.ndarray:
    """One epoch's worth of training indices (deterministic per (seed, epoch))."""
    rng = np.random.default_rng([seed, 555, epoch])
    labels = np.asarray(labels)
    if not balanced:
        return rng.permutation(len(labels))[:n]
    classes, counts = np.unique(labels, return_counts=True)
    count_of = dict(zip(classes.tolist(), counts.tolist()))
    probs = np.array([1.0 / count_of[int(l)] for l in labels])
    probs /= probs.sum()
    return rng.choice(len(labels), size=n, p=probs)


class EarlyStopper:
    """Stop when the validation metric fails to improve for `patience` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = -1
        self.stale = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record one epoch; returns True when training should stop."""
        if value > self.best:
            self.best = value
            self.best_epoch = epoch
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience


def task_targets(labels, task: str) -> np.ndarray:
    """Integer targets for a task; -1 marks trials where it is undefined."""
    return np.array([lab.task_index(task) for lab in labels], dtype=np.int64)


def _ctc_targets(labels) -> tuple[torch.Tensor, torch.Tensor]:
    seqs = [[PHONEME_INDEX[p] for p in lab.word_phonemes] for lab in labels]
    flat = torch.tensor([i for s in seqs for i in s], dtype=torch.long)
    lengths = torch.tensor([len(s) for s in seqs], dtype=torch.long)
    return flat, lengths


def _masked_loss(logits: torch.Tensor, targets: torch.Tensor, epsilon: float,
                 weights: torch.Tensor | None) -> torch.Tensor | None:
    valid = targets >= 0
    if not bool(valid.any()):
        return None
    return label_smoothing_ce(logits[valid], targets[valid], epsilon, weights)


def multi_task_loss(logits_per_task: dict[str, torch.Tensor],
                    targets_per_task: dict[str, torch.Tensor],
                    epsilon: float,
                    weights_per_task: dict[str, torch.Tensor | None]
                    ) -> tuple[torch.Tensor, dict[str, float]]:
    """Mean of the per-head losses over heads with at least one valid target."""
    losses = {}
    for task, logits in logits_per_task.items():
        loss = _masked_loss(logits, targets_per_task[task], epsilon,
                            weights_per_task.get(task))
        if loss is not None:
            losses[task] = loss
    if not losses:
        raise ValueError("no task has a valid target in this batch")
    total = torch.stack(list(losses.values())).mean()
    return total, {t: float(v.detach()) for t, v in losses.items()}


@dataclass
class TrainResult:
    best_state: dict
    history: list[dict]
    best_epoch: int
    best_val: float
    stopped_early: bool


def _grad_global_norm(parameters) -> float:
    total = 0.0
    for p in parameters:
        if p.grad is not None:
            total += float(p.grad.detach().pow(2).sum())
    return math.sqrt(total)


def train(model: PhonemeConformer, train_epochs: EpochSet,
          val_epochs: EpochSet | None, cfg: TrainConfig,
          aug_spec: AugmentSpec = AugmentSpec()) -> TrainResult:
    """Multi-task AdamW training loop with early stopping.

    Per-sample z-scoring happens before augmentation; the weighted sampler and
    inverse-frequency class weights are both active unless disabled; the
    multi-task loss averages the enabled heads equally, plus ctc_weight times
    the CTC loss when the model has a CTC head. Deterministic under cfg.seed
    in single-threaded mode.
    """
    if train_epochs.n_epochs == 0:
        raise ValueError("empty training split")
    torch.manual_seed(cfg.seed)
    tasks = tuple(model.config.tasks)
    monitor_task = "phoneme" if "phoneme" in tasks else tasks[0]

    train_data = zscore_per_sample(train_epochs.data)
    targets = {t: task_targets(train_epochs.labels, t) for t in tasks}
    sampler_labels = targets[monitor_task]

    weights_per_task: dict[str, torch.Tensor | None] = {}
    for t in tasks:
        if cfg.use_class_weights:
            valid = targets[t][targets[t] >= 0]
            counts = np.bincount(valid, minlength=TASK_CLASSES[t])
            weights_per_task[t] = torch.tensor(class_weights(counts),
                                               dtype=torch.float32)
        else:
            weights_per_task[t] = None

    if val_epochs is not None and val_epochs.n_epochs > 0:
        val_data = zscore_per_sample(val_epochs.data)
        val_targets = {t: task_targets(val_epochs.labels, t) for t in tasks}
    else:
        val_epochs = None

    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr_max,
                                  betas=cfg.betas,
                                  weight_decay=cfg.weight_decay)
    stopper = EarlyStopper(cfg.patience)
    best_state = copy.deepcopy(model.state_dict())
    best_epoch = -1
    history: list[dict] = []
    mixup_until = cfg.mixup_fraction * cfg.max_epochs
    stopped_early = False

    for epoch in range(cfg.max_epochs):
        lr = lr_schedule(epoch + 1, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        idx = sample_epoch_indices(sampler_labels, cfg.seed, epoch,
                                   n=len(train_data),
                                   balanced=cfg.use_sampler)
        aug_rng = np.random.default_rng([cfg.seed, 777, epoch])
        mix_rng = np.random.default_rng([cfg.seed, 888, epoch])
        task_loss_sums = {t: 0.0 for t in tasks}
        total_loss_sum = 0.0
        n_batches = 0

        for lo in range(0, len(idx), cfg.batch):
            batch_idx = idx[lo:lo + cfg.batch]
            if cfg.augment:
                xs = np.stack([augment(train_data[i], aug_spec, aug_rng,
                                       train_epochs.feature_kind)
                               for i in batch_idx])
            else:
                xs = train_data[batch_idx]
            x = torch.as_tensor(xs, dtype=torch.float32)
            batch_targets = {
                t: torch.as_tensor(targets[t][batch_idx]) for t in tasks}

            use_mixup = (cfg.mixup_alpha > 0 and epoch < mixup_until
                         and x.shape[0] >= 2)
            if use_mixup:
                x, perm, lam = mixup_batch(x, cfg.mixup_alpha, mix_rng)

            out = model(x)
            if use_mixup and lam < 1.0:
                loss_i, parts_i = multi_task_loss(
                    out.logits_per_task, batch_targets,
                    cfg.label_smoothing, weights_per_task)
                perm_targets = {t: batch_targets[t][torch.as_tensor(perm)]
                                for t in tasks}
                loss_j, parts_j = multi_task_loss(
                    out.logits_per_task, perm_targets,
                    cfg.label_smoothing, weights_per_task)
                loss = lam * loss_i + (1.0 - lam) * loss_j
                parts = {t: lam * parts_i.get(t, 0.0)
                         + (1.0 - lam) * parts_j.get(t, 0.0) for t in tasks}
            else:
                loss, parts = multi_task_loss(
                    out.logits_per_task, batch_targets,
                    cfg.label_smoothing, weights_per_task)

            if out.ctc_frames is not None and cfg.ctc_weight > 0:
                batch_labels = [train_epochs.labels[i] for i in batch_idx]
                log_probs = F.log_softmax(out.ctc_frames, dim=2).transpose(0, 1)
                input_lengths = torch.full((x.shape[0],), out.ctc_frames.shape[1],
                                           dtype=torch.long)

                def ctc_for(labels):
                    flat, lengths = _ctc_targets(labels)
                    return F.ctc_loss(log_probs, flat, input_lengths, lengths,
                                      blank=CTC_BLANK, zero_infinity=True)

                ctc = ctc_for(batch_labels)
                if use_mixup and lam < 1.0:
                    # same convex contract as the classification heads
                    ctc = lam * ctc + (1.0 - lam) * ctc_for(
                        [batch_labels[j] for j in perm])
                loss = loss + cfg.ctc_weight * ctc

            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
            optimizer.step()
            total_loss_sum += float(loss.detach())
            for t in tasks:
                task_loss_sums[t] += parts.get(t, 0.0)
            n_batches += 1

        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss_total": total_loss_sum / max(n_batches, 1),
            "train_loss": {t: task_loss_sums[t] / max(n_batches, 1)
                           for t in tasks},
        }

        if val_epochs is not None:
            val_acc = evaluate_accuracy(model, val_data, val_targets)
            record["val_acc"] = val_acc
            metric = val_acc[monitor_task]
            record["val_metric"] = metric
            history.append(record)
            if metric > stopper.best:
                best_state = copy.deepcopy(model.state_dict())
                best_epoch = epoch
            if stopper.update(epoch, metric):
                stopped_early = True
                break
        else:
            history.append(record)
            best_state = copy.deepcopy(model.state_dict())
            best_epoch = epoch

    model.load_state_dict(best_state)
    return TrainResult(best_state=best_state, history=history,
                       best_epoch=best_epoch,
                       best_val=stopper.best if val_epochs is not None else math.nan,
                       stopped_early=stopped_early)


@torch.no_grad()
def evaluate_accuracy(model: PhonemeConformer, data: np.ndarray,
                      targets_per_task: dict[str, np.ndarray],
                      batch_size: int = 64) -> dict[str, float]:
    model.eval()
    correct = {t: 0 for t in targets_per_task}
    counted = {t: 0 for t in targets_per_task}
    for lo in range(0, data.shape[0], batch_size):
        x = torch.as_tensor(data[lo:lo + batch_size], dtype=torch.float32)
        out = model(x)
        for t, tgt in targets_per_task.items():
            batch_tgt = tgt[lo:lo + batch_size]
            preds = out.logits_per_task[t].argmax(dim=1).numpy()
            valid = batch_tgt >= 0
            correct[t] += int((preds[valid] == batch_tgt[valid]).sum())
            counted[t] += int(valid.sum())
    return {t: (correct[t] / counted[t] if counted[t] else math.nan)
            for t in targets_per_task}


def build_model(config: ModelConfig, in_features: int,
                seed: int = 0) -> PhonemeConformer:
    """Seeded model construction so initialization is reproducible."""
    torch.manual_seed(seed)
    return PhonemeConformer(config, in_features)
