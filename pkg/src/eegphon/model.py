"""Conformer classifier for epoch features.

Multi-scale convolutional front-end with squeeze-and-excitation gating,
sinusoidal positional encoding, a stack of macaron Conformer blocks with
per-sample stochastic depth, learned-query attention pooling, per-task
classification heads, and an optional frame-level CTC head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import TASK_CLASSES
from .data_io import load_archive, save_archive

CTC_BLANK = 11   # blank token index: the 11 phoneme classes come first


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 256
    n_blocks: int = 4
    n_heads: int = 8
    frontend_channels: int = 64
    frontend_kernels: tuple[int, ...] = (3, 7, 15)
    conv_kernel: int = 15
    se_reduction: int = 4
    dropout: float = 0.2
    drop_path_max: float = 0.05
    head_hidden: int = 128
    tasks: tuple[str, ...] = ("phoneme", "place", "manner", "voicing")
    ctc_enabled: bool = False
    vocab: int = 11

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by "
                             f"n_heads {self.n_heads}")
        if self.d_model % self.se_reduction != 0:
            raise ValueError("d_model must be divisible by se_reduction")
        for t in self.tasks:
            if t not in TASK_CLASSES:
                raise ValueError(f"unknown task {t!r}")

    def drop_path_rate(self, block_index: int) -> float:
        if self.n_blocks <= 1:
            return 0.0
        return self.drop_path_max * block_index / (self.n_blocks - 1)


@dataclass
class ForwardOutput:
    logits_per_task: dict[str, torch.Tensor]
    ctc_frames: torch.Tensor | None
    pooled: torch.Tensor
    pool_weights: torch.Tensor


class SEBlock(nn.Module):
    """Squeeze-and-excitation over the channel dimension of (B, T, C)."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        if channels % reduction != 0:
            raise ValueError(f"channels {channels} not divisible by "
                             f"reduction {reduction}")
        self.fc1 = nn.Linear(channels, channels // reduction)
        self.fc2 = nn.Linear(channels // reduction, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        gate = torch.sigmoid(self.fc2(F.gelu(self.fc1(x.mean(dim=1)))))
        return x * gate.unsqueeze(1)


class MultiScaleFrontend(nn.Module):
    """Three parallel Conv1D branches (k = 3, 7, 15), concatenated and
    projected to d_model, then SE channel attention."""

    def __init__(self, in_features: int, config: ModelConfig):
        super().__init__()
        self.kernels = config.frontend_kernels
        self.branches = nn.ModuleList()
        for k in self.kernels:
            self.branches.append(nn.Sequential(
                nn.Conv1d(in_features, config.frontend_channels, k,
                          padding="same"),
                nn.BatchNorm1d(config.frontend_channels),
                nn.GELU(),
                nn.Dropout(config.dropout),
            ))
        self.concat_width = config.frontend_channels * len(self.kernels)
        self.project = nn.Linear(self.concat_width, config.d_model)
        self.se = SEBlock(config.d_model, config.se_reduction)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] < max(self.kernels):
            raise ValueError(f"time length {x.shape[1]} shorter than largest "
                             f"front-end kernel {max(self.kernels)}")
        xc = x.transpose(1, 2)                      # B x F x T
        outs = [branch(xc) for branch in self.branches]
        cat = torch.cat(outs, dim=1).transpose(1, 2)  # B x T x 3*C_conv
        return self.se(self.project(cat))


def sinusoidal_positions(length: int, d_model: int,
                         dtype=torch.float32) -> torch.Tensor:
    position = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float64)
                    * (-math.log(10000.0) / d_model))
    pe = torch.zeros(length, d_model, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(position * div)
    pe[:, 1::2] = torch.cos(position * div[: (d_model + 1) // 2])
    return pe.to(dtype)


class PositionalEncoding(nn.Module):
    """Fixed sinusoidal encoding, extended deterministically on demand."""

    def __init__(self, d_model: int, initial_len: int = 512):
        super().__init__()
        self.d_model = d_model
        self.register_buffer("pe", sinusoidal_positions(initial_len, d_model),
                             persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        t = x.shape[1]
        if t > self.pe.shape[0]:
            self.pe = sinusoidal_positions(t, self.d_model).to(x.device)
        return x + self.pe[:t].to(dtype=x.dtype)


class DropPath(nn.Module):
    """Per-sample stochastic depth with 1/(1-p) survival rescaling."""

    def __init__(self, rate: float):
        super().__init__()
        self.rate = rate

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.training or self.rate == 0.0:
            return x
        keep = 1.0 - self.rate
        shape = (x.shape[0],) + (1,) * (x.ndim - 1)
        mask = torch.bernoulli(torch.full(shape, keep, device=x.device,
                                          dtype=x.dtype))
        return x * mask / keep


class FeedForward(nn.Module):
    def __init__(self, d_model: int, dropout: float, expansion: int = 4):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_model, expansion * d_model),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(expansion * d_model, d_model),
            nn.Dropout(dropout),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class ConvModule(nn.Module):
    """LN -> pointwise (2x expansion) -> GLU -> depthwise -> BN -> SiLU ->
    pointwise -> dropout."""

    def __init__(self, d_model: int, kernel: int, dropout: float):
        super().__init__()
        self.norm = nn.LayerNorm(d_model)
        self.pw1 = nn.Conv1d(d_model, 2 * d_model, 1)
        self.depthwise = nn.Conv1d(d_model, d_model, kernel, groups=d_model,
                                   padding="same")
        self.bn = nn.BatchNorm1d(d_model)
        self.pw2 = nn.Conv1d(d_model, d_model, 1)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.norm(x).transpose(1, 2)
        y = F.glu(self.pw1(y), dim=1)
        y = F.silu(self.bn(self.depthwise(y)))
        y = self.dropout(self.pw2(y))
        return y.transpose(1, 2)


class ConformerBlock(nn.Module):
    """Macaron sandwich: half FFN, MHSA, conv module, half FFN, final LN.

    Each residual branch is gated by per-sample stochastic depth whose rate
    grows linearly with block index.
    """

    def __init__(self, config: ModelConfig, block_index: int):
        super().__init__()
        d = config.d_model
        p = config.dropout
        self.ffn1 = FeedForward(d, p)
        self.ffn2 = FeedForward(d, p)
        self.norm_ffn1 = nn.LayerNorm(d)
        self.norm_ffn2 = nn.LayerNorm(d)
        self.norm_attn = nn.LayerNorm(d)
        self.attn = nn.MultiheadAttention(d, config.n_heads, dropout=p,
                                          batch_first=True)
        self.attn_dropout = nn.Dropout(p)
        self.conv = ConvModule(d, config.conv_kernel, p)
        self.norm_final = nn.LayerNorm(d)
        self.drop_path = DropPath(config.drop_path_rate(block_index))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.drop_path(0.5 * self.ffn1(self.norm_ffn1(x)))
        a = self.norm_attn(x)
        attn_out, _ = self.attn(a, a, a, need_weights=False)
        x = x + self.drop_path(self.attn_dropout(attn_out))
        x = x + self.drop_path(self.conv(x))
        x = x + self.drop_path(0.5 * self.ffn2(self.norm_ffn2(x)))
        return self.norm_final(x)


class AttentionPool(nn.Module):
    """Learned-query pooling: alpha_t = softmax(h_t . q), z = sum alpha_t h_t."""

    def __init__(self, d_model: int):
        super().__init__()
        self.query = nn.Parameter(torch.randn(d_model) * 0.02)

    def forward(self, h: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        scores = h @ self.query
        alpha = torch.softmax(scores, dim=1)
        return (alpha.unsqueeze(-1) * h).sum(dim=1), alpha


class TaskHead(nn.Module):
    """Three-layer classification head with heavier dropout on layer 1."""

    def __init__(self, d_model: int, hidden: int, n_classes: int, dropout: float):
        super().__init__()
        self.net = nn.Sequential(
            nn.LayerNorm(d_model),
            nn.Linear(d_model, hidden),
            nn.GELU(),
            nn.Dropout(min(2.0 * dropout, 0.9)),
            nn.Linear(hidden, hidden),
            nn.GELU(),
            nn.Dropout(dropout),
            nn.Linear(hidden, n_classes),
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z)


class CtcHead(nn.Module):
    """Frame logits over the 11 phonemes plus a blank (12 classes)."""

    def __init__(self, d_model: int, vocab: int):
        super().__init__()
        self.norm = nn.LayerNorm(d_model)
        self.proj = nn.Linear(d_model, vocab + 1)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.proj(self.norm(h))


class PhonemeConformer(nn.Module):
    def __init__(self, config: ModelConfig, in_features: int):
        super().__init__()
        self.config = config
        self.in_features = in_features
        self.frontend = MultiScaleFrontend(in_features, config)
        self.pos = PositionalEncoding(config.d_model)
        self.blocks = nn.ModuleList(
            ConformerBlock(config, i) for i in range(config.n_blocks))
        self.pool = AttentionPool(config.d_model)
        self.heads = nn.ModuleDict({
            task: TaskHead(config.d_model, config.head_hidden,
                           TASK_CLASSES[task], config.dropout)
            for task in config.tasks})
        self.ctc_head = (CtcHead(config.d_model, config.vocab)
                         if config.ctc_enabled else None)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        h = self.pos(self.frontend(x))
        for block in self.blocks:
            h = block(h)
        return h

    def forward(self, x: torch.Tensor) -> ForwardOutput:
        h = self.encode(x)
        pooled, alpha = self.pool(h)
        logits = {task: head(pooled) for task, head in self.heads.items()}
        ctc = self.ctc_head(h) if self.ctc_head is not None else None
        return ForwardOutput(logits_per_task=logits, ctc_frames=ctc,
                             pooled=pooled, pool_weights=alpha)

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def ensemble_logits(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Predictions from element-wise mean of two logit matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"logit shapes differ: {a.shape} vs {b.shape}")
    return np.argmax(0.5 * (a + b), axis=1)


def ctc_greedy_decode(frame_logits: np.ndarray, blank: int = CTC_BLANK
                      ) -> list[list[int]]:
    """Best-path decode: per-frame argmax, collapse repeats, drop blanks."""
    frame_logits = np.asarray(frame_logits)
    out = []
    for sample in frame_logits:
        path = np.argmax(sample, axis=1)
        seq = []
        prev = -1
        for idx in path:
            if idx != prev and idx != blank:
                seq.append(int(idx))
            prev = idx
        out.append(seq)
    return out


def position_slices(n_times: int, window_ms: tuple[float, float],
                    n_positions: int) -> list[slice]:
    """Near-equal contiguous chunks of the post-onset portion of an epoch.

    Index arithmetic follows round((t - t0) * T / span): the post-onset region
    starts at round(-t0 * T / span) and is split into n_positions pieces.
    """
    span = (window_ms[1] - window_ms[0]) / 1000.0
    start = int(round((-window_ms[0] / 1000.0) * n_times / span))
    start = min(max(start, 0), n_times - 1)
    total = n_times - start
    bounds = [start + (total * i) // n_positions for i in range(n_positions + 1)]
    return [slice(bounds[i], bounds[i + 1]) for i in range(n_positions)]


@torch.no_grad()
def predict_word_sequences(model: PhonemeConformer, data: np.ndarray,
                           window_ms: tuple[float, float],
                           word_lengths: Sequence[int],
                           batch_size: int = 64) -> list[list[int]]:
    """Per-position phoneme predictions for multi-phoneme trials.

    Each position is predicted from its own sub-epoch: the post-onset window
    is split into len(word) equal parts and the phoneme head classifies each
    part independently.
    """
    model.eval()
    n = data.shape[0]
    out: list[list[int]] = [[] for _ in range(n)]
    for length in sorted(set(int(l) for l in word_lengths)):
        idx = [i for i, l in enumerate(word_lengths) if int(l) == length]
        slices = position_slices(data.shape[1], window_ms, length)
        for pos in range(length):
            chunk = data[idx][:, slices[pos], :]
            logits = batched_logits(model, chunk, "phoneme", batch_size)
            preds = np.argmax(logits, axis=1)
            for j, i in enumerate(idx):
                out[i].append(int(preds[j]))
    return out


@torch.no_grad()
def batched_logits(model: PhonemeConformer, data: np.ndarray, task: str,
                   batch_size: int = 64) -> np.ndarray:
    model.eval()
    chunks = []
    for lo in range(0, data.shape[0], batch_size):
        x = torch.as_tensor(data[lo:lo + batch_size], dtype=torch.float32)
        chunks.append(model(x).logits_per_task[task].numpy())
    return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, TASK_CLASSES[task]))


def save_checkpoint(path: str, model: PhonemeConformer,
                    extra_meta: dict | None = None) -> None:
    """Checkpoint = config echo plus named parameter/buffer arrays.

    Arrays are little-endian 32-bit floats except integer buffers, which are
    stored as int64.
    """
    cfg = model.config
    meta = {
        "kind": "checkpoint",
        "config": {
            "d_model": cfg.d_model, "n_blocks": cfg.n_blocks,
            "n_heads": cfg.n_heads, "frontend_channels": cfg.frontend_channels,
            "frontend_kernels": list(cfg.frontend_kernels),
            "conv_kernel": cfg.conv_kernel, "se_reduction": cfg.se_reduction,
            "dropout": cfg.dropout, "drop_path_max": cfg.drop_path_max,
            "head_hidden": cfg.head_hidden, "tasks": list(cfg.tasks),
            "ctc_enabled": cfg.ctc_enabled, "vocab": cfg.vocab,
        },
        "in_features": model.in_features,
    }
    if extra_meta:
        meta.update(extra_meta)
    arrays = {}
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        if np.issubdtype(arr.dtype, np.integer):
            arrays[name] = arr.astype(np.int64)
        else:
            arrays[name] = arr.astype(np.float32)
    save_archive(path, arrays, meta)


def load_checkpoint(path: str) -> tuple[PhonemeConformer, dict]:
    arrays, meta = load_archive(path)
    if meta.get("kind") != "checkpoint":
        raise ValueError(f"{path}: not a checkpoint archive")
    c = meta["config"]
    config = ModelConfig(
        d_model=c["d_model"], n_blocks=c["n_blocks"], n_heads=c["n_heads"],
        frontend_channels=c["frontend_channels"],
        frontend_kernels=tuple(c["frontend_kernels"]),
        conv_kernel=c["conv_kernel"], se_reduction=c["se_reduction"],
        dropout=c["dropout"], drop_path_max=c["drop_path_max"],
        head_hidden=c["head_hidden"], tasks=tuple(c["tasks"]),
        ctc_enabled=c["ctc_enabled"], vocab=c["vocab"])
    model = PhonemeConformer(config, meta["in_features"])
    state = {}
    for name, ref in model.state_dict().items():
        arr = arrays[name]
        state[name] = torch.as_tensor(arr).to(dtype=ref.dtype).reshape(ref.shape)
    model.load_state_dict(state)
    model.eval()
    return model, meta
