"""Box-window SSIM for 2-D images, multi-channel images and volumes.

Window statistics use a uniform weight over every valid (stride 1, no
padding) window position, and the per-window index maps are averaged.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError, ShapeError


class SsimMode(str, Enum):
    AUTO = "auto"  # rank 2 -> image, rank 3 -> channels
    CHANNELS = "channels"  # C x H x W, mean of per-channel SSIM
    VOLUME = "volume"  # D x H x W, cubic window


@dataclass(frozen=True)
class SsimConfig:
    window: int = 7
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0
    mode: SsimMode = SsimMode.AUTO

    def __post_init__(self):
        object.__setattr__(self, "mode", SsimMode(self.mode))
        if self.window < 3 or self.window % 2 == 0:
            raise ParameterError(f"SSIM window must be odd and >= 3, got {self.window}")
        if min(self.k1, self.k2, self.dynamic_range) <= 0:
            raise ParameterError("k1, k2 and dynamic_range must be positive")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


def _spatial_rank(sample_ndim: int, mode: SsimMode) -> int:
    if sample_ndim == 2:
        return 2
    if sample_ndim == 3:
        return 3 if mode is SsimMode.VOLUME else 2
    raise ShapeError(f"SSIM supports rank-2 or rank-3 samples, got rank {sample_ndim}")


def _ssim_batch(a: np.ndarray, b: np.ndarray, cfg: SsimConfig, sample_ndim: int) -> np.ndarray:
    """SSIM of each aligned sample pair in ``a``, ``b`` (leading batch axis)."""
    rank = _spatial_rank(sample_ndim, cfg.mode)
    spatial = a.shape[-rank:]
    if cfg.window > min(spatial):
        raise ParameterError(f"window {cfg.window} larger than spatial dims {spatial}")
    axes = tuple(range(a.ndim - rank, a.ndim))
    win = (cfg.window,) * rank

    def box(x):
        return sliding_window_view(x, win, axis=axes).mean(axis=tuple(range(-rank, 0)))

    mu_a, mu_b = box(a), box(b)
    mu_ab = mu_a * mu_b
    var_a = box(a * a) - mu_a * mu_a
    var_b = box(b * b) - mu_b * mu_b
    cov = box(a * b) - mu_ab
    num = (2.0 * mu_ab + cfg.c1) * (2.0 * cov + cfg.c2)
    den = (mu_a * mu_a + mu_b * mu_b + cfg.c1) * (var_a + var_b + cfg.c2)
    index_map = num / den
    # Mean over window positions, then over channels for multi-channel images.
    per_sample = index_map.reshape(a.shape[0], -1).mean(axis=1)
    return per_sample


def ssim(a: np.ndarray, b: np.ndarray, cfg: SsimConfig | None = None) -> float:
    """Structural similarity of two same-shape images or volumes.

    Rank-3 inputs are channels by default; pass ``mode="volume"`` in the
    config to treat them as D x H x W with a cubic window.
    """
    cfg = cfg or SsimConfig()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(_ssim_batch(a[None], b[None], cfg, a.ndim)[0])


def ssim_pairs(a: np.ndarray, b: np.ndarray, cfg: SsimConfig | None = None) -> np.ndarray:
    """Per-pair SSIM for aligned stacks ``[N, ...]``."""
    cfg = cfg or SsimConfig()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[0] == 0:
        raise ParameterError("empty sample stack")
    # Chunked so memory stays bounded on large stacks.
    out = np.empty(a.shape[0])
    step = 1024
    for i in range(0, a.shape[0], step):
        out[i : i + step] = _ssim_batch(a[i : i + step], b[i : i + step], cfg, a.ndim - 1)
    return out


def ssim_batch_min(dataset_a, dataset_b, cfg: SsimConfig | None = None) -> float:
    """Smallest pairwise SSIM between two aligned datasets (or image stacks)."""
    a = getattr(dataset_a, "images", dataset_a)
    b = getattr(dataset_b, "images", dataset_b)
    if len(a) != len(b):
        raise ParameterError(f"length mismatch: {len(a)} vs {len(b)}")
    return float(ssim_pairs(a, b, cfg).min())
