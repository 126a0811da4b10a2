"""Per-hop anomaly maps: rescaling, weighted fusion, smoothing and export."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .imageio import as_image, resize_bilinear, save_png


@dataclass
class AnomalyMap:
    scores: np.ndarray  # (H, W)
    hop_index: int | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ValueError(f"anomaly map must be 2D, got {self.scores.shape}")
        if not np.all(np.isfinite(self.scores)) or (self.scores.size and self.scores.min() < 0):
            raise ValueError("anomaly scores must be finite and nonnegative")

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]


@dataclass
class FusionConfig:
    weights: list[float]
    target_size: int
    smooth_sigma: float = 0.0
    normalize_per_hop: bool = False

    def __post_init__(self):
        self.weights = [float(w) for w in self.weights]
        if any(w < 0 for w in self.weights) or not any(w > 0 for w in self.weights):
            raise ValueError("fusion weights must be nonnegative with at least one positive")
        if self.smooth_sigma < 0:
            raise ValueError("smooth_sigma must be >= 0")


def rescale_map(amap: AnomalyMap, out_h: int, out_w: int) -> AnomalyMap:
    """Bilinear rescale; a convex combination of inputs, so nonnegativity holds."""
    return AnomalyMap(resize_bilinear(amap.scores, out_h, out_w), amap.hop_index)


def smooth(scores: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return scores
    return gaussian_filter(scores, sigma=sigma, mode="nearest", truncate=4.0)


def fuse(maps: Sequence[AnomalyMap], cfg: FusionConfig,
         scales: Sequence[float] | None = None) -> AnomalyMap:
    """Weighted average of per-hop maps at ``cfg.target_size``.

    ``scales`` holds the per-hop training 99th-percentile scores used as
    divisors when ``cfg.normalize_per_hop`` is set.
    """
    if not maps:
        raise ValueError("no maps to fuse")
    if len(cfg.weights) != len(maps):
        raise ValueError(f"{len(cfg.weights)} weights for {len(maps)} maps")
    if cfg.normalize_per_hop:
        if scales is None or len(scales) != len(maps):
            raise ValueError("normalize_per_hop requires one scale per map")
        if any(s <= 0 for s in scales):
            raise ValueError("normalization scales must be positive")
    size = cfg.target_size
    total = np.zeros((size, size))
    for i, (m, w) in enumerate(zip(maps, cfg.weights)):
        if w == 0:
            continue
        r = m.scores if m.scores.shape == (size, size) else rescale_map(m, size, size).scores
        if cfg.normalize_per_hop:
            r = r / scales[i]
        total += w * r
    fused = total / sum(cfg.weights)
    return AnomalyMap(smooth(fused, cfg.smooth_sigma))


def segment(amap: AnomalyMap, threshold: float) -> np.ndarray:
    """Binary ``(H, W, 1)`` mask of scores strictly above ``threshold``."""
    return (amap.scores > threshold).astype(np.float64)[:, :, None]


def heatmap_u8(amap: AnomalyMap) -> np.ndarray:
    s = amap.scores
    lo, hi = s.min(), s.max()
    scaled = (s - lo) / (hi - lo) if hi > lo else np.zeros_like(s)
    return np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)


def _jet(v: np.ndarray) -> np.ndarray:
    v = v[..., None]
    r = np.clip(1.5 - np.abs(4 * v - 3), 0, 1)
    g = np.clip(1.5 - np.abs(4 * v - 2), 0, 1)
    b = np.clip(1.5 - np.abs(4 * v - 1), 0, 1)
    return np.concatenate([r, g, b], axis=-1)


def overlay(image, amap: AnomalyMap, alpha: float = 0.5) -> np.ndarray:
    """Blend a colorized heatmap over the input image; uint8 RGB."""
    img = as_image(image)
    if img.shape[:2] != amap.scores.shape:
        img = resize_bilinear(img, *amap.scores.shape)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    heat = _jet(heatmap_u8(amap) / 255.0)
    out = (1 - alpha) * img[:, :, :3] + alpha * heat
    return np.clip(np.rint(out * 255.0), 0, 255).astype(np.uint8)


def save_heatmap(amap: AnomalyMap, path) -> None:
    save_png(heatmap_u8(amap), path)


def save_overlay(image, amap: AnomalyMap, path, alpha: float = 0.5) -> None:
    save_png(overlay(image, amap, alpha), path)
