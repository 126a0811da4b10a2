"""Training and inference over a whole class: pipeline, normality models, fusion."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .anomaly import AnomalyMap, fuse, rescale_map
from .bundle import ModelBundle
from .config import ClassConfig
from .imageio import to_gray
from .normality import GaussianFitter, NormalityModel, score_map
from .saab import fit_pipeline

log = logging.getLogger(__name__)

NORM_PERCENTILE = 99.0


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def prepare(image: np.ndarray, config: ClassConfig) -> np.ndarray:
    """Match an already-resized image to the configured color mode."""
    if config.color_mode == "gray":
        return to_gray(image)
    if image.shape[2] == 1:
        return np.repeat(image, 3, axis=2)
    return image


def score_hops(bundle: ModelBundle, image: np.ndarray) -> list[AnomalyMap]:
    """Raw per-hop score maps (native hop resolution) for ``hops_used``."""
    cfg = bundle.config
    feats = bundle.pipeline.transform(prepare(image, cfg), cfg.hops_used)
    return [score_map(f, bundle.models[f.hop_index]) for f in feats]


def _scales(bundle: ModelBundle) -> list[float]:
    return [bundle.hop_scales.get(h, 1.0) for h in bundle.config.hops_used]


@dataclass
class Prediction:
    fused: AnomalyMap
    hop_maps: list[AnomalyMap]
    seconds: float


def predict(bundle: ModelBundle, image: np.ndarray) -> Prediction:
    t0 = time.perf_counter()
    hop_maps = score_hops(bundle, image)
    fused = fuse(hop_maps, bundle.config.fusion, _scales(bundle))
    return Prediction(fused, hop_maps, time.perf_counter() - t0)


def train(config: ClassConfig, images: Iterable[np.ndarray], config_text: str = "",
          threads: int = 1) -> ModelBundle:
    """Fit the pipeline and the per-hop normality models on normal images."""
    images = [prepare(np.asarray(im, dtype=np.float64), config) for im in images]
    pipeline = fit_pipeline(images, config.hop_specs, config.energy_threshold)
    hops = config.hops_used
    kinds = dict(zip(hops, config.kinds))
    fitters = {h: GaussianFitter(k, config.epsilon, h) for h, k in kinds.items() if k != "self_reference"}
    if fitters:
        wanted = sorted(fitters)
        for feats in parallel_map(lambda im: pipeline.transform(im, wanted), images, threads):
            for f in feats:
                fitters[f.hop_index].update(f)
    models = {h: fitters[h].finalize().astype(np.float32) if h in fitters
              else NormalityModel("self_reference", h, config.epsilon)
              for h in hops}
    bundle = ModelBundle(config=config, pipeline=pipeline, models=models, config_text=config_text)
    calibrate(bundle, images, threads)
    return bundle


def calibrate(bundle: ModelBundle, images: Sequence[np.ndarray], threads: int = 1) -> None:
    """Per-hop 99th-percentile scales and fused-score quantiles on training images."""
    cfg = bundle.config
    size = cfg.fusion.target_size

    def rescaled(im):
        return [rescale_map(m, size, size).scores.astype(np.float32) for m in score_hops(bundle, im)]

    per_image = parallel_map(rescaled, images, threads)
    scales = {}
    for i, h in enumerate(cfg.hops_used):
        v = float(np.float32(np.percentile(np.stack([maps[i] for maps in per_image]), NORM_PERCENTILE)))
        scales[h] = v if v > 0 else 1.0
    bundle.hop_scales = scales
    fused = np.stack([fuse([AnomalyMap(m) for m in maps], cfg.fusion, _scales(bundle)).scores
                      for maps in per_image])
    bundle.train_quantiles = {
        "p99": float(np.percentile(fused, 99.0)),
        "p99.9": float(np.percentile(fused, 99.9)),
        "max": float(fused.max()),
    }
