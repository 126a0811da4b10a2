"""Hyper-parameter search over per-hop window sizes and filter counts."""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, replace
from typing import Iterator, Sequence

import numpy as np

from . import engine
from .anomaly import AnomalyMap, FusionConfig, fuse, rescale_map
from .config import ClassConfig
from .errors import ConfigInfeasibleError, InsufficientDataError, NumericError
from .evalx import evaluate_class
from .imageio import DatasetSplit, LabeledSample, inject_anomaly, random_rect
from .saab import HopSpec

log = logging.getLogger(__name__)

WINDOW_RANGE = tuple(range(2, 8))
KEEP_RANGE = tuple(range(2, 6))
WEIGHT_LEVELS = (0.0, 0.5, 1.0)


def _per_hop(values, n_hops: int) -> list[list[int]]:
    if values and isinstance(values[0], (list, tuple)):
        if len(values) != n_hops:
            raise ConfigInfeasibleError(f"{len(values)} per-hop ranges for {n_hops} hops")
        return [list(v) for v in values]
    return [list(values)] * n_hops


def candidates(template: Sequence[HopSpec], windows=WINDOW_RANGE, keeps=KEEP_RANGE) -> Iterator[list[HopSpec]]:
    """Hop-spec lists ordered by how many hops differ from the template.

    Yields the template first, then every single-hop change, then pairs, etc.
    Within a level, order is lexicographic in hop index and (window, keep).
    """
    n = len(template)
    wins, ks = _per_hop(windows, n), _per_hop(keeps, n)
    base = [(h.window, h.keep) for h in template]
    choices = [[(b, k) for b in wins[i] for k in ks[i] if (b, k) != base[i]] for i in range(n)]
    yield list(template)
    for level in range(1, n + 1):
        for hops in itertools.combinations(range(n), level):
            for combo in itertools.product(*(choices[i] for i in hops)):
                pairs = list(base)
                for i, bk in zip(hops, combo):
                    pairs[i] = bk
                yield [replace(template[i], window=b, keep=k) for i, (b, k) in enumerate(pairs)]


def weight_grid(n_hops: int) -> list[tuple[float, ...]]:
    """Distinct normalized weight vectors over {0, 0.5, 1} per hop."""
    seen, out = set(), []
    for w in itertools.product(WEIGHT_LEVELS, repeat=n_hops):
        s = sum(w)
        if s == 0:
            continue
        key = tuple(round(x / s, 12) for x in w)
        if key not in seen:
            seen.add(key)
            out.append(tuple(x / s for x in w))
    return out


def holdout_split(split: DatasetSplit, seed: int, fraction: float = 0.2,
                  rect: int | None = None) -> DatasetSplit:
    """Carve synthetic-anomaly validation images out of the training set."""
    n = len(split.train)
    n_hold = max(1, int(round(fraction * n)))
    if n - n_hold < 2:
        raise InsufficientDataError(f"{n} training images leave too few after holding out {n_hold}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    keep = [split.train[i] for i in sorted(order[n_hold:])]
    held = []
    for j, i in enumerate(sorted(order[:n_hold])):
        s = split.train[i]
        size = s.image.shape[:2]
        side = rect or max(4, min(size) // 8)
        mode = "constant" if j % 2 == 0 else "invert"
        img, mask = inject_anomaly(s.image, random_rect(rng, size, side), mode, float(rng.uniform()))
        held.append(LabeledSample(img, mask, "anomalous", s.class_name, "holdout", s.path))
    return DatasetSplit(train=keep, test=held)


@dataclass
class SearchRow:
    config: ClassConfig
    auc: float
    train_seconds: float

    @property
    def hops_label(self) -> str:
        return ";".join(f"{h.window}x{h.keep}" for h in self.config.hop_specs)


def evaluate_config(config: ClassConfig, split: DatasetSplit, threads: int = 1,
                    tune_weights: bool = False) -> tuple[float, ClassConfig, float]:
    """Train on ``split.train`` and return (pooled pixel AUC, config used, train seconds)."""
    t0 = time.perf_counter()
    bundle = engine.train(config, [s.image for s in split.train], threads=threads)
    seconds = time.perf_counter() - t0
    labeled = [s for s in split.test if s.mask is not None]
    hop_maps = engine.parallel_map(lambda s: engine.score_hops(bundle, s.image), labeled, threads)
    if not tune_weights:
        fused = [fuse(m, config.fusion, engine._scales(bundle)) for m in hop_maps]
        return evaluate_class(zip(fused, (s.mask for s in labeled))).auc, config, seconds

    size = config.fusion.target_size
    rescaled = [[AnomalyMap(rescale_map(m, size, size).scores) for m in maps] for maps in hop_maps]
    best = (-1.0, None)
    for w in weight_grid(len(config.hops_used)):
        cfg = FusionConfig(list(w), size, config.smooth_sigma, config.normalize_per_hop)
        fused = [fuse(m, cfg, engine._scales(bundle)) for m in rescaled]
        auc = evaluate_class(zip(fused, (s.mask for s in labeled))).auc
        if auc > best[0]:
            best = (auc, list(w))
    return best[0], replace(config, weights=best[1]), seconds


def run_search(template: ClassConfig, split: DatasetSplit, budget: int, select_on: str = "holdout",
               windows=WINDOW_RANGE, keeps=KEEP_RANGE, tune_weights: bool = False,
               threads: int = 1) -> list[SearchRow]:
    """Evaluate up to ``budget`` candidates; returns rows sorted best first."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if select_on == "holdout":
        split = holdout_split(split, template.seed)
    elif select_on != "test":
        raise ValueError(f"select_on must be 'test' or 'holdout', got {select_on!r}")
    rows = []
    for specs in itertools.islice(candidates(template.hop_specs, windows, keeps), budget):
        try:
            cfg = replace(template, hop_specs=specs)
            auc, cfg, seconds = evaluate_config(cfg, split, threads, tune_weights)
        except (ConfigInfeasibleError, InsufficientDataError, NumericError) as exc:
            log.warning("skipping %s: %s", ";".join(f"{h.window}x{h.keep}" for h in specs), exc)
            continue
        log.info("candidate %s auc=%.4f", ";".join(f"{h.window}x{h.keep}" for h in specs), auc)
        rows.append(SearchRow(cfg, auc, seconds))
    rows.sort(key=lambda r: -r.auc)
    return rows
