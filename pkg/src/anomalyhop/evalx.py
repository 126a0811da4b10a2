"""Pixel-level ROC-AUC and per-class result tables."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import UndefinedMetricError

MVTEC_TEXTURES = ("carpet", "grid", "leather", "tile", "wood")
MVTEC_OBJECTS = ("bottle", "cable", "capsule", "hazelnut", "metal_nut", "pill",
                 "screw", "toothbrush", "transistor", "zipper")
MVTEC_CATEGORIES = {**{c: "texture" for c in MVTEC_TEXTURES}, **{c: "object" for c in MVTEC_OBJECTS}}

CSV_COLUMNS = ("class", "category", "auc", "n_images", "seconds_per_image")


@dataclass
class RocResult:
    auc: float
    n_positive: int
    n_negative: int
    curve: np.ndarray | None = None  # (m, 2) rows of (fpr, tpr)


def auc_roc(scores, labels, return_curve: bool = False) -> RocResult:
    """ROC-AUC as the Mann-Whitney statistic; tied scores count one half.

    One sort, then per tie-group counts: each positive earns one point per
    negative strictly below it and half a point per negative tied with it.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores vs {y.size} labels")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"AUC undefined with {n_pos} positives and {n_neg} negatives")

    order = np.argsort(s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    starts = np.flatnonzero(np.r_[True, s_sorted[1:] != s_sorted[:-1]])
    pos_g = np.add.reduceat(y_sorted.astype(np.int64), starts)
    tot_g = np.diff(np.r_[starts, s.size])
    neg_g = tot_g - pos_g
    neg_below = np.cumsum(neg_g) - neg_g
    twice = int(np.sum(pos_g * (2 * neg_below + neg_g)))
    auc = twice / (2.0 * n_pos * n_neg)

    curve = None
    if return_curve:
        # thresholds descend from the top score group
        tp = np.cumsum(pos_g[::-1])
        fp = np.cumsum(neg_g[::-1])
        curve = np.column_stack([np.r_[0.0, fp / n_neg], np.r_[0.0, tp / n_pos]])
    return RocResult(auc=auc, n_positive=n_pos, n_negative=n_neg, curve=curve)


def evaluate_class(per_image: Iterable) -> RocResult:
    """Pool every pixel of every (score map, mask) pair and compute one AUC."""
    scores, labels = [], []
    for amap, mask in per_image:
        s = getattr(amap, "scores", amap)
        s = np.asarray(s, dtype=np.float64)
        m = np.asarray(mask)
        if m.ndim == 3:
            m = m[:, :, 0]
        if s.shape != m.shape:
            raise ValueError(f"map {s.shape} and mask {m.shape} differ")
        scores.append(s.ravel())
        labels.append(m.ravel() > 0.5)
    if not scores:
        raise UndefinedMetricError("no test images")
    return auc_roc(np.concatenate(scores), np.concatenate(labels))


@dataclass
class ClassRow:
    class_name: str
    category: str
    auc: float
    n_images: int = 0
    seconds_per_image: float = float("nan")

    def as_csv(self) -> list:
        return [self.class_name, self.category, f"{self.auc:.6f}", self.n_images,
                f"{self.seconds_per_image:.6f}"]


@dataclass
class Report:
    rows: list[ClassRow]
    means: dict[str, float] = field(default_factory=dict)

    @property
    def text(self) -> str:
        width = max([len(r.class_name) for r in self.rows] + [28])
        lines = [f"{'class':<{width}}  {'category':<8}  {'auc':>6}  {'s/img':>7}",
                 "-" * (width + 29)]
        for r in self.rows:
            lines.append(f"{r.class_name:<{width}}  {r.category:<8}  {r.auc:6.3f}  {r.seconds_per_image:7.3f}")
        lines.append("-" * (width + 29))
        labels = {"texture": "mean (texture)", "object": "mean (object)", "all": "mean (all)"}
        for key, label in labels.items():
            if key in self.means:
                lines.append(f"{label:<{width}}  {'':<8}  {self.means[key]:6.3f}")
        return "\n".join(lines)

    def write_csv(self, path, append: bool = False) -> None:
        path = Path(path)
        new = not (append and path.exists() and path.stat().st_size > 0)
        with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow(r.as_csv())


def summarize(results: Mapping[str, RocResult | float],
              category_map: Mapping[str, str] | None = None,
              timings: Mapping[str, tuple[int, float]] | None = None) -> Report:
    """Unweighted per-category and overall means of per-class AUCs.

    ``timings`` maps class name to ``(n_images, seconds_per_image)``.
    """
    category_map = category_map or {}
    timings = timings or {}
    rows = []
    for name, res in results.items():
        auc = res.auc if isinstance(res, RocResult) else float(res)
        cat = category_map.get(name) or MVTEC_CATEGORIES.get(name, "object")
        n_img, spi = timings.get(name, (0, float("nan")))
        rows.append(ClassRow(name, cat, auc, n_img, spi))
    means = {}
    for cat in ("texture", "object"):
        vals = [r.auc for r in rows if r.category == cat]
        if vals:
            means[cat] = float(np.mean(vals))
    if rows:
        means["all"] = float(np.mean([r.auc for r in rows]))
    return Report(rows, means)
