"""Gaussian normality models over hop features and Mahalanobis scoring.

Covariances are regularized with ``epsilon * I`` and stored as their lower
Cholesky factor; a score is then one triangular solve plus a norm.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.linalg import solve_triangular

from .anomaly import AnomalyMap
from .errors import ConfigInfeasibleError, InsufficientDataError, NumericError
from .saab import HopFeatureMap

KINDS = ("location_aware", "location_independent", "self_reference")
MAX_LOCATION_AWARE_DIM = 256


@dataclass
class GaussianParams:
    mean: np.ndarray  # (..., d)
    chol: np.ndarray  # (..., d, d), lower factor of Sigma + eps*I

    def __post_init__(self):
        if self.chol.shape != self.mean.shape + self.mean.shape[-1:]:
            raise ValueError(f"mean {self.mean.shape} and factor {self.chol.shape} disagree")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def covariance(self) -> np.ndarray:
        c = self.chol.astype(np.float64)
        return c @ np.swapaxes(c, -1, -2)

    def astype(self, dtype) -> "GaussianParams":
        return GaussianParams(self.mean.astype(dtype), self.chol.astype(dtype))


@dataclass
class NormalityModel:
    kind: str
    hop_index: int
    epsilon: float
    params: GaussianParams | None = None  # None for self_reference

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")

    @property
    def grid_shape(self) -> tuple[int, int] | None:
        if self.kind != "location_aware" or self.params is None:
            return None
        return self.params.mean.shape[:2]

    def astype(self, dtype) -> "NormalityModel":
        params = None if self.params is None else self.params.astype(dtype)
        return NormalityModel(self.kind, self.hop_index, self.epsilon, params)


def _data(m) -> tuple[np.ndarray, int]:
    if isinstance(m, HopFeatureMap):
        return np.asarray(m.data, dtype=np.float64), m.hop_index
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 3:
        raise ValueError(f"feature map must be (H, W, D), got {a.shape}")
    return a, 0


class _Scatter:
    """Streaming mean/scatter over leading-batch samples, shifted by the first sample."""

    def __init__(self):
        self.n = 0
        self.shift = self.s = self.ss = None

    def update(self, x: np.ndarray, shift: np.ndarray) -> None:
        # x: (n, ..., d) samples along axis 0
        if self.shift is None:
            self.shift = shift
            self.s = np.zeros(shift.shape)
            self.ss = np.zeros(shift.shape + shift.shape[-1:])
        dev = x - self.shift
        self.n += x.shape[0]
        self.s += dev.sum(axis=0)
        if dev.ndim == 2:
            self.ss += dev.T @ dev
        else:
            self.ss += np.einsum("n...i,n...j->...ij", dev, dev)

    def finalize(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.n
        mean = self.shift + self.s / n
        cov = (self.ss - np.einsum("...i,...j->...ij", self.s, self.s) / n) / (n - 1)
        return mean, cov


def _factor(cov: np.ndarray, epsilon: float) -> np.ndarray:
    d = cov.shape[-1]
    reg = 0.5 * (cov + np.swapaxes(cov, -1, -2)) + epsilon * np.eye(d)
    try:
        return np.linalg.cholesky(reg)
    except np.linalg.LinAlgError:
        flat = reg.reshape(-1, d, d)
        low = np.linalg.eigvalsh(flat)[:, 0]
        cell = int(np.argmin(low))
        where = np.unravel_index(cell, reg.shape[:-2]) if reg.ndim > 2 else ()
        raise NumericError(
            f"covariance not positive definite at cell {tuple(int(i) for i in where)}; "
            f"smallest eigenvalue ~{low[cell]:.3e} with epsilon={epsilon}") from None


def _check_eps(epsilon: float) -> None:
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")


class GaussianFitter:
    """Streaming fit of a location_aware or location_independent model.

    Feed training feature maps one at a time with :meth:`update`.
    """

    def __init__(self, kind: str, epsilon: float = 0.01, hop_index: int = 0):
        if kind not in ("location_aware", "location_independent"):
            raise ValueError(f"cannot stream-fit kind {kind!r}")
        _check_eps(epsilon)
        self.kind, self.epsilon, self.hop_index = kind, epsilon, hop_index
        self._acc = _Scatter()
        self._shape = None

    def update(self, fmap) -> None:
        x, hop = _data(fmap)
        self.hop_index = self.hop_index or hop
        if self._shape is None:
            self._shape = x.shape
            if self.kind == "location_aware" and x.shape[2] > MAX_LOCATION_AWARE_DIM:
                raise ConfigInfeasibleError(
                    f"hop {self.hop_index}: feature dim {x.shape[2]} exceeds "
                    f"{MAX_LOCATION_AWARE_DIM} for location_aware")
        if self.kind == "location_aware":
            if x.shape != self._shape:
                raise ValueError(f"feature map shape {x.shape} differs from {self._shape}")
            self._acc.update(x[None], x if self._acc.shift is None else self._acc.shift)
        else:
            if x.shape[2] != self._shape[2]:
                raise ValueError("feature dims differ between maps")
            flat = x.reshape(-1, x.shape[2])
            self._acc.update(flat, flat[0] if self._acc.shift is None else self._acc.shift)

    def finalize(self) -> NormalityModel:
        if self._acc.n < 2:
            what = "N >= 2 maps" if self.kind == "location_aware" else "N*H*W >= 2 vectors"
            raise InsufficientDataError(f"{self.kind} needs {what}, got {self._acc.n}")
        mean, cov = self._acc.finalize()
        params = GaussianParams(mean, _factor(cov, self.epsilon))
        return NormalityModel(self.kind, self.hop_index, self.epsilon, params)


def _fit_stream(kind: str, maps: Iterable, epsilon: float) -> NormalityModel:
    fitter = GaussianFitter(kind, epsilon)
    for m in maps:
        fitter.update(m)
    return fitter.finalize()


def fit_location_aware(maps: Iterable, epsilon: float = 0.01) -> NormalityModel:
    """One Gaussian per grid cell over N training feature maps."""
    return _fit_stream("location_aware", maps, epsilon)


def fit_location_independent(maps: Iterable, epsilon: float = 0.01) -> NormalityModel:
    """One Gaussian pooled over every cell of every training map."""
    return _fit_stream("location_independent", maps, epsilon)


def fit_self_reference(fmap, epsilon: float = 0.01) -> NormalityModel:
    """Gaussian over the cells of a single (test) feature map."""
    x, hop = _data(fmap)
    if x.shape[0] * x.shape[1] < 2:
        raise InsufficientDataError("self_reference needs at least 2 cells")
    model = fit_location_independent([x], epsilon)
    return NormalityModel("self_reference", hop, epsilon, model.params)


def _whiten(diff: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Solve ``chol @ z = diff`` for z; chol may be shared or batched like diff."""
    if chol.ndim == 2:
        flat = diff.reshape(-1, diff.shape[-1])
        return solve_triangular(chol, flat.T, lower=True, check_finite=False).T.reshape(diff.shape)
    z = np.empty_like(diff)
    for i in range(diff.shape[-1]):
        acc = np.einsum("...j,...j->...", chol[..., i, :i], z[..., :i])
        z[..., i] = (diff[..., i] - acc) / chol[..., i, i]
    return z


def mahalanobis_batch(x: np.ndarray, params: GaussianParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    mean = params.mean.astype(np.float64)
    chol = params.chol.astype(np.float64)
    if x.shape[-1] != params.dim:
        raise ValueError(f"vector dim {x.shape[-1]} != model dim {params.dim}")
    z = _whiten(x - mean, chol)
    return np.sqrt(np.einsum("...i,...i->...", z, z))


def mahalanobis(x, params: GaussianParams) -> float:
    """Mahalanobis distance of one vector under a single Gaussian."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or params.mean.ndim != 1:
        raise ValueError("mahalanobis expects a single vector and unbatched params")
    return float(mahalanobis_batch(x, params))


def score_map(fmap, model: NormalityModel) -> AnomalyMap:
    x, hop = _data(fmap)
    if model.kind == "self_reference":
        params = fit_self_reference(x, model.epsilon).params
    else:
        params = model.params
        if model.kind == "location_aware" and x.shape[:2] != params.mean.shape[:2]:
            raise ValueError(f"map grid {x.shape[:2]} != model grid {params.mean.shape[:2]}")
    if x.shape[2] != params.dim:
        raise ValueError(f"map dim {x.shape[2]} != model dim {params.dim}")
    return AnomalyMap(mahalanobis_batch(x, params), hop_index=hop or model.hop_index)

