"""Multi-hop channel-wise Saab transform (PixelHop++ style feature extractor).

Each hop slides a ``b x b`` window over every channel plane independently and
projects the patch onto a fixed DC filter plus ``k - 1`` PCA (AC) filters. A
scalar bias per kernel keeps the responses nonnegative on training data.
Output channels form a tree; a child whose cumulative energy falls below the
pruning threshold is dropped together with its descendants.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigInfeasibleError, InsufficientDataError

log = logging.getLogger(__name__)

TWO_PASS_LIMIT = 100_000


@dataclass(frozen=True)
class HopSpec:
    window: int
    keep: int
    pool_after: bool = True

    def __post_init__(self):
        if self.window < 1 or self.keep < 1:
            raise ValueError(f"invalid hop spec {self}")
        if self.keep > self.window * self.window:
            raise ValueError(f"keep={self.keep} exceeds window area {self.window ** 2}")


@dataclass
class SaabKernel:
    window: int
    patch_mean: np.ndarray  # (d,)
    filters: np.ndarray  # (k, d); row 0 is the DC filter
    bias: float
    energies: np.ndarray  # (k,)

    @property
    def k(self) -> int:
        return self.filters.shape[0]

    @property
    def d(self) -> int:
        return self.filters.shape[1]


@dataclass
class HopFeatureMap:
    hop_index: int
    data: np.ndarray  # (H, W, D)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


def _plane(arr) -> np.ndarray:
    a = np.asarray(arr)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if a.ndim != 2:
        raise ValueError(f"expected a single-channel plane, got shape {a.shape}")
    return a


def extract_patches(channel_plane, b: int, stride: int = 1) -> np.ndarray:
    """Row-major ``b x b`` patches of a plane, flattened to ``(n_patches, b*b)``."""
    plane = _plane(channel_plane)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if b < 1 or plane.shape[0] < b or plane.shape[1] < b:
        raise ValueError(f"plane {plane.shape} smaller than window {b}")
    win = sliding_window_view(plane, (b, b))[::stride, ::stride]
    return win.reshape(-1, b * b)


def grid_size(n: int, b: int, stride: int = 1) -> int:
    return (n - b) // stride + 1


def _complement_basis(d: int) -> np.ndarray:
    """Orthonormal basis (d, d-1) of the subspace orthogonal to the all-ones vector.

    Gram-Schmidt seeded with the DC direction followed by the identity columns.
    """
    basis = [np.full(d, 1.0 / math.sqrt(d))]
    for i in range(d):
        v = np.zeros(d)
        v[i] = 1.0
        for u in basis:
            v -= (u @ v) * u
        for u in basis:  # second sweep for orthogonality to machine precision
            v -= (u @ v) * u
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            basis.append(v / norm)
        if len(basis) == d:
            break
    return np.stack(basis[1:], axis=1)


def _fix_sign(vecs: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude entry is positive (first index on ties)."""
    idx = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(len(vecs)), idx])
    signs[signs == 0] = 1.0
    return vecs * signs[:, None]


def kernel_from_moments(mean: np.ndarray, cov: np.ndarray, k: int, window: int) -> SaabKernel:
    """Build an unbiased Saab kernel from the raw patch mean and covariance."""
    d = mean.shape[0]
    if k > d:
        raise ValueError(f"k={k} exceeds patch dimension {d}")
    cov = 0.5 * (cov + cov.T)
    dc = np.full(d, 1.0 / math.sqrt(d))
    dc_var = float(dc @ cov @ dc)
    total = float(np.trace(cov))
    # variance at round-off level of the mean counts as none
    floor = d * (64 * np.finfo(np.float64).eps * float(np.abs(mean).max(initial=0.0))) ** 2

    q = _complement_basis(d)
    ac_cov = q.T @ cov @ q  # covariance of DC-removed patches in complement coordinates
    lam, vec = np.linalg.eigh(0.5 * (ac_cov + ac_cov.T))
    order = np.argsort(-lam, kind="stable")[: k - 1]
    lam = np.clip(lam[order], 0.0, None)
    ac = _fix_sign((q @ vec[:, order]).T) if k > 1 else np.zeros((0, d))

    if total > floor:
        energies = np.concatenate([[max(dc_var, 0.0)], lam]) / total
    else:
        energies = np.concatenate([[1.0], np.zeros(k - 1)])
    return SaabKernel(
        window=window,
        patch_mean=mean - mean.mean(),
        filters=np.vstack([dc[None, :], ac]),
        bias=0.0,
        energies=energies,
    )


def patch_moments(patches: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(patches, dtype=np.float64)
    mean = x.mean(axis=0)
    c = x - mean
    return mean, c.T @ c / max(len(x) - 1, 1)


def raw_responses(patches: np.ndarray, kernel: SaabKernel) -> np.ndarray:
    return (np.asarray(patches, dtype=np.float64) - kernel.patch_mean) @ kernel.filters.T


def fit_saab(patches: np.ndarray, k: int, window: int | None = None) -> SaabKernel:
    """Fit one Saab kernel on a ``(n_patches, d)`` matrix."""
    patches = np.asarray(patches, dtype=np.float64)
    n, d = patches.shape
    if k < 1 or k > d:
        raise ValueError(f"k={k} must lie in [1, {d}]")
    if n < d:
        raise ValueError(f"need at least d={d} patches, got {n}")
    if window is None:
        window = math.isqrt(d)
    mean, cov = patch_moments(patches)
    kernel = kernel_from_moments(mean, cov, k, window)
    kernel.bias = float(math.ceil(np.abs(raw_responses(patches, kernel)).max()))
    return kernel


def apply_saab(plane, kernel: SaabKernel, b: int | None = None, stride: int = 1) -> np.ndarray:
    """Biased Saab responses of one plane, shape ``(H', W', k)``."""
    b = kernel.window if b is None else b
    if b * b != kernel.d:
        raise ValueError(f"window {b} does not match kernel dimension {kernel.d}")
    plane = _plane(plane)
    gh, gw = grid_size(plane.shape[0], b, stride), grid_size(plane.shape[1], b, stride)
    out = raw_responses(extract_patches(plane, b, stride), kernel) + kernel.bias
    return out.reshape(gh, gw, kernel.k)


def max_pool_2x2(fm) -> np.ndarray:
    """Non-overlapping 2x2 max pool; an odd trailing row/column is dropped."""
    a = np.asarray(fm)
    h, w = a.shape[0] // 2, a.shape[1] // 2
    if h < 1 or w < 1:
        raise ValueError(f"cannot pool a {a.shape[:2]} grid")
    a = a[: 2 * h, : 2 * w]
    return a.reshape((h, 2, w, 2) + a.shape[2:]).max(axis=(1, 3))


@dataclass
class HopLayer:
    """Stacked kernels for one hop, one per input channel.

    ``keep`` indexes the flattened ``(channel, filter)`` responses that survive
    pruning, in output order.
    """

    spec: HopSpec
    patch_means: np.ndarray  # (C, d)
    filters: np.ndarray  # (C, k, d)
    biases: np.ndarray  # (C,)
    energies: np.ndarray  # (C, k)
    keep: np.ndarray  # (n_out,) int
    channel_energy: np.ndarray  # (n_out,)

    @property
    def in_channels(self) -> int:
        return self.filters.shape[0]

    @property
    def out_channels(self) -> int:
        return len(self.keep)

    def kernel(self, c: int) -> SaabKernel:
        return SaabKernel(self.spec.window, self.patch_means[c], self.filters[c],
                          float(self.biases[c]), self.energies[c])

    def raw(self, x: np.ndarray) -> np.ndarray:
        """Unbiased responses ``(H', W', C, k)`` for an input ``(H, W, C)``."""
        b = self.spec.window
        win = sliding_window_view(x, (b, b), axis=(0, 1))  # (H', W', C, b, b)
        gh, gw, c = win.shape[:3]
        p = win.reshape(gh * gw, c, b * b).astype(np.float64)
        p = (p - self.patch_means.astype(np.float64)).transpose(1, 0, 2)  # (C, n, d)
        r = np.matmul(p, self.filters.astype(np.float64).transpose(0, 2, 1))  # (C, n, k)
        return r.transpose(1, 0, 2).reshape(gh, gw, c, -1)

    def finish(self, raw: np.ndarray) -> np.ndarray:
        out = raw + self.biases.astype(np.float64)[:, None]
        out = out.reshape(raw.shape[0], raw.shape[1], -1)[:, :, self.keep]
        return out.astype(np.float32)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.finish(self.raw(x))


@dataclass
class HopPipeline:
    input_shape: tuple[int, int, int]
    layers: list[HopLayer] = field(default_factory=list)
    energy_threshold: float = 1e-4

    @property
    def specs(self) -> list[HopSpec]:
        return [layer.spec for layer in self.layers]

    @property
    def n_hops(self) -> int:
        return len(self.layers)

    def out_channels(self, hop: int) -> int:
        return self.layers[hop - 1].out_channels

    def grid_shape(self, hop: int) -> tuple[int, int]:
        h, w = self.input_shape[:2]
        for i, layer in enumerate(self.layers[:hop]):
            if i > 0 and self.layers[i - 1].spec.pool_after:
                h, w = h // 2, w // 2
            h, w = grid_size(h, layer.spec.window), grid_size(w, layer.spec.window)
        return h, w

    @property
    def parameter_count(self) -> int:
        """Filter coefficients, patch means and biases over all kernels."""
        return int(sum(l.filters.size + l.patch_means.size + l.biases.size for l in self.layers))

    def transform(self, img, hops_wanted=None) -> list[HopFeatureMap]:
        """Per-hop feature maps for one image, in increasing hop order."""
        x = np.asarray(img, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.shape != tuple(self.input_shape):
            raise ValueError(f"image shape {x.shape} differs from training shape {tuple(self.input_shape)}")
        wanted = set(range(1, self.n_hops + 1)) if hops_wanted is None else set(hops_wanted)
        if not wanted or min(wanted) < 1 or max(wanted) > self.n_hops:
            raise ValueError(f"hops {sorted(wanted)} outside 1..{self.n_hops}")
        maps = []
        for h, layer in enumerate(self.layers[: max(wanted)], start=1):
            if h > 1 and self.layers[h - 2].spec.pool_after:
                x = max_pool_2x2(x)
            x = layer.apply(x)
            if h in wanted:
                maps.append(HopFeatureMap(h, x))
        return maps


def _check_grid(shape: tuple[int, int], spec: HopSpec, hop: int) -> None:
    if shape[0] < spec.window or shape[1] < spec.window:
        raise ConfigInfeasibleError(
            f"hop {hop}: window {spec.window} larger than the {shape[0]}x{shape[1]} grid")


def _fit_layer(inputs: list[np.ndarray], spec: HopSpec, parent_energy: np.ndarray,
               threshold: float, hop: int) -> HopLayer:
    b, k = spec.window, spec.keep
    d = b * b
    c = inputs[0].shape[2]
    if k > d:
        raise ConfigInfeasibleError(f"hop {hop}: keep={k} exceeds window area {d}")
    _check_grid(inputs[0].shape[:2], spec, hop)
    gh, gw = grid_size(inputs[0].shape[0], b), grid_size(inputs[0].shape[1], b)
    n_total = len(inputs) * gh * gw
    if n_total < d:
        raise InsufficientDataError(f"hop {hop}: {n_total} patches for dimension {d}")

    def patches(x):
        win = sliding_window_view(x, (b, b), axis=(0, 1))
        return win.reshape(gh * gw, c, d).astype(np.float64).transpose(1, 0, 2)  # (C, n, d)

    # Per-channel patch moments, streamed over images.
    if n_total <= TWO_PASS_LIMIT:
        mean = sum(patches(x).sum(axis=1) for x in inputs) / n_total
        scatter = np.zeros((c, d, d))
        for x in inputs:
            p = patches(x) - mean[:, None, :]
            scatter += np.matmul(p.transpose(0, 2, 1), p)
    else:
        shift = patches(inputs[0]).mean(axis=1)
        s = np.zeros((c, d))
        scatter = np.zeros((c, d, d))
        for x in inputs:
            p = patches(x) - shift[:, None, :]
            s += p.sum(axis=1)
            scatter += np.matmul(p.transpose(0, 2, 1), p)
        mean = shift + s / n_total
        scatter -= np.einsum("ci,cj->cij", s, s) / n_total
    cov = scatter / (n_total - 1)

    kernels = [kernel_from_moments(mean[i], cov[i], k, b) for i in range(c)]
    child_energy = parent_energy[:, None] * np.stack([kr.energies for kr in kernels])
    keep = np.flatnonzero(child_energy.reshape(-1) >= threshold)
    if keep.size == 0:
        raise ConfigInfeasibleError(
            f"hop {hop}: every channel falls below energy_threshold={threshold}")

    layer = HopLayer(
        spec=spec,
        patch_means=np.stack([kr.patch_mean for kr in kernels]).astype(np.float32),
        filters=np.stack([kr.filters for kr in kernels]).astype(np.float32),
        biases=np.zeros(c, dtype=np.float32),
        energies=np.stack([kr.energies for kr in kernels]).astype(np.float32),
        keep=keep.astype(np.int64),
        channel_energy=child_energy.reshape(-1)[keep].astype(np.float32),
    )
    peak = np.zeros(c)
    for x in inputs:
        peak = np.maximum(peak, np.abs(layer.raw(x)).max(axis=(0, 1, 3)))
    layer.biases = np.ceil(peak).astype(np.float32)
    return layer


def fit_pipeline(train_images, spec: list[HopSpec], energy_threshold: float = 1e-4,
                 *, return_features: bool = False):
    """Fit every hop in sequence on a list of same-sized ``(H, W, C)`` images.

    With ``return_features=True`` also returns, per hop, the list of feature
    arrays computed for the training images during fitting.
    """
    if not spec:
        raise ValueError("at least one hop is required")
    images = [np.asarray(im, dtype=np.float64) for im in train_images]
    images = [im[:, :, None] if im.ndim == 2 else im for im in images]
    if not images:
        raise InsufficientDataError("no training images")
    shape = images[0].shape
    if any(im.shape != shape for im in images):
        raise ValueError("all training images must share one shape")

    pipeline = HopPipeline(input_shape=tuple(int(s) for s in shape),
                           energy_threshold=float(energy_threshold))
    energy = np.ones(shape[2])
    x = images
    cached = []
    for h, hop_spec in enumerate(spec, start=1):
        layer = _fit_layer(x, hop_spec, energy, energy_threshold, h)
        pipeline.layers.append(layer)
        energy = layer.channel_energy.astype(np.float64)
        pool = h < len(spec) and hop_spec.pool_after
        out = []
        for i in range(len(x)):
            out.append(layer.apply(x[i]))
            x[i] = None  # release the previous hop's input early
        if return_features:
            cached.append(list(out))
        log.info("hop %d: %d -> %d channels, grid %s", h, layer.in_channels,
                 layer.out_channels, out[0].shape[:2])
        if pool:
            if out[0].shape[0] < 2 or out[0].shape[1] < 2:
                raise ConfigInfeasibleError(f"hop {h + 1}: grid too small to pool")
            out = [max_pool_2x2(f) for f in out]
        x = out
    if return_features:
        return pipeline, cached
    return pipeline
