"""Image decoding, resizing, MVTec AD loading and synthetic textures.

Images travel through the package as ``float64`` arrays of shape
``(H, W, C)`` with values in ``[0, 1]``. Masks are ``(H, W, 1)`` arrays
holding only 0.0 and 1.0.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CorruptInputError, DatasetNotFoundError

log = logging.getLogger(__name__)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
IMAGE_SUFFIXES = (".png",)
TEXTURE_KINDS = ("sinusoid", "checker", "noise")


@dataclass(frozen=True)
class LabeledSample:
    image: np.ndarray
    mask: np.ndarray | None
    label: str  # "normal" | "anomalous"
    class_name: str
    defect_name: str | None = None
    path: str | None = None

    def __post_init__(self):
        if self.label not in ("normal", "anomalous"):
            raise ValueError(f"unknown label {self.label!r}")
        if self.mask is not None:
            if self.mask.shape[:2] != self.image.shape[:2]:
                raise ValueError("mask and image spatial dims differ")
            if self.label == "normal" and self.mask.any():
                raise ValueError("normal sample carries a non-empty mask")


@dataclass(frozen=True)
class DatasetSplit:
    train: list[LabeledSample]
    test: list[LabeledSample]

    def __post_init__(self):
        if any(s.label != "normal" for s in self.train):
            raise ValueError("training split must contain normal samples only")


def as_image(arr) -> np.ndarray:
    """Coerce a 2D plane or 3D array to a ``(H, W, C)`` float64 array."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or min(a.shape) < 1:
        raise ValueError(f"expected an (H, W, C) image, got shape {a.shape}")
    return a


def _bilinear_taps(n_in: int, n_out: int):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize_bilinear(img, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers (align_corners=False).

    Source coordinates outside the image are clamped to the border pixel.
    Accepts ``(H, W)`` or ``(H, W, C)``; the returned array has the same rank.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    a = np.asarray(img, dtype=np.float64)
    r0, r1, fr = _bilinear_taps(a.shape[0], out_h)
    c0, c1, fc = _bilinear_taps(a.shape[1], out_w)
    extra = (1,) * (a.ndim - 2)
    fr = fr.reshape((-1, 1) + extra)
    fc = fc.reshape((1, -1) + extra)
    rows = a[r0] * (1.0 - fr) + a[r1] * fr
    return rows[:, c0] * (1.0 - fc) + rows[:, c1] * fc


def resize_nearest(img, out_h: int, out_w: int) -> np.ndarray:
    a = np.asarray(img)
    ri = np.minimum(np.floor((np.arange(out_h) + 0.5) * a.shape[0] / out_h), a.shape[0] - 1)
    ci = np.minimum(np.floor((np.arange(out_w) + 0.5) * a.shape[1] / out_w), a.shape[1] - 1)
    return a[ri.astype(np.intp)][:, ci.astype(np.intp)]


def to_gray(img: np.ndarray) -> np.ndarray:
    img = as_image(img)
    if img.shape[2] == 1:
        return img
    return (img[:, :, :3] @ LUMA_WEIGHTS)[:, :, None]


def load_image(path, target_size: int | None = None, color_mode: str = "rgb") -> np.ndarray:
    """Decode an 8-bit PNG to ``[0, 1]`` floats, optionally resizing to a square."""
    if color_mode not in ("rgb", "gray"):
        raise ValueError(f"unknown color_mode {color_mode!r}")
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise CorruptInputError(f"cannot decode image {path}: {exc}") from exc
    if color_mode == "gray":
        arr = to_gray(arr)
    if target_size is not None:
        arr = resize_bilinear(arr, target_size, target_size)
    return arr


def load_mask(path, target_size: int | None = None) -> np.ndarray:
    try:
        with Image.open(path) as im:
            m = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise CorruptInputError(f"cannot decode mask {path}: {exc}") from exc
    m = (m > 0.5).astype(np.float64)
    if target_size is not None:
        m = resize_nearest(m, target_size, target_size)
    return (m > 0.5).astype(np.float64)[:, :, None]


def _list_images(folder: Path) -> list[Path]:
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_mvtec_class(root_path, class_name: str, target_size: int,
                     color_mode: str = "rgb", threads: int = 1) -> DatasetSplit:
    """Load one class of an MVTec AD style tree.

    Layout: ``<root>/<class>/train/good/*.png``, ``<root>/<class>/test/<defect>/*.png``
    and ``<root>/<class>/ground_truth/<defect>/<stem>_mask.png``.
    """
    base = Path(root_path) / class_name
    train_dir = base / "train" / "good"
    test_dir = base / "test"
    if not train_dir.is_dir():
        raise DatasetNotFoundError(f"missing training directory {train_dir}")
    train_paths = _list_images(train_dir)
    if not train_paths:
        raise DatasetNotFoundError(f"no training images in {train_dir}")

    jobs = [(p, None) for p in train_paths]
    if test_dir.is_dir():
        for defect_dir in sorted(d for d in test_dir.iterdir() if d.is_dir()):
            for p in _list_images(defect_dir):
                jobs.append((p, defect_dir.name))

    def load_one(job):
        path, defect = job
        image = load_image(path, target_size, color_mode)
        if defect is None:
            return LabeledSample(image, None, "normal", class_name, None, str(path))
        if defect == "good":
            mask = np.zeros(image.shape[:2] + (1,))
            return LabeledSample(image, mask, "normal", class_name, defect, str(path))
        mask_path = base / "ground_truth" / defect / f"{path.stem}_mask.png"
        if not mask_path.is_file():
            raise DatasetNotFoundError(f"missing ground-truth mask {mask_path}")
        mask = load_mask(mask_path, target_size)
        return LabeledSample(image, mask, "anomalous", class_name, defect, str(path))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            samples = list(pool.map(load_one, jobs))
    else:
        samples = [load_one(j) for j in jobs]
    n_train = len(train_paths)
    log.info("loaded %s: %d train, %d test", class_name, n_train, len(samples) - n_train)
    return DatasetSplit(train=samples[:n_train], test=samples[n_train:])


def synth_texture(kind: str, size: int, seed: int, *, period: float = 16.0,
                  angle: float = 0.0) -> np.ndarray:
    """Deterministic single-channel texture in ``[0, 1]``.

    ``sinusoid`` is a product of sines along both (rotated) axes with random
    phases plus uniform noise of amplitude 0.05; ``checker`` is a noise-free
    two-level checkerboard with random offset; ``noise`` is i.i.d. uniform.
    ``angle`` rotates the pattern, in degrees.
    """
    if kind not in TEXTURE_KINDS:
        raise ValueError(f"unknown texture kind {kind!r}; expected one of {TEXTURE_KINDS}")
    if size < 32:
        raise ValueError(f"texture size must be >= 32, got {size}")
    rng = np.random.default_rng(seed)
    if kind == "noise":
        return rng.uniform(0.0, 1.0, (size, size, 1))

    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    t = np.deg2rad(angle)
    u = x * np.cos(t) + y * np.sin(t)
    v = -x * np.sin(t) + y * np.cos(t)
    if kind == "sinusoid":
        phase = rng.uniform(0.0, 2 * np.pi, 2)
        out = 0.5 + 0.5 * np.sin(2 * np.pi * u / period + phase[0]) * np.sin(2 * np.pi * v / period + phase[1])
        out = out + rng.uniform(-0.05, 0.05, out.shape)
    else:
        offset = rng.uniform(0.0, period, 2)
        cell = period / 2.0
        parity = (np.floor((u + offset[0]) / cell) + np.floor((v + offset[1]) / cell)) % 2
        out = np.where(parity == 0, 0.2, 0.8)
    return np.clip(out, 0.0, 1.0)[:, :, None]


def inject_anomaly(img, rect: tuple[int, int, int, int], mode: str = "constant",
                   value: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Paint a rectangular defect; returns the new image and its binary mask."""
    img = as_image(img)
    row, col, h, w = rect
    if h < 1 or w < 1:
        raise ValueError("anomaly rect must have positive area")
    if row < 0 or col < 0 or row + h > img.shape[0] or col + w > img.shape[1]:
        raise ValueError(f"rect {rect} outside image of shape {img.shape[:2]}")
    out = img.copy()
    region = (slice(row, row + h), slice(col, col + w))
    if mode == "invert":
        out[region] = 1.0 - img[region]
    elif mode == "constant":
        out[region] = value
    else:
        raise ValueError(f"unknown anomaly mode {mode!r}")
    mask = np.zeros(img.shape[:2] + (1,))
    mask[region] = 1.0
    return out, mask


def random_rect(rng: np.random.Generator, size: int | tuple[int, int], rect: int) -> tuple[int, int, int, int]:
    h, w = (size, size) if isinstance(size, int) else size
    return int(rng.integers(0, h - rect + 1)), int(rng.integers(0, w - rect + 1)), rect, rect


def save_png(arr, path) -> None:
    a = np.asarray(arr)
    if a.dtype != np.uint8:
        a = np.clip(np.rint(np.asarray(a, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(a).save(path)


def write_synthetic_class(root, class_name: str, kind: str = "sinusoid", *, n_train: int = 20,
                          n_test: int = 10, size: int = 128, rect: int = 16, seed: int = 0,
                          mode: str = "constant", value: float = 1.0,
                          random_angle: bool = False) -> Path:
    """Write an MVTec-layout class tree of synthetic textures with injected defects.

    Test images alternate between defective (``test/synthetic``) and
    defect-free (``test/good``), starting with a defective one.
    """
    base = Path(root) / class_name
    rng = np.random.default_rng(seed)

    def texture(i):
        angle = float(rng.uniform(0, 90)) if random_angle else 0.0
        return synth_texture(kind, size, seed * 100003 + i, angle=angle)

    for i in range(n_train):
        save_png(texture(i), base / "train" / "good" / f"{i:03d}.png")
    for j in range(n_test):
        img = texture(n_train + j)
        if j % 2 == 0:
            img, mask = inject_anomaly(img, random_rect(rng, size, rect), mode, value)
            save_png(img, base / "test" / "synthetic" / f"{j:03d}.png")
            save_png(mask, base / "ground_truth" / "synthetic" / f"{j:03d}_mask.png")
        else:
            save_png(img, base / "test" / "good" / f"{j:03d}.png")
    return base
