"""Image I/O, grayscale projection, augmentation, batching and synthetic data.

Images are channel-major ``float32`` numpy arrays of shape ``(C, H, W)`` with
values in ``[0, 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

LUMA = (0.299, 0.587, 0.114)
MIN_SIDE = 8


class DataError(ValueError):
    """Raised for malformed images, samples or datasets."""


def check_image(img: np.ndarray, channels: int | None = None) -> np.ndarray:
    if img.ndim != 3:
        raise DataError(f"expected (C, H, W) array, got shape {img.shape}")
    c, h, w = img.shape
    if c not in (1, 3):
        raise DataError(f"channel count must be 1 or 3, got {c}")
    if channels is not None and c != channels:
        raise DataError(f"expected {channels} channels, got {c}")
    if h < MIN_SIDE or w < MIN_SIDE:
        raise DataError(f"image {h}x{w} smaller than {MIN_SIDE}x{MIN_SIDE}")
    if not np.all(np.isfinite(img)):
        raise DataError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise DataError("image values outside [0, 1]")
    return img


def load_image(path: str | Path) -> np.ndarray:
    """Read an 8-bit grayscale or RGB raster into a ``(C, H, W)`` array in [0, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "LA"):
                arr = np.asarray(im.convert("L"))
            elif im.mode in ("RGB", "RGBA", "P"):
                arr = np.asarray(im.convert("RGB"))
            else:
                raise DataError(f"unsupported image mode {im.mode!r} in {path}")
    except (OSError, Image.UnidentifiedImageError) as exc:
        raise DataError(f"cannot decode {path}: {exc}") from exc
    if arr.size == 0:
        raise DataError(f"zero-sized image: {path}")
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return arr.astype(np.float32) / np.float32(255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] values to 8 bits with round-half-up."""
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(img: np.ndarray, path: str | Path) -> None:
    arr = to_uint8(np.asarray(img))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if arr.shape[0] == 1:
        Image.fromarray(arr[0], mode="L").save(path)
    else:
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


def rgb_to_grayscale(img: np.ndarray) -> np.ndarray:
    """BT.601 luma projection of a 3-channel image."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise DataError(f"rgb_to_grayscale needs a 3-channel image, got shape {img.shape}")
    r, g, b = img[0], img[1], img[2]
    gray = LUMA[0] * r + LUMA[1] * g + LUMA[2] * b
    return np.clip(gray, 0.0, 1.0).astype(img.dtype)[None]


@dataclass(frozen=True)
class PairedSample:
    nir: np.ndarray
    rgb: np.ndarray
    gray: np.ndarray
    id: str

    @classmethod
    def make(cls, nir: np.ndarray, rgb: np.ndarray, id: str) -> "PairedSample":
        check_image(nir, 1)
        check_image(rgb, 3)
        if nir.shape[1:] != rgb.shape[1:]:
            raise DataError(f"{id}: NIR {nir.shape[1:]} and RGB {rgb.shape[1:]} differ in size")
        return cls(nir=nir, rgb=rgb, gray=rgb_to_grayscale(rgb), id=id)


@dataclass(frozen=True)
class GraySample:
    rgb: np.ndarray
    gray: np.ndarray
    id: str

    @classmethod
    def make(cls, rgb: np.ndarray, id: str) -> "GraySample":
        check_image(rgb, 3)
        return cls(rgb=rgb, gray=rgb_to_grayscale(rgb), id=id)


@dataclass(frozen=True)
class AugmentConfig:
    enable_scale: bool = True
    enable_mirror: bool = True
    enable_crop: bool = True
    enable_contrast: bool = True
    scale_range: tuple[float, float] = (1.0, 1.25)
    crop_size: int | None = None  # None keeps the input size
    contrast_range: tuple[float, float] = (0.8, 1.2)

    def __post_init__(self) -> None:
        lo, hi = self.scale_range
        if not (0.5 < lo <= hi <= 2.0):
            raise DataError(f"scale_range {self.scale_range} must lie in (0.5, 2.0]")
        lo, hi = self.contrast_range
        if not (0.5 <= lo <= hi <= 1.5):
            raise DataError(f"contrast_range {self.contrast_range} must lie in [0.5, 1.5]")
        if self.crop_size is not None and self.crop_size < MIN_SIDE:
            raise DataError(f"crop_size {self.crop_size} below {MIN_SIDE}")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(enable_scale=False, enable_mirror=False, enable_crop=False, enable_contrast=False)


def _resize(img: np.ndarray, h: int, w: int) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(img))[None]
    out = F.interpolate(t, size=(h, w), mode="bilinear", align_corners=False)
    return out[0].numpy().clip(0.0, 1.0)


def _contrast(img: np.ndarray, gain: float) -> np.ndarray:
    return np.clip(gain * (img - 0.5) + 0.5, 0.0, 1.0).astype(img.dtype)


def augment(sample, rng: np.random.Generator, cfg: AugmentConfig, *, force_flip: bool | None = None):
    """Apply scale -> crop -> mirror -> contrast identically to every image of a sample.

    Grayscale is re-derived from the augmented RGB, so the pairing invariant
    holds exactly. ``force_flip`` overrides the coin toss for the mirror step.
    """
    images = {"rgb": sample.rgb}
    if isinstance(sample, PairedSample):
        images["nir"] = sample.nir
    _, h, w = sample.rgb.shape

    if cfg.enable_scale:
        s = float(rng.uniform(*cfg.scale_range))
        nh, nw = max(MIN_SIDE, int(round(h * s))), max(MIN_SIDE, int(round(w * s)))
        if (nh, nw) != (h, w):
            images = {k: _resize(v, nh, nw) for k, v in images.items()}
            h, w = nh, nw

    if cfg.enable_crop:
        size = cfg.crop_size or min(sample.rgb.shape[1:])
        if size > h or size > w:
            raise DataError(f"crop {size} larger than image {h}x{w}")
        top = int(rng.integers(0, h - size + 1))
        left = int(rng.integers(0, w - size + 1))
        images = {k: v[:, top:top + size, left:left + size] for k, v in images.items()}

    if cfg.enable_mirror:
        flip = bool(rng.integers(0, 2)) if force_flip is None else force_flip
        if flip:
            images = {k: v[:, :, ::-1] for k, v in images.items()}

    if cfg.enable_contrast:
        gain = float(rng.uniform(*cfg.contrast_range))
        if gain != 1.0:
            images = {k: _contrast(v, gain) for k, v in images.items()}

    images = {k: np.ascontiguousarray(v, dtype=np.float32) for k, v in images.items()}
    if isinstance(sample, PairedSample):
        return PairedSample.make(images["nir"], images["rgb"], sample.id)
    return GraySample.make(images["rgb"], sample.id)


@dataclass
class Batch:
    """One training step's worth of data: a NIR-domain and a grayscale-domain half."""

    paired: list[PairedSample]
    gray: list[GraySample]

    @property
    def ids(self) -> tuple[list[str], list[str]]:
        return [s.id for s in self.paired], [s.id for s in self.gray]

    def tensors(self, dtype=torch.float32) -> dict[str, torch.Tensor]:
        def stack(arrs):
            return torch.from_numpy(np.stack(arrs)).to(dtype)

        return {
            "nir": stack([s.nir for s in self.paired]),
            "rgb_n": stack([s.rgb for s in self.paired]),
            "gray_n": stack([s.gray for s in self.paired]),
            "gray": stack([s.gray for s in self.gray]),
            "rgb_g": stack([s.rgb for s in self.gray]),
        }


def gray_pool(paired: Sequence[PairedSample], gray_only: Sequence[GraySample]) -> list[GraySample]:
    pool = list(gray_only)
    pool += [GraySample(rgb=s.rgb, gray=s.gray, id=s.id) for s in paired]
    return pool


def make_batches(
    paired: Sequence[PairedSample],
    gray_only: Sequence[GraySample],
    batch_size: int,
    rng: np.random.Generator,
) -> list[Batch]:
    """Build one epoch of batches; short final batches are dropped."""
    if not paired or not gray_only:
        raise DataError("make_batches needs non-empty paired and gray-only sets")
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    if batch_size > len(paired):
        raise DataError(f"batch_size {batch_size} exceeds {len(paired)} paired samples")
    pool = gray_pool(paired, gray_only)
    n_batches = len(paired) // batch_size
    p_order = rng.permutation(len(paired))
    g_order = rng.permutation(len(pool))
    batches = []
    for b in range(n_batches):
        sl = slice(b * batch_size, (b + 1) * batch_size)
        batches.append(Batch([paired[i] for i in p_order[sl]], [pool[i] for i in g_order[sl]]))
    return batches


def iter_epoch(
    paired: Sequence[PairedSample],
    gray_only: Sequence[GraySample],
    batch_size: int,
    rng: np.random.Generator,
    aug: AugmentConfig | None = None,
) -> Iterator[Batch]:
    """Seeded epoch iterator, augmenting each sample in delivery order."""
    for batch in make_batches(paired, gray_only, batch_size, rng):
        if aug is not None:
            batch = Batch([augment(s, rng, aug) for s in batch.paired], [augment(s, rng, aug) for s in batch.gray])
        yield batch


# --- dataset directory layout -------------------------------------------------

def load_dataset(root: str | Path) -> tuple[list[PairedSample], list[GraySample]]:
    """Read ``paired/{nir,rgb}/<id>.png`` and ``gray_only/rgb/<id>.png`` under ``root``."""
    root = Path(root)
    nir_dir, rgb_dir = root / "paired" / "nir", root / "paired" / "rgb"
    gray_dir = root / "gray_only" / "rgb"
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not found: {root}")
    paired = []
    if nir_dir.is_dir():
        for nir_path in sorted(nir_dir.glob("*.png")):
            rgb_path = rgb_dir / nir_path.name
            if not rgb_path.is_file():
                raise DataError(f"no RGB partner for {nir_path.name}")
            nir = load_image(nir_path)
            if nir.shape[0] != 1:
                nir = rgb_to_grayscale(nir)
            rgb = load_image(rgb_path)
            if rgb.shape[0] != 3:
                raise DataError(f"{rgb_path} is not an RGB image")
            paired.append(PairedSample.make(nir, rgb, nir_path.stem))
    gray_only = []
    if gray_dir.is_dir():
        for p in sorted(gray_dir.glob("*.png")):
            rgb = load_image(p)
            if rgb.shape[0] != 3:
                raise DataError(f"{p} is not an RGB image")
            gray_only.append(GraySample.make(rgb, p.stem))
    return paired, gray_only


def write_dataset(root: str | Path, paired: Sequence[PairedSample], gray_only: Sequence[GraySample]) -> None:
    root = Path(root)
    for s in paired:
        save_image(s.nir, root / "paired" / "nir" / f"{s.id}.png")
        save_image(s.rgb, root / "paired" / "rgb" / f"{s.id}.png")
    for s in gray_only:
        save_image(s.rgb, root / "gray_only" / "rgb" / f"{s.id}.png")


# --- synthetic spectral pairs ---------------------------------------------------

N_BUMPS = 4
N_MATERIALS = 5
NOISE_SIGMA = 0.01

# Material colours, indexed by field level (low -> high).
PALETTE = np.array(
    [
        [0.06, 0.10, 0.95],  # water
        [0.11, 0.77, 0.53],  # forest
        [0.48, 0.77, 0.56],  # grass
        [0.92, 0.73, 0.54],  # sand
        [0.85, 0.85, 0.83],  # snow; darker than sand in NIR, brighter in luma
    ],
    dtype=np.float64,
)


def srgb_to_linear(v):
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def material_nir(rgb) -> np.ndarray:
    """NIR response of a material colour: clamp(0.6*R_lin + 0.4*exp(-2B), 0, 1)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r_lin = srgb_to_linear(rgb[..., 0])
    return np.clip(0.6 * r_lin + 0.4 * np.exp(-2.0 * rgb[..., 2]), 0.0, 1.0)


def material_field(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth random field: a sum of ``N_BUMPS`` positive Gaussian bumps.

    Positive bumps make the level sets nest around peaks, so a tone-inverted
    image is distinguishable from a real one.
    """
    yy, xx = np.mgrid[0:size, 0:size] / size
    fld = np.zeros((size, size))
    for _ in range(N_BUMPS):
        cy, cx = rng.uniform(-0.1, 1.1, size=2)
        width = rng.uniform(0.15, 0.45)
        amp = rng.uniform(0.5, 1.0)
        fld += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
    return fld


def material_labels(fld: np.ndarray) -> np.ndarray:
    """Quantize a field into ``N_MATERIALS`` labels at its own quantiles."""
    edges = np.quantile(fld, np.linspace(0, 1, N_MATERIALS + 1)[1:-1])
    return np.searchsorted(edges, fld, side="right")


def synth_scene(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    labels = material_labels(material_field(rng, size))
    rgb = PALETTE[labels].transpose(2, 0, 1)
    nir = material_nir(PALETTE)[labels][None]
    rgb = np.clip(rgb + rng.normal(0.0, NOISE_SIGMA, rgb.shape), 0.0, 1.0)
    nir = np.clip(nir + rng.normal(0.0, NOISE_SIGMA, nir.shape), 0.0, 1.0)
    return nir.astype(np.float32), rgb.astype(np.float32)


def synth_dataset(
    rng: np.random.Generator | int, n_paired: int, n_gray: int, size: int
) -> tuple[list[PairedSample], list[GraySample]]:
    """Generate scenes with a fixed per-material NIR/RGB relation.

    Every scene draws from its own child generator, so sample ``i`` depends only on
    the parent seed and ``i``.
    """
    if size < 16:
        raise DataError(f"synthetic size must be >= 16, got {size}")
    if n_paired < 1 or n_gray < 1:
        raise DataError("n_paired and n_gray must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    children = rng.spawn(n_paired + n_gray)
    paired = []
    for i in range(n_paired):
        nir, rgb = synth_scene(children[i], size)
        paired.append(PairedSample.make(nir, rgb, f"p{i:05d}"))
    gray_only = []
    for i in range(n_gray):
        _, rgb = synth_scene(children[n_paired + i], size)
        gray_only.append(GraySample.make(rgb, f"g{i:05d}"))
    return paired, gray_only
