"""Synthetic segmentation dataset generator.

Desk-scale stand-in for real land-cover imagery: each image is a noisy
class-colored background with a few overlaid shapes from other classes.
Class imbalance is controlled by the background prior and a rare-class
rate; the last class index appears only in a controllable fraction of
images, where it forms the dominant region.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .pool import INDEX_FILENAME, META_FILENAME, PixelMask, derive_image_label
from .seeding import derived_rng

SHAPE_KINDS = ("rectangles", "disks", "stripes")

# Fixed RGB anchors; classes beyond the palette get hashed hues. The last
# palette entry is deliberately an in-between hue (think vegetation-stained
# water) so a sparsely-labeled model finds those pixels genuinely ambiguous.
_PALETTE = [
    (0.80, 0.15, 0.15),
    (0.15, 0.45, 0.80),
    (0.20, 0.70, 0.25),
    (0.42, 0.45, 0.40),
    (0.90, 0.80, 0.15),
    (0.60, 0.20, 0.75),
    (0.20, 0.75, 0.70),
    (0.55, 0.35, 0.20),
]

NOISE_SIGMA = 0.06


def class_color(index: int) -> tuple[float, float, float]:
    if index < len(_PALETTE):
        return _PALETTE[index]
    rng = np.random.default_rng(index)
    return tuple(0.2 + 0.6 * rng.random(3))


@dataclass
class SynthSpec:
    n_images: int = 200
    image_size: tuple[int, int] = (32, 32)
    num_classes: int = 4
    class_prior: tuple[float, ...] = ()
    shape_vocabulary: tuple[str, ...] = SHAPE_KINDS
    rare_class_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_images < 10:
            raise ValueError("n_images must be >= 10")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        h, w = self.image_size
        if h < 4 or w < 4:
            raise ValueError("image_size must be at least 4x4")
        if not self.class_prior:
            self.class_prior = tuple([1.0 / self.num_classes] * self.num_classes)
        prior = np.asarray(self.class_prior, dtype=np.float64)
        if prior.shape != (self.num_classes,):
            raise ValueError(
                f"class_prior must have {self.num_classes} entries, got {prior.shape}"
            )
        if (prior < 0).any() or abs(prior.sum() - 1.0) > 1e-6:
            raise ValueError("class_prior must be a simplex vector")
        if not (0.0 <= self.rare_class_rate < 1.0):
            raise ValueError("rare_class_rate must be in [0, 1)")
        unknown = set(self.shape_vocabulary) - set(SHAPE_KINDS)
        if unknown or not self.shape_vocabulary:
            raise ValueError(f"shape_vocabulary must be a non-empty subset of {SHAPE_KINDS}")


def _draw_shape(mask: np.ndarray, kind: str, cls: int, rng: np.random.Generator) -> None:
    # Shapes stay small relative to the canvas so the background class
    # dominates both the pixel histogram and the image-level appearance.
    h, w = mask.shape
    if kind == "rectangles":
        rh = rng.integers(max(2, h // 8), max(3, h // 4) + 1)
        rw = rng.integers(max(2, w // 8), max(3, w // 4) + 1)
        top = rng.integers(0, h - rh + 1)
        left = rng.integers(0, w - rw + 1)
        mask[top : top + rh, left : left + rw] = cls
    elif kind == "disks":
        radius = rng.integers(2, max(3, h // 7) + 1)
        cy = rng.integers(radius, h - radius + 1)
        cx = rng.integers(radius, w - radius + 1)
        yy, xx = np.ogrid[:h, :w]
        mask[(yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2] = cls
    elif kind == "stripes":
        thickness = rng.integers(1, max(2, h // 8) + 1)
        if rng.random() < 0.5:
            start = rng.integers(0, h - thickness + 1)
            mask[start : start + thickness, :] = cls
        else:
            start = rng.integers(0, w - thickness + 1)
            mask[:, start : start + thickness] = cls
    else:
        raise ValueError(f"unknown shape kind {kind!r}")


def _render_image(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    h, w = mask.shape
    img = np.zeros((h, w, 3), dtype=np.float64)
    for cls in np.unique(mask):
        img[mask == cls] = class_color(int(cls))
    img += rng.normal(0.0, NOISE_SIGMA, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _generate_one(spec: SynthSpec, index: int) -> tuple[np.ndarray, np.ndarray]:
    rng = derived_rng(spec.seed, "image", index)
    h, w = spec.image_size
    rare_cls = spec.num_classes - 1
    common = np.arange(spec.num_classes - 1)
    prior = np.asarray(spec.class_prior, dtype=np.float64)[:-1]
    prior = prior / prior.sum()

    if rng.random() < spec.rare_class_rate:
        background = rare_cls
    else:
        background = int(rng.choice(common, p=prior))
    mask = np.full((h, w), background, dtype=np.int64)

    candidates = [c for c in common if c != background]
    for _ in range(int(rng.integers(1, 3))):
        if not candidates:
            break
        cls = int(rng.choice(candidates))
        kind = str(rng.choice(list(spec.shape_vocabulary)))
        _draw_shape(mask, kind, cls, rng)

    image = _render_image(mask, rng)
    return image, mask


def bundled_imbalanced_spec(seed: int = 42) -> SynthSpec:
    """The 200-image imbalanced benchmark the acceptance suite trains on.

    Four classes, 32x32 tiles, skewed background prior, rare class in ~10%
    of images where it forms the dominant region.
    """
    return SynthSpec(
        n_images=200,
        image_size=(32, 32),
        num_classes=4,
        class_prior=(0.45, 0.30, 0.15, 0.10),
        rare_class_rate=0.1,
        seed=seed,
    )


def generate_synthetic_dataset(spec: SynthSpec, out_dir) -> Path:
    """Write images, masks, sidecar index and meta; deterministic per seed."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    width = len(str(spec.n_images - 1))
    index_lines = []
    for i in range(spec.n_images):
        sample_id = f"s{i:0{width}d}"
        image, mask = _generate_one(spec, i)
        image_rel = f"images/{sample_id}.png"
        mask_rel = f"masks/{sample_id}.png"
        Image.fromarray((image * 255).round().astype(np.uint8)).save(out / image_rel)
        Image.fromarray(mask.astype(np.uint8), mode="L").save(out / mask_rel)
        label = derive_image_label(PixelMask(mask, spec.num_classes))
        index_lines.append(f"{sample_id}\t{image_rel}\t{mask_rel}\t{label}")

    (out / INDEX_FILENAME).write_text("\n".join(index_lines) + "\n", encoding="utf-8")
    meta = {
        "n_images": spec.n_images,
        "height": spec.image_size[0],
        "width": spec.image_size[1],
        "num_classes": spec.num_classes,
        "rare_class_rate": spec.rare_class_rate,
        "seed": spec.seed,
    }
    (out / META_FILENAME).write_text(
        "\n".join(f"{k}={v}" for k, v in meta.items()) + "\n", encoding="utf-8"
    )
    return out
