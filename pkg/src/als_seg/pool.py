"""Sample pool data model.

Images, pixel masks, coarse image-level labels, labeled/unlabeled pool
partitions, labeled-ratio arithmetic, and the on-disk dataset layout
(a directory of images plus a tab-separated sidecar index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

# Reserved mask value excluded from all counts, losses and metrics.
IGNORE_INDEX = 255

INDEX_FILENAME = "index.tsv"
META_FILENAME = "meta.txt"


@dataclass(frozen=True)
class PixelMask:
    """Dense per-pixel class assignment for one sample.

    ``classes`` is an H x W integer array whose entries are either a class
    index in [0, num_classes) or IGNORE_INDEX.
    """

    classes: np.ndarray
    num_classes: int

    def __post_init__(self):
        arr = np.asarray(self.classes)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"mask entries must be integers, got dtype {arr.dtype}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.num_classes > IGNORE_INDEX:
            raise ValueError(f"num_classes must stay below the IGNORE sentinel {IGNORE_INDEX}")
        valid = (arr >= 0) & ((arr < self.num_classes) | (arr == IGNORE_INDEX))
        if not valid.all():
            bad = np.unique(arr[~valid])
            raise ValueError(f"mask contains out-of-range class values {bad.tolist()}")
        object.__setattr__(self, "classes", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.classes.shape  # type: ignore[return-value]

    def scored_pixels(self) -> np.ndarray:
        """Boolean map of pixels that carry a real class (not IGNORE)."""
        return self.classes != IGNORE_INDEX


@dataclass(frozen=True)
class ImageSample:
    """One image with optional coarse label and optional pixel mask."""

    sample_id: str
    pixels: np.ndarray  # H x W x C, float in [0, 1]
    image_label: int | None = None
    mask: PixelMask | None = None

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValueError(f"pixels must be H x W x C with positive dims, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("pixel intensities must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("pixel intensities must lie in [0, 1]")
        if self.mask is not None and self.mask.shape != arr.shape[:2]:
            raise ValueError(
                f"mask shape {self.mask.shape} does not match image shape {arr.shape[:2]}"
            )
        object.__setattr__(self, "pixels", arr)


def derive_image_label(mask: PixelMask) -> int:
    """Coarse image-level label: the class covering the most pixels.

    Ties break toward the lowest class index; an all-IGNORE mask has no
    derivable label and raises.
    """
    flat = mask.classes[mask.scored_pixels()]
    if flat.size == 0:
        raise ValueError("cannot derive an image label from an all-IGNORE mask")
    counts = np.bincount(flat, minlength=mask.num_classes)
    return int(np.argmax(counts))


def target_labeled_count(ratio: float, pool_size: int) -> int:
    """Number of samples granted labels at the given ratio: floor(R*N), at least 1."""
    if not (0.0 < ratio <= 1.0):
        raise ValueError(f"labeled ratio must be in (0, 1], got {ratio}")
    if pool_size < 1:
        raise ValueError(f"pool size must be >= 1, got {pool_size}")
    return max(1, math.floor(ratio * pool_size))


def split_train_val(
    ids, train_fraction: float, seed: int
) -> tuple[list[str], list[str]]:
    """Disjoint train/val split of sample ids, deterministic per seed.

    Train side gets round(train_fraction * n) ids; both sides are returned
    sorted so callers iterate deterministically.
    """
    ids = sorted(ids)
    if len(ids) < 2:
        raise ValueError("need at least 2 ids to split")
    if not (0.0 < train_fraction < 1.0):
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n_train = int(math.floor(train_fraction * len(ids) + 0.5))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    train = sorted(ids[i] for i in order[:n_train])
    val = sorted(ids[i] for i in order[n_train:])
    return train, val


@dataclass
class PoolPartition:
    """Disjoint labeled/unlabeled split of a fixed id universe.

    Single-writer: mutation happens only through :meth:`move_to_labeled`,
    which re-checks the disjointness and coverage invariants.
    """

    all_ids: frozenset[str]
    labeled_ids: set[str] = field(default_factory=set)
    unlabeled_ids: set[str] = field(default_factory=set)

    @classmethod
    def fresh(cls, ids) -> "PoolPartition":
        universe = frozenset(ids)
        return cls(all_ids=universe, labeled_ids=set(), unlabeled_ids=set(universe))

    def __post_init__(self):
        self.check_invariants()

    def check_invariants(self) -> None:
        if self.labeled_ids & self.unlabeled_ids:
            raise ValueError("labeled and unlabeled pools overlap")
        if (self.labeled_ids | self.unlabeled_ids) != set(self.all_ids):
            raise ValueError("labeled + unlabeled pools do not cover the id universe")

    def move_to_labeled(self, ids) -> None:
        moving = set(ids)
        missing = moving - self.unlabeled_ids
        if missing:
            raise ValueError(f"ids not in the unlabeled pool: {sorted(missing)}")
        self.unlabeled_ids -= moving
        self.labeled_ids |= moving
        self.check_invariants()


@dataclass(frozen=True)
class IndexRecord:
    sample_id: str
    image_path: str
    mask_path: str | None
    image_label: int | None


def _parse_index_line(line: str, lineno: int) -> IndexRecord:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 4:
        raise ValueError(f"index line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
    sample_id, image_path, mask_path, label = parts
    if not sample_id or not image_path:
        raise ValueError(f"index line {lineno}: sample id and image path are required")
    return IndexRecord(
        sample_id=sample_id,
        image_path=image_path,
        mask_path=None if mask_path == "-" else mask_path,
        image_label=None if label == "-" else int(label),
    )


class SegmentationDataset:
    """Read-only view of a dataset directory described by its sidecar index.

    Index format, one record per line::

        <sample_id>\\t<image_path>\\t<mask_path|->\\t<image_label|->

    Paths are relative to the dataset root. Masks are single-channel images
    whose pixel values are class indices, with IGNORE encoded as 255.
    """

    def __init__(self, root: Path, records: list[IndexRecord], num_classes: int | None = None):
        self.root = Path(root)
        ids = [r.sample_id for r in records]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate sample ids in index")
        self._records = {r.sample_id: r for r in records}
        self.ids: tuple[str, ...] = tuple(sorted(ids))
        self._num_classes = num_classes
        self._image_cache: dict[str, np.ndarray] = {}
        self._mask_cache: dict[str, PixelMask] = {}

    @classmethod
    def load(cls, root) -> "SegmentationDataset":
        root = Path(root)
        index_path = root / INDEX_FILENAME
        if not index_path.is_file():
            raise FileNotFoundError(f"no dataset index at {index_path}")
        records = []
        with open(index_path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip() or line.startswith("#"):
                    continue
                records.append(_parse_index_line(line, lineno))
        num_classes = None
        meta_path = root / META_FILENAME
        if meta_path.is_file():
            for line in meta_path.read_text(encoding="utf-8").splitlines():
                if line.startswith("num_classes="):
                    num_classes = int(line.split("=", 1)[1])
        return cls(root, records, num_classes=num_classes)

    def __len__(self) -> int:
        return len(self.ids)

    def record(self, sample_id: str) -> IndexRecord:
        try:
            return self._records[sample_id]
        except KeyError:
            raise KeyError(f"unknown sample id {sample_id!r}") from None

    @property
    def num_classes(self) -> int:
        if self._num_classes is None:
            # Fall back to scanning masks; slow, so cache the answer.
            top = -1
            for sid in self.ids:
                mask = self.load_mask(sid)
                if mask is not None:
                    scored = mask.classes[mask.scored_pixels()]
                    if scored.size:
                        top = max(top, int(scored.max()))
            if top < 0:
                raise ValueError("cannot infer class count: dataset has no scored mask pixels")
            self._num_classes = top + 1
        return self._num_classes

    def load_image(self, sample_id: str) -> np.ndarray:
        """Image as H x W x C float64 in [0, 1]; normalized at ingestion."""
        if sample_id not in self._image_cache:
            rec = self.record(sample_id)
            with Image.open(self.root / rec.image_path) as img:
                arr = np.asarray(img, dtype=np.float64)
            if arr.ndim == 2:
                arr = arr[:, :, None]
            self._image_cache[sample_id] = arr / 255.0
        return self._image_cache[sample_id]

    def has_mask(self, sample_id: str) -> bool:
        return self.record(sample_id).mask_path is not None

    def load_mask(self, sample_id: str) -> PixelMask | None:
        rec = self.record(sample_id)
        if rec.mask_path is None:
            return None
        if sample_id not in self._mask_cache:
            with Image.open(self.root / rec.mask_path) as img:
                arr = np.asarray(img.convert("L"), dtype=np.int64)
            self._mask_cache[sample_id] = PixelMask(arr, self.num_classes)
        return self._mask_cache[sample_id]

    def image_label(self, sample_id: str) -> int | None:
        """Coarse label from the index, or derived from the mask when absent."""
        rec = self.record(sample_id)
        if rec.image_label is not None:
            return rec.image_label
        mask = self.load_mask(sample_id)
        if mask is None:
            return None
        return derive_image_label(mask)

    def load_sample(self, sample_id: str) -> ImageSample:
        return ImageSample(
            sample_id=sample_id,
            pixels=self.load_image(sample_id),
            image_label=self.image_label(sample_id),
            mask=self.load_mask(sample_id),
        )
