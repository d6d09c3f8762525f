"""Multi-view image dataset: manifests, splits, and training-pair sampling.

A manifest is a tab-separated text file, one rendered view per line, with a
``#taps-manifest v1`` header. Split assignment never touches the file; it is
a pure function of (object_id, seed) so it is stable under reordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import EmptyDatasetError, FormatError, InvalidInputError
from .hashing import fnv1a64
from .imageio import load_image_rgba

MANIFEST_HEADER = "#taps-manifest v1"
TWO_PI = 2.0 * math.pi

# Rendering conventions at production scale: 24 views per object, except
# low-data classes which get 100.
DEFAULT_VIEWS_PER_OBJECT = 24
LOW_DATA_VIEWS_PER_OBJECT = 100

SPLIT_FRACTIONS = (("train", 0.7), ("val", 0.1), ("test", 0.2))


def wrap_azimuth(azimuth: float) -> float:
    """Wrap into [0, 2*pi)."""
    wrapped = math.fmod(azimuth, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    return wrapped


@dataclass(frozen=True)
class CameraPose:
    azimuth: float
    elevation: float

    def __post_init__(self):
        object.__setattr__(self, "azimuth", wrap_azimuth(float(self.azimuth)))
        object.__setattr__(self, "elevation", float(self.elevation))
        if not (math.isfinite(self.azimuth) and math.isfinite(self.elevation)):
            raise InvalidInputError("camera pose must be finite")


@dataclass
class RenderedImage:
    pixels: np.ndarray  # (H, W, 4) float64 in [0, 1]
    pose: CameraPose
    object_id: str = ""

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 4:
            raise InvalidInputError(f"expected (H, W, 4) pixels, got {self.pixels.shape}")
        h, w = self.pixels.shape[:2]
        if h < 4 or w < 4:
            raise InvalidInputError(f"image too small: {h}x{w}")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise InvalidInputError("pixel values outside [0, 1]")


@dataclass(frozen=True)
class ManifestRecord:
    object_id: str
    class_name: str
    image_path: str  # relative to the manifest directory
    azimuth: float
    elevation: float


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    root: Path
    splits: dict[str, str] | None = None  # object_id -> train|val|test

    def objects(self) -> list[str]:
        return sorted({r.object_id for r in self.records})

    def records_for(self, object_id: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.object_id == object_id]

    def object_class(self, object_id: str) -> str:
        for r in self.records:
            if r.object_id == object_id:
                return r.class_name
        raise InvalidInputError(f"unknown object {object_id!r}")

    def split_objects(self, split: str) -> list[str]:
        if self.splits is None:
            raise InvalidInputError("splits not assigned yet")
        return sorted(o for o, s in self.splits.items() if s == split)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != MANIFEST_HEADER:
            raise FormatError(f"bad manifest header {header!r}", path=path, line=1)
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise FormatError(f"expected 5 tab-separated fields, got {len(parts)}",
                                  path=path, line=lineno)
            object_id, class_name, image_path, az_txt, el_txt = parts
            try:
                azimuth = float(az_txt)
                elevation = float(el_txt)
            except ValueError:
                raise FormatError(f"bad pose angles {az_txt!r}/{el_txt!r}",
                                  path=path, line=lineno)
            if not (math.isfinite(azimuth) and math.isfinite(elevation)):
                raise FormatError("non-finite pose angle", path=path, line=lineno)
            records.append(ManifestRecord(object_id, class_name, image_path,
                                          wrap_azimuth(azimuth), elevation))
    return DatasetManifest(records, root=path.parent)


def save_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(MANIFEST_HEADER + "\n")
        for r in manifest.records:
            fh.write(f"{r.object_id}\t{r.class_name}\t{r.image_path}"
                     f"\t{r.azimuth:.9g}\t{r.elevation:.9g}\n")


def split_counts(n_objects: int) -> dict[str, int]:
    """7:1:2 object counts via largest-remainder rounding."""
    quotas = [(name, frac * n_objects) for name, frac in SPLIT_FRACTIONS]
    counts = {name: int(math.floor(q)) for name, q in quotas}
    leftover = n_objects - sum(counts.values())
    # Distribute by descending fractional part; ties keep (train, val, test) order.
    by_frac = sorted(quotas, key=lambda item: -(item[1] - math.floor(item[1])))
    for name, _ in by_frac[:leftover]:
        counts[name] += 1
    return counts


def assign_splits(manifest: DatasetManifest, seed: int) -> DatasetManifest:
    """Deterministic 7:1:2 split by object, driven by a seeded object-id hash."""
    objects = manifest.objects()
    counts = split_counts(len(objects))
    ordered = sorted(objects, key=lambda o: (fnv1a64(o.encode("utf-8"), seed), o))
    splits: dict[str, str] = {}
    cursor = 0
    for name, _ in SPLIT_FRACTIONS:
        for obj in ordered[cursor:cursor + counts[name]]:
            splits[obj] = name
        cursor += counts[name]
    return replace(manifest, splits=splits)


def load_record_image(manifest: DatasetManifest, record: ManifestRecord) -> RenderedImage:
    path = manifest.root / record.image_path
    if not path.exists():
        raise FileNotFoundError(f"image file missing: {path}")
    return RenderedImage(load_image_rgba(path),
                         CameraPose(record.azimuth, record.elevation),
                         record.object_id)


def load_object_views(manifest: DatasetManifest, object_id: str) -> list[RenderedImage]:
    return [load_record_image(manifest, r) for r in manifest.records_for(object_id)]


def validate_view_counts(manifest: DatasetManifest,
                         expected: dict[str, int]) -> None:
    """Check each object's view count against its class convention."""
    per_object: dict[str, int] = {}
    for r in manifest.records:
        per_object[r.object_id] = per_object.get(r.object_id, 0) + 1
    for object_id, n_views in sorted(per_object.items()):
        cls = manifest.object_class(object_id)
        want = expected.get(cls, DEFAULT_VIEWS_PER_OBJECT)
        if n_views != want:
            raise InvalidInputError(
                f"object {object_id} ({cls}) has {n_views} views, expected {want}")


class PairSampler:
    """Uniform (training image, pseudo caption) pair sampler with an image cache.

    Images are drawn uniformly over the training split's view records; the
    caption is then drawn uniformly over that object's caption set. Objects
    without captions are excluded up front.
    """

    def __init__(self, manifest: DatasetManifest, caption_dataset):
        if manifest.splits is None:
            raise InvalidInputError("assign_splits must run before sampling")
        captions_by_object: dict[str, list] = {}
        for cap in caption_dataset.captions:
            captions_by_object.setdefault(cap.object_id, []).append(cap)
        eligible = [r for r in manifest.records
                    if manifest.splits.get(r.object_id) == "train"
                    and captions_by_object.get(r.object_id)]
        eligible.sort(key=lambda r: (r.object_id, r.image_path))
        if not eligible:
            raise EmptyDatasetError("no training images with captions available")
        self._manifest = manifest
        self._records = eligible
        self._captions = captions_by_object
        self._image_cache: dict[str, RenderedImage] = {}

    def sample(self, rng: np.random.Generator):
        record = self._records[int(rng.integers(len(self._records)))]
        image = self._image_cache.get(record.image_path)
        if image is None:
            image = load_record_image(self._manifest, record)
            self._image_cache[record.image_path] = image
        caps = self._captions[record.object_id]
        caption = caps[int(rng.integers(len(caps)))]
        return image, caption


def sample_training_pair(manifest: DatasetManifest, caption_dataset,
                         rng: np.random.Generator):
    """One-shot convenience wrapper around PairSampler."""
    return PairSampler(manifest, caption_dataset).sample(rng)
