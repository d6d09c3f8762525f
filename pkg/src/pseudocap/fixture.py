"""Synthetic fixture world: objects with hidden latents, rendered multi-view.

The fixture dataset is produced by the same frozen toy generator used in
training, with per-object ground-truth latents that stay hidden from the
trainer. That keeps the training images in-distribution, so a desk-scale
run has an actual optimum to move toward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import CameraPose, DatasetManifest, ManifestRecord, save_manifest
from .imageio import save_image_rgba
from .model import GeneratorConfig, ToyGenerator

FIXTURE_NOUNS = (
    "airplane", "bag", "basket", "bed", "bench", "bicycle", "boat", "bottle",
    "bowl", "box", "bus", "cabinet", "camera", "can", "cap", "car", "chair",
    "clock", "couch", "cup", "desk", "dresser", "guitar", "helmet", "jar",
    "keyboard", "lamp", "laptop", "monitor", "motorbike", "mug", "phone",
    "piano", "pillow", "pot", "printer", "rocket", "skateboard", "sofa",
    "speaker", "stool", "table", "telephone", "tower", "train", "vase",
)

FIXTURE_ADJECTIVES = (
    "angular", "big", "black", "blue", "boxy", "bright", "broad", "brown",
    "bulky", "clean", "colorful", "compact", "curvy", "dark", "deep", "dim",
    "dull", "flat", "fresh", "glossy", "golden", "gray", "green", "heavy",
    "huge", "light", "little", "long", "matte", "narrow", "neat", "new",
    "old", "orange", "pale", "pink", "plain", "polished", "purple", "red",
    "round", "rough", "shiny", "short", "silver", "sleek", "slim", "small",
    "smooth", "soft", "solid", "square", "tall", "thick", "thin", "tiny",
    "vivid", "white", "wide", "yellow",
)

DEFAULT_CLASSES = ("car", "chair", "table", "lamp")

ELEVATION_RANGE = (-math.pi / 6.0, math.pi / 3.0)
AZIMUTH_RANGE = (0.0, 2.0 * math.pi)

# Hidden ground-truth latents live at the magnitude a freshly initialized
# mapping network emits, so desk-scale training starts in the right regime.
LATENT_SCALE = 0.1


# The fixture vocabulary stays small so retrieved words overlap across
# objects: caption embeddings then cluster, which gives short training runs
# a strong common gradient to follow.
FIXTURE_VOCAB_NOUNS = 10
FIXTURE_VOCAB_ADJECTIVES = 12


@dataclass
class FixtureInfo:
    manifest_path: Path
    nouns_path: Path
    adjectives_path: Path
    gen_seed: int
    resolution: int
    object_ids: list[str]


def write_fixture_vocab(out_dir: Path, n_nouns: int = FIXTURE_VOCAB_NOUNS,
                        n_adjectives: int = FIXTURE_VOCAB_ADJECTIVES) -> tuple[Path, Path]:
    nouns_path = out_dir / "nouns.txt"
    adjectives_path = out_dir / "adjectives.txt"
    for path, tokens in ((nouns_path, FIXTURE_NOUNS[:n_nouns]),
                         (adjectives_path, FIXTURE_ADJECTIVES[:n_adjectives])):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for tok in sorted(tokens):
                fh.write(tok + "\n")
    return nouns_path, adjectives_path


def _draw_object_latents(rng: np.random.Generator, generator: ToyGenerator):
    """Ground-truth latents; degenerate silhouettes (near-empty or
    frame-filling) are redrawn so every object is actually visible."""
    probe_pose = CameraPose(0.0, 0.0)
    for _ in range(20):
        w_geo = LATENT_SCALE * rng.standard_normal(generator.config.latent_dim)
        w_tex = LATENT_SCALE * rng.standard_normal(generator.config.latent_dim)
        alpha = generator.render(w_geo, w_tex, probe_pose)[..., 3]
        if 0.05 <= float(alpha.mean()) <= 0.85:
            return w_geo, w_tex
    return w_geo, w_tex


def make_fixture(out_dir, n_objects: int = 8, views_per_object: int = 8,
                 resolution: int = 32, seed: int = 0,
                 classes=DEFAULT_CLASSES, gen_seed: int | None = None) -> FixtureInfo:
    """Generate images, a manifest, and fixture vocabulary files under out_dir."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    gen_seed = seed if gen_seed is None else gen_seed
    generator = ToyGenerator(GeneratorConfig(resolution=resolution), seed=gen_seed)
    latent_rng = np.random.default_rng([seed, 50])
    pose_rng = np.random.default_rng([seed, 51])

    records = []
    object_ids = []
    for i in range(n_objects):
        object_id = f"obj{i:04d}"
        object_ids.append(object_id)
        class_name = classes[i % len(classes)]
        w_geo, w_tex = _draw_object_latents(latent_rng, generator)
        obj_dir = out_dir / "images" / object_id
        obj_dir.mkdir(parents=True, exist_ok=True)
        for v in range(views_per_object):
            azimuth = pose_rng.uniform(*AZIMUTH_RANGE)
            elevation = pose_rng.uniform(*ELEVATION_RANGE)
            pose = CameraPose(azimuth, elevation)
            pixels = generator.render(w_geo, w_tex, pose)
            rel_path = f"images/{object_id}/view{v:02d}.png"
            save_image_rgba(pixels, out_dir / rel_path)
            records.append(ManifestRecord(object_id, class_name, rel_path,
                                          pose.azimuth, pose.elevation))

    manifest = DatasetManifest(records, root=out_dir)
    manifest_path = out_dir / "manifest.tsv"
    save_manifest(manifest, manifest_path)
    nouns_path, adjectives_path = write_fixture_vocab(out_dir)
    return FixtureInfo(manifest_path, nouns_path, adjectives_path, gen_seed,
                       resolution, object_ids)
