"""Shared fixtures: providers, a small synthetic world, and a stub provider
whose embeddings the tests control exactly."""

from __future__ import annotations

import numpy as np
import pytest

from pseudocap.captions import CaptionGenConfig, generate_pseudo_captions
from pseudocap.dataset import assign_splits, load_manifest
from pseudocap.embedding import ProviderDescriptor, ReferenceProvider
from pseudocap.fixture import make_fixture
from pseudocap.vocab import load_vocabulary


class StubProvider:
    """Provider with preset text embeddings; images embed via a fixed map.

    ``table`` maps exact text -> unit vector. Unknown text falls back to a
    hash-seeded unit vector so tests fail loudly only when they meant to
    pin a value.
    """

    def __init__(self, dim: int, table: dict[str, np.ndarray] | None = None,
                 image_fn=None):
        self._dim = dim
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in (table or {}).items()}
        self._image_fn = image_fn
        self._descriptor = ProviderDescriptor("stub", dim, False, 0)

    @property
    def descriptor(self):
        return self._descriptor

    @property
    def dimension(self):
        return self._dim

    def encode_text(self, text: str) -> np.ndarray:
        key = text.strip().lower()
        if key in self.table:
            vec = self.table[key]
        else:
            rng = np.random.default_rng(abs(hash(key)) % (2 ** 32))
            vec = rng.standard_normal(self._dim)
        return vec / np.linalg.norm(vec)

    def encode_image(self, image) -> np.ndarray:
        if self._image_fn is None:
            raise NotImplementedError("stub has no image encoder")
        vec = np.asarray(self._image_fn(image), dtype=np.float64)
        return vec / np.linalg.norm(vec)


@pytest.fixture(scope="session")
def provider64():
    return ReferenceProvider(dim=64, seed=0)


@pytest.fixture(scope="session")
def provider8():
    return ReferenceProvider(dim=8, seed=0)


@pytest.fixture(scope="session")
def small_world(tmp_path_factory):
    """4 objects x 3 views at 16x16: fast enough for unit tests."""
    root = tmp_path_factory.mktemp("small-world")
    info = make_fixture(root, n_objects=4, views_per_object=3, resolution=16, seed=21)
    manifest = assign_splits(load_manifest(info.manifest_path), seed=21)
    vocab = load_vocabulary(info.nouns_path, info.adjectives_path)
    return {"info": info, "manifest": manifest, "vocab": vocab, "root": root}


@pytest.fixture(scope="session")
def small_world_captions(small_world, provider8):
    config = CaptionGenConfig(k1=2, k2=3, captions_per_object=4)
    captions = generate_pseudo_captions(small_world["manifest"], small_world["vocab"],
                                        provider8, config)
    return captions
