#!/usr/bin/env python3
"""Generate pseudo captions for a synthetic fixture world, end to end.

Builds an 8-object world with the frozen toy generator, retrieves the
best-matching nouns and adjectives per object, enumerates the templated
candidates, and keeps the highest-scoring sentences. The result is the
caption file that training consumes.
"""

import tempfile
from pathlib import Path

from pseudocap import (
    CaptionGenConfig, ReferenceProvider, generate_pseudo_captions, load_manifest,
    make_fixture, save_captions,
)
from pseudocap.vocab import load_vocabulary

root = Path(tempfile.mkdtemp(prefix="pseudocap-demo-"))
info = make_fixture(root, n_objects=8, views_per_object=8, resolution=32, seed=0)
manifest = load_manifest(info.manifest_path)
vocab = load_vocabulary(info.nouns_path, info.adjectives_path)
print(f"world: {len(manifest.objects())} objects under {root}")
print(f"vocabulary: {len(vocab.nouns)} nouns, {len(vocab.adjectives)} adjectives")

provider = ReferenceProvider(dim=8, seed=0)
config = CaptionGenConfig()  # k1=3, k2=6, 20 captions per object
dataset = generate_pseudo_captions(manifest, vocab, provider, config)

print(f"\ncandidates per object: {config.candidate_count()} "
      f"(3 nouns x (6 + 6*5) combinations)")
for object_id in dataset.object_ids()[:3]:
    top = dataset.captions_for(object_id)[:4]
    print(f"\n  {object_id}:")
    for cap in top:
        print(f"    {cap.score:+.4f}  {cap.text}")

out = root / "captions.tsv"
save_captions(dataset, out)
print(f"\nwrote {len(dataset.captions)} captions to {out}")
