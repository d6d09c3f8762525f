#!/usr/bin/env python3
"""Walk through the deterministic embedding provider and word retrieval.

The reference provider maps text through hashed character trigrams and
images through 4x4 grid pooling, both into one shared unit sphere. Cosine
similarity in that space drives everything downstream, so this demo builds
a feel for what those similarities look like.
"""

import numpy as np

from pseudocap import CaptionGenConfig, ReferenceProvider, cosine, retrieve_words
from pseudocap.vocab import Vocabulary

provider = ReferenceProvider(dim=64, seed=0)

print("== text embeddings ==")
for text in ("a red car", "a crimson car", "a wooden table"):
    vec = provider.encode_text(text)
    print(f"  {text!r}: dim={vec.shape[0]} norm={np.linalg.norm(vec):.6f}")

a = provider.encode_text("a red car")
b = provider.encode_text("a red cart")   # shares most trigrams
c = provider.encode_text("a wooden table")
print(f"  cos('a red car', 'a red cart')    = {cosine(a, b):+.4f}")
print(f"  cos('a red car', 'a wooden table') = {cosine(a, c):+.4f}")

print("\n== image embeddings ==")
rng = np.random.default_rng(7)
image = rng.uniform(0, 1, (32, 32, 4))
e_img = provider.encode_image(image)
print(f"  random RGBA raster -> norm {np.linalg.norm(e_img):.6f}")
print(f"  re-encoding is bit-identical: "
      f"{np.array_equal(e_img, provider.encode_image(image))}")

print("\n== retrieving words for an image ==")
vocab = Vocabulary(
    ("boat", "car", "chair", "lamp", "sofa", "table"),
    ("black", "blue", "boxy", "bright", "dark", "red", "round", "shiny"),
)
config = CaptionGenConfig(k1=2, k2=3, captions_per_object=4)
nouns, adjectives = retrieve_words([e_img], vocab, provider, config)
print(f"  top-2 nouns:      {nouns}")
print(f"  top-3 adjectives: {adjectives}")
