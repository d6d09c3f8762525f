#!/usr/bin/env python3
"""Synthesize the three background families and composite a render over them.

Saves a grid image: random Fourier textures at several spectral decays,
Gaussian noise, checkerboards, and one render composited over each kind
(the same background is always shared by a training pair).
"""

import tempfile
from pathlib import Path

import numpy as np

from pseudocap import (
    GeneratorConfig, ToyGenerator, checkerboard, composite, fourier_texture,
    gaussian_background,
)
from pseudocap.dataset import CameraPose
from pseudocap.imageio import save_image_rgba

size = 64
rng = np.random.default_rng(0)

tiles = []
for decay in (0.5, 1.5, 3.0):
    tiles.append(fourier_texture(size, size, decay, rng).pixels)
tiles.append(gaussian_background(size, size, 0.5, 0.15, rng).pixels)
tiles.append(checkerboard(size, size, 8, rng.uniform(0, 1, 3),
                          rng.uniform(0, 1, 3)).pixels)

gen = ToyGenerator(GeneratorConfig(resolution=size), seed=3)
w_geo = 0.1 * rng.standard_normal(512)
w_tex = 0.1 * rng.standard_normal(512)
render = gen.render(w_geo, w_tex, CameraPose(0.7, 0.2))

from pseudocap.augment import Background

composited = [composite(render, Background(t, "demo")) for t in tiles]

row1 = np.concatenate(tiles, axis=1)
row2 = np.concatenate(composited, axis=1)
grid = np.concatenate([row1, row2], axis=0)

out = Path(tempfile.mkdtemp(prefix="pseudocap-demo-")) / "backgrounds.png"
save_image_rgba(grid, out)
print("rows: backgrounds (fourier d=0.5/1.5/3.0, gaussian, checker); "
      "same backgrounds under one render")
print(f"wrote {out}")
