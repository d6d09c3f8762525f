"""Background synthesis and alpha compositing for paired real/fake images.

Three background families: random Fourier textures with a power-law spectrum,
Gaussian noise, and checkerboards. Each training pair composites both its
real and fake image over the *same* background so the regularization loss
compares foregrounds, not backgrounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .hashing import array_digest

BACKGROUND_KINDS = ("fourier", "gaussian", "checkerboard")


@dataclass
class Background:
    pixels: np.ndarray  # (H, W, 3) float64 in [0, 1]
    kind: str
    seed: int | None = None

    def content_hash(self) -> str:
        return array_digest(self.pixels)


@dataclass(frozen=True)
class BackgroundParams:
    fourier_decay: float = 2.0
    gaussian_mean: float = 0.5
    gaussian_sigma: float = 0.15
    checker_cells: tuple[int, ...] = (2, 4, 8)


def _check_size(h: int, w: int) -> None:
    if h < 4 or w < 4:
        raise InvalidInputError(f"background size too small: {h}x{w}")


def fourier_field(h: int, w: int, decay: float, rng: np.random.Generator) -> np.ndarray:
    """One pre-rescale channel of a random Fourier texture.

    Spectrum amplitude is |S(f)| = 1/max(f, 1)^decay with f the radial
    frequency index; phases are i.i.d. uniform with conjugate symmetry
    enforced exactly (self-conjugate bins get a random sign), so the inverse
    DFT is real and a forward transform recovers the amplitude law exactly.
    """
    fy = np.fft.fftfreq(h, d=1.0 / h)  # integer frequency indices
    fx = np.fft.fftfreq(w, d=1.0 / w)
    f_radial = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    amplitude = 1.0 / np.maximum(f_radial, 1.0) ** decay
    amplitude[0, 0] = 0.0  # zero DC; the rescale sets the level anyway

    theta = rng.uniform(0.0, 2.0 * np.pi, size=(h, w))
    ky = np.arange(h)[:, None] * np.ones(w, dtype=int)[None, :]
    kx = np.ones(h, dtype=int)[:, None] * np.arange(w)[None, :]
    pky = (-ky) % h
    pkx = (-kx) % w
    is_self = (ky == pky) & (kx == pkx)
    # Each conjugate pair has one generator bin; the partner is its mirror.
    is_generator = (ky < pky) | ((ky == pky) & (kx <= pkx))

    spectrum = np.zeros((h, w), dtype=np.complex128)
    gen = is_generator & ~is_self
    spectrum[gen] = (amplitude * np.exp(1j * theta))[gen]
    spectrum[is_self] = (amplitude * np.where(theta < np.pi, 1.0, -1.0))[is_self]
    mirrored = np.conj(spectrum[pky, pkx])
    spectrum[~is_generator] = mirrored[~is_generator]

    field = np.fft.ifft2(spectrum)
    return np.real(field)


def _rescale_channel(channel: np.ndarray) -> np.ndarray:
    lo = channel.min()
    span = channel.max() - lo
    if span < 1e-12:
        return np.full_like(channel, 0.5)
    return (channel - lo) / span


def fourier_texture(h: int, w: int, decay: float, rng: np.random.Generator) -> Background:
    """Three independently generated channels, each affinely rescaled to [0, 1]."""
    _check_size(h, w)
    if decay <= 0.0:
        raise InvalidInputError(f"decay must be positive, got {decay}")
    channels = [_rescale_channel(fourier_field(h, w, decay, rng)) for _ in range(3)]
    return Background(np.stack(channels, axis=-1), "fourier")


def gaussian_background(h: int, w: int, mean: float, sigma: float,
                        rng: np.random.Generator) -> Background:
    if sigma < 0.0:
        raise InvalidInputError(f"sigma must be non-negative, got {sigma}")
    pixels = np.clip(rng.normal(mean, sigma, size=(h, w, 3)), 0.0, 1.0)
    return Background(pixels, "gaussian")


def checkerboard(h: int, w: int, cell: int, color_a, color_b) -> Background:
    if not isinstance(cell, (int, np.integer)) or cell < 1 or cell > min(h, w):
        raise InvalidInputError(f"cell must be an integer in [1, {min(h, w)}], got {cell}")
    color_a = np.asarray(color_a, dtype=np.float64)
    color_b = np.asarray(color_b, dtype=np.float64)
    for color in (color_a, color_b):
        if color.shape != (3,) or color.min() < 0.0 or color.max() > 1.0:
            raise InvalidInputError("colors must be RGB triples in [0, 1]")
    rows = np.arange(h)[:, None] // cell
    cols = np.arange(w)[None, :] // cell
    parity = ((rows + cols) % 2).astype(bool)
    pixels = np.where(parity[..., None], color_b, color_a)
    return Background(pixels, "checkerboard")


def sample_background(h: int, w: int, rng: np.random.Generator,
                      params: BackgroundParams = BackgroundParams()) -> Background:
    """Pick one of the three kinds uniformly and synthesize it from a child seed."""
    kind = BACKGROUND_KINDS[int(rng.integers(len(BACKGROUND_KINDS)))]
    child_seed = int(rng.integers(np.iinfo(np.int64).max))
    child = np.random.Generator(np.random.PCG64(child_seed))
    if kind == "fourier":
        bg = fourier_texture(h, w, params.fourier_decay, child)
    elif kind == "gaussian":
        bg = gaussian_background(h, w, params.gaussian_mean, params.gaussian_sigma, child)
    else:
        cells = [c for c in params.checker_cells if c <= min(h, w)] or [min(h, w)]
        cell = cells[int(child.integers(len(cells)))]
        bg = checkerboard(h, w, int(cell), child.uniform(0, 1, 3), child.uniform(0, 1, 3))
    bg.seed = child_seed
    return bg


def solid_background(h: int, w: int, value: float = 0.0) -> Background:
    """Constant background; used when background augmentation is disabled."""
    return Background(np.full((h, w, 3), float(value)), "solid", seed=0)


def composite(image, background: Background) -> np.ndarray:
    """Alpha-composite one RGBA image over a background; linear in the pixels."""
    pixels = np.asarray(getattr(image, "pixels", image), dtype=np.float64)
    if pixels.ndim != 3 or pixels.shape[2] != 4:
        raise InvalidInputError(f"expected (H, W, 4) RGBA image, got {pixels.shape}")
    if pixels.shape[:2] != background.pixels.shape[:2]:
        raise InvalidInputError(
            f"image {pixels.shape[:2]} and background "
            f"{background.pixels.shape[:2]} sizes differ")
    alpha = pixels[:, :, 3:4]
    return alpha * pixels[:, :, :3] + (1.0 - alpha) * background.pixels


def composite_vjp(image, background: Background, g_out: np.ndarray) -> np.ndarray:
    """Gradient of composite() w.r.t. the RGBA foreground."""
    pixels = np.asarray(getattr(image, "pixels", image), dtype=np.float64)
    alpha = pixels[:, :, 3:4]
    g_pixels = np.empty_like(pixels)
    g_pixels[:, :, :3] = alpha * g_out
    g_pixels[:, :, 3] = ((pixels[:, :, :3] - background.pixels) * g_out).sum(axis=2)
    return g_pixels


def composite_pair(real, fake, background: Background) -> tuple[np.ndarray, np.ndarray]:
    """Composite a paired real and fake image over one shared background."""
    real_px = np.asarray(getattr(real, "pixels", real), dtype=np.float64)
    fake_px = np.asarray(getattr(fake, "pixels", fake), dtype=np.float64)
    if real_px.shape != fake_px.shape:
        raise InvalidInputError(
            f"real {real_px.shape} and fake {fake_px.shape} shapes differ")
    return composite(real_px, background), composite(fake_px, background)
