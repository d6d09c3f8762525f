"""Text-conditioned mapping networks and the frozen toy generator.

The mapping network follows the StyleGAN-style recipe: a 2-layer adapter
lifts the caption embedding to 512 dims, the result is concatenated with
512-dim Gaussian noise, and an 8-layer trunk produces the latent code w.
Leaky-ReLU (slope 0.2) follows every layer except the last. Forward and
backward passes are hand-written numpy in float64.

The toy generator stands in for a heavyweight pretrained 3D pipeline: a
smooth, deterministic map (w_geometry, w_texture, pose) -> RGBA raster.
The alpha channel is a star-convex silhouette whose radius is a truncated
Fourier series in polar angle (coefficients from a fixed projection of
w_geometry, rotated by the camera azimuth); RGB comes from a fixed bilinear
form between per-pixel Fourier features and a fixed projection of
w_texture. Its parameters are seed-derived and never change: only the
mapping networks train.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .dataset import CameraPose, RenderedImage
from .errors import FormatError, InvalidInputError
from .hashing import array_digest

LATENT_DIM = 512
CHECKPOINT_MAGIC = b"TAPSCKPT"
CHECKPOINT_VERSION = 1


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0.0, x, slope * x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class MappingConfig:
    embed_dim: int = 64
    noise_dim: int = LATENT_DIM
    hidden_dim: int = LATENT_DIM
    adapter_layers: int = 2
    trunk_layers: int = 8
    lrelu_slope: float = 0.2

    def layer_dims(self) -> list[tuple[str, int, int]]:
        """(name, fan_in, fan_out) for every fully connected layer, in order."""
        dims = []
        fan_in = self.embed_dim
        for i in range(self.adapter_layers):
            dims.append((f"adapter.{i}", fan_in, self.hidden_dim))
            fan_in = self.hidden_dim
        fan_in = self.noise_dim + self.hidden_dim
        for i in range(self.trunk_layers):
            dims.append((f"trunk.{i}", fan_in, self.hidden_dim))
            fan_in = self.hidden_dim
        return dims

    def parameter_count(self) -> int:
        return sum(fi * fo + fo for _, fi, fo in self.layer_dims())


@dataclass(frozen=True)
class LatentCode:
    w: np.ndarray
    branch: str  # "geometry" or "texture"

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        object.__setattr__(self, "w", w)
        if w.ndim != 1:
            raise InvalidInputError(f"latent code must be 1-D, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InvalidInputError("latent code has non-finite entries")
        if self.branch not in ("geometry", "texture"):
            raise InvalidInputError(f"unknown branch {self.branch!r}")


class MappingNetwork:
    """w = trunk(concat(z, adapter(text_embedding))), all leaky-ReLU MLPs."""

    def __init__(self, config: MappingConfig, branch: str, params: dict[str, np.ndarray]):
        self.config = config
        self.branch = branch
        self.params = params

    @classmethod
    def initialize(cls, config: MappingConfig, seed: int, branch: str) -> "MappingNetwork":
        """Weights ~ N(0, 1/fan_in), biases zero, drawn in fixed layer order."""
        rng = np.random.default_rng(seed)
        params: dict[str, np.ndarray] = {}
        for name, fan_in, fan_out in config.layer_dims():
            params[f"{name}.w"] = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
            params[f"{name}.b"] = np.zeros(fan_out)
        return cls(config, branch, params)

    @classmethod
    def from_params(cls, branch: str, params: dict[str, np.ndarray],
                    lrelu_slope: float = 0.2) -> "MappingNetwork":
        embed_dim = params["adapter.0.w"].shape[0]
        hidden = params["adapter.0.w"].shape[1]
        adapter_layers = sum(1 for k in params if k.startswith("adapter.") and k.endswith(".w"))
        trunk_layers = sum(1 for k in params if k.startswith("trunk.") and k.endswith(".w"))
        noise_dim = params["trunk.0.w"].shape[0] - hidden
        config = MappingConfig(embed_dim, noise_dim, hidden, adapter_layers,
                               trunk_layers, lrelu_slope)
        return cls(config, branch, params)

    def param_names(self) -> list[str]:
        return [f"{name}.{kind}" for name, _, _ in self.config.layer_dims()
                for kind in ("w", "b")]

    @property
    def n_params(self) -> int:
        return self.config.parameter_count()

    def param_hash(self) -> str:
        return array_digest(*(self.params[k] for k in self.param_names()))

    def forward(self, z: np.ndarray, embedding: np.ndarray) -> np.ndarray:
        out, _ = self.forward_cached(z, embedding)
        return out

    def forward_cached(self, z: np.ndarray, embedding: np.ndarray):
        """Forward pass keeping per-layer inputs/preactivations for backward()."""
        cfg = self.config
        z = np.asarray(z, dtype=np.float64)
        embedding = np.asarray(embedding, dtype=np.float64)
        single = z.ndim == 1
        z2 = z[None, :] if single else z
        e2 = embedding[None, :] if single else embedding
        if z2.shape[1] != cfg.noise_dim:
            raise InvalidInputError(f"noise has dim {z2.shape[1]}, expected {cfg.noise_dim}")
        if e2.shape[1] != cfg.embed_dim:
            raise InvalidInputError(
                f"embedding has dim {e2.shape[1]}, expected {cfg.embed_dim}")
        if not (np.all(np.isfinite(z2)) and np.all(np.isfinite(e2))):
            raise InvalidInputError("non-finite network input")

        layers = []
        h = e2
        for i in range(cfg.adapter_layers):
            pre = h @ self.params[f"adapter.{i}.w"] + self.params[f"adapter.{i}.b"]
            layers.append((f"adapter.{i}", h, pre))
            h = leaky_relu(pre, cfg.lrelu_slope)
        x = np.concatenate([z2, h], axis=1)
        for i in range(cfg.trunk_layers):
            pre = x @ self.params[f"trunk.{i}.w"] + self.params[f"trunk.{i}.b"]
            layers.append((f"trunk.{i}", x, pre))
            x = pre if i == cfg.trunk_layers - 1 else leaky_relu(pre, cfg.lrelu_slope)
        out = x[0] if single else x
        return out, {"layers": layers, "single": single}

    def backward(self, cache, g_out: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients for a batch; upstream g_out matches forward output."""
        cfg = self.config
        g = np.asarray(g_out, dtype=np.float64)
        if cache["single"]:
            g = g[None, :]
        grads: dict[str, np.ndarray] = {}
        layers = cache["layers"]
        n_trunk = cfg.trunk_layers
        # Trunk, last layer first (no activation on the final layer).
        for i in range(n_trunk - 1, -1, -1):
            name, x_in, pre = layers[cfg.adapter_layers + i]
            g_pre = g if i == n_trunk - 1 else g * np.where(pre >= 0.0, 1.0, cfg.lrelu_slope)
            grads[f"{name}.w"] = x_in.T @ g_pre
            grads[f"{name}.b"] = g_pre.sum(axis=0)
            g = g_pre @ self.params[f"{name}.w"].T
        g = g[:, cfg.noise_dim:]  # adapter branch of the concat input
        for i in range(cfg.adapter_layers - 1, -1, -1):
            name, x_in, pre = layers[i]
            g_pre = g * np.where(pre >= 0.0, 1.0, cfg.lrelu_slope)
            grads[f"{name}.w"] = x_in.T @ g_pre
            grads[f"{name}.b"] = g_pre.sum(axis=0)
            g = g_pre @ self.params[f"{name}.w"].T
        return grads


def init_mapping(config: MappingConfig, seed: int, branch: str = "geometry") -> MappingNetwork:
    return MappingNetwork.initialize(config, seed, branch)


def map_latent(network: MappingNetwork, z: np.ndarray,
               text_embedding: np.ndarray) -> LatentCode:
    """Public single-sample mapping; returns a branch-tagged latent code."""
    return LatentCode(network.forward(z, text_embedding), network.branch)


def interpolate(w_source: LatentCode, w_target: LatentCode, alpha: float) -> LatentCode:
    """(1-alpha) * source + alpha * target; endpoints are returned bit-exactly."""
    if w_source.branch != w_target.branch:
        raise InvalidInputError(
            f"branch mismatch: {w_source.branch} vs {w_target.branch}")
    if w_source.w.shape != w_target.w.shape:
        raise InvalidInputError("latent dimension mismatch")
    if not (0.0 <= alpha <= 1.0):
        raise InvalidInputError(f"alpha must be in [0, 1], got {alpha}")
    if alpha == 0.0:
        return LatentCode(w_source.w.copy(), w_source.branch)
    if alpha == 1.0:
        return LatentCode(w_target.w.copy(), w_target.branch)
    return LatentCode((1.0 - alpha) * w_source.w + alpha * w_target.w, w_source.branch)


@dataclass(frozen=True)
class GeneratorConfig:
    resolution: int = 32
    latent_dim: int = LATENT_DIM
    harmonics: int = 4           # silhouette Fourier series order
    edge_sharpness: float = 6.0  # sigmoid steepness across the silhouette edge
    base_radius: float = 0.55
    # Projection gains are sized for latent codes with entry std ~0.1 (the
    # magnitude a freshly initialized mapping network emits). The soft edge
    # and large geometry gain keep silhouette gradients alive on every pixel,
    # which is what makes short desk-scale runs move.
    geometry_scale: float = 18.0
    texture_scale: float = 14.0
    color_gain: float = 2.4


class ToyGenerator:
    """Frozen differentiable renderer: (w_geo, w_tex, pose) -> RGBA in [0, 1].

    Alpha depends only on (w_geometry, azimuth); RGB only on
    (w_texture, pose, pixel position) — disentangled by construction.
    All parameters are derived from the seed at construction and read-only.
    """

    N_COEFF = 8      # 2 * harmonics silhouette coefficients
    N_FEATURES = 12  # per-pixel Fourier feature count

    def __init__(self, config: GeneratorConfig = GeneratorConfig(), seed: int = 0):
        if 2 * config.harmonics != self.N_COEFF:
            raise InvalidInputError("harmonics must be 4 (8 silhouette coefficients)")
        self.config = config
        self.seed = seed
        d = config.latent_dim
        rng_g = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))
        rng_t = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 2])))
        rng_b = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 3])))
        self.proj_geo = rng_g.standard_normal((self.N_COEFF, d)) * (
            config.geometry_scale / np.sqrt(d))
        self.proj_tex = rng_t.standard_normal((self.N_COEFF, d)) * (
            config.texture_scale / np.sqrt(d))
        self.color_form = rng_b.standard_normal((3, self.N_FEATURES, self.N_COEFF)) * (
            config.color_gain / np.sqrt(self.N_FEATURES * self.N_COEFF))
        for arr in (self.proj_geo, self.proj_tex, self.color_form):
            arr.flags.writeable = False

        res = config.resolution
        xs = (np.arange(res) + 0.5) / res * 2.0 - 1.0
        self._x = np.broadcast_to(xs[None, :], (res, res)).copy()
        self._y = np.broadcast_to(xs[:, None], (res, res)).copy()
        self._dist = np.sqrt(self._x ** 2 + self._y ** 2)
        self._angle = np.arctan2(self._y, self._x)
        # Harmonic amplitudes decay as 0.4/m so low frequencies dominate.
        self._amps = 0.4 / np.arange(1, config.harmonics + 1)
        # Pose-independent spatial Fourier features (the last 3 slots are pose).
        feats = np.empty((res, res, self.N_FEATURES))
        feats[..., 0] = 1.0
        for j, freq in enumerate((1.0, 2.0)):
            base = 1 + 4 * j
            feats[..., base + 0] = np.sin(np.pi * freq * self._x)
            feats[..., base + 1] = np.cos(np.pi * freq * self._x)
            feats[..., base + 2] = np.sin(np.pi * freq * self._y)
            feats[..., base + 3] = np.cos(np.pi * freq * self._y)
        self._spatial_features = feats

    def param_hash(self) -> str:
        consts = np.array([self.config.edge_sharpness, self.config.base_radius,
                           *self._amps])
        return array_digest(self.proj_geo, self.proj_tex, self.color_form, consts)

    def _silhouette_basis(self, azimuth: float) -> np.ndarray:
        """(8, H, W) tensor: amp_m * cos/sin(m * (angle - azimuth))."""
        rotated = self._angle - azimuth
        basis = np.empty((self.N_COEFF,) + rotated.shape)
        for m in range(1, self.config.harmonics + 1):
            basis[2 * m - 2] = self._amps[m - 1] * np.cos(m * rotated)
            basis[2 * m - 1] = self._amps[m - 1] * np.sin(m * rotated)
        return basis

    def _pose_features(self, pose: CameraPose) -> np.ndarray:
        feats = self._spatial_features.copy()
        feats[..., 9] = np.cos(pose.azimuth)
        feats[..., 10] = np.sin(pose.azimuth)
        feats[..., 11] = np.sin(pose.elevation)
        return feats

    def render(self, w_geo: np.ndarray, w_tex: np.ndarray, pose: CameraPose) -> np.ndarray:
        out, _ = self.render_cached(w_geo, w_tex, pose)
        return out

    def render_cached(self, w_geo: np.ndarray, w_tex: np.ndarray, pose: CameraPose):
        w_geo = np.asarray(getattr(w_geo, "w", w_geo), dtype=np.float64)
        w_tex = np.asarray(getattr(w_tex, "w", w_tex), dtype=np.float64)
        d = self.config.latent_dim
        if w_geo.shape != (d,) or w_tex.shape != (d,):
            raise InvalidInputError(f"latents must have shape ({d},)")
        k = self.config.edge_sharpness

        coeff = self.proj_geo @ w_geo
        basis = self._silhouette_basis(pose.azimuth)
        radius = self.config.base_radius + np.einsum("k,khw->hw", coeff, basis)
        alpha = _sigmoid(k * (radius - self._dist))

        tex = self.proj_tex @ w_tex
        feats = self._pose_features(pose)
        # feat_form[c, h, w, j] = features(h, w) . color_form[c, :, j]
        feat_form = np.einsum("hwf,cfj->chwj", feats, self.color_form)
        logits = feat_form @ tex
        rgb = _sigmoid(logits)

        image = np.empty(alpha.shape + (4,))
        image[..., 0] = rgb[0]
        image[..., 1] = rgb[1]
        image[..., 2] = rgb[2]
        image[..., 3] = alpha
        cache = {"alpha": alpha, "rgb": rgb, "basis": basis, "feat_form": feat_form}
        return image, cache

    def render_vjp(self, cache, g_image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pull a pixel-space gradient back to (g_w_geo, g_w_tex)."""
        alpha = cache["alpha"]
        rgb = cache["rgb"]
        g_alpha = g_image[..., 3]
        g_radius = g_alpha * alpha * (1.0 - alpha) * self.config.edge_sharpness
        g_coeff = np.einsum("hw,khw->k", g_radius, cache["basis"])
        g_w_geo = self.proj_geo.T @ g_coeff

        g_rgb = np.moveaxis(g_image[..., :3], -1, 0)
        g_logits = g_rgb * rgb * (1.0 - rgb)
        g_tex = np.einsum("chw,chwj->j", g_logits, cache["feat_form"])
        g_w_tex = self.proj_tex.T @ g_tex
        return g_w_geo, g_w_tex


def generate(gen: ToyGenerator, w_geo: LatentCode, w_tex: LatentCode,
             pose: CameraPose) -> RenderedImage:
    """Branch-checked public rendering entry point."""
    if w_geo.branch != "geometry":
        raise InvalidInputError(f"w_geo has branch {w_geo.branch!r}")
    if w_tex.branch != "texture":
        raise InvalidInputError(f"w_tex has branch {w_tex.branch!r}")
    return RenderedImage(gen.render(w_geo.w, w_tex.w, pose), pose)


# --- checkpoint file (magic "TAPSCKPT") --------------------------------------


def save_checkpoint(path, networks: dict[str, MappingNetwork], config_digest: str) -> None:
    """Branch-tagged parameter arrays as raw little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        digest = config_digest.encode("utf-8")
        fh.write(struct.pack("<I", len(digest)))
        fh.write(digest)
        fh.write(struct.pack("<I", len(networks)))
        for branch in sorted(networks):
            net = networks[branch]
            tag = branch.encode("utf-8")
            fh.write(struct.pack("<I", len(tag)))
            fh.write(tag)
            names = net.param_names()
            fh.write(struct.pack("<I", len(names)))
            for name in names:
                nb = name.encode("utf-8")
                arr = net.params[name]
                fh.write(struct.pack("<I", len(nb)))
                fh.write(nb)
                fh.write(struct.pack("<I", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict[str, dict[str, np.ndarray]], str]:
    """Returns ({branch: {param name: array}}, config digest)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic", path=path, offset=0)
    offset = 8

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(data):
            raise FormatError("truncated checkpoint", path=path, offset=offset)
        vals = struct.unpack_from(fmt, data, offset)
        offset += size
        return vals

    def take_bytes(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(data):
            raise FormatError("truncated checkpoint", path=path, offset=offset)
        out = data[offset:offset + n]
        offset += n
        return out

    (version,) = take("<I")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", path=path, offset=8)
    (digest_len,) = take("<I")
    digest = take_bytes(digest_len).decode("utf-8")
    (n_networks,) = take("<I")
    networks: dict[str, dict[str, np.ndarray]] = {}
    for _ in range(n_networks):
        (tag_len,) = take("<I")
        branch = take_bytes(tag_len).decode("utf-8")
        (n_arrays,) = take("<I")
        params: dict[str, np.ndarray] = {}
        for _ in range(n_arrays):
            (name_len,) = take("<I")
            name = take_bytes(name_len).decode("utf-8")
            (ndim,) = take("<I")
            shape = take(f"<{ndim}I")
            count = int(np.prod(shape)) if ndim else 1
            raw = take_bytes(8 * count)
            params[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        networks[branch] = params
    if offset != len(data):
        raise FormatError("trailing bytes after last network", path=path, offset=offset)
    return networks, digest
