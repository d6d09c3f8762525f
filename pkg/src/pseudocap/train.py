"""Losses and the mapping-network-only training loop.

The objective per pair is ``(1 - cos(E_i(fake), E_t(caption)))`` plus
``(1 - cos(E_i(fake), E_i(real)))``, with fake and real composited over one
shared random background and rendered at the same camera pose. Gradients
are hand-derived (chain rule through composite -> grid-pool encoder ->
cosine) and flow only into the two mapping networks; the generator and
provider stay frozen. grad_check verifies the analytic gradients against
central finite differences, which are the oracle and never the production
path.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import Background, BackgroundParams, composite, composite_vjp, \
    sample_background, solid_background
from .captions import CaptionDataset
from .dataset import CameraPose, DatasetManifest, PairSampler, RenderedImage
from .embedding import cosine
from .errors import InvalidConfigError, InvalidInputError, NonFiniteLossError
from .model import MappingConfig, MappingNetwork, ToyGenerator, save_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    lr_geometry: float = 0.004
    lr_texture: float = 0.0005
    batch_size: int = 16
    iterations: int = 1000
    seed: int = 0
    use_clip_loss: bool = True
    use_img_loss: bool = True
    use_bg_aug: bool = True
    optimizer: str = "sgd"  # "sgd" or "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 100
    background: BackgroundParams = field(default_factory=BackgroundParams)

    def __post_init__(self):
        # Zero learning rates are allowed: they freeze a branch for ablations.
        if self.lr_geometry < 0.0 or self.lr_texture < 0.0:
            raise InvalidConfigError("learning rates must be non-negative")
        if self.batch_size < 1:
            raise InvalidConfigError("batch_size must be >= 1")
        if self.iterations < 0:
            raise InvalidConfigError("iterations must be >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidConfigError(f"unknown optimizer {self.optimizer!r}")
        if not (self.use_clip_loss or self.use_img_loss):
            raise InvalidConfigError("at least one loss term must stay enabled")


@dataclass
class LossReport:
    iteration: int
    loss_clip: float
    loss_img: float
    total: float
    background_hashes: list[tuple[str, str]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not (0.0 <= self.loss_clip <= 2.0 and 0.0 <= self.loss_img <= 2.0):
            raise InvalidInputError("loss terms must lie in [0, 2]")


def loss_clip(fake_composited: np.ndarray, caption_embedding: np.ndarray,
              provider) -> float:
    """High-level semantic loss: 1 - cos(E_i(fake), caption embedding)."""
    return 1.0 - cosine(provider.encode_image(fake_composited), caption_embedding)


def loss_img(fake_composited: np.ndarray, real_composited: np.ndarray,
             provider) -> float:
    """Low-level regularization: 1 - cos of the two image embeddings."""
    fake = np.asarray(fake_composited)
    real = np.asarray(real_composited)
    if fake.shape != real.shape:
        raise InvalidInputError(f"shape mismatch: {fake.shape} vs {real.shape}")
    return 1.0 - cosine(provider.encode_image(fake), provider.encode_image(real))


@dataclass
class PairPlan:
    """One training pair with its randomness materialized, so the loss is
    a deterministic function of the mapping-network parameters."""

    real: RenderedImage
    caption_text: str
    caption_embedding: np.ndarray
    pose: CameraPose
    z_geo: np.ndarray
    z_tex: np.ndarray
    background: Background


class TrainState:
    """Mapping networks plus optimizer state and the seeded random streams."""

    def __init__(self, geo_net: MappingNetwork, tex_net: MappingNetwork,
                 generator: ToyGenerator, provider, config: TrainConfig):
        if not provider.descriptor.differentiable:
            raise InvalidConfigError(
                "training needs an image-differentiable provider; the service "
                "provider is usable for caption generation and evaluation only")
        self.geo_net = geo_net
        self.tex_net = tex_net
        self.generator = generator
        self.provider = provider
        self.config = config
        self.iteration = 0
        self.data_rng = np.random.default_rng([config.seed, 10])
        self.z_rng = np.random.default_rng([config.seed, 11])
        self.bg_rng = np.random.default_rng([config.seed, 12])
        self._adam_m = {"geometry": None, "texture": None}
        self._adam_v = {"geometry": None, "texture": None}
        self._adam_t = {"geometry": 0, "texture": 0}

    @classmethod
    def initialize(cls, provider, generator: ToyGenerator, config: TrainConfig):
        net_cfg = MappingConfig(embed_dim=provider.dimension)
        geo = MappingNetwork.initialize(net_cfg, [config.seed, 201], "geometry")
        tex = MappingNetwork.initialize(net_cfg, [config.seed, 202], "texture")
        return cls(geo, tex, generator, provider, config)

    def networks(self) -> dict[str, MappingNetwork]:
        return {"geometry": self.geo_net, "texture": self.tex_net}


def prepare_batch(state: TrainState, batch, config: TrainConfig) -> list[PairPlan]:
    """Materialize noise, caption embeddings, and backgrounds for a batch."""
    n = len(batch)
    dim = state.geo_net.config.noise_dim
    z_geo = state.z_rng.standard_normal((n, dim))
    z_tex = state.z_rng.standard_normal((n, dim))
    plans = []
    for i, (image, caption) in enumerate(batch):
        h, w = image.pixels.shape[:2]
        if config.use_bg_aug:
            bg = sample_background(h, w, state.bg_rng, config.background)
        else:
            bg = solid_background(h, w)
        plans.append(PairPlan(image, caption.text,
                              state.provider.encode_text(caption.text),
                              image.pose, z_geo[i], z_tex[i], bg))
    return plans


def _clamped_cos_grad(e_img: np.ndarray, other: np.ndarray):
    """cos value (clamped) and its gradient w.r.t. the image embedding."""
    dot = float(np.dot(e_img, other))
    if dot >= 1.0:
        return 1.0, np.zeros_like(other)
    if dot <= -1.0:
        return -1.0, np.zeros_like(other)
    return dot, other


def _activation_signature(caches) -> bytes:
    """Sign pattern of every leaky-ReLU pre-activation in the given caches.

    Two parameter points with the same signature lie on the same linear
    piece of the network, which is what makes a finite-difference window
    valid as a gradient oracle.
    """
    parts = []
    for cache in caches:
        layers = cache["layers"]
        for _, _, pre in layers[:-1]:  # final layer has no activation
            parts.append((pre >= 0.0).tobytes())
    return b"".join(parts)


def batch_loss(state: TrainState, plans: list[PairPlan], config: TrainConfig,
               with_grads: bool = True):
    """Mean losses over the batch, plus parameter gradients when requested.

    Returns (report_fields, grads_geo, grads_tex) where report_fields is a
    dict with loss_clip/loss_img/total/background_hashes (and the
    activation signature). A disabled loss term is reported as 0.0 and
    contributes no gradient.
    """
    n = len(plans)
    embeddings = np.stack([p.caption_embedding for p in plans])
    z_geo = np.stack([p.z_geo for p in plans])
    z_tex = np.stack([p.z_tex for p in plans])
    w_geo, geo_cache = state.geo_net.forward_cached(z_geo, embeddings)
    w_tex, tex_cache = state.tex_net.forward_cached(z_tex, embeddings)

    clip_sum = 0.0
    img_sum = 0.0
    bg_hashes = []
    g_w_geo = np.zeros_like(w_geo)
    g_w_tex = np.zeros_like(w_tex)
    for i, plan in enumerate(plans):
        fake, render_cache = state.generator.render_cached(w_geo[i], w_tex[i], plan.pose)
        fake_rgb = composite(fake, plan.background)
        real_rgb = composite(plan.real.pixels, plan.background)
        bg_hashes.append((plan.background.content_hash(),
                          plan.background.content_hash()))
        e_fake, enc_cache = state.provider.encode_image_cached(fake_rgb)
        g_e_fake = np.zeros_like(e_fake)
        if config.use_clip_loss:
            dot, grad = _clamped_cos_grad(e_fake, plan.caption_embedding)
            clip_sum += 1.0 - dot
            g_e_fake -= grad
        if config.use_img_loss:
            e_real = state.provider.encode_image(real_rgb)
            dot, grad = _clamped_cos_grad(e_fake, e_real)
            img_sum += 1.0 - dot
            g_e_fake -= grad
        if with_grads:
            g_fake_rgb = state.provider.encode_image_vjp(enc_cache, g_e_fake)
            g_fake_rgba = composite_vjp(fake, plan.background, g_fake_rgb)
            g_w_geo[i], g_w_tex[i] = state.generator.render_vjp(render_cache, g_fake_rgba)

    report = {
        "loss_clip": clip_sum / n,
        "loss_img": img_sum / n,
        "background_hashes": bg_hashes,
        "activation_signature": _activation_signature((geo_cache, tex_cache)),
    }
    report["total"] = report["loss_clip"] + report["loss_img"]
    if not with_grads:
        return report, None, None
    grads_geo = state.geo_net.backward(geo_cache, g_w_geo / n)
    grads_tex = state.tex_net.backward(tex_cache, g_w_tex / n)
    return report, grads_geo, grads_tex


def _apply_update(state: TrainState, net: MappingNetwork, grads, lr: float,
                  branch: str) -> None:
    if lr == 0.0:
        return
    cfg = state.config
    if cfg.optimizer == "sgd":
        for name in net.param_names():
            net.params[name] -= lr * grads[name]
        return
    if state._adam_m[branch] is None:
        state._adam_m[branch] = {k: np.zeros_like(v) for k, v in net.params.items()}
        state._adam_v[branch] = {k: np.zeros_like(v) for k, v in net.params.items()}
    state._adam_t[branch] += 1
    t = state._adam_t[branch]
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    for name in net.param_names():
        m = state._adam_m[branch][name]
        v = state._adam_v[branch][name]
        g = grads[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        net.params[name] -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def train_step(state: TrainState, batch, config: TrainConfig) -> LossReport:
    """One optimization step over a batch of (image, caption) pairs."""
    plans = prepare_batch(state, batch, config)
    report, grads_geo, grads_tex = batch_loss(state, plans, config)
    if not np.isfinite(report["total"]):
        raise NonFiniteLossError(
            f"non-finite loss at iteration {state.iteration}",
            diagnostics={
                "iteration": state.iteration,
                "loss_clip": report["loss_clip"],
                "loss_img": report["loss_img"],
                "objects": [p.real.object_id for p in plans],
                "captions": [p.caption_text for p in plans],
            })
    _apply_update(state, state.geo_net, grads_geo, config.lr_geometry, "geometry")
    _apply_update(state, state.tex_net, grads_tex, config.lr_texture, "texture")
    state.iteration += 1
    return LossReport(state.iteration, report["loss_clip"], report["loss_img"],
                      report["total"], report["background_hashes"])


def write_loss_trace(reports, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in reports:
            fh.write(f"{r.iteration}\t{r.loss_clip:.9g}\t{r.loss_img:.9g}"
                     f"\t{r.total:.9g}\n")


@dataclass
class TrainResult:
    state: TrainState
    reports: list[LossReport]
    trace_path: Path
    checkpoint_path: Path
    checkpoint_paths: list[Path]


def train(config: TrainConfig, manifest: DatasetManifest, captions: CaptionDataset,
          provider, generator: ToyGenerator, out_dir,
          config_digest: str = "") -> TrainResult:
    """Run the full loop: sample pairs, step, trace losses, checkpoint.

    Deterministic given the config seed: two runs produce byte-identical
    checkpoints and traces.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = TrainState.initialize(provider, generator, config)
    sampler = PairSampler(manifest, captions)
    reports: list[LossReport] = []
    checkpoint_paths: list[Path] = []
    try:
        for _ in range(config.iterations):
            batch = [sampler.sample(state.data_rng) for _ in range(config.batch_size)]
            reports.append(train_step(state, batch, config))
            if config.checkpoint_every and state.iteration % config.checkpoint_every == 0:
                path = out_dir / f"checkpoint_{state.iteration:06d}.ckpt"
                save_checkpoint(path, state.networks(), config_digest)
                checkpoint_paths.append(path)
    except NonFiniteLossError as exc:
        dump = out_dir / "nonfinite-batch.txt"
        with open(dump, "w", encoding="utf-8") as fh:
            for key, value in exc.diagnostics.items():
                fh.write(f"{key}\t{value}\n")
        raise
    trace_path = out_dir / "loss-trace.tsv"
    write_loss_trace(reports, trace_path)
    final_path = out_dir / "checkpoint_final.ckpt"
    save_checkpoint(final_path, state.networks(), config_digest)
    checkpoint_paths.append(final_path)
    return TrainResult(state, reports, trace_path, final_path, checkpoint_paths)


@dataclass
class GradCheckEntry:
    branch: str
    param: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    max_rel_error: float
    entries: list[GradCheckEntry]
    passed: bool
    skipped: int = 0  # coordinates whose FD window straddled an activation kink


def grad_check(state: TrainState, batch, tolerance: float = 1e-4,
               n_samples: int = 50, step: float = 1e-3,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare analytic parameter gradients against central finite differences.

    Samples coordinates across both branches. The network is piecewise
    linear in each parameter (leaky-ReLU), so a perturbation that flips any
    pre-activation sign straddles a kink and the central-difference formula
    stops being a valid oracle there; such coordinates are redrawn (they are
    counted in ``skipped``). Relative error uses |a - n| / max(|a|, |n|);
    entries where both magnitudes are below 1e-10 count as agreeing.
    """
    rng = rng or np.random.default_rng(0)
    config = state.config
    plans = prepare_batch(state, batch, config)
    base_report, grads_geo, grads_tex = batch_loss(state, plans, config)
    base_signature = base_report["activation_signature"]
    grads = {"geometry": grads_geo, "texture": grads_tex}
    nets = state.networks()

    def total_loss() -> tuple[float, bytes]:
        report, _, _ = batch_loss(state, plans, config, with_grads=False)
        return report["total"], report["activation_signature"]

    entries = []
    skipped = 0
    attempts = 0
    max_attempts = 8 * n_samples
    while len(entries) < n_samples:
        attempts += 1
        if attempts > max_attempts:
            raise InvalidInputError(
                "grad_check could not find enough kink-free coordinates")
        branch = ("geometry", "texture")[int(rng.integers(2))]
        net = nets[branch]
        names = net.param_names()
        name = names[int(rng.integers(len(names)))]
        param = net.params[name]
        idx = int(rng.integers(param.size))
        original = param.flat[idx]
        param.flat[idx] = original + step
        loss_plus, sig_plus = total_loss()
        param.flat[idx] = original - step
        loss_minus, sig_minus = total_loss()
        param.flat[idx] = original
        if sig_plus != base_signature or sig_minus != base_signature:
            skipped += 1
            continue
        numeric = (loss_plus - loss_minus) / (2.0 * step)
        analytic = float(grads[branch][name].flat[idx])
        scale = max(abs(analytic), abs(numeric))
        rel = 0.0 if scale < 1e-10 else abs(analytic - numeric) / scale
        entries.append(GradCheckEntry(branch, name, idx, analytic, numeric, rel))
    max_rel = max(e.rel_error for e in entries)
    return GradCheckReport(max_rel, entries, max_rel < tolerance, skipped)
