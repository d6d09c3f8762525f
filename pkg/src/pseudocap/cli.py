"""Batch entry points: fixture generation, caption retrieval, training, eval.

Every subcommand is reproducible: identical config and seed produce
identical output hashes, recorded in ``run-manifest.txt`` under --out.
Exit codes: 0 success, 2 usage, 3 missing input / I/O, 4 validation.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import augment, metrics
from .captions import CaptionGenConfig, generate_pseudo_captions, load_captions, \
    save_captions
from .config import RunConfig, load_config
from .dataset import CameraPose, assign_splits, load_manifest, load_object_views
from .embedding import make_provider
from .errors import InvalidConfigError, PipelineError, ProviderUnavailableError
from .fixture import make_fixture
from .hashing import file_digest
from .imageio import save_image_rgba
from .model import GeneratorConfig, LatentCode, MappingNetwork, ToyGenerator, \
    interpolate, load_checkpoint
from .train import TrainConfig, train
from .vocab import build_adjectives, load_allowlist, load_vocabulary, \
    normalize_tokens, save_vocabulary, Vocabulary

logger = logging.getLogger(__name__)

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_VALIDATION = 4


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for key in ("seed", "out"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    for arg_name, key in getattr(args, "_config_flags", {}).items():
        value = getattr(args, arg_name, None)
        if value is not None:
            overrides[key] = value
    return cfg.with_overrides(**overrides)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_run_manifest(out_dir: Path, cfg: RunConfig, outputs) -> Path:
    path = out_dir / "run-manifest.txt"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"config_digest\t{cfg.digest()}\n")
        fh.write(f"seed\t{cfg.seed}\n")
        for output in sorted(Path(p) for p in outputs):
            rel = output.relative_to(out_dir) if output.is_relative_to(out_dir) else output
            fh.write(f"output\t{rel}\t{file_digest(output)}\n")
    return path


def _provider(cfg: RunConfig):
    return make_provider(cfg.provider, dim=cfg.dim, seed=cfg.provider_seed,
                         service_addr=cfg.service_addr or None)


def _generator(cfg: RunConfig) -> ToyGenerator:
    return ToyGenerator(GeneratorConfig(resolution=cfg.resolution), seed=cfg.gen_seed)


def _networks_from_checkpoint(path, cfg: RunConfig) -> dict[str, MappingNetwork]:
    params_by_branch, digest = load_checkpoint(path)
    if digest and digest != cfg.digest():
        logger.warning("checkpoint config digest %s != current config digest %s",
                       digest[:12], cfg.digest()[:12])
    return {branch: MappingNetwork.from_params(branch, params)
            for branch, params in params_by_branch.items()}


# --- subcommands ---------------------------------------------------------------


def cmd_build_vocab(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(cfg)
    with open(args.nouns, encoding="utf-8") as fh:
        nouns = normalize_tokens(
            line.strip() for line in fh
            if line.strip() and not line.lstrip().startswith("#"))
    with open(args.adjectives, encoding="utf-8") as fh:
        raw_adjectives = [line.strip() for line in fh
                          if line.strip() and not line.lstrip().startswith("#")]
    if args.allowlist:
        adjectives = build_adjectives(raw_adjectives,
                                      allowlist=load_allowlist(args.allowlist))
    else:
        adjectives = normalize_tokens(raw_adjectives)
    vocab = Vocabulary(tuple(nouns), tuple(adjectives))
    nouns_path = out / "nouns.txt"
    adjectives_path = out / "adjectives.txt"
    save_vocabulary(vocab, nouns_path, adjectives_path)
    write_run_manifest(out, cfg, [nouns_path, adjectives_path])
    print(f"wrote {len(vocab.nouns)} nouns, {len(vocab.adjectives)} adjectives to {out}")
    return 0


def cmd_make_fixture(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(cfg)
    info = make_fixture(out, n_objects=cfg.objects, views_per_object=cfg.views,
                        resolution=cfg.resolution, seed=cfg.seed,
                        classes=cfg.class_list(), gen_seed=cfg.gen_seed)
    # Normalize the output path so identically-seeded runs write identical
    # config files regardless of where they land.
    fixture_cfg = cfg.with_overrides(out="out")
    cfg_path = out / "fixture.cfg"
    fixture_cfg.save(cfg_path)
    outputs = [info.manifest_path, info.nouns_path, info.adjectives_path, cfg_path]
    outputs += sorted((out / "images").rglob("*.png"))
    write_run_manifest(out, cfg, outputs)
    print(f"fixture: {cfg.objects} objects x {cfg.views} views at "
          f"{cfg.resolution}x{cfg.resolution} under {out}")
    return 0


def cmd_gen_captions(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(cfg)
    manifest = load_manifest(args.manifest)
    vocab = load_vocabulary(args.nouns, args.adjectives)
    provider = _provider(cfg)
    gen_cfg = CaptionGenConfig(k1=cfg.k1, k2=cfg.k2,
                               captions_per_object=cfg.captions_per_object)
    dataset = generate_pseudo_captions(manifest, vocab, provider, gen_cfg)
    captions_path = out / "captions.tsv"
    save_captions(dataset, captions_path)
    outputs = [captions_path]
    if dataset.skipped:
        skip_path = out / "skipped-objects.txt"
        with open(skip_path, "w", encoding="utf-8", newline="\n") as fh:
            for object_id in dataset.skipped:
                fh.write(object_id + "\n")
        outputs.append(skip_path)
    write_run_manifest(out, cfg, outputs)
    print(f"wrote {len(dataset.captions)} captions for "
          f"{len(dataset.object_ids())} objects to {captions_path}")
    return 0


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        lr_geometry=cfg.lr_geo, lr_texture=cfg.lr_tex, batch_size=cfg.batch,
        iterations=cfg.iters, seed=cfg.seed, use_clip_loss=cfg.clip_loss,
        use_img_loss=cfg.img_loss, use_bg_aug=cfg.bg_aug,
        optimizer=cfg.optimizer, checkpoint_every=cfg.checkpoint_every,
        background=augment.BackgroundParams(
            fourier_decay=cfg.bg_decay, gaussian_mean=cfg.bg_gauss_mean,
            gaussian_sigma=cfg.bg_gauss_sigma, checker_cells=cfg.checker_cells()))


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(cfg)
    manifest = assign_splits(load_manifest(args.manifest), cfg.seed)
    captions = load_captions(args.captions)
    provider = _provider(cfg)
    result = train(_train_config(cfg), manifest, captions, provider,
                   _generator(cfg), out, config_digest=cfg.digest())
    outputs = [result.trace_path] + result.checkpoint_paths
    write_run_manifest(out, cfg, outputs)
    if result.reports:
        print(f"trained {len(result.reports)} iterations; "
              f"final total loss {result.reports[-1].total:.6f}")
    else:
        print("trained 0 iterations; checkpoint equals initialization")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(cfg)
    manifest = assign_splits(load_manifest(args.manifest), cfg.seed)
    captions = load_captions(args.captions)
    provider = _provider(cfg)
    generator = _generator(cfg)
    nets = _networks_from_checkpoint(args.ckpt, cfg)
    rng = np.random.default_rng([cfg.seed, 60])

    split = args.split
    object_ids = manifest.split_objects(split) or manifest.objects()
    real_images = []
    for object_id in object_ids:
        real_images.extend(load_object_views(manifest, object_id))
    if len(real_images) < 2:
        raise InvalidConfigError(f"split {split!r} has too few images to evaluate")

    all_caps = captions.captions
    fake_images = []
    fake_texts = []
    n_fake = min(cfg.eval_samples, len(real_images))
    for i in range(n_fake):
        ref = real_images[int(rng.integers(len(real_images)))]
        cap = all_caps[int(rng.integers(len(all_caps)))]
        emb = provider.encode_text(cap.text)
        z_geo = rng.standard_normal(nets["geometry"].config.noise_dim)
        z_tex = rng.standard_normal(nets["texture"].config.noise_dim)
        w_geo = nets["geometry"].forward(z_geo, emb)
        w_tex = nets["texture"].forward(z_tex, emb)
        fake_images.append(generator.render(w_geo, w_tex, ref.pose))
        fake_texts.append(cap.text)

    gray = augment.solid_background(cfg.resolution, cfg.resolution, 0.5)
    real_rgb = [augment.composite(img.pixels, gray) for img in real_images]
    fake_rgb = [augment.composite(img, gray) for img in fake_images]

    fid = metrics.frechet_distance(
        metrics.embedding_features(real_rgb, provider),
        metrics.embedding_features(fake_rgb, provider))
    fpd = metrics.frechet_distance(
        metrics.silhouette_features([img.pixels for img in real_images]),
        metrics.silhouette_features(fake_images))

    pool_size = min(cfg.pool_size, metrics.feasible_pool_size(all_caps))
    pool = metrics.random_caption_pool(all_caps, pool_size, rng)
    generated = list(zip(fake_rgb, fake_texts))
    scores = [metrics.r_precision(generated, pool, provider, r=cfg.r,
                                  rng=np.random.default_rng([cfg.seed, 61, rep]))
              for rep in range(cfg.eval_repeats)]
    report = {
        "fid": fid,
        "fpd": fpd,
        "r_precision_mean": float(np.mean(scores)),
        "r_precision_std": float(np.std(scores)),
    }
    report_path = out / "metrics.tsv"
    metrics.write_metric_report(report_path, report)
    write_run_manifest(out, cfg, [report_path])
    for key in sorted(report):
        print(f"{key}\t{report[key]:.9g}")
    return 0


def _grid(images: list[np.ndarray], cols: int) -> np.ndarray:
    h, w = images[0].shape[:2]
    rows = math.ceil(len(images) / cols)
    grid = np.ones((rows * h, cols * w, 3))
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        grid[r * h:(r + 1) * h, c * w:(c + 1) * w] = img
    return grid


def cmd_render_samples(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(cfg)
    provider = _provider(cfg)
    generator = _generator(cfg)
    nets = _networks_from_checkpoint(args.ckpt, cfg)
    rng = np.random.default_rng([cfg.seed, 70])
    emb = provider.encode_text(args.text)
    gray = augment.solid_background(cfg.resolution, cfg.resolution, 0.5)
    azimuths = np.linspace(0.0, 2.0 * math.pi, args.views, endpoint=False)
    tiles = []
    for _ in range(args.rows):
        z_geo = rng.standard_normal(nets["geometry"].config.noise_dim)
        z_tex = rng.standard_normal(nets["texture"].config.noise_dim)
        w_geo = nets["geometry"].forward(z_geo, emb)
        w_tex = nets["texture"].forward(z_tex, emb)
        for azimuth in azimuths:
            pose = CameraPose(float(azimuth), 0.2)
            tiles.append(augment.composite(generator.render(w_geo, w_tex, pose), gray))
    grid_path = out / "samples.png"
    save_image_rgba(_grid(tiles, args.views), grid_path)
    write_run_manifest(out, cfg, [grid_path])
    print(f"wrote {args.rows}x{args.views} sample grid to {grid_path}")
    return 0


def cmd_interpolate(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(cfg)
    provider = _provider(cfg)
    generator = _generator(cfg)
    nets = _networks_from_checkpoint(args.ckpt, cfg)
    rng = np.random.default_rng([cfg.seed, 71])
    z_geo = rng.standard_normal(nets["geometry"].config.noise_dim)
    z_tex = rng.standard_normal(nets["texture"].config.noise_dim)

    def codes(text: str) -> tuple[LatentCode, LatentCode]:
        emb = provider.encode_text(text)
        return (LatentCode(nets["geometry"].forward(z_geo, emb), "geometry"),
                LatentCode(nets["texture"].forward(z_tex, emb), "texture"))

    src_geo, src_tex = codes(args.source_text)
    tgt_geo, tgt_tex = codes(args.target_text)
    gray = augment.solid_background(cfg.resolution, cfg.resolution, 0.5)
    pose = CameraPose(0.8, 0.2)
    tiles = []
    for alpha in np.linspace(0.0, 1.0, args.steps):
        w_geo = interpolate(src_geo, tgt_geo, float(alpha))
        w_tex = interpolate(src_tex, tgt_tex, float(alpha))
        tiles.append(augment.composite(generator.render(w_geo.w, w_tex.w, pose), gray))
    strip_path = out / "interpolation.png"
    save_image_rgba(_grid(tiles, len(tiles)), strip_path)
    write_run_manifest(out, cfg, [strip_path])
    print(f"wrote {args.steps}-step interpolation strip to {strip_path}")
    return 0


# --- parser --------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pseudocap",
        description="Pseudo-caption retrieval and mapping-network training.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("build-vocab", help="normalize raw token lists")
    _add_common(p)
    p.add_argument("--nouns", required=True, help="raw noun list")
    p.add_argument("--adjectives", required=True, help="raw adjective candidates")
    p.add_argument("--allowlist", help="adjective allowlist (fallback POS filter)")
    p.set_defaults(func=cmd_build_vocab, _config_flags={})

    p = subs.add_parser("make-fixture", help="generate the synthetic dataset")
    _add_common(p)
    p.add_argument("--objects", type=int, default=None, dest="objects_flag")
    p.add_argument("--views", type=int, default=None, dest="views_flag")
    p.add_argument("--res", type=int, default=None, dest="res_flag")
    p.set_defaults(func=cmd_make_fixture,
                   _config_flags={"objects_flag": "objects", "views_flag": "views",
                                  "res_flag": "resolution"})

    p = subs.add_parser("gen-captions", help="generate pseudo captions")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--nouns", required=True)
    p.add_argument("--adjectives", required=True)
    p.add_argument("--k1", type=int, default=None, dest="k1_flag")
    p.add_argument("--k2", type=int, default=None, dest="k2_flag")
    p.add_argument("--per-object", type=int, default=None, dest="per_object_flag")
    p.add_argument("--provider", choices=("reference", "service"), default=None,
                   dest="provider_flag")
    p.add_argument("--service-addr", default=None, dest="service_addr_flag")
    p.set_defaults(func=cmd_gen_captions,
                   _config_flags={"k1_flag": "k1", "k2_flag": "k2",
                                  "per_object_flag": "captions_per_object",
                                  "provider_flag": "provider",
                                  "service_addr_flag": "service_addr"})

    p = subs.add_parser("train", help="train the mapping networks")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--iters", type=int, default=None, dest="iters_flag")
    p.add_argument("--batch", type=int, default=None, dest="batch_flag")
    p.add_argument("--lr-geo", type=float, default=None, dest="lr_geo_flag")
    p.add_argument("--lr-tex", type=float, default=None, dest="lr_tex_flag")
    p.add_argument("--no-clip-loss", action="store_const", const=False,
                   default=None, dest="clip_loss_flag")
    p.add_argument("--no-img-loss", action="store_const", const=False,
                   default=None, dest="img_loss_flag")
    p.add_argument("--no-bg-aug", action="store_const", const=False,
                   default=None, dest="bg_aug_flag")
    p.add_argument("--provider", choices=("reference", "service"), default=None,
                   dest="provider_flag")
    p.add_argument("--service-addr", default=None, dest="service_addr_flag")
    p.set_defaults(func=cmd_train,
                   _config_flags={"iters_flag": "iters", "batch_flag": "batch",
                                  "lr_geo_flag": "lr_geo", "lr_tex_flag": "lr_tex",
                                  "clip_loss_flag": "clip_loss",
                                  "img_loss_flag": "img_loss",
                                  "bg_aug_flag": "bg_aug",
                                  "provider_flag": "provider",
                                  "service_addr_flag": "service_addr"})

    p = subs.add_parser("eval", help="compute metrics from a checkpoint")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--r", type=int, default=None, dest="r_flag")
    p.set_defaults(func=cmd_eval, _config_flags={"r_flag": "r"})

    p = subs.add_parser("render-samples", help="multi-view sample grid")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--rows", type=int, default=3)
    p.add_argument("--views", type=int, default=4)
    p.set_defaults(func=cmd_render_samples, _config_flags={})

    p = subs.add_parser("interpolate", help="latent interpolation strip")
    _add_common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--source-text", required=True)
    p.add_argument("--target-text", required=True)
    p.add_argument("--steps", type=int, default=8)
    p.set_defaults(func=cmd_interpolate, _config_flags={})

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: category=io {exc}", file=sys.stderr)
        return EXIT_IO
    except ProviderUnavailableError as exc:
        print(f"error: category=provider-unavailable {exc}", file=sys.stderr)
        return EXIT_IO
    except PipelineError as exc:
        print(f"error: category={exc.category} {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: category=io {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
