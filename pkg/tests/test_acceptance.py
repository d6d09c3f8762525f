"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``. The suite builds the
8-object desk-scale world once, trains the 500-iteration smoke run twice
(for the byte-identical check), and reuses those artifacts across criteria.
"""

import time

import numpy as np
import pytest

from pseudocap.captions import (
    CaptionGenConfig, build_candidates, generate_pseudo_captions, rank_and_select,
    retrieve_words,
)
from pseudocap.cli import main as cli_main
from pseudocap.dataset import assign_splits, load_manifest
from pseudocap.embedding import ReferenceProvider, cosine
from pseudocap.fixture import make_fixture
from pseudocap.metrics import FeatureSet, frechet_distance, r_precision
from pseudocap.model import (
    GeneratorConfig, LatentCode, ToyGenerator, interpolate,
)
from pseudocap.train import (
    PairSampler, TrainConfig, TrainState, grad_check, loss_clip, loss_img, train,
)
from pseudocap.vocab import Vocabulary, load_vocabulary

from conftest import StubProvider
from test_captions import brute_force_top

SMOKE_SEED = 11
TRAIN_SEED = 5


def ok(name: str) -> None:
    print(f"PASS: {name}")


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance-world")
    info = make_fixture(root, n_objects=8, views_per_object=8, resolution=32,
                        seed=SMOKE_SEED)
    manifest = assign_splits(load_manifest(info.manifest_path), SMOKE_SEED)
    vocab = load_vocabulary(info.nouns_path, info.adjectives_path)
    provider = ReferenceProvider(dim=8, seed=0)
    captions = generate_pseudo_captions(manifest, vocab, provider,
                                        CaptionGenConfig())
    generator = ToyGenerator(GeneratorConfig(resolution=32), seed=SMOKE_SEED)
    return {"root": root, "info": info, "manifest": manifest, "vocab": vocab,
            "provider": provider, "captions": captions, "generator": generator}


@pytest.fixture(scope="module")
def smoke_run(world, tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    config = TrainConfig(batch_size=8, iterations=500, seed=TRAIN_SEED,
                         checkpoint_every=100)
    started = time.monotonic()
    result = train(config, world["manifest"], world["captions"],
                   world["provider"], world["generator"], out / "run1",
                   config_digest="smoke")
    elapsed = time.monotonic() - started
    return {"config": config, "result": result, "elapsed": elapsed, "out": out}


class TestCaptionRetrievalOracle:
    def test_matches_exhaustive_scan_on_200_300_vocab(self):
        vocab = Vocabulary(tuple(f"item{i:03d}" for i in range(200)),
                           tuple(f"tint{i:03d}" for i in range(300)))
        provider = ReferenceProvider(dim=8, seed=0)
        config = CaptionGenConfig()  # k1=3, k2=6, 20 per object
        rng = np.random.default_rng(0)
        started = time.monotonic()
        mismatches = 0
        for _ in range(50):
            embeddings = [provider.encode_image(rng.uniform(0, 1, (16, 16, 4)))]
            nouns, adjectives = retrieve_words(embeddings, vocab, provider, config)
            if nouns != brute_force_top(vocab.nouns, embeddings, provider, 3):
                mismatches += 1
            if adjectives != brute_force_top(vocab.adjectives, embeddings,
                                             provider, 6):
                mismatches += 1
            candidates = build_candidates(nouns, adjectives, config)
            selected = rank_and_select(candidates, embeddings, provider, config)
            table = []
            for i, cand in enumerate(candidates):
                score = float(np.clip(np.dot(provider.encode_text(cand.text),
                                             embeddings[0]), -1, 1))
                table.append((-score, i, cand.text))
            table.sort()
            if [c.text for c in selected] != [t for _, _, t in table[:20]]:
                mismatches += 1
        elapsed = time.monotonic() - started
        assert mismatches == 0
        assert elapsed < 30.0
        ok(f"caption-retrieval oracle exact on 200/300 vocab, 50 images "
           f"({elapsed:.1f}s)")


class TestCandidateCombinatorics:
    def test_108_candidates_and_prefix_selection(self, world):
        config = CaptionGenConfig()  # K1=3, K2=6, 20 per object
        nouns = [f"n{i}" for i in range(3)]
        adjectives = [f"a{i}" for i in range(6)]
        candidates = build_candidates(nouns, adjectives, config)
        assert len(candidates) == 108
        provider = world["provider"]
        rng = np.random.default_rng(1)
        embeddings = [provider.encode_image(rng.uniform(0, 1, (16, 16, 4)))]
        full = rank_and_select(candidates, embeddings, provider,
                               CaptionGenConfig(captions_per_object=108))
        top20 = rank_and_select(candidates, embeddings, provider, config)
        assert [c.text for c in top20] == [c.text for c in full[:20]]
        ok("candidate combinatorics: 3*(6+30)=108, selection of 20 is a prefix")


class TestLossBounds:
    def test_thousand_random_pairs(self):
        provider = ReferenceProvider(dim=16, seed=2)
        rng = np.random.default_rng(3)
        violations = 0
        for _ in range(1000):
            image = rng.uniform(0, 1, (8, 8, 3))
            other = rng.uniform(0, 1, (8, 8, 3))
            caption = provider.encode_text(f"tok{rng.integers(10_000)}")
            lc = loss_clip(image, caption, provider)
            li = loss_img(image, other, provider)
            if not (0.0 <= lc <= 2.0 and 0.0 <= li <= 2.0):
                violations += 1
        assert violations == 0
        image = rng.uniform(0.1, 0.9, (8, 8, 3))
        assert loss_clip(image, provider.encode_image(image), provider) <= 1e-12
        assert loss_img(image, image.copy(), provider) <= 1e-12
        ok("loss bounds: 1000 pairs in [0,2], identical inputs -> 0 (1e-12)")


class TestGradientCorrectness:
    def test_fifty_parameters_both_branches(self, world):
        config = TrainConfig(batch_size=4, iterations=1, seed=TRAIN_SEED)
        state = TrainState.initialize(world["provider"], world["generator"], config)
        sampler = PairSampler(world["manifest"], world["captions"])
        batch = [sampler.sample(state.data_rng) for _ in range(4)]
        report = grad_check(state, batch, tolerance=1e-4, n_samples=50,
                            step=1e-3, rng=np.random.default_rng(12))
        branches = {e.branch for e in report.entries}
        assert branches == {"geometry", "texture"}
        assert report.max_rel_error < 1e-4, \
            f"max rel error {report.max_rel_error:.3e}"
        ok(f"gradient correctness: 50 params, max rel err "
           f"{report.max_rel_error:.2e} < 1e-4")


class TestFrozenWeightsContract:
    def test_hundred_step_run_keeps_generator_and_provider(self, world,
                                                           tmp_path_factory):
        out = tmp_path_factory.mktemp("frozen")
        gen_hash = world["generator"].param_hash()
        prov_hash = world["provider"].param_hash()
        config = TrainConfig(batch_size=4, iterations=100, seed=TRAIN_SEED,
                             checkpoint_every=0)
        train(config, world["manifest"], world["captions"], world["provider"],
              world["generator"], out / "run", config_digest="frozen")
        assert world["generator"].param_hash() == gen_hash
        assert world["provider"].param_hash() == prov_hash
        ok("frozen weights: generator and provider hashes unchanged after 100 steps")

    def test_texture_lr_zero_freezes_texture_only(self, world, tmp_path_factory):
        out = tmp_path_factory.mktemp("frozen-tex")
        config = TrainConfig(batch_size=4, iterations=100, seed=TRAIN_SEED,
                             lr_texture=0.0, checkpoint_every=0)
        state = TrainState.initialize(world["provider"], world["generator"], config)
        geo_before = state.geo_net.param_hash()
        tex_before = state.tex_net.param_hash()
        sampler = PairSampler(world["manifest"], world["captions"])
        from pseudocap.train import train_step
        for _ in range(100):
            batch = [sampler.sample(state.data_rng) for _ in range(4)]
            train_step(state, batch, config)
        assert state.tex_net.param_hash() == tex_before
        assert state.geo_net.param_hash() != geo_before
        ok("frozen weights: texture lr=0 keeps texture hash, geometry changes")


class TestTrainingSmoke:
    def test_loss_decreases_and_runs_fast(self, smoke_run):
        reports = smoke_run["result"].reports
        assert len(reports) == 500
        totals = np.array([r.total for r in reports])
        first = totals[:50].mean()
        last = totals[-50:].mean()
        assert last <= 0.9 * first, f"ratio {last / first:.3f} > 0.9"
        assert smoke_run["elapsed"] < 300.0
        trace_lines = smoke_run["result"].trace_path.read_text().splitlines()
        assert len(trace_lines) == 500
        ok(f"training smoke: ratio {last / first:.3f} <= 0.9 in "
           f"{smoke_run['elapsed']:.0f}s, 500 trace lines")

    def test_identical_seed_runs_byte_identical(self, world, smoke_run):
        result2 = train(smoke_run["config"], world["manifest"], world["captions"],
                        world["provider"], world["generator"],
                        smoke_run["out"] / "run2", config_digest="smoke")
        a = smoke_run["result"].checkpoint_path.read_bytes()
        b = result2.checkpoint_path.read_bytes()
        assert a == b
        assert smoke_run["result"].trace_path.read_bytes() == \
            result2.trace_path.read_bytes()
        ok("training smoke: identical-seed runs produce byte-identical checkpoints")


class TestFrechetIdentities:
    def test_all_identities(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((60, 7))
        assert frechet_distance(FeatureSet(x), FeatureSet(x)) < 1e-8
        for seed in range(10):
            c = np.random.default_rng(seed).standard_normal(7)
            got = frechet_distance(FeatureSet(x), FeatureSet(x + c))
            assert got == pytest.approx(float(np.sum(c ** 2)), abs=1e-6)
        hand = frechet_distance(FeatureSet(np.array([[0.0], [2.0]])),
                                FeatureSet(np.array([[1.0], [3.0]])))
        assert hand == pytest.approx(1.0, abs=1e-9)
        y = rng.standard_normal((45, 7)) * 1.3 + 0.7
        assert abs(frechet_distance(FeatureSet(x), FeatureSet(y))
                   - frechet_distance(FeatureSet(y), FeatureSet(x))) < 1e-8
        ok("frechet identities: FD(X,X)<1e-8, shift=||c||^2, 1-D case=1.0, symmetric")


class TestRPrecisionOracle:
    def test_ten_image_r5_fixture(self, provider64):
        rng = np.random.default_rng(6)
        generated = [(rng.uniform(0, 1, (8, 8, 3)), f"a tone{i:02d} car")
                     for i in range(10)]
        pool = [f"a shade{j:02d} boat" for j in range(20)]
        seed = 77
        got = r_precision(generated, pool, provider64, r=5,
                          rng=np.random.default_rng(seed))
        replay = np.random.default_rng(seed)
        wins = 0
        for image, true_text in generated:
            eligible = [i for i, t in enumerate(pool) if t != true_text]
            chosen = replay.choice(len(eligible), size=4, replace=False)
            img = provider64.encode_image(image)
            true_sim = float(np.dot(img, provider64.encode_text(true_text)))
            distractor_sims = [float(np.dot(img, provider64.encode_text(
                pool[eligible[int(j)]]))) for j in chosen]
            wins += all(s < true_sim for s in distractor_sims)
        assert got == wins / 10

        basis = np.eye(8)
        table = {"true": basis[0]}
        table.update({f"d{i}": basis[i] for i in range(1, 8)})
        perfect = StubProvider(8, table, image_fn=lambda img: basis[0])
        generated = [(np.zeros((4, 4, 3)), "true")] * 10
        assert r_precision(generated, [f"d{i}" for i in range(1, 8)], perfect,
                           r=5, rng=np.random.default_rng(0)) == 1.0

        constant = np.ones(4) / 2.0
        ties = StubProvider(4, image_fn=lambda img: constant)
        ties.encode_text = lambda text: constant
        assert r_precision(generated, [f"d{i}" for i in range(1, 8)], ties,
                           r=5, rng=np.random.default_rng(0)) == 0.0
        ok("r-precision: matches brute force on 10-image R=5 fixture; "
           "perfect=1.0, all-ties=0.0")


class TestFourierSpectrum:
    def test_spectral_slope_over_100_seeds(self):
        from pseudocap.augment import fourier_field, fourier_texture
        fy = np.fft.fftfreq(64, d=1 / 64)
        freq = np.sqrt(fy[:, None] ** 2 + fy[None, :] ** 2)
        mask = freq >= 1.0
        log_f = np.log(freq[mask])
        for decay in (1.0, 2.5):
            slopes = []
            for seed in range(100):
                field = fourier_field(64, 64, decay, np.random.default_rng(seed))
                log_a = np.log(np.abs(np.fft.fft2(field))[mask])
                slopes.append(np.polyfit(log_f, log_a, 1)[0])
            assert np.mean(slopes) == pytest.approx(-decay, abs=0.2)
        rng = np.random.default_rng(0)
        for seed in range(20):
            bg = fourier_texture(32, 32, 2.0, np.random.default_rng(seed))
            assert bg.pixels.min() >= 0.0 and bg.pixels.max() <= 1.0
        ok("fourier spectrum: slope=-decay within 0.2 over 100 seeds; "
           "textures in [0,1]")

    def test_paired_background_hashes_in_smoke_run(self, smoke_run):
        reports = smoke_run["result"].reports
        pairs = 0
        for report in reports:
            for real_hash, fake_hash in report.background_hashes:
                assert real_hash == fake_hash
                pairs += 1
        assert pairs == 500 * 8
        ok(f"paired-background hash equality across all {pairs} smoke-run pairs")


class TestInterpolationAndRendering:
    def test_endpoints_bit_exact(self):
        rng = np.random.default_rng(7)
        a = LatentCode(rng.standard_normal(512), "geometry")
        b = LatentCode(rng.standard_normal(512), "geometry")
        assert interpolate(a, b, 0.0).w.tobytes() == a.w.tobytes()
        assert interpolate(a, b, 1.0).w.tobytes() == b.w.tobytes()
        ok("interpolation endpoints bit-exact at alpha=0 and alpha=1")

    def test_cli_grids_from_smoke_checkpoint(self, world, smoke_run, tmp_path):
        ckpt = smoke_run["result"].checkpoint_path
        cfg_path = tmp_path / "run.cfg"
        from pseudocap.config import RunConfig
        RunConfig(seed=TRAIN_SEED, gen_seed=SMOKE_SEED, resolution=32,
                  dim=8).save(cfg_path)
        out = tmp_path / "viz"
        rc = cli_main(["render-samples", "--ckpt", str(ckpt),
                       "--config", str(cfg_path), "--text", "a dark car",
                       "--rows", "2", "--views", "4", "--out", str(out)])
        assert rc == 0 and (out / "samples.png").exists()
        rc = cli_main(["interpolate", "--ckpt", str(ckpt),
                       "--config", str(cfg_path),
                       "--source-text", "a dark car",
                       "--target-text", "a pale chair",
                       "--steps", "6", "--out", str(out)])
        assert rc == 0 and (out / "interpolation.png").exists()
        ok("render-samples and interpolate emit grids from the smoke checkpoint")
