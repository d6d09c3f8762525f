"""Mapping networks, the frozen toy generator, interpolation, checkpoints."""

import numpy as np
import pytest

from pseudocap.dataset import CameraPose, RenderedImage
from pseudocap.errors import FormatError, InvalidInputError
from pseudocap.model import (
    GeneratorConfig, LatentCode, MappingConfig, MappingNetwork, ToyGenerator,
    generate, init_mapping, interpolate, leaky_relu, load_checkpoint, map_latent,
    save_checkpoint,
)


class TestMappingNetwork:
    def test_deterministic_forward(self):
        net = init_mapping(MappingConfig(embed_dim=8), seed=1)
        rng = np.random.default_rng(0)
        z = rng.standard_normal(512)
        e = rng.standard_normal(8)
        assert np.array_equal(net.forward(z, e), net.forward(z, e))

    def test_same_seed_bit_identical_params(self):
        a = init_mapping(MappingConfig(embed_dim=8), seed=7)
        b = init_mapping(MappingConfig(embed_dim=8), seed=7)
        assert a.param_hash() == b.param_hash()

    def test_biases_zero_at_init(self):
        net = init_mapping(MappingConfig(embed_dim=8), seed=0)
        for name in net.param_names():
            if name.endswith(".b"):
                assert np.all(net.params[name] == 0.0)

    def test_zero_final_layer_returns_bias(self):
        net = init_mapping(MappingConfig(embed_dim=8), seed=0)
        net.params["trunk.7.w"][:] = 0.0
        net.params["trunk.7.b"][:] = 3.25
        rng = np.random.default_rng(1)
        out = net.forward(rng.standard_normal(512), rng.standard_normal(8))
        assert np.all(out == 3.25)

    def test_parameter_count_for_d64(self):
        config = MappingConfig(embed_dim=64)
        adapter = (64 * 512 + 512) + (512 * 512 + 512)
        trunk = (1024 * 512 + 512) + 7 * (512 * 512 + 512)
        assert config.parameter_count() == adapter + trunk
        net = init_mapping(config, seed=0)
        assert sum(p.size for p in net.params.values()) == adapter + trunk

    def test_miniature_hand_computed_forward(self):
        # One unit everywhere: adapter 1->1->1, trunk (1+1)->1 twice.
        config = MappingConfig(embed_dim=1, noise_dim=1, hidden_dim=1,
                               adapter_layers=2, trunk_layers=2, lrelu_slope=0.2)
        net = init_mapping(config, seed=0, branch="geometry")
        p = net.params
        p["adapter.0.w"][:] = 2.0;  p["adapter.0.b"][:] = -1.0
        p["adapter.1.w"][:] = -3.0; p["adapter.1.b"][:] = 0.5
        p["trunk.0.w"][:, 0] = [4.0, 5.0]; p["trunk.0.b"][:] = 0.25
        p["trunk.1.w"][:] = -2.0;  p["trunk.1.b"][:] = 1.0

        def lrelu(x):
            return x if x >= 0 else 0.2 * x

        z, e = 0.7, 0.3
        h0 = lrelu(e * 2.0 - 1.0)           # -0.08
        h1 = lrelu(h0 * -3.0 + 0.5)         # 0.74
        t0 = lrelu(z * 4.0 + h1 * 5.0 + 0.25)
        want = t0 * -2.0 + 1.0              # final layer, no activation
        got = net.forward(np.array([z]), np.array([e]))
        assert got[0] == pytest.approx(want, abs=1e-12)

    def test_batch_equals_elementwise(self):
        net = init_mapping(MappingConfig(embed_dim=8), seed=3)
        rng = np.random.default_rng(4)
        z = rng.standard_normal((5, 512))
        e = rng.standard_normal((5, 8))
        batched = net.forward(z, e)
        for i in range(5):
            # BLAS blocking differs across batch shapes; agreement is to
            # rounding, not bitwise.
            np.testing.assert_allclose(batched[i], net.forward(z[i], e[i]),
                                       rtol=1e-12, atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        net = init_mapping(MappingConfig(embed_dim=8), seed=0)
        with pytest.raises(InvalidInputError):
            net.forward(np.zeros(100), np.zeros(8))
        with pytest.raises(InvalidInputError):
            net.forward(np.zeros(512), np.zeros(9))

    def test_non_finite_rejected(self):
        net = init_mapping(MappingConfig(embed_dim=8), seed=0)
        z = np.zeros(512)
        z[0] = np.nan
        with pytest.raises(InvalidInputError):
            net.forward(z, np.zeros(8))

    def test_map_latent_tags_branch(self):
        net = init_mapping(MappingConfig(embed_dim=8), seed=0, branch="texture")
        code = map_latent(net, np.zeros(512), np.ones(8) / np.sqrt(8))
        assert code.branch == "texture"
        assert code.w.shape == (512,)

    def test_backward_matches_finite_differences(self):
        net = init_mapping(MappingConfig(embed_dim=8), seed=5)
        rng = np.random.default_rng(6)
        z = rng.standard_normal((3, 512))
        e = rng.standard_normal((3, 8))
        g_out = rng.standard_normal((3, 512))
        out, cache = net.forward_cached(z, e)
        grads = net.backward(cache, g_out)
        h = 1e-6
        for name in ("adapter.0.w", "adapter.1.b", "trunk.0.w", "trunk.4.w",
                     "trunk.7.b"):
            param = net.params[name]
            idx = int(rng.integers(param.size))
            orig = param.flat[idx]
            param.flat[idx] = orig + h
            plus = float((net.forward(z, e) * g_out).sum())
            param.flat[idx] = orig - h
            minus = float((net.forward(z, e) * g_out).sum())
            param.flat[idx] = orig
            fd = (plus - minus) / (2 * h)
            assert grads[name].flat[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)


class TestToyGenerator:
    def setup_method(self):
        self.gen = ToyGenerator(GeneratorConfig(resolution=24), seed=13)
        self.rng = np.random.default_rng(0)

    def _latents(self):
        return (0.1 * self.rng.standard_normal(512),
                0.1 * self.rng.standard_normal(512))

    def test_output_in_unit_interval(self):
        for _ in range(100):
            w_geo, w_tex = self._latents()
            pose = CameraPose(self.rng.uniform(0, 6.28), self.rng.uniform(-0.5, 1.0))
            img = self.gen.render(w_geo, w_tex, pose)
            assert img.shape == (24, 24, 4)
            assert img.min() > 0.0 and img.max() < 1.0  # open sigmoid range

    def test_alpha_ignores_texture_latent(self):
        w_geo, w_tex = self._latents()
        other_tex = 0.1 * self.rng.standard_normal(512)
        pose = CameraPose(1.0, 0.2)
        a = self.gen.render(w_geo, w_tex, pose)[..., 3]
        b = self.gen.render(w_geo, other_tex, pose)[..., 3]
        assert np.array_equal(a, b)

    def test_rgb_ignores_geometry_latent(self):
        w_geo, w_tex = self._latents()
        other_geo = 0.1 * self.rng.standard_normal(512)
        pose = CameraPose(1.0, 0.2)
        a = self.gen.render(w_geo, w_tex, pose)[..., :3]
        b = self.gen.render(other_geo, w_tex, pose)[..., :3]
        assert np.array_equal(a, b)

    def test_deterministic_across_instances(self):
        w_geo, w_tex = self._latents()
        pose = CameraPose(0.5, 0.1)
        again = ToyGenerator(GeneratorConfig(resolution=24), seed=13)
        assert np.array_equal(self.gen.render(w_geo, w_tex, pose),
                              again.render(w_geo, w_tex, pose))
        assert self.gen.param_hash() == again.param_hash()

    def test_pixel_gradients_match_finite_differences(self):
        w_geo, w_tex = self._latents()
        pose = CameraPose(0.9, 0.3)
        img, cache = self.gen.render_cached(w_geo, w_tex, pose)
        h = 1e-3
        worst = 0.0
        pix_rng = np.random.default_rng(8)
        for _ in range(10):
            r = int(pix_rng.integers(24))
            c = int(pix_rng.integers(24))
            ch = int(pix_rng.integers(4))
            g_img = np.zeros_like(img)
            g_img[r, c, ch] = 1.0
            g_geo, g_tex = self.gen.render_vjp(cache, g_img)
            idx = int(pix_rng.integers(512))
            for which, w, grad in (("geo", w_geo, g_geo), ("tex", w_tex, g_tex)):
                plus = w.copy(); plus[idx] += h
                minus = w.copy(); minus[idx] -= h
                if which == "geo":
                    fd = (self.gen.render(plus, w_tex, pose)[r, c, ch]
                          - self.gen.render(minus, w_tex, pose)[r, c, ch]) / (2 * h)
                else:
                    fd = (self.gen.render(w_geo, plus, pose)[r, c, ch]
                          - self.gen.render(w_geo, minus, pose)[r, c, ch]) / (2 * h)
                scale = max(abs(grad[idx]), abs(fd))
                if scale > 1e-10:
                    worst = max(worst, abs(grad[idx] - fd) / scale)
        assert worst < 1e-4

    def test_frozen_hash_stable_across_renders(self):
        before = self.gen.param_hash()
        for _ in range(5):
            w_geo, w_tex = self._latents()
            self.gen.render(w_geo, w_tex, CameraPose(0.3, 0.0))
        assert self.gen.param_hash() == before

    def test_generate_checks_branches(self):
        w_geo, w_tex = self._latents()
        geo = LatentCode(w_geo, "geometry")
        tex = LatentCode(w_tex, "texture")
        image = generate(self.gen, geo, tex, CameraPose(0.1, 0.1))
        assert isinstance(image, RenderedImage)
        with pytest.raises(InvalidInputError):
            generate(self.gen, tex, tex, CameraPose(0.1, 0.1))
        with pytest.raises(InvalidInputError):
            generate(self.gen, geo, geo, CameraPose(0.1, 0.1))


class TestInterpolate:
    def _codes(self):
        rng = np.random.default_rng(1)
        a = LatentCode(rng.standard_normal(512), "geometry")
        b = LatentCode(rng.standard_normal(512), "geometry")
        return a, b

    def test_endpoints_bit_exact(self):
        a, b = self._codes()
        # include a negative zero to catch 1.0*x + 0.0*y rewrites
        a.w.flags.writeable = True
        a.w[0] = -0.0
        a.w.flags.writeable = False
        assert interpolate(a, b, 0.0).w.tobytes() == a.w.tobytes()
        assert interpolate(a, b, 1.0).w.tobytes() == b.w.tobytes()

    def test_midpoint(self):
        zeros = LatentCode(np.zeros(512), "texture")
        twos = LatentCode(np.full(512, 2.0), "texture")
        assert np.all(interpolate(zeros, twos, 0.5).w == 1.0)

    def test_branch_mismatch_rejected(self):
        a, _ = self._codes()
        other = LatentCode(np.zeros(512), "texture")
        with pytest.raises(InvalidInputError):
            interpolate(a, other, 0.5)

    def test_alpha_out_of_range(self):
        a, b = self._codes()
        for alpha in (-0.1, 1.1):
            with pytest.raises(InvalidInputError):
                interpolate(a, b, alpha)

    def test_linearity(self):
        a, b = self._codes()
        w = interpolate(a, b, 0.25).w
        np.testing.assert_allclose(w, 0.75 * a.w + 0.25 * b.w, atol=1e-15)


class TestLatentCode:
    def test_validation(self):
        with pytest.raises(InvalidInputError):
            LatentCode(np.full(4, np.inf), "geometry")
        with pytest.raises(InvalidInputError):
            LatentCode(np.zeros((4, 4)), "geometry")
        with pytest.raises(InvalidInputError):
            LatentCode(np.zeros(4), "colour")


class TestCheckpoint:
    def _networks(self):
        return {
            "geometry": init_mapping(MappingConfig(embed_dim=8), seed=1, branch="geometry"),
            "texture": init_mapping(MappingConfig(embed_dim=8), seed=2, branch="texture"),
        }

    def test_round_trip(self, tmp_path):
        nets = self._networks()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, nets, "digest123")
        loaded, digest = load_checkpoint(path)
        assert digest == "digest123"
        assert set(loaded) == {"geometry", "texture"}
        for branch, net in nets.items():
            for name, arr in net.params.items():
                np.testing.assert_array_equal(loaded[branch][name], arr)
        rebuilt = MappingNetwork.from_params("geometry", loaded["geometry"])
        assert rebuilt.param_hash() == nets["geometry"].param_hash()

    def test_save_is_deterministic(self, tmp_path):
        nets = self._networks()
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(p1, nets, "d")
        save_checkpoint(p2, nets, "d")
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 8)
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        nets = self._networks()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, nets, "d")
        clipped = tmp_path / "clipped.ckpt"
        clipped.write_bytes(path.read_bytes()[:100])
        with pytest.raises(FormatError):
            load_checkpoint(clipped)

    def test_disjoint_parameters(self):
        nets = self._networks()
        tex_hash = nets["texture"].param_hash()
        nets["geometry"].params["trunk.0.w"][0, 0] += 1.0
        assert nets["texture"].param_hash() == tex_hash


def test_leaky_relu_slope():
    x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    np.testing.assert_allclose(leaky_relu(x, 0.2),
                               [-0.4, -0.1, 0.0, 0.5, 2.0])
