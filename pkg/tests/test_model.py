import numpy as np
import pytest

from planformer.env import generate_random_env, rasterize
from planformer.model import (ModelConfig, SampleContext, SamplerModel,
                              cells_of, hybrid_sample, load_model,
                              predict_next, save_model, sequence_coords)
from planformer.nn.serialize import WeightFormatError
from planformer.nn.tensor import Tensor

from conftest import gradcheck

SPEC_2D = dict(dim=2, size=(100.0, 100.0), obstacle_count_range=(16, 20),
               radius_range=(0.0, 12.0))
SPEC_3D = dict(dim=3, size=(50.0, 50.0, 50.0), obstacle_count_range=(6, 10),
               radius_range=(0.0, 8.0))


@pytest.fixture(scope="module")
def model2d():
    return SamplerModel(ModelConfig(), seed=0)


@pytest.fixture(scope="module")
def model3d():
    return SamplerModel(ModelConfig(d_space=3, map_dims=(50, 50, 50)), seed=0)


def small_model(d_space=2, map_dims=(12, 12)):
    cfg = ModelConfig(d_space=d_space, d_model=12, n_head=2, head_dim=4,
                      n_layers=2, d_ff=16, max_seq_len=16, map_dims=map_dims,
                      conv_channels=(4, 6))
    return SamplerModel(cfg, seed=0)


class TestConfig:
    def test_roundtrip(self):
        cfg = ModelConfig(d_space=3, map_dims=(50, 50, 50))
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(d_space=3, map_dims=(100, 100))


class TestParameterCount:
    def test_2d_count(self, model2d):
        assert model2d.parameter_count() == 521_858

    def test_3d_count(self, model3d):
        assert model3d.parameter_count() == 568_355


class TestDeterminism:
    def test_same_seed_same_weights(self):
        a = SamplerModel(ModelConfig(), seed=3)
        b = SamplerModel(ModelConfig(), seed=3)
        for name in a.params:
            assert (a.params[name].data == b.params[name].data).all()

    def test_different_seed_differs(self):
        a = SamplerModel(ModelConfig(), seed=3)
        b = SamplerModel(ModelConfig(), seed=4)
        assert any((a.params[n].data != b.params[n].data).any() for n in a.params)


class TestFeatures:
    def test_feature_map_shape(self, model2d):
        env = generate_random_env(seed=0, **SPEC_2D)
        feats = model2d.extract_features(rasterize(env))
        assert feats.shape == (64, 100, 100)

    def test_feature_cache_hit_returns_same_array(self, model2d):
        env = generate_random_env(seed=1, **SPEC_2D)
        cmap = rasterize(env)
        assert model2d.extract_features(cmap) is model2d.extract_features(cmap)

    def test_patch_equals_full_2d(self, model2d, rng):
        env = generate_random_env(seed=2, **SPEC_2D)
        cmap = rasterize(env)
        full = model2d.extract_features(cmap)
        cells = np.stack([rng.integers(0, 100, 30), rng.integers(0, 100, 30)], axis=1)
        cells[:3] = [[0, 0], [99, 99], [0, 99]]  # include boundary cells
        which = np.zeros(len(cells), dtype=int)
        patch = model2d.patch_features([cmap], cells, which).data
        ref = full[(slice(None),) + tuple(cells.T)].T
        assert np.allclose(patch, ref, atol=1e-10)

    def test_patch_equals_full_3d(self, model3d, rng):
        env = generate_random_env(seed=2, **SPEC_3D)
        cmap = rasterize(env)
        full = model3d.extract_features(cmap)
        cells = rng.integers(0, 50, (15, 3))
        cells[0] = [0, 0, 0]
        cells[1] = [49, 49, 49]
        which = np.zeros(len(cells), dtype=int)
        patch = model3d.patch_features([cmap], cells, which).data
        ref = full[(slice(None),) + tuple(cells.T)].T
        assert np.allclose(patch, ref, atol=1e-10)


class TestTokens:
    def test_sequence_order_goal_start_nodes(self):
        env = generate_random_env(seed=0, **SPEC_2D)
        ctx = SampleContext.for_env(env)
        ctx.nodes = [(1.0, 2.0), (3.0, 4.0)]
        coords = sequence_coords(ctx, 256)
        assert tuple(coords[0]) == env.goal
        assert tuple(coords[1]) == env.start
        assert tuple(coords[2]) == (1.0, 2.0)

    def test_truncation_keeps_most_recent(self):
        env = generate_random_env(seed=0, **SPEC_2D)
        ctx = SampleContext.for_env(env)
        ctx.nodes = [(float(i), 0.0) for i in range(300)]
        coords = sequence_coords(ctx, 256)
        assert len(coords) == 256
        assert tuple(coords[-1]) == (299.0, 0.0)
        assert tuple(coords[2]) == (46.0, 0.0)

    def test_cells_of_clips(self):
        cells = cells_of(np.array([[99.9, 100.0], [-0.5, 0.2]]), (100, 100))
        assert cells.tolist() == [[99, 99], [0, 0]]


class TestPredict:
    def test_output_in_workspace(self, model2d):
        env = generate_random_env(seed=5, **SPEC_2D)
        ctx = SampleContext.for_env(env)
        pt = predict_next(ctx, model2d)
        assert len(pt) == 2
        assert all(0.0 <= c <= 100.0 for c in pt)

    def test_deterministic(self, model2d):
        env = generate_random_env(seed=5, **SPEC_2D)
        ctx = SampleContext.for_env(env)
        ctx.nodes = [(10.0, 10.0), (14.0, 12.0)]
        assert predict_next(ctx, model2d) == predict_next(ctx, model2d)

    def test_padding_invariance(self, model2d):
        """Predictions are identical whether the sequence is padded to its
        actual length, 64, or 256 tokens."""
        env = generate_random_env(seed=6, **SPEC_2D)
        ctx = SampleContext.for_env(env)
        ctx.nodes = [(float(i), float(i)) for i in range(10, 30, 2)]
        base = np.asarray(predict_next(ctx, model2d))
        for pad in (64, 256):
            padded = np.asarray(predict_next(ctx, model2d, pad_to=pad))
            assert np.abs(padded - base).max() < 1e-6

    def test_3d_prediction(self, model3d):
        env = generate_random_env(seed=5, **SPEC_3D)
        ctx = SampleContext.for_env(env)
        pt = predict_next(ctx, model3d)
        assert len(pt) == 3
        assert all(0.0 <= c <= 50.0 for c in pt)


class TestHybridSample:
    def test_alpha_one_is_uniform(self, model2d):
        env = generate_random_env(seed=7, **SPEC_2D)
        ctx = SampleContext.for_env(env)
        rng = np.random.default_rng(0)
        pts = {hybrid_sample(ctx, model2d, 1.0, rng) for _ in range(50)}
        assert len(pts) == 50  # uniform draws essentially never repeat

    def test_alpha_zero_is_model(self, model2d):
        env = generate_random_env(seed=7, **SPEC_2D)
        ctx = SampleContext.for_env(env)
        rng = np.random.default_rng(0)
        # 0.0 < any r, so the model branch fires every time except r == 0
        pts = {hybrid_sample(ctx, model2d, 0.0, rng) for _ in range(5)}
        assert pts == {predict_next(ctx, model2d)}

    def test_invalid_alpha(self, model2d):
        env = generate_random_env(seed=7, **SPEC_2D)
        ctx = SampleContext.for_env(env)
        with pytest.raises(ValueError):
            hybrid_sample(ctx, model2d, -0.1, np.random.default_rng(0))


class TestFullModelGradient:
    def test_small_model_end_to_end(self, rng):
        model = small_model()
        env = generate_random_env(dim=2, size=(12.0, 12.0),
                                  obstacle_count_range=(2, 3),
                                  radius_range=(0.5, 2.0), seed=0)
        cmap = rasterize(env)
        coords = np.array([[[11.0, 11.0], [1.0, 1.0], [4.0, 5.0], [0.0, 0.0]]])
        valid = np.array([[True, True, True, False]])
        cells = cells_of(coords[0, :3], (12, 12))
        target = Tensor(np.array([[0.4, 0.6]]))
        # random draw keeps pre-activations off the ReLU kink at exactly zero
        for p in model.params.values():
            p.data = p.data + rng.standard_normal(p.data.shape) * 0.05

        # scatter matrix placing the 3 real rows into the 4-row token block
        place = np.zeros((1, 4, 3))
        place[0, np.arange(3), np.arange(3)] = 1.0

        def loss():
            feats = model.patch_features([cmap], cells, np.zeros(3, dtype=int))
            tok_feats = Tensor(place) @ feats.reshape(1, 3, model.config.d_model)
            tokens = model.embed_tokens(coords, tok_feats)
            enc = model.encode(tokens, valid)
            pred = model.head(enc[0, 2].reshape(1, model.config.d_model))
            return ((pred - target) ** 2.0).sum()

        gradcheck(loss, list(model.params.values()), rng, samples_per_tensor=3)


class TestSaveLoad:
    def test_roundtrip_predictions_close(self, tmp_path, model2d):
        env = generate_random_env(seed=9, **SPEC_2D)
        ctx = SampleContext.for_env(env)
        ctx.nodes = [(20.0, 30.0)]
        before = np.asarray(predict_next(ctx, model2d))
        p = tmp_path / "m.weights"
        save_model(model2d, p)
        loaded = load_model(p)
        ctx2 = SampleContext.for_env(env)
        ctx2.nodes = [(20.0, 30.0)]
        after = np.asarray(predict_next(ctx2, loaded))
        assert loaded.config == model2d.config
        assert np.abs(before - after).max() < 1e-3  # float32 storage rounds

    def test_bad_manifest_rejected(self, tmp_path):
        from planformer.nn.serialize import save_tensors
        p = tmp_path / "m.weights"
        save_tensors(p, {"w": np.zeros(3)}, meta={"model": "sampler"})
        with pytest.raises(WeightFormatError):
            load_model(p)
