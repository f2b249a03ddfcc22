import dataclasses

import numpy as np
import pytest

from lanecraft.double_edge import SceneAnnotation
from lanecraft.perception import (
    FULL_CONFIG,
    SMALL_CONFIG,
    NetConfig,
    PerceptionNet,
    init_weights,
    load_weights,
    save_weights,
    synthetic_features,
)
from lanecraft.tensor_ops import ShapeError, sinusoidal_pe
from helpers import straight_lane, valid_scene


class TestNetConfig:
    def test_defaults_match_reference_sizes(self):
        assert (FULL_CONFIG.embed_dim, FULL_CONFIG.layers, FULL_CONFIG.lane_slots, FULL_CONFIG.points_per_lane) == (
            256,
            6,
            30,
            20,
        )

    def test_validation(self):
        with pytest.raises(ValueError):
            NetConfig(embed_dim=10, heads=2)  # not divisible by 4
        with pytest.raises(ValueError):
            NetConfig(embed_dim=16, heads=5)
        with pytest.raises(ValueError):
            NetConfig(points_per_lane=7)


class TestSyntheticFeatures:
    def test_deterministic(self):
        scene = valid_scene()
        a = synthetic_features(scene, SMALL_CONFIG, seed=3)
        b = synthetic_features(scene, SMALL_CONFIG, seed=3)
        assert a.tobytes() == b.tobytes()

    def test_empty_scene_is_background(self):
        empty = SceneAnnotation(lanes=(), speed=0.0, signal="none")
        other = SceneAnnotation(lanes=(), speed=0.0, signal="none")
        assert np.array_equal(
            synthetic_features(empty, SMALL_CONFIG, 1), synthetic_features(other, SMALL_CONFIG, 1)
        )

    def test_lane_changes_grids(self):
        empty = SceneAnnotation(lanes=(), speed=5.0, signal="green")
        one = SceneAnnotation(lanes=(straight_lane(),), speed=5.0, signal="green")
        assert not np.array_equal(
            synthetic_features(empty, SMALL_CONFIG, 1), synthetic_features(one, SMALL_CONFIG, 1)
        )

    def test_seed_changes_background(self):
        scene = SceneAnnotation(lanes=(), speed=0.0, signal="none")
        assert not np.array_equal(
            synthetic_features(scene, SMALL_CONFIG, 1), synthetic_features(scene, SMALL_CONFIG, 2)
        )


class TestTokenize:
    def test_zero_grids_zero_projection_gives_pe(self):
        net = PerceptionNet(SMALL_CONFIG, seed=0)
        weights = dict(net.weights)
        weights["proj.w"] = np.zeros_like(weights["proj.w"])
        weights["proj.b"] = np.zeros_like(weights["proj.b"])
        net = PerceptionNet(SMALL_CONFIG, weights=weights)
        cfg = SMALL_CONFIG
        grids = np.zeros((cfg.n_views, cfg.embed_dim, *cfg.token_grid))
        tokens = net.tokenize(grids)
        pe = sinusoidal_pe(cfg.token_grid[0], cfg.token_grid[1], cfg.embed_dim)
        assert np.array_equal(tokens, np.concatenate([pe] * cfg.n_views, axis=1))

    def test_token_count(self):
        net = PerceptionNet(SMALL_CONFIG)
        cfg = SMALL_CONFIG
        grids = np.zeros((cfg.n_views, cfg.embed_dim, *cfg.token_grid))
        assert net.tokenize(grids).shape == (cfg.embed_dim, cfg.n_tokens)

    def test_view_permutation_permutes_token_blocks(self):
        net = PerceptionNet(SMALL_CONFIG, seed=1)
        cfg = SMALL_CONFIG
        rng = np.random.default_rng(0)
        grids = rng.normal(size=(cfg.n_views, cfg.embed_dim, *cfg.token_grid))
        tokens = net.tokenize(grids)
        swapped = net.tokenize(grids[::-1].copy())
        per_view = cfg.token_grid[0] * cfg.token_grid[1]
        assert np.array_equal(swapped[:, :per_view], tokens[:, per_view:])
        assert np.array_equal(swapped[:, per_view:], tokens[:, :per_view])

    def test_shape_check(self):
        net = PerceptionNet(SMALL_CONFIG)
        with pytest.raises(ShapeError):
            net.tokenize(np.zeros((1, 2, 3, 4)))


class TestEncodeDecode:
    def test_zero_layers_is_identity(self):
        cfg = dataclasses.replace(SMALL_CONFIG, layers=0)
        net = PerceptionNet(cfg)
        rng = np.random.default_rng(1)
        tokens = rng.normal(size=(cfg.embed_dim, cfg.n_tokens))
        assert np.array_equal(net.encode(tokens), tokens)

    def test_shapes_small_config(self):
        self._check_shapes(SMALL_CONFIG)

    @pytest.mark.slow
    def test_shapes_full_config(self):
        self._check_shapes(FULL_CONFIG)

    @staticmethod
    def _check_shapes(cfg):
        net = PerceptionNet(cfg, seed=0)
        rng = np.random.default_rng(2)
        grids = rng.normal(size=(cfg.n_views, cfg.embed_dim, *cfg.token_grid))
        tokens = net.tokenize(grids)
        memory = net.encode(tokens)
        assert memory.shape == tokens.shape
        bundle, speed_feat, signal_feat = net.decode(memory)
        assert bundle.f_double_edge.shape == (cfg.embed_dim, cfg.lane_slots, cfg.points_per_lane)
        assert bundle.f_int.shape == (cfg.embed_dim, cfg.lane_slots)
        assert bundle.f_dir.shape == (cfg.embed_dim, cfg.lane_slots)
        assert bundle.f_occ.shape == (cfg.embed_dim, cfg.lane_slots, cfg.points_per_lane)
        out = net.heads(bundle, speed_feat, signal_feat)
        assert out.points.shape == (cfg.lane_slots, cfg.points_per_lane, 2)
        assert out.p_int.shape == (cfg.lane_slots, 1)
        assert out.p_dir.shape == (cfg.lane_slots, 1)
        assert out.p_occ.shape == (cfg.lane_slots, cfg.points_per_lane, 1)
        assert out.signal_logits.shape == (4,)
        assert np.isfinite(out.points).all()

    def test_attention_rows_sum_to_one(self):
        net = PerceptionNet(SMALL_CONFIG, seed=3)
        record = []
        scene = valid_scene()
        net.forward(scene, seed=0, record=record)
        assert len(record) > 0
        for probs in record:
            assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-6)

    def test_tied_lane_queries_give_tied_outputs(self):
        cfg = SMALL_CONFIG
        net = PerceptionNet(cfg, seed=4)
        weights = dict(net.weights)
        q = weights["query.double_edge"].copy()
        per_lane = q[:, : cfg.points_per_lane]
        weights["query.double_edge"] = np.tile(per_lane, (1, cfg.lane_slots))
        net = PerceptionNet(cfg, weights=weights)
        rng = np.random.default_rng(5)
        memory = rng.normal(size=(cfg.embed_dim, cfg.n_tokens))
        bundle, _, _ = net.decode(memory)
        for lane in range(1, cfg.lane_slots):
            assert np.array_equal(bundle.f_double_edge[:, 0], bundle.f_double_edge[:, lane])
            assert np.array_equal(bundle.f_int[:, 0], bundle.f_int[:, lane])

    def test_distinct_memories_give_distinct_features(self):
        net = PerceptionNet(SMALL_CONFIG, seed=6)
        rng = np.random.default_rng(7)
        m1 = rng.normal(size=(SMALL_CONFIG.embed_dim, SMALL_CONFIG.n_tokens))
        m2 = rng.normal(size=(SMALL_CONFIG.embed_dim, SMALL_CONFIG.n_tokens))
        b1, _, _ = net.decode(m1)
        b2, _, _ = net.decode(m2)
        assert not np.allclose(b1.f_double_edge, b2.f_double_edge)


class TestHeads:
    def test_probability_ranges_and_speed(self):
        net = PerceptionNet(SMALL_CONFIG, seed=8)
        scene = valid_scene()
        _, out = net.forward(scene, seed=0)
        for probs in (out.p_int, out.p_dir, out.p_occ):
            assert np.all(probs > 0.0) and np.all(probs < 1.0)
        assert out.speed >= 0.0

    def test_zero_features_give_half_probabilities(self):
        cfg = SMALL_CONFIG
        net = PerceptionNet(cfg, seed=9)
        weights = dict(net.weights)
        for name in ("head.int", "head.dir", "head.occ"):
            weights[f"{name}.b"] = np.zeros_like(weights[f"{name}.b"])
        net = PerceptionNet(cfg, weights=weights)
        bundle_shape = (cfg.embed_dim, cfg.lane_slots, cfg.points_per_lane)
        from lanecraft.perception import FeatureBundle

        bundle = FeatureBundle(
            f_double_edge=np.zeros(bundle_shape),
            f_int=np.zeros(bundle_shape[:2]),
            f_dir=np.zeros(bundle_shape[:2]),
            f_occ=np.zeros(bundle_shape),
        )
        out = net.heads(bundle, np.zeros(cfg.embed_dim), np.zeros(cfg.embed_dim))
        assert np.allclose(out.p_int, 0.5)
        assert np.allclose(out.p_dir, 0.5)
        assert np.allclose(out.p_occ, 0.5)


class TestForwardDeterminism:
    def test_bit_identical_runs(self):
        net = PerceptionNet(SMALL_CONFIG, seed=10)
        scene = valid_scene()
        b1, o1 = net.forward(scene, seed=2)
        b2, o2 = net.forward(scene, seed=2)
        assert b1.f_double_edge.tobytes() == b2.f_double_edge.tobytes()
        assert o1.points.tobytes() == o2.points.tobytes()
        assert o1.speed == o2.speed


class TestWeightIo:
    def test_save_load_round_trip(self, tmp_path):
        weights = init_weights(SMALL_CONFIG, seed=11)
        path = tmp_path / "weights.json"
        save_weights(weights, path)
        restored = load_weights(path)
        assert set(restored) == set(weights)
        for name, arr in weights.items():
            assert np.array_equal(restored[name], arr), name

    def test_missing_weight_rejected(self):
        weights = init_weights(SMALL_CONFIG)
        weights.pop("proj.w")
        with pytest.raises(ValueError, match="missing weights"):
            PerceptionNet(SMALL_CONFIG, weights=weights)
