import numpy as np
import pytest

from lanecraft.double_edge import TargetPoint
from lanecraft.perception import SMALL_CONFIG
from lanecraft.target_planner import TargetPlanner, init_target_weights
from lanecraft.tensor_ops import ShapeError

CFG = SMALL_CONFIG


@pytest.fixture(scope="module")
def planner():
    return TargetPlanner(CFG, seed=0)


class TestEncodeTarget:
    def test_deterministic(self, planner):
        a = planner.encode_target(TargetPoint(3.0, -4.0))
        b = planner.encode_target(TargetPoint(3.0, -4.0))
        assert np.array_equal(a, b)

    def test_shape(self, planner):
        assert planner.encode_target(TargetPoint(0.0, 0.0)).shape == (CFG.embed_dim, 1)

    def test_distinct_points_distinct_embeddings(self, planner):
        a = planner.encode_target(TargetPoint(0.0, 0.0))
        b = planner.encode_target(TargetPoint(10.0, 0.0))
        assert np.linalg.norm(a - b) > 0.0

    def test_rejects_non_finite(self, planner):
        with pytest.raises(ValueError):
            planner.encode_target(TargetPoint(float("inf"), 0.0))


class TestPlanDecode:
    def test_output_shape(self, planner):
        rng = np.random.default_rng(0)
        f_plan = rng.normal(size=(CFG.embed_dim, CFG.lane_slots, CFG.points_per_lane))
        f_vec = planner.encode_target(TargetPoint(5.0, 1.0))
        out = planner.plan_decode(f_vec, f_plan)
        assert out.shape == f_plan.shape

    def test_attention_rows_sum_to_one(self, planner):
        rng = np.random.default_rng(1)
        f_plan = rng.normal(size=(CFG.embed_dim, CFG.lane_slots, CFG.points_per_lane))
        record = []
        planner.plan_decode(planner.encode_target(TargetPoint(5.0, 1.0)), f_plan, record=record)
        assert record
        for probs in record:
            assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-6)

    def test_single_token_self_attention_weight_is_one(self, planner):
        rng = np.random.default_rng(2)
        f_plan = rng.normal(size=(CFG.embed_dim, CFG.lane_slots, CFG.points_per_lane))
        record = []
        planner.plan_decode(planner.encode_target(TargetPoint(1.0, 2.0)), f_plan, record=record)
        # first CFG.heads entries are the target self-attention heads
        for probs in record[: CFG.heads]:
            assert probs.shape == (1, 1)
            assert probs[0, 0] == 1.0

    def test_lane_slot_permutation_equivariance(self, planner):
        rng = np.random.default_rng(3)
        f_plan = rng.normal(size=(CFG.embed_dim, CFG.lane_slots, CFG.points_per_lane))
        f_vec = planner.encode_target(TargetPoint(4.0, -2.0))
        perm = np.array([2, 0, 1])
        out = planner.plan_decode(f_vec, f_plan)
        out_perm = planner.plan_decode(f_vec, f_plan[:, perm])
        assert np.allclose(out_perm, out[:, perm], atol=1e-9)

    def test_shape_errors(self, planner):
        with pytest.raises(ShapeError):
            planner.plan_decode(np.zeros((CFG.embed_dim, 1)), np.zeros((CFG.embed_dim, 4)))


class TestPlanHead:
    def test_zero_features_zero_head_gives_half(self):
        weights = init_target_weights(CFG, seed=1)
        weights["head.b"] = np.zeros_like(weights["head.b"])
        planner = TargetPlanner(CFG, weights=weights)
        out = planner.plan_head(np.zeros((CFG.embed_dim, CFG.lane_slots, CFG.points_per_lane)))
        assert np.allclose(out.p_plan, 0.5)

    def test_range_and_shape(self, planner):
        rng = np.random.default_rng(4)
        refined = rng.normal(size=(CFG.embed_dim, CFG.lane_slots, CFG.points_per_lane))
        out = planner.plan_head(refined)
        assert out.p_plan.shape == (CFG.lane_slots, CFG.points_per_lane, 1)
        assert np.all(out.p_plan > 0.0) and np.all(out.p_plan < 1.0)

    def test_monotone_along_head_weight_direction(self, planner):
        w = planner.weights["head.w"][:, 0]
        base = np.zeros((CFG.embed_dim, CFG.lane_slots, CFG.points_per_lane))
        boosted = base + w[:, None, None]
        p0 = planner.plan_head(base).p_plan
        p1 = planner.plan_head(boosted).p_plan
        assert np.all(p1 > p0)


class TestEndToEnd:
    def test_deterministic(self, planner):
        rng = np.random.default_rng(5)
        f_plan = rng.normal(size=(CFG.embed_dim, CFG.lane_slots, CFG.points_per_lane))
        t = TargetPoint(8.0, 3.0)
        a = planner.predict(t, f_plan)
        b = planner.predict(t, f_plan)
        assert np.array_equal(a.p_plan, b.p_plan)

    def test_pass_through_skips_attention(self, planner):
        rng = np.random.default_rng(6)
        f_plan = rng.normal(size=(CFG.embed_dim, CFG.lane_slots, CFG.points_per_lane))
        t = TargetPoint(8.0, 3.0)
        bypass = planner.predict(t, f_plan, use_target_attention=False)
        assert np.array_equal(bypass.p_plan, planner.plan_head(f_plan).p_plan)
        assert not np.array_equal(bypass.p_plan, planner.predict(t, f_plan).p_plan)
