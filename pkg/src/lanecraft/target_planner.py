"""Target-guided planning branch.

A navigation target point is lifted to an embedding through a fixed random
Fourier bank plus a small MLP, then refined against the planning feature map
through a chain of attention blocks: target self-attention, target-to-plan
cross-attention, an MLP, and plan-to-target cross-attention. A sigmoid head
turns the refined map into per-point plan probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .double_edge import TargetPoint
from .perception import NetConfig, mlp_2layer, multi_head_attention
from .tensor_ops import ShapeError

N_FOURIER = 16


@dataclass(frozen=True)
class PlanOutput:
    p_plan: np.ndarray  # (lane_slots, points_per_lane, 1) probabilities


def _weight_specs(config: NetConfig) -> dict[str, tuple[int, ...]]:
    e, hid = config.embed_dim, config.hidden_dim
    specs: dict[str, tuple[int, ...]] = {
        "fourier": (N_FOURIER, 2),
        "enc.w1": (2 * N_FOURIER, hid),
        "enc.b1": (hid,),
        "enc.w2": (hid, e),
        "enc.b2": (e,),
        "mlp.w1": (e, hid),
        "mlp.b1": (hid,),
        "mlp.w2": (hid, e),
        "mlp.b2": (e,),
        "head.w": (e, 1),
        "head.b": (1,),
    }
    for block in ("tsa", "tpa", "pta"):
        for part in ("wq", "wk", "wv", "wo"):
            specs[f"{block}.{part}"] = (e, e)
    return specs


def init_target_weights(config: NetConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x7A26]))
    bound = 1.0 / math.sqrt(config.embed_dim)
    weights = {}
    for name, shape in _weight_specs(config).items():
        if name == "fourier":
            # Frequency bank for the positional lift; fixed after init.
            weights[name] = rng.normal(0.0, 0.25, shape)
        else:
            weights[name] = rng.uniform(-bound, bound, shape)
    return weights


class TargetPlanner:
    """Forward-only planning branch; weights immutable after construction."""

    def __init__(self, config: NetConfig, weights: dict | None = None, seed: int = 0):
        self.config = config
        self.weights = weights if weights is not None else init_target_weights(config, seed)
        missing = set(_weight_specs(config)) - set(self.weights)
        if missing:
            raise ValueError(f"missing weights: {sorted(missing)[:5]}")

    def encode_target(self, target: TargetPoint) -> np.ndarray:
        """Embed a target point; returns (E, 1)."""
        if not (math.isfinite(target.x) and math.isfinite(target.y)):
            raise ValueError("target coordinates must be finite")
        wts = self.weights
        angles = wts["fourier"] @ np.array([target.x, target.y], dtype=np.float64)
        lift = np.concatenate([np.sin(angles), np.cos(angles)])[None, :]
        return mlp_2layer(lift, wts["enc.w1"], wts["enc.b1"], wts["enc.w2"], wts["enc.b2"]).T

    def plan_decode(self, f_vec: np.ndarray, f_plan: np.ndarray, record: list | None = None) -> np.ndarray:
        """Refine the planning feature map against the target embedding.

        ``f_vec`` is (E, n_target_tokens), ``f_plan`` is (E, lanes, points);
        the result has the shape of ``f_plan``.
        """
        cfg = self.config
        f_vec = np.asarray(f_vec, dtype=np.float64)
        f_plan = np.asarray(f_plan, dtype=np.float64)
        if f_vec.ndim != 2 or f_vec.shape[0] != cfg.embed_dim:
            raise ShapeError(f"target embedding must be (E, n_tokens), got {f_vec.shape}")
        if f_plan.ndim != 3 or f_plan.shape[0] != cfg.embed_dim:
            raise ShapeError(f"planning features must be (E, lanes, points), got {f_plan.shape}")
        wts = self.weights
        heads = cfg.heads
        tgt_rows = f_vec.T
        plan_rows = f_plan.reshape(cfg.embed_dim, -1).T

        x = multi_head_attention(
            tgt_rows, tgt_rows, wts["tsa.wq"], wts["tsa.wk"], wts["tsa.wv"], wts["tsa.wo"], heads, record
        )
        x = multi_head_attention(
            x, plan_rows, wts["tpa.wq"], wts["tpa.wk"], wts["tpa.wv"], wts["tpa.wo"], heads, record
        )
        x = mlp_2layer(x, wts["mlp.w1"], wts["mlp.b1"], wts["mlp.w2"], wts["mlp.b2"])
        out = multi_head_attention(
            plan_rows, x, wts["pta.wq"], wts["pta.wk"], wts["pta.wv"], wts["pta.wo"], heads, record
        )
        return out.T.reshape(f_plan.shape)

    def plan_head(self, refined: np.ndarray) -> PlanOutput:
        """Linear + sigmoid per point; returns (lanes, points, 1) probabilities."""
        refined = np.asarray(refined, dtype=np.float64)
        if refined.ndim != 3 or refined.shape[0] != self.config.embed_dim:
            raise ShapeError(f"expected (E, lanes, points), got {refined.shape}")
        wts = self.weights
        rows = refined.reshape(self.config.embed_dim, -1).T
        probs = expit(rows @ wts["head.w"] + wts["head.b"])
        return PlanOutput(p_plan=probs.reshape(refined.shape[1], refined.shape[2], 1))

    def predict(self, target: TargetPoint, f_plan: np.ndarray, use_target_attention: bool = True) -> PlanOutput:
        """End-to-end plan probabilities; pass-through skips the attention chain."""
        if use_target_attention:
            refined = self.plan_decode(self.encode_target(target), f_plan)
        else:
            refined = np.asarray(f_plan, dtype=np.float64)
        return self.plan_head(refined)
