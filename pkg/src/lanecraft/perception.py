"""Toy-scale transformer perception over synthetic per-view feature grids.

The image backbone is replaced by a deterministic rasterizer that paints lane
geometry and attributes into per-view feature grids. Tokens are projected,
positionally encoded, and run through pre-norm encoder/decoder stacks; lane
point queries produce the lane feature map plus per-branch attribute features,
and small heads emit BEV points, attribute probabilities, speed, and traffic
signal logits.

Embeddings at module boundaries are column-per-token, shape (E, tokens).
Weight tensors are stored as (in_dim, out_dim) and applied to row-per-token
activations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .double_edge import DEFAULT_BEV_RANGE, SIGNAL_STATES, SceneAnnotation
from .tensor_ops import ShapeError, matmul, sinusoidal_pe, softmax


@dataclass(frozen=True)
class NetConfig:
    embed_dim: int = 256
    layers: int = 6
    heads: int = 8
    lane_slots: int = 30
    points_per_lane: int = 20
    token_grid: tuple[int, int] = (7, 7)
    n_views: int = 4
    hidden_dim: int = 128

    def __post_init__(self):
        sizes = (
            self.embed_dim,
            self.heads,
            self.lane_slots,
            self.points_per_lane,
            self.token_grid[0],
            self.token_grid[1],
            self.n_views,
            self.hidden_dim,
        )
        # layers=0 is allowed: it makes the stacks identity maps
        if self.layers < 0 or any(v <= 0 for v in sizes):
            raise ValueError("all config dimensions must be positive")
        if self.embed_dim % self.heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.embed_dim % 4 != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by 4")
        if self.points_per_lane % 2 != 0:
            raise ValueError(f"points_per_lane {self.points_per_lane} must be even")

    @property
    def n_point_queries(self) -> int:
        return self.lane_slots * self.points_per_lane

    @property
    def n_tokens(self) -> int:
        h, w = self.token_grid
        return self.n_views * h * w


FULL_CONFIG = NetConfig()
SMALL_CONFIG = NetConfig(
    embed_dim=16,
    layers=2,
    heads=4,
    lane_slots=3,
    points_per_lane=4,
    token_grid=(3, 3),
    n_views=2,
    hidden_dim=8,
)


@dataclass(frozen=True)
class QuerySet:
    """Learned decoder queries: one column per lane point plus speed/traffic."""

    q_double_edge: np.ndarray  # (E, lane_slots * points_per_lane)
    q_speed: np.ndarray  # (E, 1)
    q_traffic: np.ndarray  # (E, 1)


@dataclass(frozen=True)
class FeatureBundle:
    f_double_edge: np.ndarray  # (E, lane_slots, points_per_lane)
    f_int: np.ndarray  # (E, lane_slots)
    f_dir: np.ndarray  # (E, lane_slots)
    f_occ: np.ndarray  # (E, lane_slots, points_per_lane)


@dataclass(frozen=True)
class PerceptionOutput:
    points: np.ndarray  # (lane_slots, points_per_lane, 2) BEV meters
    p_int: np.ndarray  # (lane_slots, 1)
    p_dir: np.ndarray  # (lane_slots, 1)
    p_occ: np.ndarray  # (lane_slots, points_per_lane, 1)
    speed: float
    signal_logits: np.ndarray  # (4,)


def layer_norm(x_rows: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    mu = x_rows.mean(axis=1, keepdims=True)
    var = x_rows.var(axis=1, keepdims=True)
    return (x_rows - mu) / np.sqrt(var + eps) * gain + bias


def mlp_2layer(x_rows, w1, b1, w2, b2) -> np.ndarray:
    hidden = np.maximum(matmul(x_rows, w1) + b1, 0.0)
    return matmul(hidden, w2) + b2


def multi_head_attention(x_rows, ctx_rows, wq, wk, wv, wo, n_heads: int, record=None) -> np.ndarray:
    """Standard scaled dot-product attention; rows are tokens.

    When ``record`` is a list, every head's probability matrix is appended so
    callers can inspect attention rows.
    """
    q = matmul(x_rows, wq)
    k = matmul(ctx_rows, wk)
    v = matmul(ctx_rows, wv)
    dim = q.shape[1]
    if dim % n_heads != 0:
        raise ShapeError(f"attention width {dim} not divisible by {n_heads} heads")
    dh = dim // n_heads
    scale = 1.0 / math.sqrt(dh)
    outs = []
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        probs = softmax(matmul(q[:, sl], k[:, sl].T) * scale, axis=-1)
        if record is not None:
            record.append(probs)
        outs.append(matmul(probs, v[:, sl]))
    return matmul(np.concatenate(outs, axis=1), wo)


def _weight_specs(config: NetConfig) -> dict[str, tuple[int, ...]]:
    e, hid = config.embed_dim, config.hidden_dim
    specs: dict[str, tuple[int, ...]] = {
        "proj.w": (e, e),
        "proj.b": (e,),
        "query.double_edge": (e, config.n_point_queries),
        "query.speed": (e, 1),
        "query.traffic": (e, 1),
    }
    for i in range(config.layers):
        for name in (f"enc{i}.attn", f"dec{i}.self", f"dec{i}.cross"):
            for part in ("wq", "wk", "wv", "wo"):
                specs[f"{name}.{part}"] = (e, e)
        for stack in (f"enc{i}", f"dec{i}"):
            specs[f"{stack}.mlp.w1"] = (e, hid)
            specs[f"{stack}.mlp.b1"] = (hid,)
            specs[f"{stack}.mlp.w2"] = (hid, e)
            specs[f"{stack}.mlp.b2"] = (e,)
        specs[f"enc{i}.ln1.g"] = (e,)
        specs[f"enc{i}.ln1.b"] = (e,)
        specs[f"enc{i}.ln2.g"] = (e,)
        specs[f"enc{i}.ln2.b"] = (e,)
        for j in (1, 2, 3):
            specs[f"dec{i}.ln{j}.g"] = (e,)
            specs[f"dec{i}.ln{j}.b"] = (e,)
    for branch in ("int", "dir", "occ"):
        specs[f"branch.{branch}.w1"] = (e, hid)
        specs[f"branch.{branch}.b1"] = (hid,)
        specs[f"branch.{branch}.w2"] = (hid, e)
        specs[f"branch.{branch}.b2"] = (e,)
    specs["head.bev.w1"] = (e, hid)
    specs["head.bev.b1"] = (hid,)
    specs["head.bev.w2"] = (hid, 2)
    specs["head.bev.b2"] = (2,)
    for head, width in (("int", 1), ("dir", 1), ("occ", 1), ("speed", 1), ("signal", 4)):
        specs[f"head.{head}.w"] = (e, width)
        specs[f"head.{head}.b"] = (width,)
    return specs


def init_weights(config: NetConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Seeded uniform(-1/sqrt(E), 1/sqrt(E)) weights; layer-norm gains start at 1."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1A5E]))
    bound = 1.0 / math.sqrt(config.embed_dim)
    weights = {}
    for name, shape in _weight_specs(config).items():
        if name.endswith(".g"):
            weights[name] = np.ones(shape, dtype=np.float64)
        elif name.endswith(("ln1.b", "ln2.b", "ln3.b")):
            weights[name] = np.zeros(shape, dtype=np.float64)
        else:
            weights[name] = rng.uniform(-bound, bound, shape)
    return weights


def save_weights(weights: dict[str, np.ndarray], path) -> None:
    """Write weights as a flat JSON map {name: {shape, data}}."""
    payload = {
        name: {"shape": list(arr.shape), "data": np.asarray(arr, dtype=np.float64).reshape(-1).tolist()}
        for name, arr in sorted(weights.items())
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")), encoding="utf-8")


def load_weights(path) -> dict[str, np.ndarray]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    out = {}
    for name, entry in payload.items():
        shape = tuple(int(s) for s in entry["shape"])
        arr = np.array(entry["data"], dtype=np.float64)
        if arr.size != math.prod(shape):
            raise ValueError(f"weight '{name}' has {arr.size} values for shape {shape}")
        out[name] = arr.reshape(shape)
    return out


def _view_index(x: float, y: float, n_views: int) -> int:
    angle = math.atan2(y, x)
    width = 2.0 * math.pi / n_views
    return int(((angle + width / 2.0) % (2.0 * math.pi)) / width) % n_views


def synthetic_features(
    scene: SceneAnnotation,
    config: NetConfig,
    seed: int,
    bev_range: tuple[float, float] = DEFAULT_BEV_RANGE,
) -> np.ndarray:
    """Rasterize a scene into per-view feature grids, shape (n_views, E, H, W).

    Deterministic in (scene, seed): a seed-derived background plus per-point
    channel signatures scaled by position and attributes. An empty scene with
    speed 0 and no signal yields exactly the background.
    """
    e = config.embed_dim
    h, w = config.token_grid
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xFEA7]))
    grids = rng.normal(0.0, 0.05, (config.n_views, e, h, w))
    # Draw order is fixed so the signature bank is stable for a given seed.
    sig = rng.normal(0.0, 0.5, (7, e))  # bias, x, y, occ, plan, int, dir
    sig_speed = rng.normal(0.0, 0.5, e)
    sig_signal = rng.normal(0.0, 0.5, (3, e))  # green, red, yellow; 'none' adds nothing

    rx, ry = bev_range
    for lane in scene.lanes:
        for edge in (lane.left, lane.right):
            for p in edge.points:
                view = _view_index(p.x, p.y, config.n_views)
                col = min(w - 1, max(0, int((p.x + rx) / (2.0 * rx) * w)))
                row = min(h - 1, max(0, int((p.y + ry) / (2.0 * ry) * h)))
                vec = (
                    sig[0]
                    + (p.x / rx) * sig[1]
                    + (p.y / ry) * sig[2]
                    + p.occ * sig[3]
                    + p.plan * sig[4]
                    + lane.intersection * sig[5]
                    + lane.direction * sig[6]
                )
                grids[view, :, row, col] += vec
    if scene.speed != 0.0:
        grids[:, :, 0, 0] += (scene.speed / 30.0) * sig_speed
    if scene.signal != "none":
        grids[:, :, 0, 0] += sig_signal[SIGNAL_STATES.index(scene.signal)]
    return grids


class PerceptionNet:
    """Forward-only network; weights are immutable after construction."""

    def __init__(self, config: NetConfig = FULL_CONFIG, weights: dict | None = None, seed: int = 0):
        self.config = config
        self.weights = weights if weights is not None else init_weights(config, seed)
        missing = set(_weight_specs(config)) - set(self.weights)
        if missing:
            raise ValueError(f"missing weights: {sorted(missing)[:5]}")
        self._pe = sinusoidal_pe(config.token_grid[0], config.token_grid[1], config.embed_dim)

    def queries(self) -> QuerySet:
        return QuerySet(
            q_double_edge=self.weights["query.double_edge"],
            q_speed=self.weights["query.speed"],
            q_traffic=self.weights["query.traffic"],
        )

    def tokenize(self, grids) -> np.ndarray:
        """Project each view grid, add the positional encoding, concatenate views.

        Returns (E, n_views * H * W); the projection is shared across views so
        permuting views permutes token blocks.
        """
        grids = np.asarray(grids, dtype=np.float64)
        e = self.config.embed_dim
        h, w = self.config.token_grid
        if grids.shape != (self.config.n_views, e, h, w):
            raise ShapeError(f"expected grids {(self.config.n_views, e, h, w)}, got {grids.shape}")
        pw, pb = self.weights["proj.w"], self.weights["proj.b"]
        views = []
        for v in range(self.config.n_views):
            flat = grids[v].reshape(e, h * w)  # (E, HW)
            z = matmul(pw.T, flat) + pb[:, None]
            views.append(z + self._pe)
        return np.concatenate(views, axis=1)

    def _encoder_layer(self, x_rows, i, record=None):
        wts = self.weights
        normed = layer_norm(x_rows, wts[f"enc{i}.ln1.g"], wts[f"enc{i}.ln1.b"])
        x_rows = x_rows + multi_head_attention(
            normed,
            normed,
            wts[f"enc{i}.attn.wq"],
            wts[f"enc{i}.attn.wk"],
            wts[f"enc{i}.attn.wv"],
            wts[f"enc{i}.attn.wo"],
            self.config.heads,
            record,
        )
        normed = layer_norm(x_rows, wts[f"enc{i}.ln2.g"], wts[f"enc{i}.ln2.b"])
        return x_rows + mlp_2layer(
            normed, wts[f"enc{i}.mlp.w1"], wts[f"enc{i}.mlp.b1"], wts[f"enc{i}.mlp.w2"], wts[f"enc{i}.mlp.b2"]
        )

    def encode(self, tokens: np.ndarray, record: list | None = None) -> np.ndarray:
        """Run the encoder stack; shape (E, T) preserved, identity when layers=0."""
        tokens = np.asarray(tokens, dtype=np.float64)
        if tokens.ndim != 2 or tokens.shape[0] != self.config.embed_dim:
            raise ShapeError(f"tokens must be (E, T), got {tokens.shape}")
        x = tokens.T
        for i in range(self.config.layers):
            x = self._encoder_layer(x, i, record)
        return x.T

    def _decoder_layer(self, q_rows, mem_rows, i, record=None):
        wts = self.weights
        normed = layer_norm(q_rows, wts[f"dec{i}.ln1.g"], wts[f"dec{i}.ln1.b"])
        q_rows = q_rows + multi_head_attention(
            normed,
            normed,
            wts[f"dec{i}.self.wq"],
            wts[f"dec{i}.self.wk"],
            wts[f"dec{i}.self.wv"],
            wts[f"dec{i}.self.wo"],
            self.config.heads,
            record,
        )
        normed = layer_norm(q_rows, wts[f"dec{i}.ln2.g"], wts[f"dec{i}.ln2.b"])
        q_rows = q_rows + multi_head_attention(
            normed,
            mem_rows,
            wts[f"dec{i}.cross.wq"],
            wts[f"dec{i}.cross.wk"],
            wts[f"dec{i}.cross.wv"],
            wts[f"dec{i}.cross.wo"],
            self.config.heads,
            record,
        )
        normed = layer_norm(q_rows, wts[f"dec{i}.ln3.g"], wts[f"dec{i}.ln3.b"])
        return q_rows + mlp_2layer(
            normed, wts[f"dec{i}.mlp.w1"], wts[f"dec{i}.mlp.b1"], wts[f"dec{i}.mlp.w2"], wts[f"dec{i}.mlp.b2"]
        )

    def decode(self, memory: np.ndarray, queries: QuerySet | None = None, record: list | None = None):
        """Decode lane/speed/traffic queries against encoder memory.

        Returns (FeatureBundle, speed_feature (E,), signal_feature (E,)).
        """
        cfg = self.config
        memory = np.asarray(memory, dtype=np.float64)
        if memory.ndim != 2 or memory.shape[0] != cfg.embed_dim:
            raise ShapeError(f"memory must be (E, T), got {memory.shape}")
        if queries is None:
            queries = self.queries()
        q = np.concatenate([queries.q_double_edge, queries.q_speed, queries.q_traffic], axis=1).T
        mem_rows = memory.T
        for i in range(cfg.layers):
            q = self._decoder_layer(q, mem_rows, i, record)

        n = cfg.n_point_queries
        de_rows = q[:n]  # (n, E), lane-major point order
        wts = self.weights
        f_double_edge = de_rows.T.reshape(cfg.embed_dim, cfg.lane_slots, cfg.points_per_lane)
        pooled = de_rows.reshape(cfg.lane_slots, cfg.points_per_lane, cfg.embed_dim).mean(axis=1)
        f_int = mlp_2layer(
            pooled, wts["branch.int.w1"], wts["branch.int.b1"], wts["branch.int.w2"], wts["branch.int.b2"]
        ).T
        f_dir = mlp_2layer(
            pooled, wts["branch.dir.w1"], wts["branch.dir.b1"], wts["branch.dir.w2"], wts["branch.dir.b2"]
        ).T
        f_occ = (
            mlp_2layer(
                de_rows, wts["branch.occ.w1"], wts["branch.occ.b1"], wts["branch.occ.w2"], wts["branch.occ.b2"]
            )
            .T.reshape(cfg.embed_dim, cfg.lane_slots, cfg.points_per_lane)
        )
        bundle = FeatureBundle(f_double_edge=f_double_edge, f_int=f_int, f_dir=f_dir, f_occ=f_occ)
        return bundle, q[n], q[n + 1]

    def heads(self, bundle: FeatureBundle, speed_feature: np.ndarray, signal_feature: np.ndarray) -> PerceptionOutput:
        cfg = self.config
        wts = self.weights
        de_rows = bundle.f_double_edge.reshape(cfg.embed_dim, -1).T
        points = mlp_2layer(
            de_rows, wts["head.bev.w1"], wts["head.bev.b1"], wts["head.bev.w2"], wts["head.bev.b2"]
        ).reshape(cfg.lane_slots, cfg.points_per_lane, 2)
        p_int = expit(matmul(bundle.f_int.T, wts["head.int.w"]) + wts["head.int.b"])
        p_dir = expit(matmul(bundle.f_dir.T, wts["head.dir.w"]) + wts["head.dir.b"])
        occ_rows = bundle.f_occ.reshape(cfg.embed_dim, -1).T
        p_occ = expit(matmul(occ_rows, wts["head.occ.w"]) + wts["head.occ.b"]).reshape(
            cfg.lane_slots, cfg.points_per_lane, 1
        )
        raw_speed = float(speed_feature @ wts["head.speed.w"][:, 0] + wts["head.speed.b"][0])
        speed = float(np.logaddexp(0.0, raw_speed))  # softplus keeps speed non-negative
        signal_logits = signal_feature @ wts["head.signal.w"] + wts["head.signal.b"]
        return PerceptionOutput(
            points=points, p_int=p_int, p_dir=p_dir, p_occ=p_occ, speed=speed, signal_logits=signal_logits
        )

    def forward(self, scene: SceneAnnotation, seed: int, record: list | None = None):
        """Full pass from scene to (FeatureBundle, PerceptionOutput)."""
        grids = synthetic_features(scene, self.config, seed)
        tokens = self.tokenize(grids)
        memory = self.encode(tokens, record)
        bundle, speed_feat, signal_feat = self.decode(memory, record=record)
        return bundle, self.heads(bundle, speed_feat, signal_feat)
