"""Lane alignment cost, prediction losses, and a finite-difference grad checker.

Per-lane point arrays follow the package-wide layout (n_points, 2) with the
first half of the rows belonging to the left edge and the second half to the
right edge; per-lane attribute arrays are laid out the same way.

Probabilities are clamped to [1e-7, 1 - 1e-7] before any log. Gradients are
hand-derived for each loss and verified against central differences; matching
is treated as fixed when differentiating (losses are piecewise smooth in the
predictions for a frozen alignment).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .double_edge import SIGNAL_STATES, SceneAnnotation, TargetPoint

PROB_EPS = 1e-7

GRAD_CHECK_LOSSES = ("lane", "point", "edge_bev", "plan", "focal", "smooth_l1", "signal")


@dataclass(frozen=True)
class LossWeights:
    """Loss term weights; defaults follow the 5:2 matching and
    5:2:1:3:4:1:0.1 prediction ratios with plan focusing 0.25."""

    match_lane: float = 5.0
    match_point: float = 2.0
    edge_bev: float = 5.0
    intersection: float = 2.0
    direction: float = 1.0
    occupancy: float = 3.0
    plan: float = 4.0
    speed: float = 1.0
    signal: float = 0.1
    plan_focus: float = 0.25
    min_target_distance: float = 0.5
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    smooth_l1_beta: float = 1.0

    def __post_init__(self):
        for name in (
            "match_lane",
            "match_point",
            "edge_bev",
            "intersection",
            "direction",
            "occupancy",
            "plan",
            "speed",
            "signal",
            "plan_focus",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"weight '{name}' must be non-negative")


@dataclass(frozen=True)
class Assignment:
    """Optimal pairing of ground-truth lanes to prediction slots."""

    pairs: tuple[tuple[int, int], ...]  # (gt index, prediction slot)
    total_cost: float


@dataclass(frozen=True)
class LossReport:
    edge_bev: float
    intersection: float
    direction: float
    occupancy: float
    plan: float
    speed: float
    signal: float
    total: float

    def terms(self) -> dict[str, float]:
        return {
            "edge_bev": self.edge_bev,
            "int": self.intersection,
            "dir": self.direction,
            "occ": self.occupancy,
            "plan": self.plan,
            "speed": self.speed,
            "signal": self.signal,
        }


def _clamp(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def lane_cost(pred_prob: float, gt: int) -> float:
    """Negative log-likelihood of the ground-truth class under a Bernoulli."""
    p = float(_clamp(pred_prob))
    return -math.log(p) if gt == 1 else -math.log(1.0 - p)


def lane_cost_grad(pred_prob: float, gt: int) -> float:
    p = float(pred_prob)
    if not PROB_EPS < p < 1.0 - PROB_EPS:
        return 0.0  # clamped region
    return -1.0 / p if gt == 1 else 1.0 / (1.0 - p)


def point_cost(pred_points: np.ndarray, gt_points: np.ndarray) -> float:
    """Summed L1 distance over every edge point of one lane pair."""
    pred_points = np.asarray(pred_points, dtype=np.float64)
    gt_points = np.asarray(gt_points, dtype=np.float64)
    if pred_points.shape != gt_points.shape:
        raise ValueError(f"point arrays differ in shape: {pred_points.shape} vs {gt_points.shape}")
    return float(np.abs(pred_points - gt_points).sum())


def point_cost_grad(pred_points, gt_points) -> np.ndarray:
    return np.sign(np.asarray(pred_points, dtype=np.float64) - np.asarray(gt_points, dtype=np.float64))


def cost_matrix(pred_int_probs, pred_points, gt_ints, gt_points, weights: LossWeights) -> np.ndarray:
    """Pairwise matching cost: weighted lane NLL plus weighted point L1."""
    n_gt = len(gt_ints)
    n_slots = len(pred_int_probs)
    cost = np.zeros((n_gt, n_slots), dtype=np.float64)
    for i in range(n_gt):
        for j in range(n_slots):
            cost[i, j] = weights.match_lane * lane_cost(pred_int_probs[j], int(gt_ints[i])) + (
                weights.match_point * point_cost(pred_points[j], gt_points[i])
            )
    return cost


def _pairs_cost(cost: np.ndarray, rows, cols) -> float:
    return float(cost[rows, cols].sum())


def align(pred_int_probs, pred_points, gt_ints, gt_points, weights: LossWeights = LossWeights()) -> Assignment:
    """Minimum-cost one-to-one alignment via an exact O(n^3) assignment solver."""
    n_gt = len(gt_ints)
    if n_gt == 0:
        return Assignment(pairs=(), total_cost=0.0)
    if n_gt > len(pred_int_probs):
        raise ValueError(f"{n_gt} ground-truth lanes exceed {len(pred_int_probs)} prediction slots")
    cost = cost_matrix(pred_int_probs, pred_points, gt_ints, gt_points, weights)
    rows, cols = linear_sum_assignment(cost)
    order = np.argsort(rows)
    rows, cols = rows[order], cols[order]
    pairs = tuple((int(i), int(j)) for i, j in zip(rows, cols))
    return Assignment(pairs=pairs, total_cost=_pairs_cost(cost, rows, cols))


def align_exhaustive(pred_int_probs, pred_points, gt_ints, gt_points, weights: LossWeights = LossWeights()) -> Assignment:
    """Brute-force oracle: minimum over every injective gt-to-slot map."""
    n_gt = len(gt_ints)
    if n_gt == 0:
        return Assignment(pairs=(), total_cost=0.0)
    if n_gt > len(pred_int_probs):
        raise ValueError(f"{n_gt} ground-truth lanes exceed {len(pred_int_probs)} prediction slots")
    cost = cost_matrix(pred_int_probs, pred_points, gt_ints, gt_points, weights)
    rows = np.arange(n_gt)
    best_cols = None
    best_cost = math.inf
    for combo in itertools.permutations(range(len(pred_int_probs)), n_gt):
        total = _pairs_cost(cost, rows, np.array(combo))
        if total < best_cost:
            best_cost = total
            best_cols = combo
    pairs = tuple((int(i), int(j)) for i, j in zip(rows, best_cols))
    return Assignment(pairs=pairs, total_cost=best_cost)


def edge_bev_loss(pred_points, gt_points, assignment: Assignment) -> float:
    """Mean-over-matched-lanes L1 point error; 0 by convention when nothing matches."""
    if not assignment.pairs:
        return 0.0
    total = 0.0
    for i, j in assignment.pairs:
        total += point_cost(pred_points[j], gt_points[i])
    return total / len(assignment.pairs)


def edge_bev_grad(pred_points, gt_points, assignment: Assignment) -> np.ndarray:
    pred_points = np.asarray(pred_points, dtype=np.float64)
    grad = np.zeros_like(pred_points)
    if not assignment.pairs:
        return grad
    n_gt = len(assignment.pairs)
    for i, j in assignment.pairs:
        grad[j] = np.sign(pred_points[j] - np.asarray(gt_points[i], dtype=np.float64)) / n_gt
    return grad


def _binary_ce(p, y):
    p = _clamp(p)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def plan_loss(
    pred_plan,
    gt_plan,
    gt_points,
    target: TargetPoint,
    assignment: Assignment,
    rho: float = 0.25,
    min_dist: float = 0.5,
) -> float:
    """Focal-modulated cross-entropy on plan bits, downweighted by target distance.

    Each matched point contributes (rho * (1 - e^{-CE}))^2 * CE / D where D is
    the Euclidean distance from the ground-truth edge point to the target,
    clamped below at ``min_dist``.
    """
    pred_plan = np.asarray(pred_plan, dtype=np.float64)
    total = 0.0
    for i, j in assignment.pairs:
        ce = _binary_ce(pred_plan[j], np.asarray(gt_plan[i], dtype=np.float64))
        mod = (rho * (1.0 - np.exp(-ce))) ** 2
        d = np.hypot(
            np.asarray(gt_points[i], dtype=np.float64)[:, 0] - target.x,
            np.asarray(gt_points[i], dtype=np.float64)[:, 1] - target.y,
        )
        d = np.maximum(d, min_dist)
        total += float(np.sum(mod * ce / d))
    return total


def plan_loss_grad(
    pred_plan, gt_plan, gt_points, target: TargetPoint, assignment: Assignment, rho: float = 0.25, min_dist: float = 0.5
) -> np.ndarray:
    pred_plan = np.asarray(pred_plan, dtype=np.float64)
    grad = np.zeros_like(pred_plan)
    for i, j in assignment.pairs:
        p = pred_plan[j]
        y = np.asarray(gt_plan[i], dtype=np.float64)
        ce = _binary_ce(p, y)
        em = np.exp(-ce)
        mod = (rho * (1.0 - em)) ** 2
        dmod_dce = 2.0 * rho * rho * (1.0 - em) * em
        d = np.hypot(
            np.asarray(gt_points[i], dtype=np.float64)[:, 0] - target.x,
            np.asarray(gt_points[i], dtype=np.float64)[:, 1] - target.y,
        )
        d = np.maximum(d, min_dist)
        dce_dp = np.where(
            (p > PROB_EPS) & (p < 1.0 - PROB_EPS), -y / _clamp(p) + (1.0 - y) / (1.0 - _clamp(p)), 0.0
        )
        grad[j] += (dmod_dce * ce + mod) / d * dce_dp
    return grad


def focal_loss(probs, gts, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Class-balanced focal loss, mean over elements.

    The easy-example downweight is (1 - p_t)^gamma with p_t the probability of
    the true class; alpha weights the positive class, 1 - alpha the negative.
    """
    p = _clamp(np.asarray(probs, dtype=np.float64))
    y = np.asarray(gts, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"probs/targets differ in shape: {p.shape} vs {y.shape}")
    pt = y * p + (1.0 - y) * (1.0 - p)
    at = alpha * y + (1.0 - alpha) * (1.0 - y)
    return float(np.mean(-at * (1.0 - pt) ** gamma * np.log(pt)))


def focal_loss_grad(probs, gts, alpha: float = 0.25, gamma: float = 2.0) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(gts, dtype=np.float64)
    pc = _clamp(p)
    pt = y * pc + (1.0 - y) * (1.0 - pc)
    at = alpha * y + (1.0 - alpha) * (1.0 - y)
    dl_dpt = -at * (-gamma * (1.0 - pt) ** (gamma - 1.0) * np.log(pt) + (1.0 - pt) ** gamma / pt)
    dpt_dp = 2.0 * y - 1.0
    grad = dl_dpt * dpt_dp / p.size
    return np.where((p > PROB_EPS) & (p < 1.0 - PROB_EPS), grad, 0.0)


def smooth_l1(pred: float, gt: float, beta: float = 1.0) -> float:
    """Quadratic below ``beta``, linear above; continuous first derivative."""
    d = abs(float(pred) - float(gt))
    if d < beta:
        return 0.5 * d * d / beta
    return d - 0.5 * beta


def smooth_l1_grad(pred: float, gt: float, beta: float = 1.0) -> float:
    d = float(pred) - float(gt)
    if abs(d) < beta:
        return d / beta
    return math.copysign(1.0, d)


def ce_signal(logits, gt_class: int) -> float:
    """Softmax cross-entropy over the signal classes."""
    z = np.asarray(logits, dtype=np.float64)
    zmax = z.max()
    lse = zmax + math.log(np.exp(z - zmax).sum())
    return float(lse - z[gt_class])


def ce_signal_grad(logits, gt_class: int) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    grad = e / e.sum()
    grad[gt_class] -= 1.0
    return grad


def scene_to_targets(scene: SceneAnnotation) -> dict[str, np.ndarray | float | int]:
    """Flatten a ground-truth scene into loss-ready arrays.

    Points per lane are stacked left edge first, then right edge, giving
    (n_lanes, n_points, 2); attribute arrays share the layout.
    """
    points, ints, dirs, occs, plans = [], [], [], [], []
    for lane in scene.lanes:
        points.append(np.concatenate([lane.left.xy(), lane.right.xy()], axis=0))
        occs.append(np.concatenate([lane.left.occ(), lane.right.occ()]))
        plans.append(np.concatenate([lane.left.plan(), lane.right.plan()]))
        ints.append(lane.intersection)
        dirs.append(lane.direction)
    n = len(scene.lanes)
    return {
        "points": np.array(points, dtype=np.float64) if n else np.zeros((0, 0, 2)),
        "int": np.array(ints, dtype=np.int64),
        "dir": np.array(dirs, dtype=np.int64),
        "occ": np.array(occs, dtype=np.int64) if n else np.zeros((0, 0), dtype=np.int64),
        "plan": np.array(plans, dtype=np.int64) if n else np.zeros((0, 0), dtype=np.int64),
        "speed": float(scene.speed),
        "signal": SIGNAL_STATES.index(scene.signal),
    }


def total_loss(
    perception,
    plan,
    scene: SceneAnnotation,
    target: TargetPoint,
    weights: LossWeights = LossWeights(),
    assignment: Assignment | None = None,
) -> tuple[LossReport, Assignment]:
    """All prediction losses for one scene, combined with the default ratios.

    Unmatched prediction slots are supervised toward the background (no-lane)
    class on the intersection head only.
    """
    gt = scene_to_targets(scene)
    pred_int = np.asarray(perception.p_int, dtype=np.float64)[:, 0]
    pred_points = np.asarray(perception.points, dtype=np.float64)
    if assignment is None:
        assignment = align(pred_int, pred_points, gt["int"], gt["points"], weights)

    n_slots = pred_int.shape[0]
    int_targets = np.zeros(n_slots, dtype=np.float64)
    for i, j in assignment.pairs:
        int_targets[j] = gt["int"][i]
    l_int = focal_loss(pred_int, int_targets, weights.focal_alpha, weights.focal_gamma)

    if assignment.pairs:
        gt_idx = [i for i, _ in assignment.pairs]
        slot_idx = [j for _, j in assignment.pairs]
        l_dir = focal_loss(
            np.asarray(perception.p_dir)[slot_idx, 0], gt["dir"][gt_idx], weights.focal_alpha, weights.focal_gamma
        )
        l_occ = focal_loss(
            np.asarray(perception.p_occ)[slot_idx, :, 0].ravel(),
            gt["occ"][gt_idx].ravel(),
            weights.focal_alpha,
            weights.focal_gamma,
        )
    else:
        l_dir = 0.0
        l_occ = 0.0
    l_edge = edge_bev_loss(pred_points, gt["points"], assignment)
    l_plan = plan_loss(
        np.asarray(plan.p_plan)[:, :, 0],
        gt["plan"],
        gt["points"],
        target,
        assignment,
        rho=weights.plan_focus,
        min_dist=weights.min_target_distance,
    )
    l_speed = smooth_l1(perception.speed, gt["speed"], weights.smooth_l1_beta)
    l_signal = ce_signal(perception.signal_logits, gt["signal"])
    total = (
        weights.edge_bev * l_edge
        + weights.intersection * l_int
        + weights.direction * l_dir
        + weights.occupancy * l_occ
        + weights.plan * l_plan
        + weights.speed * l_speed
        + weights.signal * l_signal
    )
    report = LossReport(
        edge_bev=l_edge,
        intersection=l_int,
        direction=l_dir,
        occupancy=l_occ,
        plan=l_plan,
        speed=l_speed,
        signal=l_signal,
        total=total,
    )
    return report, assignment


# --- finite-difference verification -------------------------------------------------


def make_grad_instance(loss: str, rng: np.random.Generator) -> dict:
    """Random small instance for one named loss, sampled away from L1 kinks."""
    if loss == "lane":
        return {"pred": np.array([rng.uniform(0.1, 0.9)]), "gt": int(rng.integers(0, 2))}
    if loss == "point":
        pred = rng.normal(0.0, 3.0, (4, 2))
        offsets = rng.uniform(0.1, 0.8, (4, 2)) * rng.choice([-1.0, 1.0], (4, 2))
        return {"pred": pred, "gt": pred - offsets}
    if loss == "edge_bev":
        pred = rng.normal(0.0, 3.0, (3, 4, 2))
        offsets = rng.uniform(0.1, 0.8, (2, 4, 2)) * rng.choice([-1.0, 1.0], (2, 4, 2))
        pairs = ((0, int(rng.integers(0, 2))), (1, 2))
        gt = np.stack([pred[j] - offsets[i] for i, j in pairs])
        return {"pred": pred, "gt": gt, "assignment": Assignment(pairs=pairs, total_cost=0.0)}
    if loss == "plan":
        pairs = ((0, 1), (1, 2))
        return {
            "pred": rng.uniform(0.1, 0.9, (3, 4)),
            "gt": rng.integers(0, 2, (2, 4)).astype(np.float64),
            "gt_points": rng.normal(0.0, 5.0, (2, 4, 2)),
            "target": TargetPoint(float(rng.normal(0, 5)), float(rng.normal(0, 5))),
            "assignment": Assignment(pairs=pairs, total_cost=0.0),
        }
    if loss == "focal":
        return {"pred": rng.uniform(0.05, 0.95, 6), "gt": rng.integers(0, 2, 6).astype(np.float64)}
    if loss == "smooth_l1":
        d = rng.uniform(0.2, 0.8) if rng.random() < 0.5 else rng.uniform(1.2, 2.0)
        d *= rng.choice([-1.0, 1.0])
        gt = rng.normal(0.0, 2.0)
        return {"pred": np.array([gt + d]), "gt": gt}
    if loss == "signal":
        return {"pred": rng.normal(0.0, 2.0, 4), "gt": int(rng.integers(0, 4))}
    raise ValueError(f"unknown loss '{loss}'")


def _loss_value(loss: str, inst: dict, pred: np.ndarray) -> float:
    if loss == "lane":
        return lane_cost(float(pred[0]), inst["gt"])
    if loss == "point":
        return point_cost(pred, inst["gt"])
    if loss == "edge_bev":
        return edge_bev_loss(pred, inst["gt"], inst["assignment"])
    if loss == "plan":
        return plan_loss(pred, inst["gt"], inst["gt_points"], inst["target"], inst["assignment"])
    if loss == "focal":
        return focal_loss(pred, inst["gt"])
    if loss == "smooth_l1":
        return smooth_l1(float(pred[0]), inst["gt"])
    if loss == "signal":
        return ce_signal(pred, inst["gt"])
    raise ValueError(f"unknown loss '{loss}'")


def _loss_grad(loss: str, inst: dict, pred: np.ndarray) -> np.ndarray:
    if loss == "lane":
        return np.array([lane_cost_grad(float(pred[0]), inst["gt"])])
    if loss == "point":
        return point_cost_grad(pred, inst["gt"])
    if loss == "edge_bev":
        return edge_bev_grad(pred, inst["gt"], inst["assignment"])
    if loss == "plan":
        return plan_loss_grad(pred, inst["gt"], inst["gt_points"], inst["target"], inst["assignment"])
    if loss == "focal":
        return focal_loss_grad(pred, inst["gt"])
    if loss == "smooth_l1":
        return np.array([smooth_l1_grad(float(pred[0]), inst["gt"])])
    if loss == "signal":
        return ce_signal_grad(pred, inst["gt"])
    raise ValueError(f"unknown loss '{loss}'")


def grad_check(loss: str, instance: dict, epsilon: float = 1e-5) -> float:
    """Max relative error between the analytic gradient and central differences."""
    pred = np.asarray(instance["pred"], dtype=np.float64)
    analytic = np.asarray(_loss_grad(loss, instance, pred), dtype=np.float64)
    numeric = np.zeros_like(pred, dtype=np.float64)
    flat = pred.reshape(-1).copy()
    for idx in range(flat.size):
        bump = np.array(flat)
        bump[idx] += epsilon
        up = _loss_value(loss, instance, bump.reshape(pred.shape))
        bump[idx] -= 2.0 * epsilon
        down = _loss_value(loss, instance, bump.reshape(pred.shape))
        numeric.reshape(-1)[idx] = (up - down) / (2.0 * epsilon)
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / scale))
