"""Shared scene builders for the test suite."""

import numpy as np

from lanecraft.double_edge import DoubleEdge, Edge, EdgePoint, SceneAnnotation


def straight_lane(n=10, y0=1.0, y1=-1.0, occ=1, plan=0, intersection=0, direction=1):
    xs = np.linspace(0.0, 20.0, n)
    left = Edge(tuple(EdgePoint(float(x), y0, occ, plan) for x in xs))
    right = Edge(tuple(EdgePoint(float(x), y1, occ, plan) for x in xs))
    return DoubleEdge(left=left, right=right, intersection=intersection, direction=direction)


def valid_scene(n=10):
    return SceneAnnotation(lanes=(straight_lane(n),), speed=5.0, signal="green")


def random_scene(rng, n_lanes=None, n_pts=4, coord_scale=20.0):
    """Random well-formed scene with arbitrary binary attributes."""
    if n_lanes is None:
        n_lanes = int(rng.integers(1, 4))
    lanes = []
    for _ in range(n_lanes):
        base = rng.uniform(-coord_scale, coord_scale, (n_pts, 2))
        offset = rng.uniform(0.5, 2.0)
        occ = rng.integers(0, 2, n_pts)
        plan_l = rng.integers(0, 2, n_pts)
        plan_r = rng.integers(0, 2, n_pts)
        left = Edge(
            tuple(
                EdgePoint(float(x), float(y + offset), int(o), int(p))
                for (x, y), o, p in zip(base, occ, plan_l)
            )
        )
        right = Edge(
            tuple(
                EdgePoint(float(x), float(y - offset), int(o), int(p))
                for (x, y), o, p in zip(base, occ, plan_r)
            )
        )
        lanes.append(
            DoubleEdge(
                left=left,
                right=right,
                intersection=int(rng.integers(0, 2)),
                direction=int(rng.integers(0, 2)),
            )
        )
    signal = ("green", "red", "yellow", "none")[int(rng.integers(0, 4))]
    return SceneAnnotation(lanes=tuple(lanes), speed=float(rng.uniform(0, 15)), signal=signal)
