"""2-D geometry helpers shared by the scenario generator, annotator, and world."""

from __future__ import annotations

import math

import numpy as np


def arc_lengths(points: np.ndarray) -> np.ndarray:
    """Cumulative arc length along a polyline, starting at 0."""
    deltas = np.diff(points, axis=0)
    return np.concatenate([[0.0], np.cumsum(np.hypot(deltas[:, 0], deltas[:, 1]))])


def densify(points: np.ndarray, step: float = 0.5):
    """Resample a polyline at roughly ``step`` spacing.

    Returns (samples (m, 2), s (m,), tangents (m, 2)); endpoints are kept.
    """
    points = np.asarray(points, dtype=np.float64)
    s = arc_lengths(points)
    total = s[-1]
    n = max(2, int(math.ceil(total / step)) + 1)
    sv = np.linspace(0.0, total, n)
    xs = np.interp(sv, s, points[:, 0])
    ys = np.interp(sv, s, points[:, 1])
    samples = np.stack([xs, ys], axis=1)
    tangents = np.gradient(samples, sv, axis=0)
    norms = np.hypot(tangents[:, 0], tangents[:, 1])
    norms[norms == 0.0] = 1.0
    return samples, sv, tangents / norms[:, None]


def project_to_polyline(points: np.ndarray, queries: np.ndarray):
    """Project query points onto a polyline.

    Returns (s, dist): arc position of the nearest point and distance to it,
    both (m,) for queries (m, 2).
    """
    points = np.asarray(points, dtype=np.float64)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    s = arc_lengths(points)
    a = points[:-1]
    d = np.diff(points, axis=0)
    len2 = np.maximum(np.einsum("ij,ij->i", d, d), 1e-12)
    qx = queries[:, 0:1] - a[:, 0]
    qy = queries[:, 1:2] - a[:, 1]
    t = np.clip((qx * d[:, 0] + qy * d[:, 1]) / len2, 0.0, 1.0)
    ex = qx - t * d[:, 0]
    ey = qy - t * d[:, 1]
    dist2 = ex * ex + ey * ey
    seg = np.argmin(dist2, axis=1)
    rows = np.arange(queries.shape[0])
    proj_s = s[seg] + t[rows, seg] * np.sqrt(len2[seg])
    return proj_s, np.sqrt(dist2[rows, seg])


def polyline_point_at(points: np.ndarray, s_query: float) -> tuple[float, float]:
    """Point at arc position ``s_query`` (clamped to the polyline extent)."""
    points = np.asarray(points, dtype=np.float64)
    s = arc_lengths(points)
    sq = min(max(s_query, 0.0), float(s[-1]))
    return float(np.interp(sq, s, points[:, 0])), float(np.interp(sq, s, points[:, 1]))


def tangent_at(points: np.ndarray, s_query: float) -> tuple[float, float]:
    """Unit tangent of the segment containing arc position ``s_query``."""
    points = np.asarray(points, dtype=np.float64)
    s = arc_lengths(points)
    idx = int(np.clip(np.searchsorted(s, min(max(s_query, 0.0), s[-1]), side="right") - 1, 0, len(points) - 2))
    dx = points[idx + 1, 0] - points[idx, 0]
    dy = points[idx + 1, 1] - points[idx, 1]
    norm = math.hypot(dx, dy) or 1.0
    return dx / norm, dy / norm


def rect_footprint(cx: float, cy: float, yaw: float, half_len: float, half_wid: float) -> np.ndarray:
    """Axis-aligned-in-body rectangle corners, CCW, shape (4, 2)."""
    c, s = math.cos(yaw), math.sin(yaw)
    corners = np.array(
        [[half_len, half_wid], [-half_len, half_wid], [-half_len, -half_wid], [half_len, -half_wid]]
    )
    rot = np.array([[c, -s], [s, c]])
    return corners @ rot.T + np.array([cx, cy])


def convex_overlap(poly_a: np.ndarray, poly_b: np.ndarray) -> bool:
    """Separating-axis test for two convex polygons; touching counts as overlap."""
    poly_a = np.asarray(poly_a, dtype=np.float64)
    poly_b = np.asarray(poly_b, dtype=np.float64)
    for poly in (poly_a, poly_b):
        edges = np.roll(poly, -1, axis=0) - poly
        axes = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
        pa = poly_a @ axes.T
        pb = poly_b @ axes.T
        if np.any(pa.max(axis=0) < pb.min(axis=0)) or np.any(pb.max(axis=0) < pa.min(axis=0)):
            return False
    return True


def point_in_polygon(x: float, y: float, ring: np.ndarray) -> bool:
    """Even-odd crossing test; boundary points may fall on either side."""
    ring = np.asarray(ring, dtype=np.float64)
    x1 = ring[:, 0]
    y1 = ring[:, 1]
    x2 = np.roll(x1, -1)
    y2 = np.roll(y1, -1)
    straddle = (y1 > y) != (y2 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x1 + (y - y1) / (y2 - y1) * (x2 - x1)
    return bool(np.sum(straddle & (x < x_cross)) % 2)
