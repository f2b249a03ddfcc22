"""Episode and benchmark reports: CSV summaries plus rendered figures.

All figures go through the Agg backend so reports work headless. Episode
figures show the world in plan view (lane outlines, route, agents at spawn,
ego trace); the suite summary is a per-kind driving-score bar chart and the
bench figure a latency histogram.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .simulation import ScenarioCache

EPISODE_CSV_FIELDS = [
    "kind",
    "seed",
    "mode",
    "rc",
    "is_score",
    "ds",
    "completed",
    "ticks",
    "n_infractions",
    "infractions",
    "plan_ms_median",
]


def write_episode_csv(results, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=EPISODE_CSV_FIELDS)
        writer.writeheader()
        for res in results:
            wall = res.wall_ms_per_tick
            writer.writerow(
                {
                    "kind": res.kind,
                    "seed": res.seed,
                    "mode": res.mode,
                    "rc": f"{res.rc:.4f}",
                    "is_score": f"{res.is_score:.4f}",
                    "ds": f"{res.ds:.4f}",
                    "completed": int(res.completed),
                    "ticks": res.ticks,
                    "n_infractions": len(res.infractions),
                    "infractions": ";".join(kind for _, kind in res.infractions),
                    "plan_ms_median": f"{np.median(wall):.2f}" if wall else "",
                }
            )


def episode_figure(spec, result, trace, path, cache: ScenarioCache | None = None) -> None:
    """Plan-view rendering of one episode."""
    if cache is None:
        cache = ScenarioCache(spec)
    fig, ax = plt.subplots(figsize=(8, 6))
    for lc in cache.lanes:
        ring = np.vstack([lc.ring, lc.ring[:1]])
        color = "#d9a441" if lc.intersection else "#9aa3ab"
        ax.plot(ring[:, 0], ring[:, 1], color=color, lw=0.8, alpha=0.8)
    route = cache.route
    ax.plot(route[:, 0], route[:, 1], "g--", lw=1.2, label="route")
    for agent in spec.agents:
        corners = np.asarray(agent.footprint)
        poly = np.vstack([corners, corners[:1]])
        ax.fill(poly[:, 0], poly[:, 1], color="#c0392b", alpha=0.6)
    if trace:
        xs = np.array([rec["ego"]["x"] for rec in trace])
        ys = np.array([rec["ego"]["y"] for rec in trace])
        stops = np.array([rec["stop"] for rec in trace], dtype=bool)
        ax.plot(xs, ys, color="#2c6fbb", lw=1.6, label="ego trace")
        if stops.any():
            ax.plot(xs[stops], ys[stops], ".", color="#e67e22", ms=2.5, label="stop flag")
    ax.set_title(
        f"{result.kind} seed={result.seed} ({result.mode})  "
        f"rc={result.rc:.2f} is={result.is_score:.2f} ds={result.ds:.2f}"
    )
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.axis("equal")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def summary_figure(results, path) -> None:
    """Mean driving score by scenario kind."""
    kinds = sorted({res.kind for res in results})
    means = [np.mean([res.ds for res in results if res.kind == kind]) for kind in kinds]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(kinds, means, color="#2c6fbb")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("mean driving score")
    ax.set_title(f"{len(results)} episodes")
    for tick in ax.get_xticklabels():
        tick.set_rotation(20)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def bench_figure(samples_ms, path) -> None:
    samples = np.asarray(samples_ms, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.hist(samples, bins=min(40, max(8, samples.size // 5)), color="#2c6fbb")
    ax.axvline(float(np.median(samples)), color="#c0392b", lw=1.5, label=f"median {np.median(samples):.1f} ms")
    ax.set_xlabel("pipeline tick [ms]")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_bench_csv(samples_ms, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tick", "ms"])
        for i, ms in enumerate(samples_ms):
            writer.writerow([i, f"{ms:.4f}"])
