"""Command-line entry point wiring scenario generation, episodes, checks, and benchmarks.

Exit codes: 0 success, 1 property-check failure, 2 usage or I/O error,
3 internal invariant breach. The LANECRAFT_SEED environment variable, when
set, overrides every seed argument.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from .controller import MpcConfig, VehicleState, track
from .double_edge import SceneFormatError
from .fusion import fuse, fuse_naive
from .interpreter import assemble_trajectory, binarize, generate_path, stop_decision
from .losses import (
    GRAD_CHECK_LOSSES,
    align,
    align_exhaustive,
    grad_check,
    make_grad_instance,
)
from .perception import FULL_CONFIG, SMALL_CONFIG, NetConfig, PerceptionNet, load_weights
from .scenarios import SCENARIO_KINDS, ScenarioFormatError, gen_scenario, save_scenario
from .simulation import (
    InvariantBreach,
    RunConfig,
    ScenarioCache,
    SceneConfig,
    annotate,
    init_world,
    run_episode,
)
from .target_planner import TargetPlanner

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_INVARIANT = 3

GRAD_TOLERANCE = 1e-4
FUSION_TOLERANCE = 1e-9


def _parse_seeds(text: str) -> list[int]:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(part) for part in text.split(",") if part.strip() != ""]


def _effective_seeds(args) -> list[int]:
    env = os.environ.get("LANECRAFT_SEED")
    if env is not None:
        return [int(env)]
    if getattr(args, "seeds", None):
        return _parse_seeds(args.seeds)
    return [int(getattr(args, "seed", 0) or 0)]


def _net_config(args) -> NetConfig:
    base = SMALL_CONFIG if getattr(args, "preset", "full") == "small" else FULL_CONFIG
    overrides = {}
    for flag, field in (
        ("embed_dim", "embed_dim"),
        ("layers", "layers"),
        ("heads", "heads"),
        ("lane_slots", "lane_slots"),
        ("points_per_lane", "points_per_lane"),
        ("views", "n_views"),
        ("hidden", "hidden_dim"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    grid = getattr(args, "grid", None)
    if grid is not None:
        overrides["token_grid"] = (grid[0], grid[1])
    return dataclasses.replace(base, **overrides) if overrides else base


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")


# --- gen -----------------------------------------------------------------------------


def cmd_gen(args) -> int:
    seeds = _effective_seeds(args)
    spec = gen_scenario(seeds[0], args.kind)
    save_scenario(spec, args.out)
    return EXIT_OK


# --- run -----------------------------------------------------------------------------


def _load_run_defaults(args) -> dict:
    if not getattr(args, "config", None):
        return {}
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ScenarioFormatError("run config file must hold a JSON object")
    return raw


def _pick(args, file_cfg: dict, name: str, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in file_cfg:
        return file_cfg[name]
    return default


def cmd_run(args) -> int:
    file_cfg = _load_run_defaults(args)
    kind = _pick(args, file_cfg, "kind", "straight")
    if kind not in SCENARIO_KINDS:
        sys.stderr.write(f"unknown scenario kind '{kind}'\n")
        return EXIT_USAGE
    if args.seeds is None and "seeds" in file_cfg:
        args.seeds = str(file_cfg["seeds"])
    seeds = _effective_seeds(args)
    net_config = _net_config(args)

    def flag(name, file_key):
        disabled = getattr(args, name)
        if disabled is not None:
            return not disabled
        return bool(file_cfg.get(file_key, True))

    config = RunConfig(
        mode=_pick(args, file_cfg, "mode", "oracle"),
        tgp=flag("no_tgp", "tgp"),
        hef=flag("no_hef", "hef"),
        dlf=flag("no_dlf", "dlf"),
        occ_noise=float(_pick(args, file_cfg, "occ_noise", 0.0)),
        timeout=float(_pick(args, file_cfg, "timeout", 120.0)),
        net_config=net_config,
        weights_seed=int(_pick(args, file_cfg, "weights_seed", 0)),
        feature_seed=int(_pick(args, file_cfg, "feature_seed", 0)),
        gamma=float(_pick(args, file_cfg, "gamma", 0.0)),
    )
    net = planner = None
    if config.mode == "network":
        weights = load_weights(args.weights) if args.weights else None
        net = PerceptionNet(net_config, weights=weights, seed=config.weights_seed)
        planner = TargetPlanner(net_config, seed=config.weights_seed)
    out_dir = Path(args.out) if args.out else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    for seed in seeds:
        spec = gen_scenario(seed, kind)
        result, trace = run_episode(spec, config, net=net, planner=planner)
        _emit(result.to_dict())
        if out_dir is not None:
            stem = f"{kind}_{seed}_{config.mode}"
            (out_dir / f"{stem}.result.json").write_text(
                json.dumps(result.to_dict(), sort_keys=True, indent=2), encoding="utf-8"
            )
            with (out_dir / f"{stem}.trace.jsonl").open("w", encoding="utf-8") as fh:
                for record in trace:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")
    return EXIT_OK


# --- check ---------------------------------------------------------------------------


def _serialize_instance(instance: dict) -> dict:
    out = {}
    for key, value in instance.items():
        if isinstance(value, np.ndarray):
            out[key] = value.tolist()
        elif dataclasses.is_dataclass(value):
            out[key] = dataclasses.asdict(value)
        else:
            out[key] = value
    return out


def _check_grad(seed: int, trials: int) -> tuple[dict, bool]:
    reports = []
    failure = None
    for li, loss in enumerate(GRAD_CHECK_LOSSES):
        worst = 0.0
        for trial in range(trials):
            rng = np.random.default_rng(np.random.SeedSequence([seed, li, trial]))
            instance = make_grad_instance(loss, rng)
            err = grad_check(loss, instance)
            if err > worst:
                worst = err
            if err >= GRAD_TOLERANCE and failure is None:
                failure = {"loss": loss, "trial": trial, "rel_err": err, "instance": _serialize_instance(instance)}
        reports.append({"loss": loss, "max_rel_err": worst, "epsilon": 1e-5, "seed": seed})
    ok = failure is None
    report = {"check": "grad", "tolerance": GRAD_TOLERANCE, "losses": reports, "pass": ok}
    if failure is not None:
        report["failure"] = failure
    return report, ok


def _check_match(seed: int, trials: int) -> tuple[dict, bool]:
    agreements = 0
    failure = None
    for trial in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 91, trial]))
        n_gt = int(rng.integers(1, 7))
        n_slots = n_gt + int(rng.integers(0, 3))
        probs = rng.uniform(0.05, 0.95, n_slots)
        pred_points = rng.normal(0.0, 5.0, (n_slots, 4, 2))
        gt_ints = rng.integers(0, 2, n_gt)
        gt_points = rng.normal(0.0, 5.0, (n_gt, 4, 2))
        solved = align(probs, pred_points, gt_ints, gt_points)
        brute = align_exhaustive(probs, pred_points, gt_ints, gt_points)
        if solved.total_cost == brute.total_cost:
            agreements += 1
        elif failure is None:
            failure = {
                "trial": trial,
                "solver_cost": solved.total_cost,
                "oracle_cost": brute.total_cost,
                "n_gt": n_gt,
                "n_slots": n_slots,
            }
    ok = agreements == trials
    report = {"check": "match", "trials": trials, "agreements": agreements, "pass": ok}
    if failure is not None:
        report["failure"] = failure
    return report, ok


def _check_fusion(seed: int, trials: int) -> tuple[dict, bool]:
    worst = 0.0
    failure = None
    for trial in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 17, trial]))
        n_lanes = int(rng.integers(2, 5))
        n_points = int(rng.choice([2, 4]))
        e = int(rng.integers(4, 9))
        f_int = rng.normal(0.0, 1.0, (e, n_lanes))
        f_dir = rng.normal(0.0, 1.0, (e, n_lanes))
        f_occ = rng.normal(0.0, 1.0, (e, n_lanes, n_points))
        f_de = rng.normal(0.0, 1.0, (e, n_lanes, n_points))
        gamma = float(rng.uniform(-1.0, 1.0))
        diff = float(
            np.max(np.abs(fuse(f_int, f_dir, f_occ, f_de, gamma) - fuse_naive(f_int, f_dir, f_occ, f_de, gamma)))
        )
        if diff > worst:
            worst = diff
        if diff >= FUSION_TOLERANCE and failure is None:
            failure = {"trial": trial, "max_abs_diff": diff, "dims": [e, n_lanes, n_points]}
    ok = failure is None
    report = {"check": "fusion", "trials": trials, "max_abs_diff": worst, "tolerance": FUSION_TOLERANCE, "pass": ok}
    if failure is not None:
        report["failure"] = failure
    return report, ok


def cmd_check(args) -> int:
    seed = _effective_seeds(args)[0]
    if args.what == "grad":
        report, ok = _check_grad(seed, args.trials or 20)
    elif args.what == "match":
        report, ok = _check_match(seed, args.trials or 100)
    else:
        report, ok = _check_fusion(seed, args.trials or 20)
    _emit(report)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# --- bench ---------------------------------------------------------------------------


def run_bench(config: NetConfig, ticks: int = 200, seed: int = 0, warmup: int = 3) -> dict:
    """Time full pipeline ticks (perception forward through control command).

    Returns a report with per-tick samples and median/p95/fps summaries.
    """
    spec = gen_scenario(seed, "straight")
    cache = ScenarioCache(spec)
    world = init_world(spec)
    scene_cfg = SceneConfig(points_per_lane=config.points_per_lane)
    scene, target = annotate(world, spec, scene_cfg, cache)
    net = PerceptionNet(config, seed=seed)
    planner = TargetPlanner(config, seed=seed)
    mpc = MpcConfig()
    state = VehicleState(x=0.0, y=0.0, yaw=0.0, v=spec.speed_limit / 2.0)

    def one_tick():
        bundle, pout = net.forward(scene, seed)
        f_plan = fuse(bundle.f_int, bundle.f_dir, bundle.f_occ, bundle.f_double_edge, 0.0)
        plan_out = planner.predict(target, f_plan)
        scene_b = binarize(pout, plan_out)
        path = generate_path(scene_b)
        stop = stop_decision(scene_b, path)
        trajectory = assemble_trajectory(path, scene_b.speed, stop)
        if trajectory.path or trajectory.stop:
            track(trajectory, state, mpc)

    for _ in range(warmup):
        one_tick()
    samples = []
    for _ in range(ticks):
        t0 = time.perf_counter()
        one_tick()
        samples.append((time.perf_counter() - t0) * 1000.0)
    median = statistics.median(samples)
    return {
        "ticks": ticks,
        "median_ms": median,
        "p95_ms": float(np.percentile(samples, 95)),
        "fps": 1000.0 / median,
        "samples_ms": samples,
        "config": {
            "embed_dim": config.embed_dim,
            "layers": config.layers,
            "heads": config.heads,
            "lane_slots": config.lane_slots,
            "points_per_lane": config.points_per_lane,
            "token_grid": list(config.token_grid),
            "n_views": config.n_views,
        },
    }


def cmd_bench(args) -> int:
    config = _net_config(args)
    seed = _effective_seeds(args)[0]
    report = run_bench(config, ticks=args.ticks, seed=seed)
    samples = report.pop("samples_ms")
    _emit(report)
    if args.out:
        from .reporting import bench_figure, write_bench_csv

        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "bench.json").write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
        write_bench_csv(samples, out_dir / "bench.csv")
        bench_figure(samples, out_dir / "latency_hist.png")
    return EXIT_OK


# --- report --------------------------------------------------------------------------


def cmd_report(args) -> int:
    from .reporting import episode_figure, summary_figure, write_episode_csv

    kinds = args.kinds.split(",") if args.kinds else list(SCENARIO_KINDS)
    for kind in kinds:
        if kind not in SCENARIO_KINDS:
            sys.stderr.write(f"unknown scenario kind '{kind}'\n")
            return EXIT_USAGE
    env = os.environ.get("LANECRAFT_SEED")
    seeds = [int(env)] if env is not None else _parse_seeds(args.seeds)
    config = RunConfig(mode=args.mode, occ_noise=args.occ_noise or 0.0, net_config=_net_config(args))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for kind in kinds:
        for seed in seeds:
            spec = gen_scenario(seed, kind)
            cache = ScenarioCache(spec)
            result, trace = run_episode(spec, config, cache=cache)
            results.append(result)
            episode_figure(spec, result, trace, out_dir / f"episode_{kind}_{seed}.png", cache)
    write_episode_csv(results, out_dir / "episodes.csv")
    summary_figure(results, out_dir / "summary.png")
    summary = {
        "episodes": len(results),
        "mean_rc": float(np.mean([r.rc for r in results])),
        "mean_ds": float(np.mean([r.ds for r in results])),
        "mode": args.mode,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
    _emit(summary)
    return EXIT_OK


# --- parser --------------------------------------------------------------------------


def _add_net_flags(sub) -> None:
    sub.add_argument("--preset", choices=("full", "small"), default="full")
    sub.add_argument("--embed-dim", dest="embed_dim", type=int)
    sub.add_argument("--layers", type=int)
    sub.add_argument("--heads", type=int)
    sub.add_argument("--lane-slots", dest="lane_slots", type=int)
    sub.add_argument("--points-per-lane", dest="points_per_lane", type=int)
    sub.add_argument("--views", type=int)
    sub.add_argument("--grid", type=int, nargs=2, metavar=("H", "W"))
    sub.add_argument("--hidden", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lanecraft", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p_gen = subs.add_parser("gen", help="write a scenario spec JSON file")
    p_gen.add_argument("--kind", choices=SCENARIO_KINDS, required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen)

    p_run = subs.add_parser("run", help="run closed-loop episodes")
    p_run.add_argument("--kind", choices=SCENARIO_KINDS)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--seeds", help="comma list or inclusive range like 1..5")
    p_run.add_argument("--mode", choices=("oracle", "network"))
    p_run.add_argument("--no-tgp", dest="no_tgp", action="store_const", const=True)
    p_run.add_argument("--no-hef", dest="no_hef", action="store_const", const=True)
    p_run.add_argument("--no-dlf", dest="no_dlf", action="store_const", const=True)
    p_run.add_argument("--occ-noise", dest="occ_noise", type=float)
    p_run.add_argument("--timeout", type=float)
    p_run.add_argument("--gamma", type=float)
    p_run.add_argument("--weights", help="JSON weight file for network mode")
    p_run.add_argument("--weights-seed", dest="weights_seed", type=int)
    p_run.add_argument("--feature-seed", dest="feature_seed", type=int)
    p_run.add_argument("--config", help="JSON file with default run settings")
    p_run.add_argument("--out", help="directory for result/trace files")
    _add_net_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_check = subs.add_parser("check", help="run a property suite")
    p_check.add_argument("what", choices=("grad", "match", "fusion"))
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--trials", type=int)
    p_check.set_defaults(func=cmd_check)

    p_bench = subs.add_parser("bench", help="time full pipeline ticks")
    p_bench.add_argument("--ticks", type=int, default=200)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", help="directory for bench.json/bench.csv/latency_hist.png")
    _add_net_flags(p_bench)
    p_bench.set_defaults(func=cmd_bench)

    p_report = subs.add_parser("report", help="run an episode suite, write CSV and figures")
    p_report.add_argument("--out", required=True)
    p_report.add_argument("--kinds", help="comma-separated scenario kinds (default all)")
    p_report.add_argument("--seeds", default="0,1,2")
    p_report.add_argument("--mode", choices=("oracle", "network"), default="oracle")
    p_report.add_argument("--occ-noise", dest="occ_noise", type=float)
    _add_net_flags(p_report)
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except InvariantBreach as exc:
        sys.stderr.write(f"invariant breach: {exc}\n")
        return EXIT_INVARIANT
    except (ScenarioFormatError, SceneFormatError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"bad input: {exc}\n")
        return EXIT_USAGE
    except OSError as exc:
        sys.stderr.write(f"io error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
