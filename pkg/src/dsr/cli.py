"""Command-line harness: generate episodes, roll out the representation, evaluate, plan.

Every command writes JSON records carrying a schema version and exits
nonzero with a JSON error record on stderr when something fails.
"""

from __future__ import annotations

import argparse
import json
import multiprocessing
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .config import BenchConfig, apply_overrides, load_config, parse_seed_range
from .errors import DsrError
from .planner import TargetState, achieved_iou, make_target, mpc, random_baseline
from .rollout import run_rollout
from .sim.episode import Episode, generate_episode, write_manifest
from .warp import AggregationMode

MODES = [m.value for m in AggregationMode]


def _pool_map(fn, items, workers: int):
    """Ordered map; results come back by item index whatever the completion order."""
    if workers <= 1:
        return [fn(x) for x in items]
    with multiprocessing.Pool(workers) as pool:
        return list(pool.imap(fn, items))


def _seeds(args, cfg: BenchConfig) -> range:
    lo, hi = parse_seed_range(args.seed_range) if args.seed_range else cfg.seeds
    return range(lo, hi)


# -- generate --------------------------------------------------------------


def _generate_one(job):
    seed, cfg_dict, out = job
    cfg = BenchConfig.from_dict(cfg_dict)
    ep = generate_episode(seed, cfg.episode, cfg.grid)
    name = f"episode_{seed:05d}"
    ep.save(Path(out) / name, compress=cfg.episode.compress)
    return {"seed": seed, "path": name, "n_steps": ep.n_steps, "n_objects": len(ep.scenes[0].objects)}


def cmd_generate(args, cfg: BenchConfig) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = _seeds(args, cfg)
    entries = _pool_map(_generate_one, [(s, cfg.to_dict(), str(out)) for s in seeds], args.workers)
    config = {**cfg.to_dict(), "seeds": [seeds.start, seeds.stop]}
    manifest = write_manifest(out, entries, config)
    return {"episodes": len(entries), "interactions": sum(e["n_steps"] for e in entries), "config_hash": manifest["config_hash"]}


# -- rollout ---------------------------------------------------------------


def _dataset_entries(data: Path, seeds: range | None) -> list[dict]:
    manifest = io.read_json(data / "manifest.json")
    entries = manifest["episodes"]
    if seeds is not None:
        entries = [e for e in entries if e["seed"] in seeds]
    return entries


def _rollout_one(job):
    path, mode, predictor, cfg_dict, out, save_states = job
    cfg = BenchConfig.from_dict(cfg_dict)
    ep = Episode.load(path, with_depth=False)
    res = run_rollout(ep, mode, predictor, cfg.aggregate, keep_states=save_states)
    rec = res.record()
    io.write_json(Path(out) / f"metrics_{ep.seed:05d}.json", rec)
    if save_states:
        for t, st in enumerate(res.states):
            st.save(Path(out) / f"states_{ep.seed:05d}" / f"state_{t:02d}")
    return rec


def _summary(records: list[dict]) -> dict:
    keys = ["flow_visible_cm", "flow_full_cm", "flow_visible_mse_cm2", "flow_full_mse_cm2", "iou_unordered", "iou_ordered"]
    out = {k: float(np.nanmean([r[k] for r in records])) for k in keys}
    out["gap"] = out["iou_unordered"] - out["iou_ordered"]
    out["episodes"] = len(records)
    return out


def cmd_rollout(args, cfg: BenchConfig) -> dict:
    data = Path(args.data)
    seeds = parse_seed_range(args.seed_range) if args.seed_range else None
    entries = _dataset_entries(data, range(*seeds) if seeds else None)
    summaries = {}
    for mode in args.mode:
        out = Path(args.out) / mode
        out.mkdir(parents=True, exist_ok=True)
        jobs = [(str(data / e["path"]), mode, args.predictor, cfg.to_dict(), str(out), args.save_states) for e in entries]
        records = _pool_map(_rollout_one, jobs, args.workers)
        summary = {"mode": mode, "predictor": args.predictor, **_summary(records)}
        io.write_json(out / "summary.json", summary)
        summaries[mode] = summary
    return summaries


# -- eval ------------------------------------------------------------------


def cmd_eval(args, cfg: BenchConfig) -> dict:
    """Collect per-episode metric records under ``--out`` into one comparison table."""
    root = Path(args.out)
    table = {}
    for mode in args.mode:
        files = sorted((root / mode).glob("metrics_*.json"))
        if not files:
            continue
        records = [io.read_json(f) for f in files]
        s = _summary(records)
        s["dominance_violations"] = int(
            sum(r["iou_ordered"] > float(np.mean(r["iou_unordered_steps"])) + 1e-12 for r in records)
        )
        table[mode] = s
    if not table:
        raise FileNotFoundError(f"no metrics records under {root}")
    io.write_json(root / "eval.json", {"modes": table})
    for mode, s in table.items():
        print(f"{mode:>10}  ordered {s['iou_ordered']:.3f}  unordered {s['iou_unordered']:.3f}  gap {s['gap']:.3f}  flow_visible {s['flow_visible_cm']:.3f} cm", file=sys.stderr)
    return table


# -- plan ------------------------------------------------------------------


def plan_seed(seed: int, cfg: BenchConfig, predictor: str, target_kind: str = "policy", replan: bool | None = None, baseline: bool | None = None) -> dict:
    suite = cfg.plan_suite
    replan = suite.replan if replan is None else replan
    baseline = suite.baseline if baseline is None else baseline
    k = cfg.episode.k
    start, target = make_target(seed, suite.n_objects, suite.n_pushes, k, cfg.grid)
    if target_kind == "initial":
        target = TargetState.from_scene(start, cfg.grid, k)
    pcfg = replace(cfg.planner, seed=seed)
    res = mpc(start, target, predictor, pcfg, replan=replan, push_cfg=cfg.episode.push)
    rec = {"seed": seed, "predictor": predictor, "replan": replan, "initial_iou": achieved_iou(start, target), **res.record()}
    if baseline:
        rec["baseline_iou"] = random_baseline(start, target, pcfg.horizon, seed, cfg.episode.push).iou
    return rec


def _plan_one(job):
    seed, cfg_dict, predictor, target_kind, replan, baseline = job
    return plan_seed(seed, BenchConfig.from_dict(cfg_dict), predictor, target_kind, replan, baseline)


def cmd_plan(args, cfg: BenchConfig) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    replan = not args.no_replan
    jobs = [(s, cfg.to_dict(), args.predictor, args.target, replan, args.baseline) for s in _seeds(args, cfg)]
    records = _pool_map(_plan_one, jobs, args.workers)
    summary = {"predictor": args.predictor, "replan": replan, "seeds": len(records), "mean_iou": float(np.mean([r["achieved_iou"] for r in records]))}
    if args.baseline:
        summary["mean_baseline_iou"] = float(np.mean([r["baseline_iou"] for r in records]))
    io.write_json(out / "plan_report.json", {"summary": summary, "per_seed": records})
    return summary


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dsr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed-range", help="a:b (half-open) or a single seed")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key, e.g. planner.n_samples=50")

    g = sub.add_parser("generate", help="write benchmark episodes and a manifest")
    common(g)

    r = sub.add_parser("rollout", help="track episodes in one or more aggregation modes")
    common(r)
    r.add_argument("--data", required=True, help="dataset directory written by generate")
    r.add_argument("--mode", nargs="+", choices=MODES, default=["dsr"])
    r.add_argument("--predictor", choices=["kinematic", "oracle"], default="kinematic")
    r.add_argument("--save-states", action="store_true", help="also dump every state snapshot")

    e = sub.add_parser("eval", help="summarise rollout metrics found under --out")
    common(e)
    e.add_argument("--mode", nargs="+", choices=MODES, default=MODES)

    pl = sub.add_parser("plan", help="MPC towards simulated target states")
    common(pl)
    pl.add_argument("--predictor", choices=["kinematic", "oracle"], default="oracle")
    pl.add_argument("--target", choices=["policy", "initial"], default="policy")
    pl.add_argument("--no-replan", action="store_true")
    pl.add_argument("--baseline", action="store_true", help="add a uniform random-action baseline")
    return p


COMMANDS = {"generate": cmd_generate, "rollout": cmd_rollout, "eval": cmd_eval, "plan": cmd_plan}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config), args.set)
        result = COMMANDS[args.command](args, cfg)
    except (DsrError, OSError, ValueError, KeyError) as exc:
        record = {"schema_version": io.SCHEMA_VERSION, "error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(record), file=sys.stderr)
        return 2
    print(io.dumps_record({"command": args.command, "result": result}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
