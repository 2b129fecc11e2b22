"""Track random pushing episodes in every aggregation mode and print a comparison table.

Episodes are generated in memory; use the ``dsr`` CLI to write them to disk instead.

    python scripts/run_benchmark.py --seeds 0:10 --predictor kinematic
"""

import argparse
import time

import numpy as np

from dsr.config import parse_seed_range
from dsr.rollout import run_rollout, segment_cache
from dsr.sim.episode import EpisodeConfig, generate_episode

MODES = ("dsr", "nowarp", "singlestep", "gtwarp")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", default="0:10")
    p.add_argument("--objects", type=int, default=4)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--shapes", choices=["cubes", "mixed"], default="cubes")
    p.add_argument("--predictor", choices=["kinematic", "oracle"], default="kinematic")
    args = p.parse_args()

    cfg = EpisodeConfig(n_objects=args.objects, n_steps=args.steps, shape_set=args.shapes)
    recs = {m: [] for m in MODES}
    t0 = time.perf_counter()
    for seed in range(*parse_seed_range(args.seeds)):
        ep = generate_episode(seed, cfg)
        segs = segment_cache(ep)
        for m in MODES:
            recs[m].append(run_rollout(ep, m, args.predictor, segments=segs).record())
        print(f"seed {seed}: " + "  ".join(f"{m} {recs[m][-1]['iou_ordered']:.3f}" for m in MODES), flush=True)

    print(f"\n{'mode':>10} {'flow vis cm':>12} {'flow full cm':>13} {'unordered':>10} {'ordered':>8} {'gap':>6}")
    for m in MODES:
        r = recs[m]
        vis = np.nanmean([x["flow_visible_cm"] for x in r])
        full = np.mean([x["flow_full_cm"] for x in r])
        un = np.mean([x["iou_unordered"] for x in r])
        od = np.mean([x["iou_ordered"] for x in r])
        print(f"{m:>10} {vis:12.3f} {full:13.4f} {un:10.3f} {od:8.3f} {un - od:6.3f}")
    print(f"\n{len(recs['dsr'])} episodes in {time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
