"""Background uniform traffic with and without a 64-source incast, on every topology/config pair.

Prints background mean/max FCT both ways and writes incast_results.csv.
"""

import argparse
import csv
import dataclasses
import time
from concurrent.futures import ProcessPoolExecutor

from tracenet.experiments import CONFIG_NAMES, TOPOLOGY_NAMES, IncastScenario, run_incast


def _one(job):
    topo, cfg, scenario = job
    return run_incast(topo, cfg, scenario)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scale", type=int, default=IncastScenario.scale, help="divide the 10 MiB incast size by this")
    ap.add_argument("--at-ns", type=int, default=IncastScenario.incast_at_ns)
    ap.add_argument("--messages-per-task", type=int, default=IncastScenario.messages_per_task)
    ap.add_argument("--gap-ns", type=int, default=IncastScenario.mean_gap_ns)
    ap.add_argument("--jobs", type=int, default=4)
    ap.add_argument("--out", default="incast_results.csv")
    args = ap.parse_args()
    scenario = IncastScenario(
        scale=args.scale, incast_at_ns=args.at_ns, messages_per_task=args.messages_per_task, mean_gap_ns=args.gap_ns
    )
    jobs = [(t, c, scenario) for t in TOPOLOGY_NAMES for c in CONFIG_NAMES]
    t0 = time.time()
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        outcomes = list(pool.map(_one, jobs))
    fields = [f.name for f in dataclasses.fields(outcomes[0])]
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields + ["mean_change", "max_ratio"])
        for o in outcomes:
            w.writerow([getattr(o, f) for f in fields] + [f"{o.mean_change:.4f}", f"{o.max_ratio:.1f}"])
    for o in outcomes:
        print(
            f"{o.topology:<14}{o.config:<9} mean {o.base_mean_ns:>6} -> {o.incast_mean_ns:>6} ({o.mean_change:+.1%})"
            f"  max {o.base_max_ns:>6} -> {o.incast_max_ns:>9} (x{o.max_ratio:.0f})  burst {o.burst_time_ns} ns"
        )
    print(f"{len(outcomes)} experiment pairs in {time.time() - t0:.0f} s; wrote {args.out}")


if __name__ == "__main__":
    main()
