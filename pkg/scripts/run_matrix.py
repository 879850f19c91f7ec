"""Run the four checked-in experiment configs and tabulate execution time and FCT.

Speedup is the Config#2 execution time divided by the Config#1 one, per topology.
"""

import argparse
import csv
import glob
import os

from tracenet.cli import cmd_simulate, load_config

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--configs", default=os.path.join(HERE, "..", "configs"))
    ap.add_argument("--jobs", type=int, default=4)
    args = ap.parse_args()
    paths = sorted(glob.glob(os.path.join(args.configs, "*.cfg")))
    configs = [load_config(p) for p in paths]
    rc = cmd_simulate(configs, jobs=args.jobs)
    if rc:
        raise SystemExit(rc)
    times = {}
    print(f"{'experiment':<22}{'exec ns':>12}{'mean FCT':>10}{'max FCT':>10}")
    for p, cfg in zip(paths, configs):
        with open(os.path.join(cfg.out, "summary.csv")) as fh:
            row = next(csv.DictReader(fh))
        name = os.path.splitext(os.path.basename(p))[0]
        times[name] = int(row["execution_time_ns"])
        print(f"{name:<22}{row['execution_time_ns']:>12}{row['mean_fct_ns']:>10}{row['max_fct_ns']:>10}")
    for topo in sorted({n.rsplit("_", 1)[0] for n in times}):
        a, b = times.get(f"{topo}_config1"), times.get(f"{topo}_config2")
        if a and b:
            print(f"speedup {topo}: {b / a:.3f}")


if __name__ == "__main__":
    main()
