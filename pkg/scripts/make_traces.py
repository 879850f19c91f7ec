"""Regenerate the traces checked into traces/ (and, optionally, the incast background)."""

import argparse
import os

from tracenet.experiments import IncastScenario, app_phases
from tracenet.trace import save_trace

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "traces")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=ROOT)
    ap.add_argument("--background", action="store_true", help="also write the ~8 MB incast background trace")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    save_trace(app_phases(), os.path.join(args.out, "app_phases.vef"))
    if args.background:
        save_trace(IncastScenario().background(), os.path.join(args.out, "background_uniform.vef"))
    print("wrote", sorted(os.listdir(args.out)))


if __name__ == "__main__":
    main()
