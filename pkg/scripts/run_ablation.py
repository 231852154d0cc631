"""Variant comparisons on the bimodal-travel and region-duration recipes.

    python scripts/run_ablation.py [--recipe bimodal|region_duration|both] [--seeds 0 1 2]

Prints one CSV row per (recipe, seed, variant).
"""

import argparse
import csv
import sys

from trajgpt import experiments
from trajgpt.model import Variant

RECIPES = {"bimodal": experiments.BIMODAL, "region_duration": experiments.REGION_DURATION}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--recipe", choices=[*RECIPES, "both"], default="both")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args()
    names = list(RECIPES) if args.recipe == "both" else [args.recipe]
    out = csv.writer(sys.stdout)
    out.writerow(["recipe", "seed", "variant", "seconds", "acc@1",
                  "arrival_p10", "departure_p5", "departure_p10"])
    for name in names:
        for seed in args.seeds:
            for variant in Variant:
                res = experiments.run(experiments.with_seed(RECIPES[name], seed), variant)
                r = res.report
                out.writerow([name, seed, variant.value, f"{res.seconds:.0f}", f"{r.acc[1]:.4f}",
                              f"{r.arrival[10]:.4f}", f"{r.departure[5]:.4f}", f"{r.departure[10]:.4f}"])
                sys.stdout.flush()


if __name__ == "__main__":
    main()
