"""Overfit a tiny synthetic routine and report teacher-forced metrics.

    python scripts/run_overfit.py [--seed 0]
"""

import argparse
import json

from trajgpt import experiments
from trajgpt.model import Variant


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    res = experiments.run(experiments.with_seed(experiments.OVERFIT, args.seed), Variant.FULL)
    print(json.dumps({"seconds": round(res.seconds, 1), "epochs": res.epochs,
                      "windows": res.n_windows, **res.report.as_dict()}, indent=2))


if __name__ == "__main__":
    main()
