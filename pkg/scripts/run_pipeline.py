"""Run the full CLI pipeline on a synthetic cohort: synth, extract,
observe, explore, then evaluate every scheme with every classifier.

    python scripts/run_pipeline.py --config scripts/pipeline.yaml --out runs/demo
"""
import argparse
import sys

from accstress.cli import main as cli
from accstress.evaluation import SCHEMES
from accstress.models import CLASSIFIER_KINDS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=None)
    ap.add_argument("--out", default="runs/demo")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--classifiers", nargs="+", default=list(CLASSIFIER_KINDS), choices=CLASSIFIER_KINDS)
    args = ap.parse_args()

    base = ["--out", args.out, "--seed", str(args.seed)]
    if args.config:
        base += ["--config", args.config]
    for cmd in ("synth", "extract", "observe", "explore"):
        print(f"== {cmd}")
        if cli([cmd, *base]) != 0:
            return 1
    for scheme in SCHEMES:
        for kind in args.classifiers:
            print(f"== evaluate {scheme} / {kind}")
            if cli(["evaluate", *base, "--scheme", scheme, "--classifier", kind]) != 0:
                return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
