"""Compare user-specific, similar-users and general models on synthetic
mirrored-archetype cohorts over several seeds.

    python scripts/compare_schemes.py --seeds 5 --classifier naive-bayes
"""
import argparse
import dataclasses
import json
import time

import numpy as np

from accstress.evaluation import EvalConfig, run_scheme
from accstress.models import CLASSIFIER_KINDS
from accstress.synth import CohortSpec, cohort_observations, mirrored_archetypes

SCHEMES = ("user-specific", "similar-users", "general")


def same_archetype_rate(report, archetype_of) -> float:
    units = report.units
    ok = sum(all(archetype_of[v] == archetype_of[u.test_user] for v in u.similar_users) for u in units)
    return ok / len(units) if units else float("nan")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--users", type=int, default=6, help="users per archetype")
    ap.add_argument("--days", type=int, default=10)
    ap.add_argument("--classifier", choices=CLASSIFIER_KINDS, default="naive-bayes")
    ap.add_argument("--out", help="optional JSON summary path")
    args = ap.parse_args()

    cfg = EvalConfig(classifier=args.classifier)
    rows = []
    start = time.perf_counter()
    for seed in range(args.seeds):
        spec = dataclasses.replace(
            CohortSpec(seed=seed), days=args.days, archetypes=tuple((a, args.users) for a in mirrored_archetypes())
        )
        co = cohort_observations(spec)
        row = {"seed": seed}
        for scheme in SCHEMES:
            report = run_scheme(scheme, co.observations, seed, cfg)
            row[scheme] = report.pooled.accuracy
            if scheme == "similar-users":
                row["same_archetype"] = same_archetype_rate(report, co.archetype_of)
        rows.append(row)
        print(f"seed {seed}: " + "  ".join(f"{s} {row[s]:.3f}" for s in SCHEMES) + f"  same-archetype {row['same_archetype']:.2f}")

    med = {s: float(np.median([r[s] for r in rows])) for s in (*SCHEMES, "same_archetype")}
    elapsed = time.perf_counter() - start
    print("median:  " + "  ".join(f"{s} {med[s]:.3f}" for s in SCHEMES) + f"  same-archetype {med['same_archetype']:.2f}")
    print(f"{elapsed:.1f}s")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"args": vars(args), "runs": rows, "median": med, "seconds": elapsed}, fh, indent=2)


if __name__ == "__main__":
    main()
