"""Run the bundled experiment specs and print a one-line summary of each.

    python scripts/run_experiments.py --seed 1 --out-dir results [--only lln_phonon] [--threads 4]
"""
import argparse
import json
from pathlib import Path

from ldflow.experiments import ExperimentSpec, run_experiment

SPEC_DIR = Path(__file__).parent / "specs"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, required=True)
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--only", nargs="*", help="spec file stems to run")
    args = ap.parse_args()
    for path in sorted(SPEC_DIR.glob("*.json")):
        if args.only and path.stem not in args.only:
            continue
        d = json.loads(path.read_text())
        d.update(seed=args.seed, out_dir=str(Path(args.out_dir) / path.stem),
                 threads=args.threads)
        _, doc = run_experiment(ExperimentSpec.from_dict(d))
        s = doc["summary"]
        brief = {k: s[k] for k in ("final_tv", "decreasing", "prediction", "ratios", "slopes",
                                   "slope_ratio_first_last", "pi_v") if k in s}
        print(f"{path.stem}: {json.dumps(brief)}")


if __name__ == "__main__":
    main()
