#!/usr/bin/env python3
"""Generate a small synthetic corpus and run the full two-stage pipeline.

Usage: python scripts/run_pipeline_demo.py [--out DIR] [--seed N] [--predictor P]
"""

import argparse
import sys
from pathlib import Path

from dbtune import cli, synth


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_out")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--predictor", default="gpr", choices=["gpr", "rf", "nn"])
    args = parser.parse_args()

    out = Path(args.out)
    spec = synth.SynthSpec(n_offline=12, n_online=5, rows_per_workload=8,
                           n_knobs=3, n_latent=3, metrics_per_latent=3,
                           noise_std=0.02, seed=args.seed,
                           freq_scale=1.0, profile_scale=2.0)
    corpus, _ = synth.generate_corpus(spec)
    manifest = synth.write_corpus(corpus, out / "corpus")
    print(f"corpus written to {manifest.parent}")

    code = cli.main(["pipeline", "--manifest", str(manifest),
                     "--out", str(out / "results"),
                     "--predictor", args.predictor,
                     "--alpha", "1e-4", "--seed", str(args.seed)])
    if code == 0:
        print(f"results in {out / 'results'}")
    return code


if __name__ == "__main__":
    sys.exit(main())
