"""Run the reference scene through the full pipeline and the two ablations.

    python scripts/run_reference.py --out runs/reference

The field is trained once; the ablations reuse it. Prints one metrics table.
"""

import argparse
import logging

from ncdfield import pipeline as pl
from ncdfield.config import PipelineConfig, load_config
from ncdfield.metrics import read_metrics_csv

VARIANTS = {
    "full": {},
    "gs-ep": {"use_embedding": False},
    "gs": {"use_embedding": False, "use_entropy": False},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--out", default="runs/reference")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--no-field", action="store_true", help="cluster raw oracle maps instead")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    results = {}
    for name, flags in VARIANTS.items():
        cfg = load_config(args.config) if args.config else PipelineConfig()
        cfg.out = args.out
        if args.seed is not None:
            cfg.set_seed(args.seed)
        cfg.ablation.use_field = not args.no_field
        for k, v in flags.items():
            setattr(cfg.ablation, k, v)
        results[name] = read_metrics_csv(pl.run_pipeline(cfg))

    keys = list(results["full"])
    print(f"{'metric':<16}" + "".join(f"{v:>10}" for v in results))
    for k in keys:
        print(f"{k:<16}" + "".join(f"{results[v].get(k, float('nan')):>10.4f}" for v in results))


if __name__ == "__main__":
    main()
