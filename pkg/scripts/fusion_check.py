"""Compare rendered-embedding argmax accuracy with the single-view oracle maps.

    python scripts/fusion_check.py --margin 1.0 --sigma 0.5 --iterations 10000

Accuracy is measured on known-class pixels against ground-truth labels.
"""

import argparse
import logging
import time

import numpy as np

from ncdfield import pipeline as pl
from ncdfield.config import PipelineConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/fusion")
    ap.add_argument("--margin", type=float, default=1.0)
    ap.add_argument("--sigma", type=float, default=0.5)
    ap.add_argument("--iterations", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    cfg = PipelineConfig()
    cfg.out = args.out
    cfg.set_seed(args.seed)
    cfg.oracle.margin, cfg.oracle.sigma = args.margin, args.sigma
    cfg.train.iterations = args.iterations
    scene = pl.prepare(cfg)
    pl.write_config(cfg)
    t0 = time.time()
    data = pl.ensure_dataset(cfg, scene)
    pl.ensure_checkpoint(cfg)
    rdir = pl.stage_render(cfg)
    dt = time.time() - t0

    known = list(scene.known_classes)
    single, fused = [], []
    for i, (lab, emb, ok) in enumerate(zip(data.labels, data.embeddings, data.valid())):
        m = ok & np.isin(lab, known)
        single.append((emb.argmax(-1) == lab)[m].mean())
        fused.append((pl.load_render(rdir, i)["logits"].argmax(-1) == lab)[m].mean())
    print(f"single-view {np.mean(single):.4f}  rendered {np.mean(fused):.4f}  ({dt / 60:.1f} min)")


if __name__ == "__main__":
    main()
