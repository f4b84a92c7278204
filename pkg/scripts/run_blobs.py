#!/usr/bin/env python3
"""Labeled-ratio sweep on the blob image task.

Trains the small CNN at several labeled ratios, with and without the
adversarial smoothness term, and reports mean final test accuracy over
repeats. Mirrors the protocol of the image experiments at desk scale.
"""

import argparse
import time

from vatlab.experiments import blob_benchmark
from vatlab.train import TrainConfig, run_protocol


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ratios", type=float, nargs="+", default=[0.4, 0.8])
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--per-class", type=int, default=256)
    args = ap.parse_args()

    ds = blob_benchmark(per_class=args.per_class)
    print(f"dataset: {ds.x.shape[0]} images of {ds.x.shape[2]}x{ds.x.shape[3]}")
    for ratio in args.ratios:
        for use_vat in (True, False):
            cfg = TrainConfig(model_kind="cnn_small", epochs=args.epochs,
                              repeats=args.repeats, labeled_ratio=ratio,
                              use_vat=use_vat, seed=0)
            t0 = time.time()
            summary = run_protocol(cfg, ds)
            name = "smoothed" if use_vat else "supervised"
            print(f"ratio={ratio:.0%} {name:>10}: mean={summary.mean:.4f} "
                  f"std={summary.std:.4f} ({time.time() - t0:.0f}s)")


if __name__ == "__main__":
    main()
