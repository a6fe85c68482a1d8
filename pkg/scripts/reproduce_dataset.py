#!/usr/bin/env python3
"""Five-fold results on a real corpus already converted to the text interchange format.

Prints a per-fold table next to reference numbers passed with --reference.
"""
import argparse
import json

from fformation.data_io import parse_corpus
from fformation.experiment import cross_validate
from fformation.model import ModelConfig, TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--features", required=True)
    ap.add_argument("--groups", required=True)
    ap.add_argument("--mode", choices=("orientation", "velocity"), default="orientation")
    ap.add_argument("--out", default=None)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--reference", default=None, help='JSON like {"f1_T1": [0.7, ...], "gdsr": [...]} with per-fold values')
    args = ap.parse_args()

    corpus = parse_corpus(args.features, args.groups, args.mode, name=args.features)
    summary = cross_validate(corpus, 5, ModelConfig(mode=args.mode), TrainConfig(max_epochs=args.epochs), out_dir=args.out)
    ref = json.loads(args.reference) if args.reference else {}
    keys = ("f1_T1", "f1_T23", "gdsr")
    print("fold  " + "  ".join(f"{k:>8} {'ref':>6}" for k in keys))
    for k, row in enumerate(summary["folds"]):
        cells = []
        for key in keys:
            r = ref.get(key, [])
            cells.append(f"{row[key]:>8.3f} {r[k]:>6.2f}" if k < len(r) else f"{row[key]:>8.3f} {'-':>6}")
        print(f"{row['fold']:>4}  " + "  ".join(cells))
    print("mean  " + "  ".join(f"{summary['mean'][key]:>8.3f} {'':>6}" for key in keys))


if __name__ == "__main__":
    main()
