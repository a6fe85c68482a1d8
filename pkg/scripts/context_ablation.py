#!/usr/bin/env python3
"""Full model vs dyad-only model on distractor-heavy synthetic scenes.

``--onlooker-fraction`` makes that share of distractors face the nearest
group, which gives pairwise features a harder time than randomly oriented
bystanders.
"""
import argparse

from fformation.data_io import SynthConfig, generate_synthetic
from fformation.experiment import cross_validate
from fformation.model import ModelConfig, TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--epochs", type=int, default=6)
    ap.add_argument("--onlooker-fraction", type=float, default=0.0)
    args = ap.parse_args()

    synth = SynthConfig(scenes=args.scenes, groups=(2, 3), distractors=(2, 8), onlooker_fraction=args.onlooker_fraction)
    corpus = generate_synthetic(synth, seed=args.seed)
    train_cfg = TrainConfig(max_epochs=args.epochs, patience=3)
    rows = {}
    for label, ctx in (("full", True), ("no-context", False)):
        rows[label] = cross_validate(corpus, 5, ModelConfig(use_context=ctx), train_cfg)
    print("variant      " + "  ".join(f"fold{k}" for k in range(1, 6)) + "   mean F1(T=1)")
    for label, summary in rows.items():
        folds = "  ".join(f"{r['f1_T1']:.3f}" for r in summary["folds"])
        print(f"{label:<12} {folds}   {summary['mean']['f1_T1']:.4f}")
    print(f"gap {rows['full']['mean']['f1_T1'] - rows['no-context']['mean']['f1_T1']:+.4f}")


if __name__ == "__main__":
    main()
