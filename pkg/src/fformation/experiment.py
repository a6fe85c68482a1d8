"""Cross-validated train / tune / detect / evaluate runs."""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

from . import clustering, evaluation
from .data_io import Corpus, make_folds, write_groups
from .geometry import Scene
from .model import ModelConfig, ModelParams, TrainConfig, affinity_matrix, train

log = logging.getLogger(__name__)


def detect(scene: Scene, params: ModelParams, threshold: float, symmetrize: str = "flip"):
    """Affinity matrix and group partition for one scene."""
    aff = affinity_matrix(scene, params, symmetrize)
    return aff, clustering.dominant_sets_partition(aff, threshold)


def detect_all(scenes: Sequence[Scene], params, threshold, symmetrize="flip", jobs: int = 1) -> list:
    """``(AffinityMatrix, GroupPartition)`` per scene, in input order."""
    if jobs <= 1:
        return [detect(s, params, threshold, symmetrize) for s in scenes]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda s: detect(s, params, threshold, symmetrize), scenes))


def tune_on(scenes: Sequence[Scene], params, symmetrize="flip") -> float:
    labelled = [s for s in scenes if s.ground_truth is not None]
    return clustering.tune_threshold([(affinity_matrix(s, params, symmetrize), s.ground_truth) for s in labelled])


@dataclass
class FoldResult:
    fold: int
    threshold: float
    params: ModelParams
    history: object
    predictions: list
    report: dict


def run_fold(corpus: Corpus, k: int, split, model_config: ModelConfig, train_config: TrainConfig, symmetrize="flip") -> FoldResult:
    fold = split.folds[k]
    train_scenes = corpus.subset(fold.train)
    val_scenes = corpus.subset(fold.validation)
    test_scenes = corpus.subset(fold.test)
    params, history = train(train_scenes, val_scenes, model_config, train_config)
    # validation doubles as the tuning set; fall back to training data if there is none
    threshold = tune_on(val_scenes or train_scenes, params, symmetrize)
    preds = [p for _, p in detect_all(test_scenes, params, threshold, symmetrize)]
    report = evaluation.evaluate(preds, [s.ground_truth for s in test_scenes])
    log.info("fold %d: threshold %.2f, T=1 F1 %.4f, GDSR %.4f", k + 1, threshold, report["T=1"].f1, report["T=1"].gdsr)
    return FoldResult(k, threshold, params, history, preds, report)


def cross_validate(
    corpus: Corpus,
    fold_count: int = 5,
    model_config: ModelConfig = ModelConfig(),
    train_config: TrainConfig = TrainConfig(),
    out_dir: Optional[str] = None,
    symmetrize: str = "flip",
    folds: Optional[Sequence[int]] = None,
) -> dict:
    """Train, tune and test every fold; optionally write per-fold artifacts to ``out_dir``.

    Returns the fold summary from :func:`evaluation.summarize_folds` with the
    tuned thresholds added.
    """
    split = make_folds(corpus, fold_count)
    results = []
    for k in folds if folds is not None else range(fold_count):
        res = run_fold(corpus, k, split, model_config, train_config, symmetrize)
        results.append(res)
        if out_dir:
            _write_fold(out_dir, corpus, split, res, model_config, train_config, symmetrize)
    summary = evaluation.summarize_folds([r.report for r in results])
    for row, res in zip(summary["folds"], results):
        row["fold"] = res.fold + 1
        row["threshold"] = res.threshold
    if out_dir:
        evaluation.write_report(summary, os.path.join(out_dir, "report.txt"), os.path.join(out_dir, "report.json"))
        history = {f"fold{r.fold + 1}": asdict(r.history) for r in results}
        with open(os.path.join(out_dir, "loss_history.json"), "w", encoding="utf-8") as fh:
            json.dump(history, fh, indent=2)
            fh.write("\n")
    return summary


def _write_fold(out_dir, corpus, split, res: FoldResult, model_config, train_config, symmetrize):
    d = os.path.join(out_dir, f"fold{res.fold + 1}")
    os.makedirs(d, exist_ok=True)
    extra = {
        "threshold": res.threshold,
        "fold": res.fold + 1,
        "symmetrize": symmetrize,
        "train": asdict(train_config),
        "corpus": corpus.name,
    }
    res.params.save(os.path.join(d, "checkpoint.bin"), extra)
    test = corpus.subset(split.folds[res.fold].test)
    write_groups([(s.frame_id, p) for s, p in zip(test, res.predictions)], os.path.join(d, "predicted_groups.txt"))
