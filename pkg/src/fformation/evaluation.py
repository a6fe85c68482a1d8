"""Group detection metrics: tolerant matching, precision/recall/F1 and GDSR."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from .partition import GroupPartition

# guards ceil/floor against T*|g| landing a hair off an integer
_EPS = 1e-9
GDSR_FRACTION = 0.6


def _order_key(inter, pred, truth):
    return (-inter, len(pred), sorted(map(str, pred)), sorted(map(str, truth)))


def _greedy(candidates):
    """One-to-one assignment from ``(key, pred_index, truth_index)`` candidates."""
    used_p, used_t, matched = set(), set(), 0
    for _, p, t in sorted(candidates, key=lambda c: c[0]):
        if p in used_p or t in used_t:
            continue
        used_p.add(p)
        used_t.add(t)
        matched += 1
    return matched


def match_groups(predicted: GroupPartition, truth: GroupPartition, T: float = 1.0):
    """Return ``(TP, FP, FN)`` for one frame at tolerance ``T``.

    A truth group g is found by predicted group p when p holds at least
    ceil(T|g|) members of g and at most floor((1-T)|g|) outsiders.
    """
    if not 0.0 < T <= 1.0:
        raise ValueError("tolerance T must lie in (0, 1]")
    if predicted.universe != truth.universe:
        raise ValueError("predicted and true partitions cover different ids")
    cands = []
    for ti, g in enumerate(truth.groups):
        need = math.ceil(T * len(g) - _EPS)
        allow = math.floor((1.0 - T) * len(g) + _EPS)
        for pi, p in enumerate(predicted.groups):
            inter = len(p & g)
            if inter >= need and len(p - g) <= allow:
                cands.append((_order_key(inter, p, g), pi, ti))
    tp = _greedy(cands)
    return tp, len(predicted.groups) - tp, len(truth.groups) - tp


def prf(tp, fp, fn):
    """Precision, recall and F1 with every 0/0 read as 0."""
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f1


def frame_f1(predicted: GroupPartition, truth: GroupPartition, T: float = 1.0) -> float:
    """Per-frame F1; a frame where both sides have no groups counts as perfect."""
    tp, fp, fn = match_groups(predicted, truth, T)
    if tp + fp + fn == 0:
        return 1.0
    return prf(tp, fp, fn)[2]


@dataclass
class EvalReport:
    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float
    recall: float
    f1: float
    gdsr: Optional[float] = None
    per_frame: list = field(default_factory=list)

    def flat(self, prefix: str = "") -> dict:
        d = asdict(self)
        d.pop("per_frame")
        return {prefix + k: v for k, v in d.items()}


def _check_aligned(predicted_frames, truth_frames):
    if len(predicted_frames) != len(truth_frames):
        raise ValueError(f"{len(predicted_frames)} predicted frames vs {len(truth_frames)} true frames")


def f1_at(predicted_frames: Sequence[GroupPartition], truth_frames: Sequence[GroupPartition], T: float = 1.0) -> EvalReport:
    _check_aligned(predicted_frames, truth_frames)
    per_frame = [match_groups(p, t, T) for p, t in zip(predicted_frames, truth_frames)]
    tp = sum(c[0] for c in per_frame)
    fp = sum(c[1] for c in per_frame)
    fn = sum(c[2] for c in per_frame)
    return EvalReport(tp, fp, fn, *prf(tp, fp, fn), per_frame=per_frame)


def gdsr_counts(predicted: GroupPartition, truth: GroupPartition, fraction: float = GDSR_FRACTION):
    """(credited truth groups, truth groups) for one frame."""
    cands = []
    for ti, g in enumerate(truth.groups):
        need = math.ceil(fraction * len(g) - _EPS)
        for pi, p in enumerate(predicted.groups):
            inter = len(p & g)
            if inter >= need:
                cands.append((_order_key(inter, p, g), pi, ti))
    return _greedy(cands), len(truth.groups)


def gdsr(predicted_frames, truth_frames, fraction: float = GDSR_FRACTION) -> float:
    """Share of true groups with at least ``fraction`` of members inside one predicted group.

    Each predicted group is credited to at most one true group. No true
    groups at all gives 0.
    """
    _check_aligned(predicted_frames, truth_frames)
    hit = total = 0
    for p, t in zip(predicted_frames, truth_frames):
        h, n = gdsr_counts(p, t, fraction)
        hit += h
        total += n
    return hit / total if total else 0.0


def evaluate(predicted_frames, truth_frames) -> dict:
    """T=1 and T=2/3 reports plus GDSR for one set of frames."""
    exact = f1_at(predicted_frames, truth_frames, 1.0)
    exact.gdsr = gdsr(predicted_frames, truth_frames)
    loose = f1_at(predicted_frames, truth_frames, 2.0 / 3.0)
    loose.gdsr = exact.gdsr
    return {"T=1": exact, "T=2/3": loose}


def summarize_folds(fold_reports: Sequence[dict]) -> dict:
    """Per-fold records plus their mean, keyed like the text report."""
    rows = []
    for k, rep in enumerate(fold_reports):
        rows.append(
            {
                "fold": k + 1,
                "f1_T1": rep["T=1"].f1,
                "f1_T23": rep["T=2/3"].f1,
                "precision_T1": rep["T=1"].precision,
                "recall_T1": rep["T=1"].recall,
                "gdsr": rep["T=1"].gdsr,
                "tp": rep["T=1"].true_positives,
                "fp": rep["T=1"].false_positives,
                "fn": rep["T=1"].false_negatives,
            }
        )
    keys = ["f1_T1", "f1_T23", "precision_T1", "recall_T1", "gdsr"]
    mean = {k: sum(r[k] for r in rows) / len(rows) for k in keys} if rows else {}
    return {"folds": rows, "mean": mean}


def write_report(summary: dict, text_path, json_path) -> None:
    """Flat ``key value`` text record and a JSON file with the same numbers."""
    lines = []
    for row in summary["folds"]:
        for k, v in row.items():
            if k != "fold":
                lines.append(f"fold{row['fold']}.{k} {_fmt(v)}")
    for k, v in summary["mean"].items():
        lines.append(f"mean.{k} {_fmt(v)}")
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else str(v)
