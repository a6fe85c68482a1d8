"""Command-line entry point: ``synth``, ``train``, ``detect``, ``tune-threshold``, ``eval``.

Settings resolve as built-in defaults < ``--config`` JSON < command-line
flags, and every command writes the resolved settings next to its outputs.
Exit status: 0 on success, 2 for bad input, 3 for an internal invariant
violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import clustering, data_io, evaluation, experiment
from .geometry import MODES, ModeError
from .model import ModelConfig, ModelParams, TrainConfig

log = logging.getLogger("fformation")

EXIT_INPUT = 2
EXIT_INTERNAL = 3

DEFAULTS = {
    "synth": {
        "seed": 0,
        "scenes": 1000,
        "agents": [4, 8],
        "groups": [1, 3],
        "distractors": [0, 8],
        "sigma_theta": 0.15,
        "sigma_x": 0.05,
        "name": "synthetic",
        "generator": {},
    },
    "train": {
        "mode": "orientation",
        "folds": 5,
        "seed": 0,
        "no_context": False,
        "learning_rate": 1e-4,
        "batch_size": 64,
        "max_epochs": 200,
        "patience": 10,
        "dyad_widths": [64, 64],
        "context_widths": [64, 128, 128],
        "combiner_widths": [256, 64],
        "position_scale": 1.0,
        "symmetrize": "flip",
        "strict": False,
    },
    "detect": {"mode": None, "threshold": None, "jobs": 1, "dump_affinity": None, "symmetrize": None},
    "tune-threshold": {"mode": None, "jobs": 1, "symmetrize": None},
    "eval": {"folds": 1, "features": None, "mode": "orientation"},
}


class InputError(ValueError):
    pass


def _widths(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fformation", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with settings for this command")
        p.add_argument("--out", help="output directory or file")
        return p

    p = common(sub.add_parser("synth", help="write a synthetic F-formation corpus"))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scenes", type=int, default=None)
    p.add_argument("--agents", type=int, nargs=2, default=None, metavar=("MIN", "MAX"))
    p.add_argument("--groups", type=int, nargs=2, default=None, metavar=("MIN", "MAX"))
    p.add_argument("--distractors", type=int, nargs=2, default=None, metavar=("MIN", "MAX"))
    p.add_argument("--sigma-theta", type=float, default=None)
    p.add_argument("--sigma-x", type=float, default=None)
    p.add_argument("--name", default=None)

    p = common(sub.add_parser("train", help="cross-validated training with per-fold threshold tuning"))
    p.add_argument("--features", default=None)
    p.add_argument("--groups", default=None)
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-context", action="store_true", default=None, help="dyad-only ablation")
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--dyad-widths", type=_widths, default=None)
    p.add_argument("--context-widths", type=_widths, default=None)
    p.add_argument("--combiner-widths", type=_widths, default=None)
    p.add_argument("--position-scale", type=float, default=None, help="multiply coordinates by this before encoding")
    p.add_argument("--symmetrize", choices=("flip", "swap"), default=None)
    p.add_argument("--strict", action="store_true", default=None, help="every frame must appear in the groups file")

    p = common(sub.add_parser("detect", help="detect groups with a trained checkpoint"))
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--features", default=None)
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--dump-affinity", default=None, help="write per-frame affinity matrices here")
    p.add_argument("--symmetrize", choices=("flip", "swap"), default=None)

    p = common(sub.add_parser("tune-threshold", help="pick the stop threshold on labelled data"))
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--features", default=None)
    p.add_argument("--groups", default=None)
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--symmetrize", choices=("flip", "swap"), default=None)

    p = common(sub.add_parser("eval", help="score predicted groups against ground truth"))
    p.add_argument("--groups", default=None, help="ground-truth groups file")
    p.add_argument("--pred", default=None, help="predicted groups file")
    p.add_argument("--features", default=None, help="features file naming every agent per frame")
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--folds", type=int, default=None)
    return parser


def resolve(args) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS[args.command]))
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise InputError(f"{args.config}: expected a JSON object")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key in ("command", "config", "verbose") or value is None:
            continue
        cfg[key] = value
    cfg["command"] = args.command
    return cfg


def _require(cfg, *keys):
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise InputError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _snapshot(cfg, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_synth(cfg):
    _require(cfg, "out")
    gen = dict(cfg.get("generator") or {})
    synth = data_io.SynthConfig(
        scenes=cfg["scenes"],
        agents=cfg["agents"],
        groups=cfg["groups"],
        distractors=cfg["distractors"],
        sigma_theta=cfg["sigma_theta"],
        sigma_x=cfg["sigma_x"],
        **gen,
    )
    corpus = data_io.generate_synthetic(synth, seed=cfg["seed"], name=cfg["name"])
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    data_io.serialize_corpus(corpus, os.path.join(out, "features.txt"), os.path.join(out, "groups.txt"))
    provenance = {"generator": data_io.synth_config_to_json(synth), "seed": cfg["seed"]}
    data_io.write_metadata(corpus, os.path.join(out, "meta.json"), provenance)
    _snapshot(cfg, os.path.join(out, "resolved_config.json"))
    print(f"wrote {len(corpus)} scenes to {out}")


def _load_corpus(cfg, mode):
    _require(cfg, "features", "groups")
    return data_io.parse_corpus(
        cfg["features"], cfg["groups"], mode, name=os.path.basename(cfg["features"]), strict=bool(cfg.get("strict"))
    )


def cmd_train(cfg):
    _require(cfg, "out")
    corpus = _load_corpus(cfg, cfg["mode"])
    if cfg["folds"] < 2:
        raise InputError("--folds must be at least 2")
    model_cfg = ModelConfig(
        tuple(cfg["dyad_widths"]),
        tuple(cfg["context_widths"]),
        tuple(cfg["combiner_widths"]),
        use_context=not cfg["no_context"],
        mode=cfg["mode"],
        position_scale=cfg["position_scale"],
    )
    train_cfg = TrainConfig(
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        max_epochs=cfg["max_epochs"],
        patience=cfg["patience"],
        seed=cfg["seed"],
    )
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    _snapshot(cfg, os.path.join(out, "resolved_config.json"))
    summary = experiment.cross_validate(corpus, cfg["folds"], model_cfg, train_cfg, out, cfg["symmetrize"])
    for row in summary["folds"]:
        print(f"fold {row['fold']}: threshold {row['threshold']:.2f}  F1(T=1) {row['f1_T1']:.4f}  GDSR {row['gdsr']:.4f}")
    print(f"mean: F1(T=1) {summary['mean']['f1_T1']:.4f}  F1(T=2/3) {summary['mean']['f1_T23']:.4f}  GDSR {summary['mean']['gdsr']:.4f}")


def _load_checkpoint(cfg):
    _require(cfg, "checkpoint", "features")
    params, extra = ModelParams.load(cfg["checkpoint"])
    mode = cfg.get("mode") or params.config.mode
    if mode != params.config.mode:
        raise ModeError(
            f"checkpoint {cfg['checkpoint']} was trained on {params.config.mode} features, refusing {mode} input"
        )
    symmetrize = cfg.get("symmetrize") or extra.get("symmetrize", "flip")
    return params, extra, mode, symmetrize


def write_affinities(frames, path):
    """Per frame: ``# frame_id id1 id2 ...`` then N rows of N values."""
    with open(path, "w", encoding="utf-8") as fh:
        for fid, aff in frames:
            fh.write("# " + " ".join([fid] + list(aff.ids)) + "\n")
            for row in aff.values:
                fh.write(" ".join(f"{v:.6f}" for v in row) + "\n")


def cmd_detect(cfg):
    _require(cfg, "out")
    params, extra, mode, symmetrize = _load_checkpoint(cfg)
    threshold = cfg.get("threshold")
    if threshold is None:
        threshold = extra.get("threshold")
    if threshold is None:
        raise InputError("checkpoint carries no tuned threshold; pass --threshold")
    corpus = data_io.parse_corpus(cfg["features"], None, mode)
    results = experiment.detect_all(corpus.scenes, params, float(threshold), symmetrize, max(1, int(cfg["jobs"])))
    data_io.write_groups([(s.frame_id, p) for s, (_, p) in zip(corpus.scenes, results)], cfg["out"])
    if cfg.get("dump_affinity"):
        write_affinities([(s.frame_id, a) for s, (a, _) in zip(corpus.scenes, results)], cfg["dump_affinity"])
    cfg["threshold"] = float(threshold)
    _snapshot(cfg, cfg["out"] + ".config.json")
    print(f"wrote groups for {len(corpus)} frames to {cfg['out']}")


def cmd_tune(cfg):
    params, extra, mode, symmetrize = _load_checkpoint(cfg)
    corpus = _load_corpus(cfg, mode)
    threshold = experiment.tune_on(corpus.scenes, params, symmetrize)
    result = {"threshold": threshold}
    if cfg.get("out"):
        extra = dict(extra)
        extra["threshold"] = threshold
        params.save(cfg["out"], extra)
        _snapshot(cfg, cfg["out"] + ".config.json")
    print(json.dumps(result))


def cmd_eval(cfg):
    _require(cfg, "groups", "pred", "out")
    universes = None
    order = None
    if cfg.get("features"):
        corpus = data_io.parse_corpus(cfg["features"], None, cfg.get("mode") or "orientation")
        universes = {s.frame_id: s.ids for s in corpus.scenes}
        order = [s.frame_id for s in corpus.scenes]
    truth_raw = data_io.read_groups(cfg["groups"])
    pred_raw = data_io.read_groups(cfg["pred"])
    if order is None:
        order = list(dict.fromkeys(list(truth_raw) + list(pred_raw)))
    else:
        unknown = (set(truth_raw) | set(pred_raw)) - set(order)
        if unknown:
            raise InputError(f"group files mention frames missing from the features file: {sorted(unknown)[:5]}")
    if universes is None:
        # both files together define who was in each frame
        universes = {}
        for fid in order:
            ids = {m for g in truth_raw.get(fid, []) + pred_raw.get(fid, []) for m in g}
            universes[fid] = ids
    truth = [data_io.GroupPartition.from_groups(truth_raw.get(f, []), universes[f]) for f in order]
    pred = [data_io.GroupPartition.from_groups(pred_raw.get(f, []), universes[f]) for f in order]
    if cfg["folds"] < 1 or cfg["folds"] > max(1, len(order)):
        raise InputError(f"cannot split {len(order)} frames into {cfg['folds']} folds")
    reports = []
    if cfg["folds"] == 1:
        reports.append(evaluation.evaluate(pred, truth))
    else:
        for fold in data_io.make_folds(len(order), cfg["folds"]).folds:
            reports.append(evaluation.evaluate([pred[k] for k in fold.test], [truth[k] for k in fold.test]))
    summary = evaluation.summarize_folds(reports)
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    evaluation.write_report(summary, os.path.join(out, "report.txt"), os.path.join(out, "report.json"))
    _snapshot(cfg, os.path.join(out, "resolved_config.json"))
    m = summary["mean"]
    print(f"F1(T=1) {m['f1_T1']:.4f}  F1(T=2/3) {m['f1_T23']:.4f}  GDSR {m['gdsr']:.4f}")


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "detect": cmd_detect,
    "tune-threshold": cmd_tune,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
        COMMANDS[args.command](cfg)
    except (OSError, ValueError, KeyError, data_io.GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (AssertionError, np.linalg.LinAlgError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
