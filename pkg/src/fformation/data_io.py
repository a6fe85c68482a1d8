"""Corpus files, contiguous cross-validation folds and a synthetic scene generator.

Features file, one agent per line::

    frame_id agent_id x y theta

Groups file, one group per line (a single id marks an explicit singleton)::

    frame_id id1 id2 ...

Whitespace separated, UTF-8, lines starting with ``#`` are comments.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import MODES, ORIENTATION, VELOCITY, Agent, Scene, derive_velocities
from .partition import GroupPartition


class ParseError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path, self.lineno = path, lineno


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Corpus:
    scenes: tuple
    mode: str = ORIENTATION
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "scenes", tuple(self.scenes))
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        fids = [s.frame_id for s in self.scenes]
        if len(set(fids)) != len(fids):
            raise ValueError("frame ids must be unique within a corpus")

    def __len__(self):
        return len(self.scenes)

    def subset(self, indices) -> list:
        return [self.scenes[k] for k in indices]


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line.split()


def _read_features(path, mode):
    frames: dict = {}
    for lineno, tok in _lines(path):
        if len(tok) not in (4, 5):
            raise ParseError(path, lineno, f"expected 'frame agent x y [theta]', got {len(tok)} fields")
        fid, aid = tok[0], tok[1]
        try:
            nums = [float(v) for v in tok[2:]]
        except ValueError:
            raise ParseError(path, lineno, "non-numeric coordinate") from None
        if not all(math.isfinite(v) for v in nums):
            raise ParseError(path, lineno, "non-finite coordinate")
        if mode == ORIENTATION and len(nums) < 3:
            raise ParseError(path, lineno, "orientation mode needs a theta column")
        heading = nums[2] if len(nums) == 3 and mode == ORIENTATION else None
        agents = frames.setdefault(fid, {})
        if aid in agents:
            raise ParseError(path, lineno, f"duplicate agent {aid!r} in frame {fid!r}")
        agents[aid] = Agent(aid, (nums[0], nums[1]), heading)
    return frames


def read_groups(path, frames: Optional[dict] = None) -> dict:
    """``frame_id -> list of id lists`` in file order.

    With ``frames`` (``frame_id -> known agent ids``) every reference is
    validated.
    """
    groups: dict = {}
    for lineno, tok in _lines(path):
        fid, members = tok[0], tok[1:]
        if not members:
            raise ParseError(path, lineno, "group line without members")
        if frames is not None:
            if fid not in frames:
                raise ParseError(path, lineno, f"unknown frame {fid!r}")
            unknown = [m for m in members if m not in frames[fid]]
            if unknown:
                raise ParseError(path, lineno, f"ids {unknown} not present in frame {fid!r}")
        if len(set(members)) != len(members):
            raise ParseError(path, lineno, "repeated id inside a group")
        seen = {m for g in groups.get(fid, []) for m in g}
        if seen & set(members):
            raise ParseError(path, lineno, f"ids {sorted(seen & set(members))} already grouped in frame {fid!r}")
        groups.setdefault(fid, []).append(members)
    return groups


def parse_corpus(features_path, groups_path=None, mode: str = ORIENTATION, name: str = "", strict: bool = False) -> Corpus:
    """Read a corpus; frames absent from the groups file get all-singleton truth.

    In velocity mode the theta column is ignored and velocities are derived
    from consecutive frames. ``strict`` turns missing frames into errors.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    frames = _read_features(features_path, mode)
    groups = None
    if groups_path is not None:
        groups = read_groups(groups_path, {f: set(a) for f, a in frames.items()})
    scenes = []
    for fid, agents in frames.items():
        truth = None
        if groups is not None:
            if strict and fid not in groups:
                raise ParseError(groups_path, 0, f"frame {fid!r} has no group annotation")
            truth = GroupPartition.from_groups(groups.get(fid, []), agents)
        scenes.append(Scene(fid, tuple(agents.values()), truth))
    if mode == VELOCITY:
        scenes = derive_velocities(scenes)
    return Corpus(tuple(scenes), mode, name)


def _num(v: float) -> str:
    return f"{v:.9g}"


def write_features(scenes: Sequence[Scene], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in scenes:
            for a in s.agents:
                fields = [s.frame_id, a.id, _num(a.position[0]), _num(a.position[1])]
                if a.heading is not None:
                    fields.append(_num(a.heading))
                fh.write(" ".join(fields) + "\n")


def write_groups(frames: Sequence, path) -> None:
    """``frames`` is a sequence of ``(frame_id, GroupPartition)``; singletons get their own line."""
    with open(path, "w", encoding="utf-8") as fh:
        for fid, part in frames:
            for g in part.groups:
                fh.write(" ".join([fid] + sorted(g)) + "\n")
            for s in sorted(part.singletons):
                fh.write(f"{fid} {s}\n")


def write_metadata(corpus: Corpus, path, provenance: Optional[dict] = None) -> None:
    meta = {"name": corpus.name, "mode": corpus.mode, "scenes": len(corpus), "provenance": provenance or {}}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def serialize_corpus(corpus: Corpus, features_path, groups_path) -> None:
    write_features(corpus.scenes, features_path)
    write_groups([(s.frame_id, s.ground_truth) for s in corpus.scenes if s.ground_truth is not None], groups_path)


def partitions_from_groups_file(path, universes: Optional[dict] = None) -> dict:
    """``frame_id -> GroupPartition``; without ``universes`` a frame's ids are those listed."""
    raw = read_groups(path)
    out = {}
    frames = set(raw) | set(universes or {})
    for fid in frames:
        listed = raw.get(fid, [])
        uni = set(universes[fid]) if universes and fid in universes else {m for g in listed for m in g}
        out[fid] = GroupPartition.from_groups(listed, uni)
    return out


# ---------------------------------------------------------------------------
# folds


@dataclass(frozen=True)
class Fold:
    train: tuple
    validation: tuple
    test: tuple


@dataclass(frozen=True)
class FoldSplit:
    fold_count: int
    assignments: tuple  # test-block index of every scene
    folds: tuple


def _blocks(n: int, k: int) -> list:
    base, extra = divmod(n, k)
    out, start = [], 0
    for b in range(k):
        size = base + (1 if b < extra else 0)
        out.append((start, start + size))
        start += size
    return out


def make_folds(corpus_or_size, fold_count: int = 5, val_fraction: float = 0.15) -> FoldSplit:
    """Contiguous test blocks; validation is the window of non-test scenes farthest from the test block."""
    n = corpus_or_size if isinstance(corpus_or_size, int) else len(corpus_or_size)
    if fold_count < 1 or n < fold_count:
        raise ValueError(f"cannot cut {n} scenes into {fold_count} folds")
    blocks = _blocks(n, fold_count)
    assignments = [0] * n
    folds = []
    for b, (lo, hi) in enumerate(blocks):
        for k in range(lo, hi):
            assignments[k] = b
        rest = n - (hi - lo)
        v = int(math.floor(val_fraction * rest + 0.5)) if rest > 1 else 0
        val = ()
        if v:
            best = None
            # windows must sit entirely before or entirely after the test block
            for seg_lo, seg_hi in ((0, lo), (hi, n)):
                for start in range(seg_lo, seg_hi - v + 1):
                    end = start + v
                    dist = lo - (end - 1) if end <= lo else start - (hi - 1)
                    if best is None or dist > best[0]:
                        best = (dist, start)
            if best is None:
                # neither side is long enough: take the far end of the longer side
                if lo >= n - hi:
                    best = (0, 0)
                    v = lo
                else:
                    best = (0, hi)
                    v = n - hi
            val = tuple(range(best[1], best[1] + v))
        test = tuple(range(lo, hi))
        taken = set(test) | set(val)
        train = tuple(k for k in range(n) if k not in taken)
        folds.append(Fold(train, val, test))
    return FoldSplit(fold_count, tuple(assignments), tuple(folds))


# ---------------------------------------------------------------------------
# synthetic F-formations


@dataclass
class SynthConfig:
    scenes: int = 1000
    agents: tuple = (4, 8)  # inclusive range of people per scene
    groups: tuple = (1, 3)  # inclusive range of groups per scene
    distractors: tuple = (0, 8)  # inclusive range, clipped to what the agent count allows
    radius: tuple = (0.5, 1.2)  # o-space radius range in metres
    sigma_theta: float = 0.15
    sigma_x: float = 0.05
    arena: float = 10.0  # side of the square the scene lives in
    group_gap: float = 0.5  # extra clearance between neighbouring circles
    distractor_clearance: float = 1.5  # minimum distance from any o-space centre
    distractor_margin: float = 0.0  # minimum distance beyond the circle itself
    distractor_spacing: float = 1.0  # minimum distance between distractors
    onlooker_fraction: float = 0.0  # share of distractors facing the nearest o-space centre
    max_retries: int = 200

    def __post_init__(self):
        self.agents = tuple(int(v) for v in self.agents)
        self.groups = tuple(int(v) for v in self.groups)
        self.distractors = tuple(int(v) for v in self.distractors)
        self.radius = tuple(float(v) for v in self.radius)
        if self.agents[0] < 1 or self.agents[0] > self.agents[1]:
            raise ValueError("bad agent range")
        if self.groups[0] < 0 or self.groups[0] > self.groups[1]:
            raise ValueError("bad group range")
        if self.distractors[0] < 0 or self.distractors[0] > self.distractors[1]:
            raise ValueError("bad distractor range")
        if not 0 < self.radius[0] <= self.radius[1] or 2 * self.radius[1] >= self.arena:
            raise ValueError("radius range must be positive and fit inside the arena")
        if 2 * self.groups[0] + self.distractors[0] > self.agents[1]:
            raise GenerationError("no agent count can hold the minimum groups and distractors")


def _scene_layout(cfg: SynthConfig, rng: np.random.Generator):
    """Pick (group sizes, distractor count) consistent with the configured ranges."""
    options = []
    for n in range(cfg.agents[0], cfg.agents[1] + 1):
        for g in range(cfg.groups[0], cfg.groups[1] + 1):
            for d in range(cfg.distractors[0], cfg.distractors[1] + 1):
                if 2 * g + d <= n and (g > 0 or d == n):
                    options.append((n, g, d))
    if not options:
        raise GenerationError("no feasible (agents, groups, distractors) combination")
    # uniform over agent count first, then over the feasible splits
    counts = sorted({o[0] for o in options})
    n = counts[rng.integers(len(counts))]
    sub = [o for o in options if o[0] == n]
    _, g, d = sub[rng.integers(len(sub))]
    sizes = [2] * g
    for _ in range(n - d - 2 * g):
        sizes[rng.integers(g)] += 1
    return sizes, d


def _place_scene(cfg: SynthConfig, rng: np.random.Generator, sizes, n_distractors):
    half = cfg.arena / 2.0
    for _ in range(cfg.max_retries):
        circles = []
        ok = True
        for _size in sizes:
            r = rng.uniform(*cfg.radius)
            for _try in range(50):
                c = rng.uniform(-half + r, half - r, size=2)
                if all(np.linalg.norm(c - c2) >= r + r2 + cfg.group_gap for c2, r2 in circles):
                    circles.append((c, r))
                    break
            else:
                ok = False
                break
        if not ok:
            continue
        spots = []
        for _d in range(n_distractors):
            for _try in range(100):
                p = rng.uniform(-half, half, size=2)
                far = all(
                    np.linalg.norm(p - c) >= max(cfg.distractor_clearance, r + cfg.distractor_margin)
                    for c, r in circles
                )
                if far and all(np.linalg.norm(p - q) >= cfg.distractor_spacing for q in spots):
                    spots.append(p)
                    break
            else:
                ok = False
                break
        if ok:
            return circles, spots
    raise GenerationError(
        f"could not place {len(sizes)} groups and {n_distractors} distractors in a {cfg.arena} m arena"
    )


def synth_scene(cfg: SynthConfig, rng: np.random.Generator, frame_id: str, sizes=None, n_distractors=None) -> Scene:
    if sizes is None:
        sizes, n_distractors = _scene_layout(cfg, rng)
    circles, spots = _place_scene(cfg, rng, sizes, n_distractors)
    agents, groups = [], []
    k = 0
    for size, (c, r) in zip(sizes, circles):
        phase = rng.uniform(0, 2 * math.pi)
        members = []
        for m in range(size):
            ang = phase + 2 * math.pi * m / size
            pos = c + r * np.array([math.cos(ang), math.sin(ang)]) + rng.normal(0, cfg.sigma_x, 2)
            heading = ang + math.pi + rng.normal(0, cfg.sigma_theta)
            aid = f"p{k}"
            k += 1
            agents.append(Agent(aid, (float(pos[0]), float(pos[1])), heading))
            members.append(aid)
        groups.append(members)
    for p in spots:
        pos = p + rng.normal(0, cfg.sigma_x, 2)
        heading = rng.uniform(0, 2 * math.pi)
        if circles and rng.random() < cfg.onlooker_fraction:
            c = min((c for c, _ in circles), key=lambda c: np.linalg.norm(p - c))
            heading = math.atan2(c[1] - p[1], c[0] - p[0]) + rng.normal(0, cfg.sigma_theta)
        aid = f"p{k}"
        k += 1
        agents.append(Agent(aid, (float(pos[0]), float(pos[1])), heading))
    # shuffle agent order so position in the list carries no label information
    order = rng.permutation(len(agents))
    agents = [agents[i] for i in order]
    truth = GroupPartition.from_groups(groups, [a.id for a in agents])
    return Scene(frame_id, tuple(agents), truth)


def generate_synthetic(config: SynthConfig = SynthConfig(), seed: int = 0, name: str = "synthetic") -> Corpus:
    """Independent scenes of circular F-formations plus non-interacting distractors."""
    rng = np.random.default_rng(seed)
    scenes = [synth_scene(config, rng, f"f{t:05d}") for t in range(config.scenes)]
    return Corpus(tuple(scenes), ORIENTATION, name)


def synth_config_to_json(cfg: SynthConfig) -> dict:
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
