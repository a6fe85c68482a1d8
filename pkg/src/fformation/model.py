"""The pairwise affinity network and its training loop.

For an ordered dyad (i, j) every agent is expressed in the dyad's canonical
frame. The two dyad members go through a shared MLP, the remaining agents go
through a second MLP followed by a max-pool, and a third MLP maps the
concatenation to a sigmoid affinity.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import nn
from .geometry import (
    ORIENTATION,
    Scene,
    augment_flip_vertical,
    augment_rotate180,
    encode_scene_pairs,
)

log = logging.getLogger(__name__)

FEATURE_DIM = 4
SYMMETRIZE_MODES = ("flip", "swap")


@dataclass(frozen=True)
class ModelConfig:
    dyad_widths: tuple = (64, 64)
    context_widths: tuple = (64, 128, 128)
    combiner_widths: tuple = (256, 64)
    use_context: bool = True
    mode: str = ORIENTATION
    position_scale: float = 1.0  # uniform factor on world coordinates before encoding

    def __post_init__(self):
        for name in ("dyad_widths", "context_widths", "combiner_widths"):
            widths = tuple(int(w) for w in getattr(self, name))
            if any(w < 1 for w in widths):
                raise ValueError(f"{name} must be positive")
            object.__setattr__(self, name, widths)
        if not self.dyad_widths or (self.use_context and not self.context_widths):
            raise ValueError("dyad and context MLPs need at least one layer")
        if not (self.position_scale > 0 and math.isfinite(self.position_scale)):
            raise ValueError("position_scale must be a positive finite number")

    @property
    def d_dyad(self) -> int:
        return self.dyad_widths[-1]

    @property
    def d_context(self) -> int:
        return self.context_widths[-1] if self.use_context else 0

    @property
    def combiner_in(self) -> int:
        return 2 * self.d_dyad + self.d_context


@dataclass
class ModelParams:
    config: ModelConfig
    dyad_mlp: list
    context_mlp: list
    combiner_mlp: list  # hidden ReLU layers followed by the width-1 sigmoid head

    def __post_init__(self):
        cfg = self.config
        if self.combiner_mlp[0].in_dim != cfg.combiner_in:
            raise nn.ShapeError(
                f"combiner expects {self.combiner_mlp[0].in_dim} inputs, dyad+context give {cfg.combiner_in}"
            )
        head = self.combiner_mlp[-1]
        if head.out_dim != 1 or head.activation != "sigmoid":
            raise nn.ShapeError("combiner must end in a width-1 sigmoid layer")
        for mlp in (self.dyad_mlp, self.context_mlp, self.combiner_mlp):
            for a, b in zip(mlp, mlp[1:]):
                if a.out_dim != b.in_dim:
                    raise nn.ShapeError("consecutive layer widths do not line up")

    @classmethod
    def init(cls, config: ModelConfig = ModelConfig(), seed: int = 0) -> "ModelParams":
        rng = np.random.default_rng(seed)

        def stack(in_dim, widths, acts):
            layers = []
            for w, act in zip(widths, acts):
                layers.append(nn.DenseLayer.init(in_dim, w, act, rng))
                in_dim = w
            return layers

        dyad = stack(FEATURE_DIM, config.dyad_widths, ["relu"] * len(config.dyad_widths))
        context = []
        if config.use_context:
            context = stack(FEATURE_DIM, config.context_widths, ["relu"] * len(config.context_widths))
        widths = list(config.combiner_widths) + [1]
        comb = stack(config.combiner_in, widths, ["relu"] * len(config.combiner_widths) + ["sigmoid"])
        return cls(config, dyad, context, comb)

    def layers(self) -> list:
        return list(self.dyad_mlp) + list(self.context_mlp) + list(self.combiner_mlp)

    def arrays(self) -> list:
        """Every trainable array, in a fixed order (weights then bias per layer)."""
        out = []
        for layer in self.layers():
            out += [layer.weights, layer.bias]
        return out

    def copy(self) -> "ModelParams":
        def cp(mlp):
            return [nn.DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in mlp]

        return ModelParams(self.config, cp(self.dyad_mlp), cp(self.context_mlp), cp(self.combiner_mlp))

    def save(self, path, extra: Optional[dict] = None) -> None:
        header = {"config": _config_to_json(self.config), "activations": {}}
        tensors = {}
        for part in ("dyad_mlp", "context_mlp", "combiner_mlp"):
            header["activations"][part] = [l.activation for l in getattr(self, part)]
            for k, layer in enumerate(getattr(self, part)):
                tensors[f"{part}.{k}.weights"] = layer.weights
                tensors[f"{part}.{k}.bias"] = layer.bias
        if extra:
            header["extra"] = extra
        nn.save_archive(path, header, tensors)

    @classmethod
    def load(cls, path):
        """Return ``(params, extra)``; shapes are validated against the stored config."""
        header, tensors = nn.load_archive(path)
        config = ModelConfig(**header["config"])
        template = cls.init(config)
        parts = {}
        for part in ("dyad_mlp", "context_mlp", "combiner_mlp"):
            acts = header["activations"][part]
            expected = getattr(template, part)
            if len(acts) != len(expected):
                raise ValueError(f"{path}: {part} has {len(acts)} layers, config implies {len(expected)}")
            layers = []
            for k, (act, ref) in enumerate(zip(acts, expected)):
                w = tensors[f"{part}.{k}.weights"]
                b = tensors[f"{part}.{k}.bias"]
                if w.shape != ref.weights.shape or b.shape != ref.bias.shape:
                    raise ValueError(f"{path}: {part}.{k} has shape {w.shape}, expected {ref.weights.shape}")
                layers.append(nn.DenseLayer(w, b, act))
            parts[part] = layers
        return cls(config, **parts), header.get("extra", {})


def _config_to_json(config: ModelConfig) -> dict:
    d = asdict(config)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


# ---------------------------------------------------------------------------
# forward / backward on padded batches


def dyad_transform(f_i, f_j, params: ModelParams) -> np.ndarray:
    """Shared dyad MLP applied to each member; outputs concatenated as (i, j)."""
    return np.concatenate([nn.mlp_apply(params.dyad_mlp, f_i), nn.mlp_apply(params.dyad_mlp, f_j)], axis=-1)


def context_transform(features, params: ModelParams) -> np.ndarray:
    """Per-agent context MLP followed by a max-pool; no context gives zeros."""
    features = np.asarray(features, dtype=np.float64).reshape(-1, FEATURE_DIM)
    if not params.config.use_context:
        return np.zeros(0)
    if len(features) == 0:
        return np.zeros(params.config.d_context)
    h = nn.mlp_apply(params.context_mlp, features)
    return nn.masked_max_pool(h, np.ones(len(h), dtype=bool))[0]


def forward_batch(params: ModelParams, dyad, context, mask):
    """Affinities for a padded batch.

    ``dyad`` is (B, 2, 4), ``context`` (B, M, 4) and ``mask`` (B, M) marks
    real context rows. Returns ``(p, cache)`` with ``p`` of shape (B,).
    """
    dyad = np.asarray(dyad, dtype=np.float64)
    B = dyad.shape[0]
    hd, dcache = nn.mlp_forward(params.dyad_mlp, dyad)
    pieces = [hd.reshape(B, -1)]
    ccache = None
    if params.config.use_context:
        context = np.asarray(context, dtype=np.float64).reshape(B, -1, FEATURE_DIM)
        mask = np.asarray(mask, dtype=bool).reshape(B, -1)
        if context.shape[1]:
            hc, cc = nn.mlp_forward(params.context_mlp, context)
        else:
            hc, cc = np.zeros((B, 0, params.config.d_context)), None
        pooled, arg = nn.masked_max_pool(hc, mask)
        pieces.append(pooled)
        ccache = (cc, arg, context.shape[1])
    z = np.concatenate(pieces, axis=-1)
    out, bcache = nn.mlp_forward(params.combiner_mlp, z)
    return out[:, 0], (dcache, ccache, bcache)


def backward_batch(params: ModelParams, cache, grad_logit) -> list:
    """Gradients of ``sum(grad_logit * logit)``, aligned with ``params.arrays()``."""
    if cache is None:
        raise nn.UsageError("backward called without a cached forward pass")
    dcache, ccache, bcache = cache
    g = np.asarray(grad_logit, dtype=np.float64)[:, None]
    B = g.shape[0]
    cfg = params.config
    comb_grads, gz = nn.mlp_backward(params.combiner_mlp, bcache, g, logit_grad=True)
    gd = gz[:, : 2 * cfg.d_dyad].reshape(B, 2, cfg.d_dyad)
    dyad_grads, _ = nn.mlp_backward(params.dyad_mlp, dcache, gd)
    ctx_grads = []
    if cfg.use_context:
        cc, arg, n_rows = ccache
        gpool = gz[:, 2 * cfg.d_dyad :]
        if cc is None:
            ctx_grads = [(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in params.context_mlp]
        else:
            ghc = nn.max_pool_backward(gpool, arg, n_rows)
            ctx_grads, _ = nn.mlp_backward(params.context_mlp, cc, ghc)
    out = []
    for w, b in dyad_grads + ctx_grads + comb_grads:
        out += [w, b]
    return out


def loss_and_grads(params: ModelParams, dyad, context, mask, labels):
    """Mean log loss over the batch and its gradient for every parameter."""
    p, cache = forward_batch(params, dyad, context, mask)
    labels = np.asarray(labels, dtype=np.float64)
    loss = float(np.mean(nn.bce_loss(p, labels)))
    grads = backward_batch(params, cache, nn.bce_grad_logit(p, labels) / len(labels))
    return loss, grads


# ---------------------------------------------------------------------------
# scene-level inference


def _pair_inputs(scene: Scene, pairs: np.ndarray, mode: str, scale: float = 1.0):
    """Dyad and context features for each ordered pair of agent indices."""
    n = len(scene)
    enc = encode_scene_pairs(scene.positions() * scale, scene.directions(mode), pairs)
    P = len(pairs)
    rows = np.arange(P)[:, None]
    dyad = enc[rows, pairs]  # (P, 2, 4)
    all_idx = np.broadcast_to(np.arange(n), (P, n))
    keep = (all_idx != pairs[:, :1]) & (all_idx != pairs[:, 1:])
    others = all_idx[keep].reshape(P, n - 2)
    context = enc[rows, others]  # (P, n-2, 4)
    return dyad, context


def ordered_pairs(n: int) -> np.ndarray:
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    off = i != j
    return np.stack([i[off], j[off]], axis=-1)


def forward_affinity(scene: Scene, i, j, params: ModelParams) -> float:
    """Predicted probability that agents ``i`` and ``j`` share a group."""
    if len(scene) < 2:
        raise ValueError(f"frame {scene.frame_id}: need at least two agents")
    if i == j:
        raise ValueError("a dyad needs two distinct agents")
    pairs = np.array([[scene.index(i), scene.index(j)]])
    dyad, context = _pair_inputs(scene, pairs, params.config.mode, params.config.position_scale)
    p, _ = forward_batch(params, dyad, context, np.ones(context.shape[:2], dtype=bool))
    return float(p[0])


def directed_affinities(scene: Scene, params: ModelParams) -> np.ndarray:
    """N x N matrix of raw directed predictions a_ij (diagonal zero)."""
    n = len(scene)
    out = np.zeros((n, n))
    if n < 2:
        return out
    pairs = ordered_pairs(n)
    dyad, context = _pair_inputs(scene, pairs, params.config.mode, params.config.position_scale)
    p, _ = forward_batch(params, dyad, context, np.ones(context.shape[:2], dtype=bool))
    out[pairs[:, 0], pairs[:, 1]] = p
    return out


@dataclass(frozen=True)
class AffinityMatrix:
    ids: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        n = len(self.ids)
        if v.shape != (n, n):
            raise ValueError(f"affinity matrix shape {v.shape} does not match {n} ids")
        if not np.array_equal(v, v.T) or np.any(np.diag(v) != 0):
            raise ValueError("affinity matrix must be symmetric with zero diagonal")
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "values", v)


def affinity_matrix(scene: Scene, params: ModelParams, symmetrize: str = "flip") -> AffinityMatrix:
    """Symmetric edge weights for a scene.

    ``swap`` averages a_ij and a_ji. ``flip`` additionally averages in the
    predictions made on the mirrored scene, so each entry is the mean of four
    directed predictions.
    """
    if symmetrize not in SYMMETRIZE_MODES:
        raise ValueError(f"symmetrize must be one of {SYMMETRIZE_MODES}")
    n = len(scene)
    if n < 2:
        return AffinityMatrix(tuple(scene.ids), np.zeros((n, n)))
    a = directed_affinities(scene, params)
    if symmetrize == "flip":
        m = directed_affinities(augment_flip_vertical(scene), params)
        a = (a + m) / 2.0
    iu, ju = np.triu_indices(n, k=1)
    sym = np.zeros((n, n))
    vals = (a[iu, ju] + a[ju, iu]) / 2.0
    sym[iu, ju] = vals
    sym[ju, iu] = vals
    return AffinityMatrix(tuple(scene.ids), sym)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    augment_flip: bool = True
    augment_rotate180: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass
class PairDataset:
    """Padded ordered-pair examples: dyad (E,2,4), context (E,M,4), counts, labels."""

    dyad: np.ndarray
    context: np.ndarray
    n_context: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def batch(self, idx):
        m = int(self.n_context[idx].max()) if len(idx) else 0
        ctx = self.context[idx, :m]
        mask = np.arange(m)[None, :] < self.n_context[idx][:, None]
        return self.dyad[idx], ctx, mask, self.labels[idx]


def build_dataset(scenes: Sequence[Scene], mode: str, flip=True, rotate180=False, scale: float = 1.0) -> PairDataset:
    """Every ordered pair of every labelled scene (plus augmented copies)."""
    variants = []
    for s in scenes:
        if s.ground_truth is None:
            raise ValueError(f"frame {s.frame_id}: training needs ground truth")
        batch = [s]
        if rotate180:
            batch.append(augment_rotate180(s))
        if flip:
            batch += [augment_flip_vertical(v) for v in batch]
        variants += batch
    dyads, ctxs, counts, labels = [], [], [], []
    max_ctx = max((len(s) - 2 for s in variants), default=0)
    max_ctx = max(max_ctx, 0)
    for s in variants:
        n = len(s)
        if n < 2:
            continue
        pairs = ordered_pairs(n)
        dyad, context = _pair_inputs(s, pairs, mode, scale)
        pad = np.zeros((len(pairs), max_ctx, FEATURE_DIM))
        pad[:, : n - 2] = context
        ids = s.ids
        gt = s.ground_truth
        lab = np.array([gt.same_group(ids[a], ids[b]) for a, b in pairs], dtype=np.float64)
        dyads.append(dyad)
        ctxs.append(pad)
        counts.append(np.full(len(pairs), n - 2))
        labels.append(lab)
    if not dyads:
        return PairDataset(np.zeros((0, 2, 4)), np.zeros((0, max_ctx, 4)), np.zeros(0, int), np.zeros(0))
    return PairDataset(np.concatenate(dyads), np.concatenate(ctxs), np.concatenate(counts), np.concatenate(labels))


def dataset_loss(params: ModelParams, data: PairDataset, chunk: int = 4096) -> float:
    if len(data) == 0:
        return float("nan")
    total = 0.0
    for start in range(0, len(data), chunk):
        idx = np.arange(start, min(start + chunk, len(data)))
        dyad, ctx, mask, lab = data.batch(idx)
        p, _ = forward_batch(params, dyad, ctx, mask)
        total += float(nn.bce_loss(p, lab).sum())
    return total / len(data)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1


def train(
    train_scenes: Sequence[Scene],
    val_scenes: Sequence[Scene],
    model_config: ModelConfig = ModelConfig(),
    config: TrainConfig = TrainConfig(),
    params: Optional[ModelParams] = None,
):
    """Fit the affinity network with Adam on mean log loss.

    Keeps the parameters with the lowest validation loss and stops after
    ``patience`` epochs without improvement. Without validation scenes the
    final epoch's parameters are returned. Returns ``(params, history)``.
    """
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = ModelParams.init(model_config, seed=int(rng.integers(2**31)))
    mode, scale = params.config.mode, params.config.position_scale
    train_data = build_dataset(train_scenes, mode, config.augment_flip, config.augment_rotate180, scale)
    val_data = build_dataset(val_scenes, mode, config.augment_flip, config.augment_rotate180, scale)
    if len(train_data) == 0:
        raise ValueError("no training pairs (every scene has fewer than two agents)")
    arrays = params.arrays()
    state = nn.AdamState.zeros_like(arrays, learning_rate=config.learning_rate)
    history = TrainHistory()
    best, best_loss, stale = params.copy(), math.inf, 0
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_data))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = loss_and_grads(params, *train_data.batch(idx))
            nn.adam_step(arrays, grads, state)
            total += loss * len(idx)
        history.train_loss.append(total / len(train_data))
        if len(val_data):
            vl = dataset_loss(params, val_data)
            history.val_loss.append(vl)
            log.info("epoch %d train %.5f val %.5f", epoch, history.train_loss[-1], vl)
            if vl < best_loss:
                best, best_loss, stale = params.copy(), vl, 0
                history.best_epoch = epoch
            else:
                stale += 1
                if stale >= config.patience:
                    break
        else:
            log.info("epoch %d train %.5f", epoch, history.train_loss[-1])
            best = params
            history.best_epoch = epoch
    return best, history
