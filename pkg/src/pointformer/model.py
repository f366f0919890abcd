"""Attention-only point cloud network.

Pipeline: point embedding (absolute + neighbor-offset GLU branches), an
iterative weight-shared transformer (Q re-projected from the previous pass,
K/V fixed from the embeddings), learnable hard grouping with a balancing
routing loss, softmax-weighted aggregation of all per-pass group vectors,
and a small classification head whose penultimate activation doubles as the
retrieval feature. Everything is built from the autodiff primitives in
``tensor.py``; there are no convolutions anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .data import knn_indices
from .errors import ConfigError, ConsistencyError, ShapeError
from .tensor import (
    Tensor,
    add,
    concat,
    gather_rows,
    layer_norm,
    log_softmax,
    matmul,
    max_reduce,
    mean,
    mul,
    relu,
    reshape,
    segment_max,
    sigmoid,
    softmax,
    tensor_sum,
    transpose,
)


@dataclass
class ModelConfig:
    """Architecture hyperparameters; defaults are the full-size network."""

    num_classes: int
    embed_dim: int = 128
    hidden_dim: int = 128
    group_feature_dim: int = 512
    num_passes: int = 4
    num_groups: int = 4
    num_heads: int = 4
    k0: int = 32
    n0: int = 1024
    second_best_prob: float = 0.1
    routing_loss_weight: float = 0.1
    label_smoothing: float = 0.2
    head_dims: tuple[int, int] = (256, 128)
    dropout: float = 0.5
    ffn_dim: int = 0  # 0 -> 2 * hidden_dim
    group_hidden_dim: int = 0  # 0 -> 2 * hidden_dim
    attn_scale: str = "points"  # "points": sqrt(N); "dim": sqrt(head_dim)

    def __post_init__(self):
        self.head_dims = tuple(self.head_dims)
        if self.ffn_dim == 0:
            self.ffn_dim = 2 * self.hidden_dim
        if self.group_hidden_dim == 0:
            self.group_hidden_dim = 2 * self.hidden_dim
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.embed_dim != self.hidden_dim:
            # Q is re-projected from pass outputs with the same shared weights
            # that consume the embeddings, so the widths must agree.
            raise ConfigError("embed_dim must equal hidden_dim (shared projections)")
        if self.embed_dim % 2:
            raise ConfigError("embed_dim must be even (two equal branches)")
        if self.hidden_dim % self.num_heads:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by "
                f"num_heads {self.num_heads}"
            )
        if self.num_passes < 1 or self.num_groups < 1:
            raise ConfigError("num_passes and num_groups must be >= 1")
        if not (0.0 <= self.second_best_prob < 1.0):
            raise ConfigError("second_best_prob must be in [0, 1)")
        if self.routing_loss_weight < 0:
            raise ConfigError("routing_loss_weight must be >= 0")
        if not (0.0 <= self.label_smoothing < 1.0):
            raise ConfigError("label_smoothing must be in [0, 1)")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError("dropout must be in [0, 1)")
        if self.attn_scale not in ("points", "dim"):
            raise ConfigError("attn_scale must be 'points' or 'dim'")
        if len(self.head_dims) != 2:
            raise ConfigError("head_dims must have exactly two entries")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    @classmethod
    def desk(cls, num_classes: int = 3) -> "ModelConfig":
        """Default config scaled to half width for CPU desk-scale runs."""
        return cls(
            num_classes=num_classes,
            embed_dim=64,
            hidden_dim=64,
            group_feature_dim=128,
            group_hidden_dim=64,
            head_dims=(128, 64),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head_dims"] = list(self.head_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["head_dims"] = tuple(d["head_dims"])
        return cls(**d)


def adaptive_k(n_points: int, config: ModelConfig) -> int:
    """Neighborhood size k0 * N / N0 (floored), clamped to [1, N-1]."""
    if n_points < 2:
        raise ConfigError("adaptive_k needs at least 2 points")
    k = (config.k0 * n_points) // config.n0
    return max(1, min(k, n_points - 1))


class ModelParams:
    """All learnable tensors, keyed by dotted names in a fixed order."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self._tensors: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        half = config.embed_dim // 2
        for branch in ("absolute", "relative"):
            self._glu(rng, f"embedding.{branch}", 3, half)
        h = config.hidden_dim
        for proj in ("q", "k", "v", "out"):
            self._linear(rng, f"transformer.{proj}", h, h)
        self._linear(rng, "transformer.ffn.1", h, config.ffn_dim)
        self._linear(rng, "transformer.ffn.2", config.ffn_dim, h)
        for ln in ("ln1", "ln2"):
            self._add(f"transformer.{ln}.gain", np.ones(h, dtype=self.dtype))
            self._add(f"transformer.{ln}.bias", np.zeros(h, dtype=self.dtype))
        self._linear(rng, "grouping.router", h, config.num_groups)
        for g in range(config.num_groups):
            self._linear(rng, f"grouping.group{g}.1", h, config.group_hidden_dim)
            self._linear(
                rng, f"grouping.group{g}.2", config.group_hidden_dim,
                config.group_feature_dim,
            )
        self._linear(rng, "aggregation.score", config.group_feature_dim, 1)
        d1, d2 = config.head_dims
        self._linear(rng, "head.fc1", config.group_feature_dim, d1)
        self._linear(rng, "head.fc2", d1, d2)
        self._linear(rng, "head.out", d2, config.num_classes)

    def _add(self, name: str, data: np.ndarray) -> None:
        self._tensors[name] = Tensor(data, requires_grad=True, dtype=self.dtype)

    def _linear(self, rng, name: str, fan_in: int, fan_out: int) -> None:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        self._add(f"{name}.w", rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        self._add(f"{name}.b", np.zeros(fan_out, dtype=self.dtype))

    def _glu(self, rng, name: str, fan_in: int, fan_out: int) -> None:
        self._linear(rng, f"{name}.value", fan_in, fan_out)
        self._linear(rng, f"{name}.gate", fan_in, fan_out)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def items(self):
        return self._tensors.items()

    def names(self) -> list[str]:
        return list(self._tensors)

    def tensors(self) -> list[Tensor]:
        return list(self._tensors.values())

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def copy_arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._tensors.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self._tensors.items():
            if name not in arrays:
                raise ShapeError(f"missing parameter '{name}'")
            arr = np.asarray(arrays[name], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ShapeError(
                    f"parameter '{name}' shape {arr.shape} != expected {t.data.shape}"
                )
            t.data[...] = arr


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def glu(x, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Gated linear unit: (x W1 + b1) * sigmoid(x W2 + b2)."""
    return mul(add(matmul(x, w1), b1), sigmoid(add(matmul(x, w2), b2)))


def _glu_named(params: ModelParams, prefix: str, x) -> Tensor:
    return glu(
        x,
        params[f"{prefix}.value.w"],
        params[f"{prefix}.value.b"],
        params[f"{prefix}.gate.w"],
        params[f"{prefix}.gate.b"],
    )


def embed_points(
    points: np.ndarray,
    knn_idx: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
) -> Tensor:
    """Per-point embeddings from absolute coordinates and neighbor offsets.

    ``points`` is (B, N, 3); ``knn_idx`` is (B, N, k) of neighbor indices
    (self excluded). The offset branch is max-pooled over the k neighbors,
    making it translation invariant; the two branches are concatenated.
    """
    if points.ndim != 3 or points.shape[-1] != 3:
        raise ShapeError(f"expected (B, N, 3) points, got {points.shape}")
    if points.shape[1] < 2:
        raise ShapeError("embedding needs at least 2 points for neighborhoods")
    points = points.astype(params.dtype, copy=False)
    b_idx = np.arange(points.shape[0])[:, None, None]
    offsets = points[b_idx, knn_idx] - points[:, :, None, :]  # (B, N, k, 3)
    absolute = _glu_named(params, "embedding.absolute", points)
    rel_all = _glu_named(params, "embedding.relative", offsets)
    relative, _ = max_reduce(rel_all, axis=2)
    return concat([absolute, relative], axis=-1)


def sdp_attention(q: Tensor, k: Tensor, v: Tensor, scale: Optional[float] = None):
    """Scalar dot-product attention Softmax(Q K^T / scale) V.

    By default the divisor is sqrt(N) with N the number of key rows (the
    sequence length), not the conventional sqrt(d); pass ``scale`` to
    override. Returns (output, attention weights).
    """
    if scale is None:
        scale = float(np.sqrt(k.shape[-2]))
    # scaling Q first is the same map as scaling the scores, on a far
    # smaller array than the N x N score matrix
    scores = matmul(mul(q, 1.0 / scale), transpose(k, _swap_last(k.ndim)))
    attn = softmax(scores, axis=-1)
    return matmul(attn, v), attn


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def _attn_divisor(config: ModelConfig, n_points: int) -> float:
    if config.attn_scale == "points":
        return float(np.sqrt(n_points))
    return float(np.sqrt(config.head_dim))


def _project_heads(x: Tensor, w: Tensor, b: Tensor, config: ModelConfig) -> Tensor:
    """(B, N, H) -> (B, heads, N, head_dim) via one shared projection."""
    bsz, n, _ = x.shape
    y = add(matmul(x, w), b)
    y = reshape(y, (bsz, n, config.num_heads, config.head_dim))
    return transpose(y, (0, 2, 1, 3))


def _mha_core(x_q: Tensor, keys: Tensor, values: Tensor, params, config):
    """Multi-head attention against precomputed per-head keys/values."""
    bsz, n, h = x_q.shape
    q = _project_heads(x_q, params["transformer.q.w"], params["transformer.q.b"], config)
    out, attn = sdp_attention(q, keys, values, scale=_attn_divisor(config, n))
    out = reshape(transpose(out, (0, 2, 1, 3)), (bsz, n, h))
    out = add(matmul(out, params["transformer.out.w"]), params["transformer.out.b"])
    return out, attn


def multi_head_attention(x_q: Tensor, x_kv: Tensor, params: ModelParams, config: ModelConfig):
    """Full MHA: project Q from ``x_q`` and K, V from ``x_kv``.

    Returns (output (B, N, hidden), attention (B, heads, N, N)).
    """
    keys = _project_heads(x_kv, params["transformer.k.w"], params["transformer.k.b"], config)
    values = _project_heads(x_kv, params["transformer.v.w"], params["transformer.v.b"], config)
    return _mha_core(x_q, keys, values, params, config)


def _transformer_pass(x: Tensor, keys: Tensor, values: Tensor, params, config):
    attn_out, attn = _mha_core(x, keys, values, params, config)
    h1 = layer_norm(
        add(x, attn_out), params["transformer.ln1.gain"], params["transformer.ln1.bias"]
    )
    f = relu(add(matmul(h1, params["transformer.ffn.1.w"]), params["transformer.ffn.1.b"]))
    f = add(matmul(f, params["transformer.ffn.2.w"]), params["transformer.ffn.2.b"])
    y = layer_norm(
        add(h1, f), params["transformer.ln2.gain"], params["transformer.ln2.bias"]
    )
    return y, attn


def iterative_transformer(embeddings: Tensor, params: ModelParams, config: ModelConfig):
    """Run the shared transformer block M times.

    K and V are projected once from the embeddings and reused in every
    pass; Q is re-projected from the previous pass output. Returns the list
    of all M pass outputs and the list of attention records.
    """
    keys = _project_heads(
        embeddings, params["transformer.k.w"], params["transformer.k.b"], config
    )
    values = _project_heads(
        embeddings, params["transformer.v.w"], params["transformer.v.b"], config
    )
    outputs, attns = [], []
    x = embeddings
    for _ in range(config.num_passes):
        x, attn = _transformer_pass(x, keys, values, params, config)
        outputs.append(x)
        attns.append(attn)
    return outputs, attns


# ---------------------------------------------------------------------------
# grouping
# ---------------------------------------------------------------------------


@dataclass
class RoutingResult:
    """Hard assignments plus the soft quantities the loss needs."""

    assignments: np.ndarray  # (B, N) group index per point
    counts: np.ndarray  # (B, G) hard occupancy
    probs: Tensor  # (B, N, G) router probabilities
    soft_occupancy: Tensor  # (B, G) summed probabilities
    hard_loss: np.ndarray  # (B,) Eq.-style loss on hard counts
    n_points: int


def routing_loss(occupancy, n_points: int) -> float:
    """Sum over groups of (N_g / N)^2 from hard counts."""
    occ = np.asarray(occupancy, dtype=np.float64)
    if occ.ndim != 1:
        raise ShapeError("occupancy must be one row of per-group counts")
    if n_points <= 0 or int(round(occ.sum())) != n_points:
        raise ConsistencyError(
            f"occupancy sums to {occ.sum()}, expected {n_points}"
        )
    frac = occ / n_points
    return float((frac * frac).sum())


def soft_routing_loss(routing: RoutingResult) -> Tensor:
    """Differentiable routing loss from summed router probabilities, (B,)."""
    frac = mul(routing.soft_occupancy, 1.0 / routing.n_points)
    return tensor_sum(mul(frac, frac), axis=-1)


def group_route(
    features: Tensor,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> RoutingResult:
    """Assign each point to one group by router argmax.

    In training mode each point is independently rerouted to its
    second-highest-probability group with probability
    ``config.second_best_prob``. Assignments are hard (non-differentiable);
    gradient reaches the router only through the soft routing loss.
    """
    bsz, n, _ = features.shape
    g = config.num_groups
    logits = add(matmul(features, params["grouping.router.w"]), params["grouping.router.b"])
    probs = softmax(logits, axis=-1)
    p = probs.data
    assignments = np.argmax(p, axis=-1)
    if training and config.second_best_prob > 0 and g > 1:
        if rng is None:
            raise ConfigError("training-mode routing needs an rng")
        order = np.argsort(-p, axis=-1, kind="stable")
        second = order[..., 1]
        flip = rng.random((bsz, n)) < config.second_best_prob
        assignments = np.where(flip, second, assignments)
    counts = np.zeros((bsz, g), dtype=np.int64)
    np.add.at(counts, (np.arange(bsz)[:, None], assignments), 1)
    soft_occ = tensor_sum(probs, axis=1)
    frac = counts / float(n)
    hard = (frac * frac).sum(axis=1)
    return RoutingResult(assignments, counts, probs, soft_occ, hard, n)


def group_features(
    features: Tensor,
    routing: RoutingResult,
    params: ModelParams,
    config: ModelConfig,
) -> Tensor:
    """Per-group feature vectors: dedicated MLP then channelwise max.

    Hard routing: each point's features flow only into its assigned group's
    pool. Groups with no members yield zero vectors (and zero gradient).
    Returns (B, G, group_feature_dim).
    """
    bsz, n, h = features.shape
    flat = reshape(features, (bsz * n, h))
    flat_assign = routing.assignments.reshape(-1)
    sample_of_row = np.repeat(np.arange(bsz), n)
    pooled_groups = []
    for g in range(config.num_groups):
        rows = np.flatnonzero(flat_assign == g)
        if rows.size:
            sub = gather_rows(flat, rows)
            hidden = relu(
                add(matmul(sub, params[f"grouping.group{g}.1.w"]),
                    params[f"grouping.group{g}.1.b"])
            )
            out = add(
                matmul(hidden, params[f"grouping.group{g}.2.w"]),
                params[f"grouping.group{g}.2.b"],
            )
            pooled = segment_max(out, sample_of_row[rows], bsz)
        else:
            pooled = Tensor(
                np.zeros((bsz, config.group_feature_dim), dtype=features.dtype)
            )
        pooled_groups.append(reshape(pooled, (bsz, 1, config.group_feature_dim)))
    return concat(pooled_groups, axis=1)


def weighted_aggregate(group_vectors: Tensor, weight: Tensor, bias: Tensor):
    """Softmax-scored convex combination of group vectors.

    ``group_vectors`` is (B, K, F); each vector gets one affine scalar score,
    scores are softmaxed across all K vectors, and the output is the
    score-weighted sum: sum(softmax(a x + b) * x). Returns (global (B, F),
    weights (B, K)).
    """
    bsz, k, f = group_vectors.shape
    scores = reshape(add(matmul(group_vectors, weight), bias), (bsz, k))
    w = softmax(scores, axis=-1)
    weighted = mul(group_vectors, reshape(w, (bsz, k, 1)))
    return tensor_sum(weighted, axis=1), w


def _dropout(x: Tensor, p: float, training: bool, rng) -> Tensor:
    if not training or p <= 0.0:
        return x
    mask = (rng.random(x.shape) >= p).astype(x.data.dtype) / np.asarray(
        1.0 - p, dtype=x.data.dtype
    )
    return mul(x, mask)


def classify_head(
    global_feature: Tensor,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
):
    """Two MLP layers with dropout, then the linear classifier.

    Returns (logits (B, C), retrieval_feature (B, head_dims[1])); the
    retrieval feature is the second MLP's output before dropout.
    """
    if training and config.dropout > 0 and rng is None:
        raise ConfigError("training-mode head needs an rng for dropout")
    h1 = relu(add(matmul(global_feature, params["head.fc1.w"]), params["head.fc1.b"]))
    h1 = _dropout(h1, config.dropout, training, rng)
    h2 = relu(add(matmul(h1, params["head.fc2.w"]), params["head.fc2.b"]))
    retrieval = h2
    h2 = _dropout(h2, config.dropout, training, rng)
    logits = add(matmul(h2, params["head.out.w"]), params["head.out.b"])
    return logits, retrieval


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def smooth_cross_entropy(logits: Tensor, labels, smoothing: float) -> Tensor:
    """Cross entropy against (1 - eps) on the true class, eps/(C-1) elsewhere.

    ``labels`` is an int or an int array of batch labels; the result is the
    batch mean.
    """
    if not (0.0 <= smoothing < 1.0):
        raise ConfigError("smoothing must be in [0, 1)")
    squeeze = logits.ndim == 1
    if squeeze:
        logits = reshape(logits, (1, logits.shape[0]))
    bsz, c = logits.shape
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if lab.shape != (bsz,):
        raise ShapeError(f"labels shape {lab.shape} does not match batch {bsz}")
    if lab.min() < 0 or lab.max() >= c:
        raise ConfigError(f"label outside [0, {c}): {lab.min()}..{lab.max()}")
    off = smoothing / (c - 1)
    target = np.full((bsz, c), off, dtype=logits.dtype)
    target[np.arange(bsz), lab] = 1.0 - smoothing
    logp = log_softmax(logits, axis=-1)
    return mul(tensor_sum(mul(logp, target)), -1.0 / bsz)


def total_loss(
    logits: Tensor,
    labels,
    routings: list[RoutingResult],
    config: ModelConfig,
) -> Tensor:
    """Smoothed classification loss plus the weighted mean routing loss."""
    loss = smooth_cross_entropy(logits, labels, config.label_smoothing)
    if config.routing_loss_weight > 0 and routings:
        per_pass = [mean(soft_routing_loss(r)) for r in routings]
        stacked = concat([reshape(t, (1,)) for t in per_pass], axis=0)
        loss = add(loss, mul(mean(stacked), config.routing_loss_weight))
    return loss


# ---------------------------------------------------------------------------
# full forward pass
# ---------------------------------------------------------------------------


@dataclass
class ForwardTrace:
    """Per-pass attention, group formation, and aggregation weights."""

    attention: list[np.ndarray] = field(default_factory=list)  # M x (B, h, N, N)
    assignments: list[np.ndarray] = field(default_factory=list)  # M x (B, N)
    counts: list[np.ndarray] = field(default_factory=list)  # M x (B, G)
    aggregation_weights: Optional[np.ndarray] = None  # (B, M*G)

    def mean_attention(self, pass_index: int) -> np.ndarray:
        """Attention received per point, averaged over heads and queries."""
        return self.attention[pass_index].mean(axis=(1, 2))


@dataclass
class ForwardResult:
    logits: Tensor
    retrieval: Tensor
    routings: list[RoutingResult]
    group_vectors: Tensor
    aggregation_weights: Tensor
    trace: Optional[ForwardTrace] = None


def forward(
    params: ModelParams,
    config: ModelConfig,
    points: np.ndarray,
    knn_idx: Optional[np.ndarray] = None,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    record_trace: bool = False,
) -> ForwardResult:
    """Run the full network on a batch of clouds (B, N, 3)."""
    points = np.asarray(points)
    if points.ndim == 2:
        points = points[None]
    if knn_idx is None:
        k = adaptive_k(points.shape[1], config)
        knn_idx = np.stack([knn_indices(p, k) for p in points])
    emb = embed_points(points, knn_idx, params, config)
    pass_outputs, attns = iterative_transformer(emb, params, config)
    routings: list[RoutingResult] = []
    vectors = []
    for feats in pass_outputs:
        routing = group_route(feats, params, config, training=training, rng=rng)
        routings.append(routing)
        vectors.append(group_features(feats, routing, params, config))
    group_vectors = concat(vectors, axis=1)  # (B, M*G, F)
    global_feature, agg_w = weighted_aggregate(
        group_vectors, params["aggregation.score.w"], params["aggregation.score.b"]
    )
    logits, retrieval = classify_head(global_feature, params, config, training, rng)
    trace = None
    if record_trace:
        trace = ForwardTrace(
            attention=[a.data for a in attns],
            assignments=[r.assignments for r in routings],
            counts=[r.counts for r in routings],
            aggregation_weights=agg_w.data,
        )
    return ForwardResult(logits, retrieval, routings, group_vectors, agg_w, trace)


class PointTransformer:
    """Convenience wrapper pairing a config with its parameters."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.params = ModelParams(config, seed=seed, dtype=dtype)

    def forward(self, points, **kwargs) -> ForwardResult:
        return forward(self.params, self.config, points, **kwargs)

    def loss(self, result: ForwardResult, labels) -> Tensor:
        return total_loss(result.logits, labels, result.routings, self.config)


# ---------------------------------------------------------------------------
# parameter accounting
# ---------------------------------------------------------------------------

_SECTIONS = ("embedding", "transformer", "grouping", "aggregation", "head")


@dataclass
class ParameterCountReport:
    per_section: dict[str, int]
    total: int
    formula: str

    def as_text(self) -> str:
        lines = ["parameter count"]
        for name, count in self.per_section.items():
            lines.append(f"  {name:12s} {count:10d}")
        lines.append(f"  {'total':12s} {self.total:10d}")
        lines.append("")
        lines.append(self.formula)
        return "\n".join(lines)


def count_parameters(params: ModelParams) -> ParameterCountReport:
    """Exact per-section parameter counts plus the closed-form formula.

    The total depends only on the config widths, never on the number of
    transformer passes (all passes share one weight set).
    """
    cfg = params.config
    per = {s: 0 for s in _SECTIONS}
    for name, t in params.items():
        per[name.split(".", 1)[0]] += t.size
    e, h, f = cfg.embed_dim, cfg.hidden_dim, cfg.ffn_dim
    gh, gf, g = cfg.group_hidden_dim, cfg.group_feature_dim, cfg.num_groups
    d1, d2 = cfg.head_dims
    c = cfg.num_classes
    formula = (
        "total(E,H,F,GH,GF,G,D1,D2,C) =\n"
        f"    embedding   2 branches * 2 linears * (3*E/2 + E/2)        = {per['embedding']}\n"
        f"    transformer 4*(H^2+H) + (H*F+F) + (F*H+H) + 2*2*H         = {per['transformer']}\n"
        f"    grouping    (H*G+G) + G*((H*GH+GH) + (GH*GF+GF))          = {per['grouping']}\n"
        f"    aggregation GF + 1                                        = {per['aggregation']}\n"
        f"    head        (GF*D1+D1) + (D1*D2+D2) + (D2*C+C)            = {per['head']}\n"
        f"  with E={e} H={h} F={f} GH={gh} GF={gf} G={g} D1={d1} D2={d2} C={c}\n"
        "  independent of the number of passes M (shared weights)."
    )
    return ParameterCountReport(per, sum(per.values()), formula)
