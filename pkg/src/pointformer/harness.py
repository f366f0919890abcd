"""Training, evaluation, retrieval, and robustness harness."""

from __future__ import annotations

import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import save_checkpoint
from .corruptions import build_robustness_suite, corrupt_dataset
from .data import (
    LabeledDataset,
    PointCloud,
    SamplingSpec,
    apply_sampling,
    augment_array,
    knn_indices,
    stable_seed,
)
from .errors import ConfigError, DataError, RetrievalError
from .io import load_dataset
from .model import (
    ModelConfig,
    ModelParams,
    adaptive_k,
    count_parameters,
    forward,
    total_loss,
)
from .optim import Adam
from .tensor import Tape

WORKERS_ENV = "POINTFORMER_WORKERS"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def lr_at_epoch(base_lr: float, decay: float, every: int, epoch: int) -> float:
    """Step schedule: base * decay^(epoch // every), epoch counted from 0."""
    return base_lr * decay ** (epoch // every)


@dataclass
class TrainConfig:
    model: ModelConfig
    train_data: str = ""
    val_data: str = ""
    test_data: str = ""
    checkpoint_dir: str = "runs/default"
    lr: float = 0.001
    batch_size: int = 18
    lr_decay: float = 0.7
    lr_decay_every: int = 20
    max_epochs: int = 100
    sample_method: str = "farthest"
    sample_count: int = 1024
    augment: bool = True
    seed: int = 0
    val_fraction: float = 0.1  # carved from train when no val_data given
    target_val_acc: Optional[float] = None  # early stop threshold

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if not (0 < self.lr_decay <= 1):
            raise ConfigError("lr_decay must be in (0, 1]")
        if self.lr_decay_every < 1:
            raise ConfigError("lr_decay_every must be >= 1")


# ---------------------------------------------------------------------------
# config file parsing: line-oriented `key = value`
# ---------------------------------------------------------------------------

_MODEL_KEYS = {
    "num_classes": int,
    "embed_dim": int,
    "hidden_dim": int,
    "group_feature_dim": int,
    "group_hidden_dim": int,
    "ffn_dim": int,
    "num_passes": int,
    "num_groups": int,
    "num_heads": int,
    "k0": int,
    "n0": int,
    "second_best_prob": float,
    "routing_loss_weight": float,
    "label_smoothing": float,
    "dropout": float,
    "attn_scale": str,
}

_TRAIN_KEYS = {
    "train_data": str,
    "val_data": str,
    "test_data": str,
    "checkpoint_dir": str,
    "lr": float,
    "batch_size": int,
    "lr_decay": float,
    "lr_decay_every": int,
    "max_epochs": int,
    "sample_method": str,
    "sample_count": int,
    "augment": bool,
    "seed": int,
    "val_fraction": float,
    "target_val_acc": float,
}


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def parse_train_config(path) -> TrainConfig:
    """Parse a `key = value` config file (blank lines and # comments ok).

    Model keys and training keys share one flat namespace; ``head_dims``
    takes two comma-separated integers.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    model_kwargs: dict = {}
    train_kwargs: dict = {}
    for ln, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        try:
            if key == "head_dims":
                model_kwargs["head_dims"] = tuple(int(v) for v in value.split(","))
            elif key in _MODEL_KEYS:
                typ = _MODEL_KEYS[key]
                model_kwargs[key] = _parse_bool(value) if typ is bool else typ(value)
            elif key in _TRAIN_KEYS:
                typ = _TRAIN_KEYS[key]
                train_kwargs[key] = _parse_bool(value) if typ is bool else typ(value)
            else:
                raise ConfigError(f"{path}:{ln}: unknown key '{key}'")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{path}:{ln}: bad value for '{key}': {exc}") from exc
    if "num_classes" not in model_kwargs:
        raise ConfigError(f"{path}: missing required key 'num_classes'")
    return TrainConfig(model=ModelConfig(**model_kwargs), **train_kwargs)


# ---------------------------------------------------------------------------
# batch preparation
# ---------------------------------------------------------------------------


@dataclass
class PreparedSample:
    points: np.ndarray  # (N, 3) float32, normalized
    label: int
    knn: np.ndarray  # (N, k)
    id: str


def prepare_dataset(
    dataset: LabeledDataset, config: ModelConfig, sampling: Optional[SamplingSpec]
) -> list[PreparedSample]:
    """Sample each cloud to a fixed size and cache its neighbor indices.

    Neighbor indices survive the training augmentation unchanged: a single
    per-cloud uniform scale plus translation preserves nearest-neighbor
    order, so the kNN is computed once here.
    """
    prepared = []
    for pc in dataset.samples:
        if sampling is not None:
            pc = apply_sampling(pc, sampling)
        if pc.label is None:
            raise DataError(f"sample '{pc.id}' has no label")
        k = adaptive_k(pc.n_points, config)
        prepared.append(PreparedSample(pc.points, pc.label, knn_indices(pc.points, k), pc.id))
    return prepared


def _batches(samples: list[PreparedSample], batch_size: int):
    """Yield equal-point-count batches, preserving order within groups."""
    by_n: dict[int, list[PreparedSample]] = {}
    for s in samples:
        by_n.setdefault(s.points.shape[0], []).append(s)
    for n in sorted(by_n):
        group = by_n[n]
        for i in range(0, len(group), batch_size):
            yield group[i : i + batch_size]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalResult:
    accuracy: float
    per_class: dict[str, float]
    n_samples: int
    ids: list[str]
    labels: np.ndarray
    predictions: np.ndarray
    logits: np.ndarray


def _eval_batch(batch, params, config):
    pts = np.stack([s.points for s in batch])
    knn = np.stack([s.knn for s in batch])
    result = forward(params, config, pts, knn, training=False)
    return result.logits.data, result.retrieval.data


def evaluate(
    params: ModelParams,
    config: ModelConfig,
    dataset: LabeledDataset,
    sampling: Optional[SamplingSpec] = None,
    batch_size: int = 32,
) -> EvalResult:
    """Eval-mode accuracy (no dropout, no stochastic routing, no augment)."""
    if len(dataset.class_names) != config.num_classes:
        raise ConfigError(
            f"model expects {config.num_classes} classes, dataset has "
            f"{len(dataset.class_names)}"
        )
    prepared = prepare_dataset(dataset, config, sampling)
    batches = list(_batches(prepared, batch_size))
    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(lambda b: _eval_batch(b, params, config), batches))
    else:
        outs = [_eval_batch(b, params, config) for b in batches]
    ids, labels, logits = [], [], []
    for batch, (batch_logits, _) in zip(batches, outs):
        ids.extend(s.id for s in batch)
        labels.extend(s.label for s in batch)
        logits.append(batch_logits)
    labels = np.array(labels, dtype=np.int64)
    logits = np.concatenate(logits, axis=0)
    preds = np.argmax(logits, axis=1)
    acc = float((preds == labels).mean())
    per_class = {}
    for c, name in enumerate(dataset.class_names):
        mask = labels == c
        if mask.any():
            per_class[name] = float((preds[mask] == c).mean())
    return EvalResult(acc, per_class, len(labels), ids, labels, preds, logits)


# ---------------------------------------------------------------------------
# metrics report
# ---------------------------------------------------------------------------


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_acc: float


@dataclass
class MetricsReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = 0.0
    test_accuracy: Optional[float] = None
    per_class: Optional[dict[str, float]] = None
    corruption_rows: Optional[list[tuple[str, float]]] = None
    retrieval_map: Optional[float] = None
    wall_time_s: float = 0.0
    param_count: int = 0

    def to_text(self) -> str:
        lines = ["epoch  lr          train_loss  train_acc  val_acc"]
        for e in self.epochs:
            lines.append(
                f"{e.epoch:5d}  {e.lr:<10.6f}  {e.train_loss:<10.4f}  "
                f"{e.train_acc:<9.4f}  {e.val_acc:.4f}"
            )
        lines.append(f"best epoch {self.best_epoch} (val_acc {self.best_val_acc:.4f})")
        if self.test_accuracy is not None:
            lines.append(f"test accuracy {self.test_accuracy:.4f}")
        if self.per_class:
            for name, acc in self.per_class.items():
                lines.append(f"  class {name}: {acc:.4f}")
        if self.corruption_rows:
            lines.append("corruption accuracy:")
            for name, acc in self.corruption_rows:
                lines.append(f"  {name}: {acc:.4f}")
        if self.retrieval_map is not None:
            lines.append(f"retrieval MAP {self.retrieval_map:.4f}")
        lines.append(f"parameters {self.param_count}")
        lines.append(f"wall time {self.wall_time_s:.1f}s")
        return "\n".join(lines)

    def to_tsv(self) -> str:
        lines = ["epoch\tlr\ttrain_loss\ttrain_acc\tval_acc"]
        for e in self.epochs:
            lines.append(
                f"{e.epoch}\t{e.lr!r}\t{e.train_loss!r}\t{e.train_acc!r}\t{e.val_acc!r}"
            )
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint_path: Path
    report: MetricsReport
    params: ModelParams


def _split_validation(dataset: LabeledDataset, fraction: float, seed: int):
    rng = np.random.default_rng(stable_seed(seed, "val-split"))
    order = rng.permutation(len(dataset.samples))
    n_val = max(1, int(round(fraction * len(order))))
    val_idx = set(order[:n_val].tolist())
    train = [s for i, s in enumerate(dataset.samples) if i not in val_idx]
    val = [s for i, s in enumerate(dataset.samples) if i in val_idx]
    return (
        LabeledDataset(train, dataset.class_names, split="train"),
        LabeledDataset(val, dataset.class_names, split="val"),
    )


def train(
    config: TrainConfig,
    train_set: Optional[LabeledDataset] = None,
    val_set: Optional[LabeledDataset] = None,
    test_set: Optional[LabeledDataset] = None,
    log=None,
) -> TrainResult:
    """Mini-batch Adam training with step-decayed learning rate.

    Datasets may be passed directly or via manifest paths in ``config``.
    The checkpoint with the best validation accuracy (earliest epoch on
    ties) is retained and evaluated on the test split. Fixed seeds make the
    whole trajectory reproducible in single-worker mode.
    """
    t_start = time.perf_counter()
    if train_set is None:
        train_set = load_dataset(config.train_data, split="train")
    if val_set is None and config.val_data:
        val_set = load_dataset(config.val_data, split="val")
    if test_set is None and config.test_data:
        test_set = load_dataset(config.test_data, split="test")
    if val_set is None:
        train_set, val_set = _split_validation(train_set, config.val_fraction, config.seed)

    mcfg = config.model
    if len(train_set.class_names) != mcfg.num_classes:
        raise ConfigError(
            f"model expects {mcfg.num_classes} classes, train data has "
            f"{len(train_set.class_names)}"
        )
    sampling = (
        None
        if config.sample_method == "none"
        else SamplingSpec(config.sample_method, config.sample_count, config.seed)
    )
    prepared = prepare_dataset(train_set, mcfg, sampling)

    params = ModelParams(mcfg, seed=stable_seed(config.seed, "init"))
    optimizer = Adam(params.tensors(), lr=config.lr)
    rng = np.random.default_rng(stable_seed(config.seed, "train"))

    report = MetricsReport(param_count=count_parameters(params).total)
    best_arrays = params.copy_arrays()
    best_val, best_epoch = -1.0, -1

    for epoch in range(config.max_epochs):
        optimizer.lr = lr_at_epoch(config.lr, config.lr_decay, config.lr_decay_every, epoch)
        order = rng.permutation(len(prepared))
        epoch_loss, correct, seen = 0.0, 0, 0
        for start in range(0, len(order), config.batch_size):
            batch = [prepared[i] for i in order[start : start + config.batch_size]]
            if config.augment:
                pts = np.stack([augment_array(s.points, rng) for s in batch])
            else:
                pts = np.stack([s.points for s in batch])
            knn = np.stack([s.knn for s in batch])
            labels = np.array([s.label for s in batch], dtype=np.int64)
            with Tape() as tape:
                result = forward(params, mcfg, pts, knn, training=True, rng=rng)
                loss = total_loss(result.logits, labels, result.routings, mcfg)
            tape.backward(loss)
            optimizer.step()
            optimizer.zero_grad()
            bsz = len(batch)
            epoch_loss += float(loss.data) * bsz
            correct += int((np.argmax(result.logits.data, axis=1) == labels).sum())
            seen += bsz
        val_res = evaluate(params, mcfg, val_set, sampling)
        stats = EpochStats(
            epoch,
            optimizer.lr,
            epoch_loss / max(seen, 1),
            correct / max(seen, 1),
            val_res.accuracy,
        )
        report.epochs.append(stats)
        if log:
            log(
                f"epoch {epoch:3d} lr {stats.lr:.6f} loss {stats.train_loss:.4f} "
                f"train_acc {stats.train_acc:.3f} val_acc {stats.val_acc:.3f}"
            )
        if val_res.accuracy > best_val:
            best_val, best_epoch = val_res.accuracy, epoch
            best_arrays = params.copy_arrays()
        if config.target_val_acc is not None and val_res.accuracy >= config.target_val_acc:
            break

    params.load_arrays(best_arrays)
    report.best_epoch, report.best_val_acc = best_epoch, best_val
    ckpt_dir = Path(config.checkpoint_dir)
    ckpt_path = save_checkpoint(ckpt_dir / "best.ptck", params)
    if test_set is not None:
        test_res = evaluate(params, mcfg, test_set, sampling)
        report.test_accuracy = test_res.accuracy
        report.per_class = test_res.per_class
    report.wall_time_s = time.perf_counter() - t_start
    (ckpt_dir / "metrics.txt").write_text(report.to_text() + "\n")
    (ckpt_dir / "metrics.tsv").write_text(report.to_tsv() + "\n")
    return TrainResult(ckpt_path, report, params)


# ---------------------------------------------------------------------------
# retrieval
# ---------------------------------------------------------------------------


@dataclass
class RetrievalIndex:
    features: np.ndarray  # (S, D) unit rows
    labels: np.ndarray
    ids: list[str]


@dataclass
class RetrievalScore:
    mean_ap: float
    average_precisions: list[float]
    rankings: list[np.ndarray]


def build_retrieval_index(
    params: ModelParams,
    config: ModelConfig,
    dataset: LabeledDataset,
    sampling: Optional[SamplingSpec] = None,
    batch_size: int = 32,
) -> RetrievalIndex:
    """Unit-normalized penultimate-layer features for every sample."""
    prepared = prepare_dataset(dataset, config, sampling)
    feats, labels, ids = [], [], []
    for batch in _batches(prepared, batch_size):
        _, retrieval = _eval_batch(batch, params, config)
        feats.append(retrieval)
        labels.extend(s.label for s in batch)
        ids.extend(s.id for s in batch)
    features = np.concatenate(feats, axis=0).astype(np.float64)
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    features = features / np.maximum(norms, 1e-12)
    return RetrievalIndex(features, np.array(labels, dtype=np.int64), ids)


def retrieve_and_score(
    index: RetrievalIndex,
    queries: RetrievalIndex,
    exclude_matching_id: bool = True,
) -> RetrievalScore:
    """Rank the index by cosine similarity per query and compute MAP.

    AP per query = mean over its relevant ranks r of
    (relevant retrieved in top r) / r, relevance being label equality.
    Queries with no relevant index entries are skipped.
    """
    if index.features.shape[0] == 0:
        raise RetrievalError("empty retrieval index")
    if index.features.shape[1] != queries.features.shape[1]:
        raise RetrievalError(
            f"feature dims differ: index {index.features.shape[1]}, "
            f"query {queries.features.shape[1]}"
        )
    aps, rankings = [], []
    sims_all = queries.features @ index.features.T
    for qi in range(queries.features.shape[0]):
        sims = sims_all[qi]
        keep = np.ones(len(index.ids), dtype=bool)
        if exclude_matching_id:
            keep = np.array([iid != queries.ids[qi] for iid in index.ids])
        cand = np.flatnonzero(keep)
        # stable sort on -sim keeps index order on exact ties
        ranked = cand[np.argsort(-sims[cand], kind="stable")]
        rankings.append(ranked)
        rel = index.labels[ranked] == queries.labels[qi]
        if not rel.any():
            continue
        hits = 0
        precisions = []
        for rank, is_rel in enumerate(rel, 1):
            if is_rel:
                hits += 1
                precisions.append(hits / rank)
        aps.append(sum(precisions) / len(precisions))
    if not aps:
        raise RetrievalError("no query had a relevant index entry")
    return RetrievalScore(sum(aps) / len(aps), aps, rankings)


# ---------------------------------------------------------------------------
# robustness
# ---------------------------------------------------------------------------


@dataclass
class RobustnessReport:
    rows: list[tuple[str, float]]
    partial_query_map: Optional[float]

    def to_text(self) -> str:
        lines = [f"  {name}: {acc:.4f}" for name, acc in self.rows]
        if self.partial_query_map is not None:
            lines.append(f"  partial_query retrieval MAP: {self.partial_query_map:.4f}")
        return "corruption accuracy:\n" + "\n".join(lines)


def run_robustness(
    params: ModelParams,
    config: ModelConfig,
    dataset: LabeledDataset,
    seed: int = 0,
    with_retrieval: bool = True,
    batch_size: int = 32,
) -> RobustnessReport:
    """Accuracy on every corruption suite entry plus partial-query MAP.

    The reference protocol trains on 2048 points without augmentation; the
    training provenance is not recorded in checkpoints, so only the
    observable part (point count) is checked here.
    """
    n_points = dataset.samples[0].n_points if dataset.samples else 0
    if n_points != 2048:
        warnings.warn(
            f"robustness protocol expects 2048-point clouds trained without "
            f"augmentation; got {n_points}-point clouds",
            stacklevel=2,
        )
    suite = build_robustness_suite(dataset, seed)
    rows = []
    for name, ds in suite:
        rows.append((name, evaluate(params, config, ds, sampling=None, batch_size=batch_size).accuracy))
    partial_map = None
    if with_retrieval:
        index = build_retrieval_index(params, config, dataset, None, batch_size)
        partial = corrupt_dataset(dataset, "partial_query", seed)
        queries = build_retrieval_index(params, config, partial, None, batch_size)
        partial_map = retrieve_and_score(index, queries).mean_ap
    return RobustnessReport(rows, partial_map)


# ---------------------------------------------------------------------------
# trace export
# ---------------------------------------------------------------------------


def export_trace(params: ModelParams, config: ModelConfig, pc: PointCloud, out_dir) -> Path:
    """Write per-pass attention/grouping/aggregation tables for one cloud.

    ``attention_pass<m>.txt``: point index and the attention it receives,
    averaged over heads and query points. ``groups_pass<m>.txt``: point
    index and assigned group. ``aggregation.txt``: pass, group, softmax
    weight. Deterministic for a fixed checkpoint and cloud.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = forward(params, config, pc.points[None], training=False, record_trace=True)
    trace = result.trace
    m = config.num_passes
    g = config.num_groups
    for p in range(m):
        mean_attn = trace.mean_attention(p)[0]
        lines = [f"{i} {v:.8f}" for i, v in enumerate(mean_attn)]
        (out_dir / f"attention_pass{p + 1}.txt").write_text("\n".join(lines) + "\n")
        assign = trace.assignments[p][0]
        lines = [f"{i} {int(v)}" for i, v in enumerate(assign)]
        (out_dir / f"groups_pass{p + 1}.txt").write_text("\n".join(lines) + "\n")
    weights = trace.aggregation_weights[0]
    lines = [f"{i // g + 1} {i % g} {w:.8f}" for i, w in enumerate(weights)]
    (out_dir / "aggregation.txt").write_text("\n".join(lines) + "\n")
    return out_dir
