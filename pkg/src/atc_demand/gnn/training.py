"""Fold training, k-fold cross-validation and the model/ensemble containers."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigError, DataError, NumericError
from ..graphs import DEFAULT_FL_BUFFER, ScenarioGraph, build_graphs
from ..rng import substream
from ..scenario import NormalizationStats, Scenario, fit_normalization
from .loss import pinball_loss, total_loss
from .model import QUANTILES, GraphBatch, ModelDims, ModelParams, backward, forward, init_params
from .optim import AdamWState, adamw_step
from .sampling import draw, weighted_sampler

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = "atc-demand-ckpt/1"
EVAL_CHUNK = 256


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    quantiles: tuple[float, ...] = QUANTILES
    bucket_percentiles: tuple[float, ...] = (10, 50, 90)
    loss_mix: float = 0.5
    seed: int = 0
    fl_buffer: float = DEFAULT_FL_BUFFER
    hidden: int = 64
    head_hidden: int = 32
    val_fraction: float = 0.2
    patience: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "quantiles", tuple(float(q) for q in self.quantiles))
        object.__setattr__(self, "bucket_percentiles", tuple(float(q) for q in self.bucket_percentiles))
        q = self.quantiles
        if len(q) != 3 or not all(0 < a < b < 1 for a, b in zip(q, q[1:])) or not 0 < q[0]:
            raise ConfigError(f"quantiles must be three strictly increasing values in (0, 1), got {q}")
        if not 1 <= self.epochs <= 50:
            raise ConfigError(f"epochs must be in 1..50, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.loss_mix <= 1.0:
            raise ConfigError("loss_mix must lie in [0, 1]")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")

    @property
    def dims(self) -> ModelDims:
        return ModelDims(hidden=self.hidden, head_hidden=self.head_hidden)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["quantiles"] = list(self.quantiles)
        d["bucket_percentiles"] = list(self.bucket_percentiles)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass
class ModelCheckpoint:
    params: ModelParams
    stats: NormalizationStats
    config: TrainConfig
    fold: int = 0
    trace: list = field(default_factory=list)
    version: str = CHECKPOINT_VERSION
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stats.node_dim != self.params.dims.node_dim:
            raise DataError("normalisation manifest length does not match the model's node dimension")

    def predict_raw(self, graphs: Sequence[ScenarioGraph]):
        """Raw (unsorted) node and graph quantiles for many graphs, encoded with this model's stats."""
        nodes, totals = [], []
        for start in range(0, len(graphs), EVAL_CHUNK):
            chunk = [g.with_stats(self.stats) for g in graphs[start:start + EVAL_CHUNK]]
            batch = GraphBatch(chunk)
            y_node, y_graph = forward(self.params, batch)
            nodes.extend(np.split(y_node, np.cumsum(batch.sizes)[:-1]))
            totals.append(y_graph)
        return nodes, np.vstack(totals) if totals else np.zeros((0, 3))


def postprocess(q: np.ndarray) -> np.ndarray:
    """Sort quantiles ascending, then clamp at zero."""
    return np.maximum(np.sort(q, axis=-1), 0.0)


@dataclass
class Prediction:
    """Ensemble output for a list of graphs (quantiles sorted, clamped, member-averaged)."""

    graph_quantiles: np.ndarray            # (n_graphs, 3)
    node_quantiles: list                   # per graph (n_nodes, 3)
    crossing_rate: float = 0.0             # fraction of raw graph outputs with crossed quantiles

    @property
    def graph_median(self) -> np.ndarray:
        return self.graph_quantiles[:, 1]

    @property
    def node_medians(self) -> list:
        return [q[:, 1] for q in self.node_quantiles]


class Ensemble:
    """Members (normally one per cross-validation fold) whose post-processed outputs are averaged."""

    def __init__(self, members: Sequence[ModelCheckpoint]):
        members = list(members)
        if not members:
            raise ConfigError("an ensemble needs at least one member")
        dims = members[0].params.dims
        manifest = members[0].stats.manifest
        for m in members[1:]:
            if m.params.dims != dims:
                raise ConfigError("ensemble members have different architectures")
            if m.stats.manifest != manifest:
                raise ConfigError("ensemble members have different feature manifests")
        self.members = members

    def __len__(self) -> int:
        return len(self.members)

    def predict(self, graphs: Sequence[ScenarioGraph]) -> Prediction:
        graphs = list(graphs)
        if not graphs:
            return Prediction(np.zeros((0, 3)), [], 0.0)
        g_acc = None
        n_acc = None
        crossed = 0
        for m in self.members:
            nodes, totals = m.predict_raw(graphs)
            crossed += int(np.sum(np.any(np.diff(totals, axis=1) < 0, axis=1)))
            totals = postprocess(totals)
            nodes = [postprocess(q) for q in nodes]
            if g_acc is None:
                g_acc, n_acc = totals, nodes
            else:
                g_acc = g_acc + totals
                n_acc = [a + b for a, b in zip(n_acc, nodes)]
        k = len(self.members)
        return Prediction(g_acc / k, [a / k for a in n_acc], crossed / (k * len(graphs)))

    def predict_scenario_totals(self, graphs: Sequence[ScenarioGraph]) -> np.ndarray:
        return self.predict(graphs).graph_median


def ensemble_predict(e: Ensemble, graph: ScenarioGraph) -> tuple[np.ndarray, float]:
    """(node medians, graph median) for one graph."""
    pred = e.predict([graph])
    return pred.node_medians[0], float(pred.graph_median[0])


def as_ensemble(model) -> Ensemble:
    if isinstance(model, Ensemble):
        return model
    if isinstance(model, ModelCheckpoint):
        return Ensemble([model])
    return Ensemble(list(model))


# --- training ---------------------------------------------------------------

def _dataset_loss(params: ModelParams, batches: Sequence[GraphBatch], config: TrainConfig):
    """Total loss and graph-median MAE over a whole dataset (node and graph means taken globally)."""
    node_sum = node_n = graph_sum = graph_n = 0.0
    abs_err = 0.0
    for b in batches:
        y_node, y_graph = forward(params, b)
        node_sum += float(pinball_loss(b.y_node, y_node, config.quantiles).sum())
        graph_sum += float(pinball_loss(b.y_graph, y_graph, config.quantiles).sum())
        node_n += b.n_nodes
        graph_n += b.n_graphs
        abs_err += float(np.abs(postprocess(y_graph)[:, 1] - b.y_graph).sum())
    loss = config.loss_mix * node_sum / node_n + (1.0 - config.loss_mix) * graph_sum / graph_n
    return loss, abs_err / graph_n


def _chunked_batches(graphs: Sequence[ScenarioGraph], size: int = EVAL_CHUNK) -> list[GraphBatch]:
    return [GraphBatch(graphs[i:i + size], require_labels=True) for i in range(0, len(graphs), size)]


def train_fold(train: Sequence[Scenario], val: Sequence[Scenario], config: TrainConfig = TrainConfig(),
               fold: int = 0) -> ModelCheckpoint:
    """Train one model; keep the parameters of the epoch with the lowest validation loss.

    Normalisation statistics are fitted on ``train`` only. Epoch 0 in the trace
    is the untrained initialisation, which also competes for "best".
    """
    train = list(train)
    val = list(val)
    if not train or not val:
        raise DataError("train_fold needs non-empty train and validation sets")
    if any(s.labels is None for s in train + val):
        raise DataError("train_fold needs labelled scenarios")
    ids_train = {id(s) for s in train}
    if any(id(s) in ids_train for s in val):
        raise DataError("train and validation sets overlap")

    stats = fit_normalization(train, config.fl_buffer)
    train_graphs = build_graphs(train, stats, config.fl_buffer)
    val_batches = _chunked_batches(build_graphs(val, stats, config.fl_buffer))
    params = init_params(config.dims, substream(config.seed, "init", fold))
    sampler = weighted_sampler([g.label_total for g in train_graphs], config.bucket_percentiles,
                               substream(config.seed, "sampler", fold))
    state = AdamWState.zeros_like(params)

    val_loss, val_mae = _dataset_loss(params, val_batches, config)
    trace = [{"epoch": 0, "train_loss": None, "val_loss": val_loss, "val_mae": val_mae}]
    best = (val_loss, 0, params.copy())
    stale = 0
    for epoch in range(1, config.epochs + 1):
        order = draw(sampler, len(train_graphs))
        running = 0.0
        steps = 0
        for start in range(0, len(order), config.batch_size):
            batch = GraphBatch([train_graphs[i] for i in order[start:start + config.batch_size]],
                               require_labels=True)
            y_node, y_graph, cache = forward(params, batch, keep_cache=True)
            loss, d_node, d_graph = total_loss(y_node, y_graph, batch.y_node, batch.y_graph,
                                               config.loss_mix, config.quantiles, with_grad=True)
            if not math.isfinite(loss):
                raise NumericError(f"fold {fold}: training diverged at epoch {epoch}; trace={trace}")
            grads = backward(params, batch, cache, d_node, d_graph)
            adamw_step(params, grads, state, config.learning_rate, config.weight_decay)
            running += loss
            steps += 1
        val_loss, val_mae = _dataset_loss(params, val_batches, config)
        if not math.isfinite(val_loss):
            raise NumericError(f"fold {fold}: validation loss diverged at epoch {epoch}; trace={trace}")
        trace.append({"epoch": epoch, "train_loss": running / steps, "val_loss": val_loss, "val_mae": val_mae})
        log.info("fold %d epoch %d train %.4f val %.4f mae %.3f", fold, epoch, running / steps, val_loss, val_mae)
        if val_loss < best[0]:
            best = (val_loss, epoch, params.copy())
            stale = 0
        else:
            stale += 1
            if config.patience is not None and stale >= config.patience:
                break
    ckpt = ModelCheckpoint(best[2], stats, config, fold, trace)
    ckpt.metadata["best_epoch"] = best[1]
    return ckpt


@dataclass
class FoldReport:
    fold: int
    n_train: int
    n_val: int
    n_test: int
    test_mae: float
    test_ci95: float
    best_epoch: int
    test_indices: list


@dataclass
class CrossValidationResult:
    ensemble: Ensemble
    folds: list

    @property
    def checkpoints(self) -> list:
        return self.ensemble.members


def fold_splits(n: int, k: int, seed: int, val_fraction: float = 0.2):
    """Deterministic (train, val, test) index arrays; every index is in exactly one test split."""
    if n < k:
        raise DataError(f"need at least {k} scenarios for {k}-fold cross-validation, got {n}")
    perm = substream(seed, "fold-split").permutation(n)
    tests = np.array_split(perm, k)
    splits = []
    for f in range(k):
        rest = np.concatenate([tests[j] for j in range(k) if j != f])
        rest = substream(seed, "val-split", f).permutation(rest)
        n_val = max(1, int(round(val_fraction * len(rest))))
        splits.append((np.sort(rest[n_val:]), np.sort(rest[:n_val]), np.sort(tests[f])))
    return splits


def _run_fold(args):
    scenarios, split, config, fold = args
    train_idx, val_idx, _ = split
    return train_fold([scenarios[i] for i in train_idx], [scenarios[i] for i in val_idx], config, fold)


def cross_validate(dataset: Sequence[Scenario], k: int = 5, config: TrainConfig = TrainConfig(),
                   workers: int = 1) -> CrossValidationResult:
    """Train k fold models; each is validated on its own split and tested on its held-out fold."""
    from ..analysis import mae_with_ci

    dataset = list(dataset)
    splits = fold_splits(len(dataset), k, config.seed, config.val_fraction)
    jobs = [(dataset, splits[f], config, f) for f in range(k)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            members = list(pool.map(_run_fold, jobs))
    else:
        members = [_run_fold(job) for job in jobs]
    reports = []
    for f, (ckpt, (tr, va, te)) in enumerate(zip(members, splits)):
        test = [dataset[i] for i in te]
        graphs = build_graphs(test, ckpt.stats, config.fl_buffer)
        pred = Ensemble([ckpt]).predict(graphs).graph_median
        truth = np.array([s.label_total for s in test], dtype=float)
        mae, ci = mae_with_ci(pred, truth) if len(test) >= 2 else (float(abs(pred - truth).mean()), 0.0)
        reports.append(FoldReport(f, len(tr), len(va), len(te), mae, ci,
                                  int(ckpt.metadata.get("best_epoch", 0)), te.tolist()))
    return CrossValidationResult(Ensemble(members), reports)
