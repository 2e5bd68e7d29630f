"""Evaluation statistics: MAE with confidence intervals, bucketed errors, permutation importance,
structure ablations, the Wilcoxon signed-rank test and Pearson correlation."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .graphs import DEFAULT_FL_BUFFER, ScenarioGraph, build_graphs, randomize_edges, strip_edges
from .rng import substream
from .scenario import EDGE_FEATURE_NAMES, NODE_FEATURE_NAMES, Scenario

Z95 = 1.96


def _paired(preds, targets) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if p.shape != t.shape:
        raise DataError(f"length mismatch: {p.size} predictions, {t.size} targets")
    return p, t


def sem_ci95(values) -> float:
    """1.96 x standard error of the mean (sample std, ddof=1)."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise DataError("a confidence interval needs at least two values")
    return float(Z95 * v.std(ddof=1) / math.sqrt(v.size))


def mae_with_ci(preds, targets) -> tuple[float, float]:
    p, t = _paired(preds, targets)
    if p.size < 2:
        raise DataError("mae_with_ci needs at least two pairs")
    err = np.abs(p - t)
    return float(err.mean()), sem_ci95(err)


@dataclass(frozen=True)
class BucketStat:
    bucket: int
    lo: float          # exclusive lower edge (-inf for the first bucket)
    hi: float          # inclusive upper edge (+inf for the last bucket)
    mae: float
    median_signed_error: float
    count: int


def bucketed_errors(preds, targets, edges: Optional[Sequence[float]] = None,
                    percentiles: Sequence[float] = (10, 50, 90)) -> list[BucketStat]:
    """Errors split by target value: t <= e0, e0 < t <= e1, ..., t > e_last.

    ``edges`` default to the given percentiles of ``targets``. Empty buckets
    report NaN statistics with count 0.
    """
    p, t = _paired(preds, targets)
    if p.size == 0:
        raise DataError("bucketed_errors needs at least one pair")
    edges = np.percentile(t, percentiles) if edges is None else np.asarray(edges, dtype=float)
    idx = np.searchsorted(edges, t, side="left")
    bounds = np.concatenate([[-np.inf], edges, [np.inf]])
    out = []
    for k in range(len(edges) + 1):
        m = idx == k
        signed = p[m] - t[m]
        out.append(BucketStat(k, float(bounds[k]), float(bounds[k + 1]),
                              float(np.abs(signed).mean()) if m.any() else math.nan,
                              float(np.median(signed)) if m.any() else math.nan, int(m.sum())))
    return out


def pearson(x, y) -> float:
    a, b = _paired(x, y)
    if a.size < 2:
        raise DataError("pearson needs at least two pairs")
    ac = a - a.mean()
    bc = b - b.mean()
    sa = float(ac @ ac)
    sb = float(bc @ bc)
    if sa == 0.0 or sb == 0.0:
        raise DataError("correlation undefined for a constant series")
    return float(np.clip((ac @ bc) / math.sqrt(sa * sb), -1.0, 1.0))


def _average_ranks(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """1-based ranks with ties averaged, plus the tie-group sizes."""
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    starts = np.flatnonzero(np.concatenate([[True], sv[1:] != sv[:-1]]))
    ends = np.concatenate([starts[1:], [len(sv)]])
    ranks = np.empty(len(v))
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + 1 + e)
    return ranks, ends - starts


@dataclass(frozen=True)
class WilcoxonResult:
    w_plus: float
    w_minus: float
    n: int
    z: float
    p_value: float


def wilcoxon_test(errors_a, errors_b, min_n: int = 10) -> WilcoxonResult:
    """Two-sided signed-rank test on a - b: normal approximation with tie correction,
    no continuity correction; zero differences are dropped."""
    a, b = _paired(errors_a, errors_b)
    d = a - b
    d = d[d != 0]
    if d.size == 0:
        raise DataError("all paired differences are zero; the signed-rank test is degenerate")
    n = d.size
    if n < min_n:
        raise DataError(f"signed-rank test needs at least {min_n} non-zero differences, got {n}")
    ranks, ties = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(ties ** 3 - ties)) / 48.0
    z = (w_plus - mean) / math.sqrt(var)
    return WilcoxonResult(w_plus, w_minus, n, z, math.erfc(abs(z) / math.sqrt(2.0)))


def wilcoxon_signed_rank(errors_a, errors_b) -> float:
    return wilcoxon_test(errors_a, errors_b).p_value


# --- model-based evaluations ------------------------------------------------

def _ensemble(model):
    from .gnn.training import as_ensemble
    return as_ensemble(model)


def _labels(scenarios: Sequence[Scenario]) -> np.ndarray:
    if any(s.labels is None for s in scenarios):
        raise DataError("evaluation needs labelled scenarios")
    return np.array([s.label_total for s in scenarios], dtype=float)


class _PreparedEnsemble:
    """Each member's encoded batches of a fixed graph list, for fast column substitution."""

    def __init__(self, ensemble, graphs: Sequence[ScenarioGraph], chunk: int = 256):
        from .gnn.model import GraphBatch
        self.members = ensemble.members
        self.batches = []
        for m in self.members:
            enc = [g.with_stats(m.stats) for g in graphs]
            self.batches.append([GraphBatch(enc[i:i + chunk]) for i in range(0, len(enc), chunk)])
        self.raw_nodes = np.vstack([g.raw_node_features for g in graphs])
        self.raw_edges = (np.vstack([g.raw_edge_features for g in graphs])
                          if any(g.n_edges for g in graphs) else np.zeros((0, len(EDGE_FEATURE_NAMES))))

    def graph_median(self, node_col: Optional[tuple[int, np.ndarray]] = None,
                     edge_col: Optional[tuple[int, np.ndarray]] = None) -> np.ndarray:
        from .gnn.model import forward
        from .gnn.training import postprocess
        total = None
        for m, batches in zip(self.members, self.batches):
            outs = []
            node_off = edge_off = 0
            for b in batches:
                bb = b
                if node_col is not None:
                    k, raw = node_col
                    bb = copy.copy(b)
                    bb.x = b.x.copy()
                    bb.x[:, k] = m.stats.node[k].apply(raw[node_off:node_off + b.n_nodes])
                if edge_col is not None and b.n_edges:
                    k, raw = edge_col
                    bb = copy.copy(bb)
                    bb.edge_features = b.edge_features.copy()
                    real = b.edge_source >= 0
                    enc = m.stats.edge[k].apply(raw[edge_off:edge_off + b.n_edges])
                    bb.edge_features[real, k] = enc[b.edge_source[real]]
                node_off += b.n_nodes
                edge_off += b.n_edges
                _, y_graph = forward(m.params, bb)
                outs.append(postprocess(y_graph)[:, 1])
            med = np.concatenate(outs)
            total = med if total is None else total + med
        return total / len(self.members)


@dataclass
class AblationResult:
    """Change in MAE under a perturbation; ``ci95`` is over scenarios, ``repeat_ci95`` over repeats."""

    name: str
    delta_mae: float
    ci95: float
    mae_orig: float
    mae_perturbed: list = field(default_factory=list)
    repeat_ci95: float = 0.0

    def __iter__(self):
        return iter((self.delta_mae, self.ci95))


def _summarise(name: str, truth: np.ndarray, base_pred: np.ndarray, perturbed_preds: list) -> AblationResult:
    base_err = np.abs(base_pred - truth)
    errs = np.array([np.abs(p - truth) for p in perturbed_preds])
    maes = errs.mean(axis=1)
    diff = errs.mean(axis=0) - base_err
    ci = sem_ci95(diff) if diff.size >= 2 else 0.0
    rep_ci = sem_ci95(maes) if len(maes) >= 2 else 0.0
    base_mae = float(base_err.mean())
    return AblationResult(name, float(np.mean(maes - base_mae)), ci, base_mae,
                          [float(x) for x in maes], rep_ci)


def permutation_importance(model, test_scenarios: Sequence[Scenario], feature: str, repeats: int = 20,
                           seed: int = 0, permuter: Optional[Callable] = None,
                           fl_buffer: float = DEFAULT_FL_BUFFER, _prepared=None) -> AblationResult:
    """MAE change when one feature's raw values are shuffled across the whole test set.

    Graph structure is held fixed; only the feature column changes, and every
    ensemble member re-encodes it with its own statistics. ``permuter(rng, n)``
    may replace the default ``rng.permutation(n)`` (tests use the identity).
    """
    if feature in NODE_FEATURE_NAMES:
        kind, col = "node", NODE_FEATURE_NAMES.index(feature)
    elif feature in EDGE_FEATURE_NAMES:
        kind, col = "edge", EDGE_FEATURE_NAMES.index(feature)
    else:
        raise ConfigError(f"unknown feature {feature!r}")
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    ens = _ensemble(model)
    truth = _labels(test_scenarios)
    prep = _prepared or _PreparedEnsemble(ens, build_graphs(test_scenarios, ens.members[0].stats, fl_buffer))
    base = prep.graph_median()
    raw = prep.raw_nodes[:, col] if kind == "node" else prep.raw_edges[:, col]
    preds = []
    for r in range(repeats):
        rng = substream(seed, "permutation", feature, r)
        perm = permuter(rng, len(raw)) if permuter is not None else rng.permutation(len(raw))
        shuffled = raw[np.asarray(perm)]
        if kind == "node":
            preds.append(prep.graph_median(node_col=(col, shuffled)))
        else:
            preds.append(prep.graph_median(edge_col=(col, shuffled)))
    return _summarise(feature, truth, base, preds)


def all_feature_importances(model, test_scenarios: Sequence[Scenario], repeats: int = 20, seed: int = 0,
                            features: Optional[Sequence[str]] = None,
                            fl_buffer: float = DEFAULT_FL_BUFFER) -> list[AblationResult]:
    ens = _ensemble(model)
    prep = _PreparedEnsemble(ens, build_graphs(test_scenarios, ens.members[0].stats, fl_buffer))
    names = list(features) if features is not None else list(NODE_FEATURE_NAMES + EDGE_FEATURE_NAMES)
    return [permutation_importance(ens, test_scenarios, f, repeats, seed, fl_buffer=fl_buffer, _prepared=prep)
            for f in names]


def structure_ablation_eval(model, test_scenarios: Sequence[Scenario], mode: str = "random", samples: int = 20,
                            seed: int = 0, fl_buffer: float = DEFAULT_FL_BUFFER) -> AblationResult:
    """MAE change when the overlap edges are replaced by random (per-graph Erdos-Renyi) edges or removed."""
    if mode not in ("random", "edgeless"):
        raise ConfigError(f"unknown structure ablation mode {mode!r}")
    ens = _ensemble(model)
    truth = _labels(test_scenarios)
    graphs = build_graphs(test_scenarios, ens.members[0].stats, fl_buffer)
    base = ens.predict(graphs).graph_median
    if mode == "edgeless":
        preds = [ens.predict([strip_edges(g) for g in graphs]).graph_median]
    else:
        preds = []
        for k in range(samples):
            rewired = [randomize_edges(g, substream(seed, "random-edges", k, i)) for i, g in enumerate(graphs)]
            preds.append(ens.predict(rewired).graph_median)
    return _summarise(mode, truth, base, preds)
