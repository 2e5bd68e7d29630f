"""Scenario graphs: flight-level-overlap edges plus the random and edgeless ablation variants."""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .geodesy import pairwise_kinematics
from .scenario import AircraftState, NormalizationStats, Scenario, raw_node_matrix

DEFAULT_FL_BUFFER = 10.0


@dataclass(frozen=True)
class FlRange:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ConfigError(f"invalid flight-level range [{self.lo}, {self.hi}]")

    def overlaps(self, other: "FlRange") -> bool:
        # closed intervals: touching ranges count
        return self.lo <= other.hi and other.lo <= self.hi


def fl_range(a: AircraftState, buffer: float = DEFAULT_FL_BUFFER) -> FlRange:
    """Vertical span the aircraft may occupy: current, cleared and exit levels, widened by ``buffer``."""
    levels = (a.flight_level, a.cleared_fl, a.exit_fl)
    return FlRange(min(levels) - buffer, max(levels) + buffer)


def overlap_pairs(aircraft: Sequence[AircraftState], buffer: float = DEFAULT_FL_BUFFER) -> np.ndarray:
    """Index pairs (i < j) whose flight-level ranges intersect, in lexicographic order."""
    n = len(aircraft)
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    levels = np.array([(a.flight_level, a.cleared_fl, a.exit_fl) for a in aircraft], dtype=float)
    lo = levels.min(axis=1) - buffer
    hi = levels.max(axis=1) + buffer
    i, j = np.triu_indices(n, k=1)
    keep = (lo[i] <= hi[j]) & (lo[j] <= hi[i])
    return np.column_stack([i[keep], j[keep]]).astype(np.int64)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ScenarioGraph:
    """Undirected interaction graph of one scenario.

    ``edges`` holds unordered pairs as rows (i, j) with i < j. Raw (unscaled)
    feature matrices are retained so the graph can be re-encoded with another
    model's normalisation statistics.
    """

    node_features: np.ndarray
    node_ids: tuple[str, ...]
    edges: np.ndarray
    edge_features: np.ndarray
    raw_node_features: np.ndarray
    raw_edge_features: np.ndarray
    stats: NormalizationStats
    aircraft: tuple[AircraftState, ...] = ()
    label_total: Optional[int] = None
    label_per_node: Optional[np.ndarray] = None
    timestamp: float = 0.0

    def __post_init__(self):
        n = len(self.node_ids)
        if n < 1:
            raise DataError("a scenario graph needs at least one node")
        if self.node_features.shape != (n, self.stats.node_dim):
            raise DataError(f"node feature matrix has shape {self.node_features.shape}, "
                            f"expected {(n, self.stats.node_dim)}")
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(edges):
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise DataError("edges must be stored as (i, j) with i < j and no self-pairs")
            if len(np.unique(edges, axis=0)) != len(edges):
                raise DataError("duplicate edges")
            if edges.max() >= n:
                raise DataError("edge index out of range")
        if self.edge_features.shape != (len(edges), self.stats.edge_dim):
            raise DataError("edge feature rows must match edge count")
        for name in ("node_features", "edge_features", "raw_node_features", "raw_edge_features"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "edges", _frozen(edges))
        if self.label_per_node is not None:
            object.__setattr__(self, "label_per_node",
                               _frozen(np.asarray(self.label_per_node, dtype=float)))

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def pair_kinematics(self) -> tuple[np.ndarray, np.ndarray]:
        """Raw all-pairs (separation, closing speed); needs the source aircraft."""
        if len(self.aircraft) != self.n_nodes:
            raise DataError("graph was built without aircraft states; cannot compute edge features")
        return pairwise_kinematics(self.aircraft)

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.edges}

    def with_stats(self, stats: NormalizationStats) -> "ScenarioGraph":
        """Same graph re-encoded with other normalisation statistics."""
        if stats is self.stats:
            return self
        return replace(self, stats=stats,
                       node_features=stats.transform_nodes(self.raw_node_features),
                       edge_features=stats.transform_edges(self.raw_edge_features))

    def with_raw_features(self, raw_nodes=None, raw_edges=None) -> "ScenarioGraph":
        raw_nodes = self.raw_node_features if raw_nodes is None else raw_nodes
        raw_edges = self.raw_edge_features if raw_edges is None else raw_edges
        return replace(self, raw_node_features=raw_nodes, raw_edge_features=raw_edges,
                       node_features=self.stats.transform_nodes(raw_nodes),
                       edge_features=self.stats.transform_edges(raw_edges))

    def with_edges(self, edges: np.ndarray) -> "ScenarioGraph":
        """Replace the edge set, recomputing edge features from the aircraft kinematics."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(edges):
            sep, clo = self.pair_kinematics
            raw = np.column_stack([sep[edges[:, 0], edges[:, 1]], clo[edges[:, 0], edges[:, 1]]])
        else:
            raw = np.zeros((0, self.stats.edge_dim))
        new = replace(self, edges=edges, raw_edge_features=raw,
                      edge_features=self.stats.transform_edges(raw))
        if "pair_kinematics" in self.__dict__:
            new.__dict__["pair_kinematics"] = self.__dict__["pair_kinematics"]
        return new

    def without_node(self, i: int) -> Optional["ScenarioGraph"]:
        """Graph with node ``i`` and its incident edges removed; ``None`` if nothing remains."""
        n = self.n_nodes
        if not 0 <= i < n:
            raise IndexError(f"node index {i} out of range for {n} nodes")
        if n == 1:
            return None
        keep_nodes = np.array([k for k in range(n) if k != i])
        remap = np.full(n, -1, dtype=np.int64)
        remap[keep_nodes] = np.arange(n - 1)
        keep_edges = (self.edges[:, 0] != i) & (self.edges[:, 1] != i) if self.n_edges else np.zeros(0, bool)
        new = ScenarioGraph(
            node_features=self.node_features[keep_nodes],
            node_ids=tuple(self.node_ids[k] for k in keep_nodes),
            edges=remap[self.edges[keep_edges]] if self.n_edges else self.edges,
            edge_features=self.edge_features[keep_edges],
            raw_node_features=self.raw_node_features[keep_nodes],
            raw_edge_features=self.raw_edge_features[keep_edges],
            stats=self.stats,
            aircraft=tuple(self.aircraft[k] for k in keep_nodes) if self.aircraft else (),
            label_total=None,
            label_per_node=None,
            timestamp=self.timestamp,
        )
        if "pair_kinematics" in self.__dict__:
            sep, clo = self.__dict__["pair_kinematics"]
            new.__dict__["pair_kinematics"] = (sep[np.ix_(keep_nodes, keep_nodes)],
                                               clo[np.ix_(keep_nodes, keep_nodes)])
        return new


def build_graph(s: Scenario, stats: NormalizationStats, buffer: float = DEFAULT_FL_BUFFER) -> ScenarioGraph:
    """Encode a scenario; an edge joins every pair of aircraft whose flight-level ranges overlap."""
    if len(s.aircraft) == 0:
        raise DataError(f"scenario at t={s.timestamp} has no aircraft")
    raw_nodes = raw_node_matrix(s.aircraft)
    edges = overlap_pairs(s.aircraft, buffer)
    kin = None
    if len(edges):
        kin = pairwise_kinematics(s.aircraft)
        sep, clo = kin
        raw_edges = np.column_stack([sep[edges[:, 0], edges[:, 1]], clo[edges[:, 0], edges[:, 1]]])
    else:
        raw_edges = np.zeros((0, stats.edge_dim))
    per_node = None
    total = None
    if s.labels is not None:
        per_node = np.array([s.labels[a.callsign] for a in s.aircraft], dtype=float)
        total = int(per_node.sum())
    g = ScenarioGraph(
        node_features=stats.transform_nodes(raw_nodes),
        node_ids=tuple(s.callsigns),
        edges=edges,
        edge_features=stats.transform_edges(raw_edges),
        raw_node_features=raw_nodes,
        raw_edge_features=raw_edges,
        stats=stats,
        aircraft=s.aircraft,
        label_total=total,
        label_per_node=per_node,
        timestamp=s.timestamp,
    )
    if kin is not None:
        g.__dict__["pair_kinematics"] = kin
    return g


def build_graphs(scenarios: Sequence[Scenario], stats: NormalizationStats,
                 buffer: float = DEFAULT_FL_BUFFER) -> list[ScenarioGraph]:
    return [build_graph(s, stats, buffer) for s in scenarios]


def randomize_edges(g: ScenarioGraph, rng_seed) -> ScenarioGraph:
    """Erdős-Rényi rewiring: one edge probability drawn from U[0, 1] per graph, then each pair
    is kept independently with that probability. ``rng_seed`` may be an int or a Generator."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    n = g.n_nodes
    p = rng.uniform(0.0, 1.0)
    i, j = np.triu_indices(n, k=1)
    keep = rng.random(len(i)) < p
    return g.with_edges(np.column_stack([i[keep], j[keep]]))


def strip_edges(g: ScenarioGraph) -> ScenarioGraph:
    if g.n_edges == 0:
        return g
    return replace(g, edges=np.zeros((0, 2), dtype=np.int64),
                   edge_features=np.zeros((0, g.stats.edge_dim)),
                   raw_edge_features=np.zeros((0, g.stats.edge_dim)))
