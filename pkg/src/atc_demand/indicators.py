"""Proximity-threshold graphs, four weighted-graph complexity indicators, and lag correlation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .geodesy import haversine_nm
from .scenario import Scenario

SAFETY_H_NM = 5.0
SAFETY_V_FT = 1000.0
DEFAULT_H_THRESH_NM = 48.0
DEFAULT_V_THRESH_FT = 4400.0


@dataclass(frozen=True)
class IndicatorGraph:
    n: int
    edges: tuple[tuple[int, int, float], ...]   # (i, j, w), i < j

    def __post_init__(self):
        seen = set()
        for i, j, w in self.edges:
            if not 0 <= i < j < self.n:
                raise DataError(f"invalid indicator edge ({i}, {j}) for {self.n} vertices")
            if (i, j) in seen:
                raise DataError(f"duplicate indicator edge ({i}, {j})")
            if not 0.0 <= w <= 1.0:
                raise DataError(f"edge weight {w} outside [0, 1]")
            seen.add((i, j))

    def weight_matrix(self) -> np.ndarray:
        w = np.zeros((self.n, self.n))
        for i, j, x in self.edges:
            w[i, j] = w[j, i] = x
        return w

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=bool)
        for i, j, _ in self.edges:
            a[i, j] = a[j, i] = True
        return a

    @classmethod
    def from_weights(cls, w: np.ndarray, adjacency: Optional[np.ndarray] = None) -> "IndicatorGraph":
        """Build from a symmetric weight matrix; ``adjacency`` marks edges whose weight may be 0."""
        w = np.asarray(w, dtype=float)
        adj = (w > 0) if adjacency is None else np.asarray(adjacency, dtype=bool)
        n = len(w)
        return cls(n, tuple((i, j, float(w[i, j])) for i in range(n) for j in range(i + 1, n) if adj[i, j]))


@dataclass(frozen=True)
class IndicatorSet:
    edge_density: float
    strength: float
    clustering_coefficient: float
    nearest_neighbour_degree: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _check_thresholds(h_thresh: float, v_thresh: float):
    if h_thresh <= SAFETY_H_NM:
        raise ConfigError(f"horizontal threshold {h_thresh} NM must exceed the {SAFETY_H_NM} NM separation")
    if v_thresh <= SAFETY_V_FT:
        raise ConfigError(f"vertical threshold {v_thresh} ft must exceed the {SAFETY_V_FT} ft separation")


def edge_weight(d_h_nm: float, d_v_ft: float, h_thresh: float = DEFAULT_H_THRESH_NM,
                v_thresh: float = DEFAULT_V_THRESH_FT) -> float:
    """1 at (or inside) the separation minima, falling linearly to 0 at the thresholds."""
    _check_thresholds(h_thresh, v_thresh)
    w_h = min(max((h_thresh - d_h_nm) / (h_thresh - SAFETY_H_NM), 0.0), 1.0)
    w_v = min(max((v_thresh - d_v_ft) / (v_thresh - SAFETY_V_FT), 0.0), 1.0)
    return min(w_h, w_v)


def build_indicator_graph(s: Scenario, h_thresh: float = DEFAULT_H_THRESH_NM,
                          v_thresh: float = DEFAULT_V_THRESH_FT) -> IndicatorGraph:
    """Edge for every pair within both thresholds; boundary pairs are kept with weight 0."""
    _check_thresholds(h_thresh, v_thresh)
    ac = s.aircraft
    edges = []
    for i in range(len(ac)):
        for j in range(i + 1, len(ac)):
            d_h = haversine_nm(ac[i].position, ac[j].position)
            d_v = abs(ac[i].flight_level - ac[j].flight_level) * 100.0
            if d_h <= h_thresh and d_v <= v_thresh:
                edges.append((i, j, edge_weight(d_h, d_v, h_thresh, v_thresh)))
    return IndicatorGraph(len(ac), tuple(edges))


def edge_density(g: IndicatorGraph) -> float:
    if g.n < 2:
        return 0.0
    return len(g.edges) / (g.n * (g.n - 1) / 2.0)


def mean_strength(g: IndicatorGraph) -> float:
    if g.n < 2:
        return 0.0
    return float(g.weight_matrix().sum(axis=1).mean())


def mean_clustering(g: IndicatorGraph) -> float:
    """Mean geometric-mean weighted clustering; vertices with degree < 2 count as 0.

    C_i = sum_{j,k} (w_ij w_ik w_jk)^(1/3) / (k_i (k_i - 1)) over ordered neighbour pairs.
    """
    if g.n < 2:
        return 0.0
    w = g.weight_matrix()
    k = g.adjacency().sum(axis=1)
    cube = np.cbrt(w)
    tri = np.einsum("ij,jk,ki->i", cube, cube, cube)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(k >= 2, tri / (k * (k - 1.0)), 0.0)
    return float(c.mean())


def mean_nnd(g: IndicatorGraph) -> float:
    """Mean over vertices with positive strength of the strength-weighted mean neighbour degree."""
    if g.n < 2:
        return 0.0
    w = g.weight_matrix()
    k = g.adjacency().sum(axis=1).astype(float)
    s = w.sum(axis=1)
    ok = s > 0
    if not ok.any():
        return 0.0
    return float(((w @ k)[ok] / s[ok]).mean())


def indicators(g: IndicatorGraph) -> IndicatorSet:
    return IndicatorSet(edge_density(g), mean_strength(g), mean_clustering(g), mean_nnd(g))


def scenario_indicators(s: Scenario, h_thresh: float = DEFAULT_H_THRESH_NM,
                        v_thresh: float = DEFAULT_V_THRESH_FT) -> IndicatorSet:
    return indicators(build_indicator_graph(s, h_thresh, v_thresh))


def calibrate_thresholds(stream: Sequence[Scenario], h_buffer_nm: float = 0.0,
                         v_buffer_ft: float = 0.0) -> tuple[float, float]:
    """Thresholds from a reference stream: mean pairwise horizontal and vertical distance plus a buffer."""
    dh, dv = [], []
    for s in stream:
        ac = s.aircraft
        for i in range(len(ac)):
            for j in range(i + 1, len(ac)):
                dh.append(haversine_nm(ac[i].position, ac[j].position))
                dv.append(abs(ac[i].flight_level - ac[j].flight_level) * 100.0)
    if not dh:
        raise DataError("threshold calibration needs at least one aircraft pair")
    h = float(np.mean(dh)) + h_buffer_nm
    v = float(np.mean(dv)) + v_buffer_ft
    _check_thresholds(h, v)
    return h, v


@dataclass(frozen=True)
class LagResult:
    best_lag: int
    r: tuple[Optional[float], ...]   # index = lag; None where undefined

    @property
    def best_r(self) -> float:
        return float(self.r[self.best_lag])


def lag_correlation(a: Sequence[Optional[float]], b: Sequence[Optional[float]], max_lag: int = 20,
                    min_overlap: int = 3) -> LagResult:
    """Pearson r between a(t) and b(t + lag) for lag = 0..max_lag on a shared grid.

    ``None``/NaN entries are dropped pairwise. A lag with fewer than
    ``min_overlap`` pairs or a constant side is undefined and excluded from the
    argmax; if every lag is undefined a DataError is raised.
    """
    if len(a) != len(b):
        raise DataError("lag correlation needs series on the same grid")
    if max_lag < 0:
        raise ConfigError("max_lag must be >= 0")
    x = np.array([np.nan if v is None else float(v) for v in a])
    y = np.array([np.nan if v is None else float(v) for v in b])
    rs: list[Optional[float]] = []
    for lag in range(max_lag + 1):
        xa = x[:max(len(x) - lag, 0)]
        yb = y[lag:]
        ok = np.isfinite(xa) & np.isfinite(yb)
        xa, yb = xa[ok], yb[ok]
        if len(xa) < min_overlap or np.ptp(xa) == 0 or np.ptp(yb) == 0:
            rs.append(None)
            continue
        xc = xa - xa.mean()
        yc = yb - yb.mean()
        rs.append(float((xc @ yc) / math.sqrt((xc @ xc) * (yc @ yc))))
    defined = [(r, lag) for lag, r in enumerate(rs) if r is not None]
    if not defined:
        raise DataError("lag correlation undefined at every lag (constant or too-short series)")
    best = max(defined, key=lambda t: (t[0], -t[1]))[1]
    return LagResult(best, tuple(rs))
