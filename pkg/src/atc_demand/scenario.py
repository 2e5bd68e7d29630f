"""Scenario and aircraft domain types, feature encoding and normalisation.

A scenario is one static snapshot of the traffic in and around a sector.
Each aircraft becomes a 16-dimensional node feature vector whose slot order is
fixed by :data:`NODE_FEATURES`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import shapely
from shapely.geometry import Point, Polygon

from .errors import ConfigError, DataError, DegenerateFeatureError


class EngineType(enum.IntEnum):
    PISTON = 0
    TURBOPROP = 1
    JET = 2


class WakeCategory(enum.IntEnum):
    LIGHT = 0
    MEDIUM = 1
    HEAVY_JUMBO = 2


class ExitDirection(enum.IntEnum):
    N = 0
    S = 1
    E = 2
    W = 3


@dataclass(frozen=True)
class AircraftState:
    """One aircraft in a snapshot.

    Units: degrees for ``lat``/``lon``; flight levels (hundreds of feet) for
    ``flight_level``, ``cleared_fl`` and ``exit_fl``; knots for
    ``ground_speed``; feet per minute (signed) for ``climb_rate``; seconds for
    ``time_to_exit``. ``track_unit_vector`` is (east, north).
    """

    callsign: str
    lat: float
    lon: float
    flight_level: float
    cleared_fl: float
    exit_fl: float
    ground_speed: float
    track_unit_vector: tuple[float, float]
    climb_rate: float = 0.0
    step_climb: bool = False
    engine_type: EngineType = EngineType.JET
    wake_category: WakeCategory = WakeCategory.MEDIUM
    on_heading: bool = False
    speed_control: bool = False
    comm_state: bool = True
    time_to_exit: float = 0.0
    exit_direction: ExitDirection = ExitDirection.N

    def __post_init__(self):
        object.__setattr__(self, "track_unit_vector",
                           (float(self.track_unit_vector[0]), float(self.track_unit_vector[1])))
        try:
            object.__setattr__(self, "engine_type", EngineType(self.engine_type))
            object.__setattr__(self, "wake_category", WakeCategory(self.wake_category))
            object.__setattr__(self, "exit_direction", ExitDirection(self.exit_direction))
        except ValueError as exc:
            raise DataError(f"{self.callsign}: {exc}") from None
        if not self.ground_speed >= 0:
            raise DataError(f"{self.callsign}: ground_speed must be >= 0, got {self.ground_speed}")
        norm = math.hypot(*self.track_unit_vector)
        if abs(norm - 1.0) > 1e-9:
            raise DataError(f"{self.callsign}: track_unit_vector has norm {norm!r}, expected 1")
        if not self.time_to_exit >= 0:
            raise DataError(f"{self.callsign}: time_to_exit must be >= 0, got {self.time_to_exit}")
        for name in ("lat", "lon", "flight_level", "cleared_fl", "exit_fl", "climb_rate"):
            if not math.isfinite(getattr(self, name)):
                raise DataError(f"{self.callsign}: {name} is not finite")

    @property
    def delta_to_exit_fl(self) -> float:
        """Signed vertical change still required, positive when a climb is needed."""
        return self.exit_fl - self.flight_level

    @property
    def position(self) -> tuple[float, float]:
        return (self.lat, self.lon)


@dataclass(frozen=True)
class Scenario:
    timestamp: float
    aircraft: tuple[AircraftState, ...]
    labels: Optional[Mapping[str, int]] = None
    sector_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "aircraft", tuple(self.aircraft))
        callsigns = [a.callsign for a in self.aircraft]
        if len(set(callsigns)) != len(callsigns):
            raise DataError(f"scenario at t={self.timestamp}: duplicate callsigns")
        if self.labels is not None:
            labels = dict(self.labels)
            if set(labels) != set(callsigns):
                missing = sorted(set(callsigns) - set(labels))
                extra = sorted(set(labels) - set(callsigns))
                raise DataError(f"scenario at t={self.timestamp}: labels do not match aircraft "
                                f"(missing {missing}, unknown {extra})")
            for cs, value in labels.items():
                if int(value) != value or value < 0:
                    raise DataError(f"scenario at t={self.timestamp}: label for {cs} "
                                    f"must be a non-negative integer, got {value!r}")
            object.__setattr__(self, "labels", {cs: int(labels[cs]) for cs in callsigns})

    @property
    def callsigns(self) -> list[str]:
        return [a.callsign for a in self.aircraft]

    @property
    def label_total(self) -> Optional[int]:
        if self.labels is None:
            return None
        return int(sum(self.labels.values()))

    def with_labels(self, labels: Mapping[str, int]) -> "Scenario":
        return Scenario(self.timestamp, self.aircraft, labels, self.sector_id)

    def __len__(self) -> int:
        return len(self.aircraft)


# --- feature manifest -------------------------------------------------------

ZSCORE = "zscore"
MAXABS = "maxabs"
INTEGER_CLASS = "integer_class"
PASSTHROUGH = "passthrough"

NODE_FEATURES: tuple[tuple[str, str], ...] = (
    ("lat", ZSCORE),
    ("lon", ZSCORE),
    ("flight_level", ZSCORE),
    ("ground_speed", ZSCORE),
    ("track_east", PASSTHROUGH),
    ("track_north", PASSTHROUGH),
    ("climb_rate", MAXABS),
    ("step_climb", INTEGER_CLASS),
    ("delta_to_exit_fl", MAXABS),
    ("engine_type", INTEGER_CLASS),
    ("wake_category", INTEGER_CLASS),
    ("on_heading", INTEGER_CLASS),
    ("speed_control", INTEGER_CLASS),
    ("comm_state", INTEGER_CLASS),
    ("time_to_exit", ZSCORE),
    ("exit_direction", INTEGER_CLASS),
)

EDGE_FEATURES: tuple[tuple[str, str], ...] = (
    ("separation_distance", ZSCORE),
    ("closing_speed", MAXABS),
)

NODE_FEATURE_NAMES = tuple(name for name, _ in NODE_FEATURES)
EDGE_FEATURE_NAMES = tuple(name for name, _ in EDGE_FEATURES)

CLASS_COUNTS = {
    "step_climb": 2,
    "engine_type": len(EngineType),
    "wake_category": len(WakeCategory),
    "on_heading": 2,
    "speed_control": 2,
    "comm_state": 2,
    "exit_direction": len(ExitDirection),
}

_DECODERS = {
    "step_climb": bool,
    "engine_type": EngineType,
    "wake_category": WakeCategory,
    "on_heading": bool,
    "speed_control": bool,
    "comm_state": bool,
    "exit_direction": ExitDirection,
}


@dataclass(frozen=True)
class FeatureStat:
    name: str
    kind: str
    mean: float = 0.0
    std: float = 1.0
    bound: float = 1.0
    n_classes: int = 0

    def __post_init__(self):
        if self.kind == ZSCORE and not self.std > 0:
            raise DegenerateFeatureError(self.name, "std must be > 0")
        if self.kind == MAXABS and not self.bound > 0:
            raise DegenerateFeatureError(self.name, "max-abs bound must be > 0")
        if self.kind not in (ZSCORE, MAXABS, INTEGER_CLASS, PASSTHROUGH):
            raise ConfigError(f"unknown feature kind {self.kind!r}")

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kind == ZSCORE:
            return (x - self.mean) / self.std
        if self.kind == MAXABS:
            return max_abs_scale(x, self.bound)
        if self.kind == INTEGER_CLASS:
            bad = (x != np.round(x)) | (x < 0) | (x >= self.n_classes)
            if np.any(bad):
                raise DataError(f"feature {self.name!r}: value outside classes 0..{self.n_classes - 1}")
        return np.array(x, dtype=float, copy=True)

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "mean": self.mean, "std": self.std,
                "bound": self.bound, "n_classes": self.n_classes}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureStat":
        return cls(d["name"], d["kind"], float(d["mean"]), float(d["std"]),
                   float(d["bound"]), int(d["n_classes"]))


@dataclass(frozen=True)
class NormalizationStats:
    node: tuple[FeatureStat, ...]
    edge: tuple[FeatureStat, ...]

    def __post_init__(self):
        if tuple(s.name for s in self.node) != NODE_FEATURE_NAMES:
            raise ConfigError("node feature manifest does not match the encoder layout")
        if tuple(s.name for s in self.edge) != EDGE_FEATURE_NAMES:
            raise ConfigError("edge feature manifest does not match the encoder layout")

    @property
    def manifest(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.node)

    @property
    def node_dim(self) -> int:
        return len(self.node)

    @property
    def edge_dim(self) -> int:
        return len(self.edge)

    def transform_nodes(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=float).reshape(-1, self.node_dim)
        return np.column_stack([s.apply(raw[:, k]) for k, s in enumerate(self.node)]) \
            if raw.shape[0] else np.zeros((0, self.node_dim))

    def transform_edges(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=float).reshape(-1, self.edge_dim)
        return np.column_stack([s.apply(raw[:, k]) for k, s in enumerate(self.edge)]) \
            if raw.shape[0] else np.zeros((0, self.edge_dim))

    def to_dict(self) -> dict:
        return {"node": [s.to_dict() for s in self.node],
                "edge": [s.to_dict() for s in self.edge]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NormalizationStats":
        return cls(tuple(FeatureStat.from_dict(s) for s in d["node"]),
                   tuple(FeatureStat.from_dict(s) for s in d["edge"]))


def max_abs_scale(x, bound: float):
    """Scale by a maximum-absolute bound; zero stays zero and |x| <= bound maps into [-1, 1]."""
    if not bound > 0:
        raise ConfigError(f"max-abs bound must be > 0, got {bound}")
    return x / bound


def max_abs_bound(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    return float(max(abs(values.min()), abs(values.max())))


def raw_node_vector(a: AircraftState) -> np.ndarray:
    """Unnormalised node features in manifest order; enums and booleans as integers."""
    return np.array([
        a.lat, a.lon, a.flight_level, a.ground_speed,
        a.track_unit_vector[0], a.track_unit_vector[1],
        a.climb_rate, float(a.step_climb), a.delta_to_exit_fl,
        float(int(a.engine_type)), float(int(a.wake_category)),
        float(a.on_heading), float(a.speed_control), float(a.comm_state),
        a.time_to_exit, float(int(a.exit_direction)),
    ], dtype=float)


def raw_node_matrix(aircraft: Sequence[AircraftState]) -> np.ndarray:
    if not aircraft:
        return np.zeros((0, len(NODE_FEATURES)))
    return np.vstack([raw_node_vector(a) for a in aircraft])


def encode_node_features(a: AircraftState, stats: NormalizationStats) -> np.ndarray:
    return stats.transform_nodes(raw_node_vector(a)[None, :])[0]


def decode_categoricals(vector: np.ndarray, stats: NormalizationStats) -> dict:
    """Recover the enum/boolean values from the integer-class slots of an encoded vector."""
    out = {}
    for k, s in enumerate(stats.node):
        if s.kind == INTEGER_CLASS:
            out[s.name] = _DECODERS[s.name](int(round(vector[k])))
    return out


def _fit_column(name: str, kind: str, column: np.ndarray) -> FeatureStat:
    if kind == ZSCORE:
        mean = float(column.mean())
        std = float(column.std())
        if not std > 1e-12 * max(1.0, abs(mean)):
            raise DegenerateFeatureError(name)
        return FeatureStat(name, kind, mean=mean, std=std)
    if kind == MAXABS:
        bound = max_abs_bound(column)
        if not bound > 0:
            raise DegenerateFeatureError(name, "all values are zero")
        return FeatureStat(name, kind, bound=bound)
    if kind == INTEGER_CLASS:
        return FeatureStat(name, kind, n_classes=CLASS_COUNTS[name])
    return FeatureStat(name, kind)


def fit_normalization(training_scenarios: Iterable[Scenario], fl_buffer: float = 10.0) -> NormalizationStats:
    """Fit per-feature scaling on training scenarios only.

    Edge statistics are fitted over the flight-level-overlap pairs that
    :func:`atc_demand.graphs.build_graph` would create with the same buffer.
    """
    from .graphs import overlap_pairs
    from .geodesy import pairwise_kinematics

    scenarios = list(training_scenarios)
    aircraft = [a for s in scenarios for a in s.aircraft]
    if not aircraft:
        raise DataError("cannot fit normalisation: no aircraft in the training scenarios")
    raw = raw_node_matrix(aircraft)
    node = tuple(_fit_column(name, kind, raw[:, k]) for k, (name, kind) in enumerate(NODE_FEATURES))

    seps, closings = [], []
    for s in scenarios:
        pairs = overlap_pairs(s.aircraft, fl_buffer)
        if len(pairs):
            sep, clo = pairwise_kinematics(s.aircraft)
            seps.append(sep[pairs[:, 0], pairs[:, 1]])
            closings.append(clo[pairs[:, 0], pairs[:, 1]])
    if seps:
        sep_all = np.concatenate(seps)
        clo_all = np.concatenate(closings)
        edge = (_fit_column("separation_distance", ZSCORE, sep_all) if len(sep_all) > 1
                else FeatureStat("separation_distance", ZSCORE, mean=float(sep_all[0]), std=1.0),
                _fit_column("closing_speed", MAXABS, clo_all) if np.any(clo_all)
                else FeatureStat("closing_speed", MAXABS, bound=1.0))
    else:
        edge = (FeatureStat("separation_distance", ZSCORE), FeatureStat("closing_speed", MAXABS))
    return NormalizationStats(node, edge)


# --- sector geometry --------------------------------------------------------

def _local_scale(origin_lat: float) -> tuple[float, float]:
    """NM per degree of (longitude, latitude) in the sector's local plane."""
    return 60.0 * math.cos(math.radians(origin_lat)), 60.0


@dataclass(frozen=True)
class SectorGeometry:
    """Convex sector polygon with a local east/north plane in nautical miles.

    The plane is an equirectangular projection about ``origin`` so conversion
    is exactly linear; it is only used for short straight-line projections.
    """

    vertices: tuple[tuple[float, float], ...]  # (lat, lon)
    origin: tuple[float, float] = field(default=None)  # type: ignore[assignment]
    sector_id: str = "SECTOR"

    def __post_init__(self):
        verts = tuple((float(la), float(lo)) for la, lo in self.vertices)
        if len(verts) < 3:
            raise ConfigError("sector polygon needs at least 3 vertices")
        object.__setattr__(self, "vertices", verts)
        if self.origin is None:
            lat = sum(v[0] for v in verts) / len(verts)
            lon = sum(v[1] for v in verts) / len(verts)
            object.__setattr__(self, "origin", (lat, lon))
        poly = Polygon([(lo, la) for la, lo in verts])
        if not poly.is_valid or poly.area <= 0:
            raise ConfigError("sector polygon is not simple")
        if not math.isclose(poly.convex_hull.area, poly.area, rel_tol=1e-9):
            raise ConfigError("sector polygon must be convex")
        object.__setattr__(self, "_polygon", poly)
        shapely.prepare(poly)

    @classmethod
    def from_local_nm(cls, vertices_nm, origin: tuple[float, float], sector_id: str = "SECTOR"):
        kx, ky = _local_scale(origin[0])
        verts = tuple((origin[0] + y / ky, origin[1] + x / kx) for x, y in vertices_nm)
        return cls(verts, origin, sector_id)

    def to_local(self, lat, lon):
        kx, ky = _local_scale(self.origin[0])
        return (np.asarray(lon) - self.origin[1]) * kx, (np.asarray(lat) - self.origin[0]) * ky

    def from_local(self, x, y):
        kx, ky = _local_scale(self.origin[0])
        return self.origin[0] + np.asarray(y) / ky, self.origin[1] + np.asarray(x) / kx

    def local_vertices(self) -> np.ndarray:
        lat = np.array([v[0] for v in self.vertices])
        lon = np.array([v[1] for v in self.vertices])
        x, y = self.to_local(lat, lon)
        pts = np.column_stack([x, y])
        area2 = np.sum(pts[:, 0] * np.roll(pts[:, 1], -1) - np.roll(pts[:, 0], -1) * pts[:, 1])
        return pts if area2 > 0 else pts[::-1]

    def contains(self, lat: float, lon: float) -> bool:
        """Point in the closed polygon."""
        return bool(self._polygon.covers(Point(lon, lat)))

    def distance_deg(self, lat: float, lon: float) -> float:
        """Distance to the polygon in degree space (0 inside)."""
        return float(self._polygon.distance(Point(lon, lat)))

    def in_buffer_region(self, lat: float, lon: float, buffer_deg: float) -> bool:
        return self.distance_deg(lat, lon) <= buffer_deg


def project_time_to_exit(a: AircraftState, sector: SectorGeometry) -> float:
    """Seconds until the aircraft's straight constant-speed ground track leaves the sector.

    Aircraft in the buffer region but heading into the sector get the time to
    reach the far boundary. Returns 0 for aircraft outside and not entering.
    """
    if not a.ground_speed > 0:
        raise DataError(f"{a.callsign}: exit time undefined for ground speed {a.ground_speed}")
    verts = sector.local_vertices()
    px, py = sector.to_local(a.lat, a.lon)
    p = np.array([float(px), float(py)])
    v = np.asarray(a.track_unit_vector, dtype=float) * a.ground_speed / 3600.0  # NM/s
    t_enter, t_exit = -math.inf, math.inf
    for k in range(len(verts)):
        q0, q1 = verts[k], verts[(k + 1) % len(verts)]
        edge = q1 - q0
        normal = np.array([edge[1], -edge[0]])  # outward for counter-clockwise order
        num = float(normal @ (q0 - p))   # >= 0 when p is on the inner side
        den = float(normal @ v)
        if den == 0.0:
            if num < 0:
                return 0.0
            continue
        t = num / den
        if den > 0:
            t_exit = min(t_exit, t)
        else:
            t_enter = max(t_enter, t)
    if t_enter > t_exit or t_exit <= 0:
        return 0.0
    return float(t_exit)


def identity_stats() -> NormalizationStats:
    """Stats that leave every raw value unchanged (testing and diagnostics)."""
    def make(name, kind):
        return FeatureStat(name, kind, n_classes=CLASS_COUNTS.get(name, 0))
    return NormalizationStats(tuple(make(n, k) for n, k in NODE_FEATURES),
                              tuple(make(n, k) for n, k in EDGE_FEATURES))
