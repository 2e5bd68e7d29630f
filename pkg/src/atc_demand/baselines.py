"""Heuristic clearance estimates: the minimum-clearance count and a weighted-factor complexity model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

from .errors import ConfigError
from .scenario import EngineType, Scenario

LEVEL_TOLERANCE = 0.5


def minimum_clearance(s: Scenario) -> int:
    """One clearance per aircraft that is off its exit level and not yet cleared toward it."""
    return sum(1 for a in s.aircraft
               if abs(a.flight_level - a.exit_fl) >= LEVEL_TOLERANCE
               and abs(a.cleared_fl - a.exit_fl) >= LEVEL_TOLERANCE)


@dataclass(frozen=True)
class FactorConfig:
    climb_threshold_fpm: float = 300.0
    fl_band_edges: tuple[float, ...] = (245.0, 275.0)
    slow_speed_kt: float = 300.0
    high_level_fl: float = 270.0
    fast_speed_kt: float = 450.0
    low_level_fl: float = 240.0

    def band_names(self) -> list[str]:
        return [f"fl_band_{k}" for k in range(len(self.fl_band_edges) + 1)]


def _band_index(fl: float, edges) -> int:
    return sum(1 for e in edges if fl >= e)


def factor_values(s: Scenario, config: FactorConfig = FactorConfig()) -> dict[str, float]:
    """Every declared factor evaluated on one scenario."""
    ac = s.aircraft
    c = config
    out: dict[str, float] = {
        "aircraft_count": float(len(ac)),
        "climbing_count": float(sum(a.climb_rate > c.climb_threshold_fpm for a in ac)),
        "descending_count": float(sum(a.climb_rate < -c.climb_threshold_fpm for a in ac)),
        "piston_count": float(sum(a.engine_type == EngineType.PISTON for a in ac)),
        "turboprop_count": float(sum(a.engine_type == EngineType.TURBOPROP for a in ac)),
        "jet_count": float(sum(a.engine_type == EngineType.JET for a in ac)),
        "slow_high_count": float(sum(a.ground_speed < c.slow_speed_kt and a.flight_level >= c.high_level_fl
                                     for a in ac)),
        "fast_low_count": float(sum(a.ground_speed > c.fast_speed_kt and a.flight_level <= c.low_level_fl
                                    for a in ac)),
    }
    bands = [0.0] * (len(c.fl_band_edges) + 1)
    for a in ac:
        bands[_band_index(a.flight_level, c.fl_band_edges)] += 1.0
    out.update(zip(c.band_names(), bands))
    return out


def factor_names(config: FactorConfig = FactorConfig()) -> list[str]:
    return list(factor_values(Scenario(0.0, ()), config))


def linear_complexity(s: Scenario, weights: Mapping[str, float], config: FactorConfig = FactorConfig()) -> float:
    """Weighted sum of factor values. Factors absent from ``weights`` contribute nothing."""
    values = factor_values(s, config)
    unknown = sorted(set(weights) - set(values))
    if unknown:
        raise ConfigError(f"unknown complexity factors {unknown}; known: {sorted(values)}")
    return float(sum(float(w) * values[name] for name, w in weights.items()))


BASELINES: dict[str, Callable] = {
    "min-clearance": minimum_clearance,
    "linear": linear_complexity,
}
