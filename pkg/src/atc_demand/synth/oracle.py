"""Scripted controller that labels snapshots with the clearances it would issue.

The rules work on the snapshot alone (no look-ahead into the simulation):

* level: one clearance if the aircraft is off its exit level and not yet
  cleared to it, plus one extra step clearance per nearby aircraft sitting in
  its vertical path (capped);
* heading: a vector and a resume for the "mover" of every pair at the same
  levels whose projected separation falls below the conflict distance (only
  the resume if it is already on a heading);
* speed: one clearance for the faster follower of an in-trail pair unless it
  is already under speed control.

Step, heading and speed terms all come from aircraft pairs, so labels depend
on the interaction structure and not only on per-aircraft state. The plain
level term never depends on other traffic, so for traffic without
interactions the label is never below the minimum-clearance contribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from ..geodesy import pairwise_kinematics
from ..scenario import AircraftState, Scenario


@dataclass(frozen=True)
class OracleConfig:
    horizon: float = 600.0
    active_min_tte: float = 0.0                   # interaction terms need time_to_exit >= this
    block_distance_nm: float = 20.0
    conflict_distance_nm: float = 6.0
    conflict_lookahead_s: Optional[float] = None   # default: half the horizon
    vertical_margin_fl: float = 0.0
    conflict_span_to_exit: bool = True
    trail_distance_nm: float = 25.0
    trail_track_deg: float = 15.0
    trail_speed_kt: float = 10.0
    max_step_clearances: int = 2
    max_per_aircraft: int = 6


def _local_kinematics(aircraft: Sequence[AircraftState]):
    """Positions (NM) in an equirectangular plane about the snapshot centroid and velocities (NM/s)."""
    lat = np.array([a.lat for a in aircraft], dtype=float)
    lon = np.array([a.lon for a in aircraft], dtype=float)
    lat0 = float(lat.mean()) if len(lat) else 0.0
    lon0 = float(lon.mean()) if len(lon) else 0.0
    pos = np.column_stack([(lon - lon0) * 60.0 * math.cos(math.radians(lat0)), (lat - lat0) * 60.0])
    vel = np.array([np.asarray(a.track_unit_vector) * a.ground_speed / 3600.0 for a in aircraft]).reshape(-1, 2)
    return pos, vel


def pair_geometry(aircraft: Sequence[AircraftState]) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal distance (NM) and closing speed (kt) for every pair."""
    pos, _ = _local_kinematics(aircraft)
    dist = np.linalg.norm(pos[None, :, :] - pos[:, None, :], axis=-1)
    _, closing = pairwise_kinematics(aircraft)
    np.fill_diagonal(dist, np.inf)
    return dist, closing


def projected_separation(dist: np.ndarray, closing: np.ndarray, lookahead_s: float) -> np.ndarray:
    """First-order separation after ``lookahead_s`` if the pair keeps converging at its current rate."""
    return dist - np.maximum(closing, 0.0) * lookahead_s / 3600.0


def occupied_range(a: AircraftState) -> tuple[float, float]:
    return min(a.flight_level, a.cleared_fl), max(a.flight_level, a.cleared_fl)


def blocks(j: AircraftState, i: AircraftState) -> bool:
    """Does ``j`` sit strictly inside the vertical path ``i`` still has to fly to its exit level?"""
    lo, hi = sorted((i.flight_level, i.exit_fl))
    if hi - lo < 1.0:
        return False
    jlo, jhi = occupied_range(j)
    return jlo < hi and jhi > lo


def needs_level_clearance(a: AircraftState) -> bool:
    return abs(a.flight_level - a.exit_fl) >= 0.5 and abs(a.cleared_fl - a.exit_fl) >= 0.5


def _span(a: AircraftState, with_exit: bool) -> tuple[float, float]:
    levels = (a.flight_level, a.cleared_fl, a.exit_fl) if with_exit else (a.flight_level, a.cleared_fl)
    return min(levels), max(levels)


def _same_levels(a: AircraftState, b: AircraftState, margin: float, with_exit: bool) -> bool:
    """Vertical spans closer than ``margin`` flight levels."""
    alo, ahi = _span(a, with_exit)
    blo, bhi = _span(b, with_exit)
    return alo - margin <= bhi and blo - margin <= ahi


def _mover(a: AircraftState, b: AircraftState, ia: int, ib: int) -> int:
    """The aircraft that takes the vector: the one still changing level, else the faster one."""
    da = abs(a.delta_to_exit_fl)
    db = abs(b.delta_to_exit_fl)
    if da != db:
        return ia if da > db else ib
    if a.ground_speed != b.ground_speed:
        return ia if a.ground_speed > b.ground_speed else ib
    return min(ia, ib)


def clearance_plan(aircraft: Sequence[AircraftState], config: OracleConfig = OracleConfig()) -> list[dict]:
    """Per aircraft, the level/heading/speed clearances the scripted controller would issue."""
    n = len(aircraft)
    plan = [{"level": 0, "heading": 0, "speed": 0} for _ in range(n)]
    if n == 0:
        return plan
    active = [a.time_to_exit >= config.active_min_tte for a in aircraft]
    dist, closing = pair_geometry(aircraft)
    lookahead = config.horizon / 2.0 if config.conflict_lookahead_s is None else config.conflict_lookahead_s
    projected = projected_separation(dist, closing, lookahead)
    pos, _ = _local_kinematics(aircraft)

    for i, a in enumerate(aircraft):
        if needs_level_clearance(a):
            plan[i]["level"] += 1
        if not active[i]:
            continue
        n_block = sum(1 for j, b in enumerate(aircraft)
                      if j != i and dist[i, j] < config.block_distance_nm and blocks(b, a))
        plan[i]["level"] += min(n_block, config.max_step_clearances)

    for i in range(n):
        for j in range(i + 1, n):
            a, b = aircraft[i], aircraft[j]
            if not (active[i] and active[j]) or not _same_levels(a, b, config.vertical_margin_fl,
                                                                       config.conflict_span_to_exit):
                continue
            if projected[i, j] < config.conflict_distance_nm:
                m = _mover(a, b, i, j)
                plan[m]["heading"] += 1 if aircraft[m].on_heading else 2
                continue
            # in-trail: similar tracks, one behind the other and catching up
            cos_tracks = float(np.dot(a.track_unit_vector, b.track_unit_vector))
            if cos_tracks < math.cos(math.radians(config.trail_track_deg)):
                continue
            rel = pos[j] - pos[i]
            if dist[i, j] > config.trail_distance_nm:
                continue
            ahead_j = float(rel @ np.asarray(a.track_unit_vector)) > 0
            follower, leader = (i, j) if ahead_j else (j, i)
            f, l = aircraft[follower], aircraft[leader]
            if f.ground_speed - l.ground_speed > config.trail_speed_kt and not f.speed_control:
                plan[follower]["speed"] += 1
    return plan


def label_aircraft(aircraft: Sequence[AircraftState], config: OracleConfig = OracleConfig()) -> dict[str, int]:
    plan = clearance_plan(aircraft, config)
    return {a.callsign: min(sum(p.values()), config.max_per_aircraft) for a, p in zip(aircraft, plan)}


def label_scenario(s: Scenario, config: OracleConfig = OracleConfig()) -> Scenario:
    return s.with_labels(label_aircraft(s.aircraft, config))


def oracle_controller(stream: Iterable[Scenario], horizon: float | None = None,
                      config: OracleConfig = OracleConfig()) -> list[Scenario]:
    """Attach per-aircraft clearance counts over the next ``horizon`` seconds (default 600) to every snapshot."""
    if horizon is not None and horizon != config.horizon:
        config = replace(config, horizon=float(horizon))
    return [label_scenario(s, config) for s in stream]
