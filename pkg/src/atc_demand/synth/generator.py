"""Deterministic traffic simulation producing time-ordered sector snapshots.

Aircraft arrive as a Poisson process on straight route templates through a
convex sector. A simple executive controller in the loop issues climb and
descent clearances (stepping when another aircraft is in the way), vectors
and speed restrictions, so snapshots carry realistic CFL, step-climb and
heading/speed flags. Arrival rate and the vertical/level route mix are
modulated on different periods, which keeps the clearance load from being a
simple function of the traffic count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigError
from ..rng import substream
from ..scenario import (AircraftState, EngineType, ExitDirection, Scenario, SectorGeometry, WakeCategory,
                        project_time_to_exit)

DEFAULT_ORIGIN = (52.3, -1.2)
DEFAULT_SECTOR_NM = ((-40.0, -20.0), (-15.0, -35.0), (25.0, -30.0), (40.0, 5.0), (20.0, 35.0), (-30.0, 30.0))


@dataclass(frozen=True)
class RouteTemplate:
    """Straight route between two fixes (local NM); each flight is offset laterally by up to ``jitter_nm``."""

    name: str
    entry: tuple[float, float]
    exit: tuple[float, float]
    weight: float = 1.0
    jitter_nm: float = 25.0


DEFAULT_ROUTES = (
    RouteTemplate("N_S", (0.0, 75.0), (0.0, -75.0)),
    RouteTemplate("S_N", (8.0, -75.0), (-8.0, 75.0)),
    RouteTemplate("SW_NE", (-60.0, -50.0), (55.0, 50.0)),
    RouteTemplate("W_E", (-75.0, 3.0), (75.0, 8.0)),
    RouteTemplate("E_W", (75.0, -6.0), (-75.0, -2.0)),
    RouteTemplate("NW_SE", (-55.0, 55.0), (60.0, -50.0)),
)


@dataclass(frozen=True)
class SynthConfig:
    sector_vertices: Optional[tuple[tuple[float, float], ...]] = None  # (lat, lon); default hexagon
    origin: tuple[float, float] = DEFAULT_ORIGIN
    sector_id: str = "SYN1"
    fl_band: tuple[float, float] = (215.0, 305.0)
    fl_clamp: float = 10.0
    buffer_deg: float = 0.3
    arrival_rate: float = 40.0            # aircraft per hour (mean)
    rate_amplitude: float = 0.45          # relative modulation of the arrival rate
    rate_period_s: float = 6600.0
    vertical_share: float = 0.45          # mean fraction of flights that change level in the sector
    mix_amplitude: float = 0.8            # relative modulation of that fraction
    mix_period_s: float = 4200.0
    levels: tuple[float, ...] = tuple(float(x) for x in range(220, 301, 10))
    level_changes: tuple[float, ...] = (20.0, 30.0, 40.0, 50.0, 60.0)
    routes: tuple[RouteTemplate, ...] = DEFAULT_ROUTES
    engine_mix: tuple[float, float, float] = (0.03, 0.12, 0.85)   # piston, turboprop, jet
    snapshot_interval: float = 180.0
    horizon: float = 600.0
    hours: float = 100.0
    time_step: float = 10.0
    warmup_s: float = 1800.0
    start_time: float = 1_700_000_000.0
    comm_lead_s: float = 120.0
    clearance_delay_s: tuple[float, float] = (0.0, 240.0)
    step_probability: float = 0.4         # chance a blocked aircraft gets an intermediate level, else holds
    seed: int = 0

    def __post_init__(self):
        if self.arrival_rate <= 0:
            raise ConfigError("arrival_rate must be > 0")
        if self.snapshot_interval <= 0 or self.time_step <= 0 or self.hours <= 0:
            raise ConfigError("snapshot_interval, time_step and hours must be > 0")
        if not 0 <= self.rate_amplitude < 1 or not 0 <= self.mix_amplitude < 1:
            raise ConfigError("modulation amplitudes must lie in [0, 1)")
        if self.fl_band[0] >= self.fl_band[1]:
            raise ConfigError("fl_band must be increasing")
        if not 0 < self.vertical_share < 1:
            raise ConfigError("vertical_share must lie in (0, 1)")
        if not self.levels:
            raise ConfigError("need at least one entry level")
        if not self.routes or any(r.weight <= 0 for r in self.routes):
            raise ConfigError("need at least one route with positive weight")
        if abs(sum(self.engine_mix) - 1.0) > 1e-9 or min(self.engine_mix) < 0:
            raise ConfigError("engine_mix must be a probability vector")
        self.sector()  # validates the polygon

    def sector(self) -> SectorGeometry:
        if self.sector_vertices is None:
            return SectorGeometry.from_local_nm(DEFAULT_SECTOR_NM, self.origin, self.sector_id)
        return SectorGeometry(tuple(self.sector_vertices), self.origin, self.sector_id)

    @property
    def fl_limits(self) -> tuple[float, float]:
        return self.fl_band[0] - self.fl_clamp, self.fl_band[1] + self.fl_clamp

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "routes"}
        d["routes"] = [r.__dict__ for r in self.routes]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "routes" in d:
            d["routes"] = tuple(RouteTemplate(**{k: tuple(v) if isinstance(v, list) else v
                                                 for k, v in r.items()}) for r in d["routes"])
        for key in ("origin", "fl_band", "engine_mix", "levels", "level_changes", "clearance_delay_s"):
            if key in d:
                d[key] = tuple(d[key])
        if d.get("sector_vertices") is not None:
            d["sector_vertices"] = tuple(tuple(v) for v in d["sector_vertices"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthetic-data options: {sorted(unknown)}")
        return cls(**d)


_SPEEDS = {EngineType.PISTON: (140.0, 180.0), EngineType.TURBOPROP: (260.0, 320.0), EngineType.JET: (420.0, 480.0)}
_RATES = {EngineType.PISTON: (500.0, 800.0), EngineType.TURBOPROP: (1000.0, 1500.0), EngineType.JET: (1500.0, 2500.0)}


@dataclass
class Flight:
    callsign: str
    spawn: float
    start: np.ndarray          # local NM
    velocity: np.ndarray       # NM/s
    length_s: float            # time to reach the exit fix
    fl: float
    xfl: float
    rate: float                # fpm magnitude
    engine: EngineType
    wake: WakeCategory
    exit_direction: ExitDirection
    cfl: float = 0.0
    step: bool = False
    next_action: float = math.inf
    on_heading_until: float = -math.inf
    speed_until: float = -math.inf
    first_seen: Optional[float] = None
    last_seen: Optional[float] = None

    def position(self, t: float) -> np.ndarray:
        return self.start + self.velocity * (t - self.spawn)

    @property
    def ground_speed(self) -> float:
        return float(np.linalg.norm(self.velocity) * 3600.0)

    @property
    def track(self) -> np.ndarray:
        return self.velocity / np.linalg.norm(self.velocity)


@dataclass
class SimulationResult:
    scenarios: list
    flights: list = field(default_factory=list)
    duration_s: float = 0.0


def _exit_direction(vec: np.ndarray) -> ExitDirection:
    east, north = vec
    if abs(north) >= abs(east):
        return ExitDirection.N if north > 0 else ExitDirection.S
    return ExitDirection.E if east > 0 else ExitDirection.W


def _min_sep(a: Flight, b: Flight, t: float, horizon: float) -> float:
    r = b.position(t) - a.position(t)
    w = b.velocity - a.velocity
    ww = float(w @ w)
    tc = 0.0 if ww == 0 else min(max(-float(r @ w) / ww, 0.0), horizon)
    return float(np.linalg.norm(r + w * tc))


class _Simulator:
    def __init__(self, config: SynthConfig):
        self.cfg = config
        self.sector = config.sector()
        self.rng_arrivals = substream(config.seed, "arrivals")
        self.rng_flights = substream(config.seed, "flights")
        self.rng_control = substream(config.seed, "controller")
        self.flights: list[Flight] = []
        self.active: list[Flight] = []
        self.count = 0
        lim = config.fl_limits
        self.fl_lo, self.fl_hi = lim

    # arrivals ---------------------------------------------------------------
    def rate(self, t: float) -> float:
        c = self.cfg
        return c.arrival_rate * (1.0 + c.rate_amplitude * math.sin(2 * math.pi * t / c.rate_period_s)) / 3600.0

    def vertical_share(self, t: float) -> float:
        c = self.cfg
        share = c.vertical_share * (1.0 + c.mix_amplitude * math.sin(2 * math.pi * t / c.mix_period_s + 1.0))
        return min(max(share, 0.0), 1.0)

    def arrival_times(self, t0: float, t1: float) -> list[float]:
        lam_max = self.cfg.arrival_rate * (1.0 + self.cfg.rate_amplitude) / 3600.0
        times = []
        t = t0
        while True:
            t += self.rng_arrivals.exponential(1.0 / lam_max)
            if t >= t1:
                return times
            if self.rng_arrivals.random() < self.rate(t) / lam_max:
                times.append(t)

    def spawn(self, t: float) -> Flight:
        c = self.cfg
        rng = self.rng_flights
        weights = np.array([r.weight for r in c.routes])
        route = c.routes[int(rng.choice(len(c.routes), p=weights / weights.sum()))]
        entry = np.asarray(route.entry, dtype=float)
        exit_ = np.asarray(route.exit, dtype=float)
        d = exit_ - entry
        normal = np.array([-d[1], d[0]]) / np.linalg.norm(d)
        shift = rng.uniform(-route.jitter_nm, route.jitter_nm)
        entry = entry + normal * (shift + rng.uniform(-0.5, 0.5) * route.jitter_nm)
        exit_ = exit_ + normal * (shift + rng.uniform(-0.5, 0.5) * route.jitter_nm)
        engine = EngineType(int(rng.choice(3, p=np.asarray(c.engine_mix))))
        wake = WakeCategory(int(rng.integers(0, 3)))
        gs = rng.uniform(*_SPEEDS[engine])
        rate = rng.uniform(*_RATES[engine])
        fl = float(rng.choice(c.levels))
        xfl = fl
        if rng.random() < self.vertical_share(t):
            change = float(rng.choice(c.level_changes))
            up, down = fl + change <= c.fl_band[1], fl - change >= c.fl_band[0]
            if up and (not down or rng.random() < 0.5):
                xfl = fl + change
            elif down:
                xfl = fl - change
        fl = min(max(fl, self.fl_lo), self.fl_hi)
        xfl = min(max(xfl, self.fl_lo), self.fl_hi)
        length = float(np.linalg.norm(exit_ - entry))
        velocity = (exit_ - entry) / length * gs / 3600.0
        self.count += 1
        return Flight(f"SYN{self.count:05d}", t, entry, velocity, length / (gs / 3600.0), fl, xfl, rate,
                      engine, wake, _exit_direction(exit_ - entry), cfl=fl)

    # controller -------------------------------------------------------------
    def in_comm(self, f: Flight, t: float) -> bool:
        p = f.position(t)
        lat, lon = self.sector.from_local(p[0], p[1])
        if self.sector.contains(float(lat), float(lon)):
            return True
        ahead = f.position(t + self.cfg.comm_lead_s)
        lat, lon = self.sector.from_local(ahead[0], ahead[1])
        return self.sector.contains(float(lat), float(lon))

    def blockers(self, f: Flight, t: float) -> list[Flight]:
        lo, hi = sorted((f.fl, f.xfl))
        out = []
        for g in self.active:
            if g is f:
                continue
            glo, ghi = sorted((g.fl, g.cfl))
            if glo < hi and ghi > lo and _min_sep(f, g, t, 300.0) < 20.0:
                out.append(g)
        return out

    def control(self, f: Flight, t: float):
        rng = self.rng_control
        if f.next_action == math.inf:
            if self.in_comm(f, t):
                f.next_action = t + rng.uniform(*self.cfg.clearance_delay_s)
            return
        if t < f.next_action:
            return
        f.next_action = t + 60.0
        if abs(f.cfl - f.xfl) >= 0.5:
            blocking = self.blockers(f, t)
            if not blocking:
                f.cfl, f.step = f.xfl, False
            elif rng.random() < self.cfg.step_probability:
                up = f.xfl > f.fl
                if up:
                    limit = min(min(g.fl, g.cfl) for g in blocking) - 10.0
                    target = math.floor(limit / 10.0) * 10.0
                    if target >= f.fl + 10.0 and target > f.cfl:
                        f.cfl, f.step = target, True
                else:
                    limit = max(max(g.fl, g.cfl) for g in blocking) + 10.0
                    target = math.ceil(limit / 10.0) * 10.0
                    if target <= f.fl - 10.0 and target < f.cfl:
                        f.cfl, f.step = target, True
        for g in self.active:
            if g is f:
                continue
            glo, ghi = sorted((g.fl, g.cfl))
            flo, fhi = sorted((f.fl, f.cfl))
            if flo - 10 < ghi and glo - 10 < fhi and _min_sep(f, g, t, 600.0) < 8.0:
                if rng.random() < 0.5 and t > f.on_heading_until:
                    f.on_heading_until = t + rng.uniform(120.0, 360.0)
            elif (float(f.track @ g.track) > 0.97 and f.ground_speed > g.ground_speed + 10.0
                  and float((g.position(t) - f.position(t)) @ f.track) > 0
                  and float(np.linalg.norm(g.position(t) - f.position(t))) < 25.0):
                if rng.random() < 0.5 and t > f.speed_until:
                    f.speed_until = t + rng.uniform(180.0, 420.0)

    def climb(self, f: Flight, dt: float):
        if abs(f.fl - f.cfl) < 1e-9:
            f.fl = f.cfl
            return
        step = f.rate / 100.0 * dt / 60.0
        if f.cfl > f.fl:
            f.fl = min(f.cfl, f.fl + step)
        else:
            f.fl = max(f.cfl, f.fl - step)
        if abs(f.fl - f.cfl) < 1e-9:
            f.fl = f.cfl
            if f.cfl == f.xfl:
                f.step = False
        f.fl = min(max(f.fl, self.fl_lo), self.fl_hi)

    # snapshots --------------------------------------------------------------
    def state(self, f: Flight, t: float) -> Optional[AircraftState]:
        p = f.position(t)
        lat, lon = self.sector.from_local(p[0], p[1])
        lat, lon = float(lat), float(lon)
        if not self.sector.in_buffer_region(lat, lon, self.cfg.buffer_deg):
            return None
        moving = abs(f.fl - f.cfl) > 1e-9
        climb_rate = (f.rate if f.cfl > f.fl else -f.rate) if moving else 0.0
        track = tuple(float(x) for x in f.track)
        norm = math.hypot(*track)
        track = (track[0] / norm, track[1] / norm)
        a = AircraftState(
            callsign=f.callsign, lat=lat, lon=lon, flight_level=round(f.fl, 6), cleared_fl=f.cfl, exit_fl=f.xfl,
            ground_speed=f.ground_speed, track_unit_vector=track, climb_rate=climb_rate,
            step_climb=bool(f.step and abs(f.cfl - f.xfl) >= 0.5), engine_type=f.engine, wake_category=f.wake,
            on_heading=t < f.on_heading_until, speed_control=t < f.speed_until,
            comm_state=self.in_comm(f, t), time_to_exit=0.0,
            exit_direction=f.exit_direction)
        tte = project_time_to_exit(a, self.sector)
        return AircraftState(**{**a.__dict__, "time_to_exit": tte})

    def run(self) -> SimulationResult:
        c = self.cfg
        t0 = -c.warmup_s
        duration = c.hours * 3600.0
        arrivals = self.arrival_times(t0, duration)
        ai = 0
        dt = c.time_step
        n_steps = int(math.floor((duration - t0) / dt)) + 1
        snap_every = c.snapshot_interval
        next_snap = 0.0
        snapshots = []
        for k in range(n_steps):
            t = t0 + k * dt
            while ai < len(arrivals) and arrivals[ai] <= t:
                f = self.spawn(arrivals[ai])
                self.flights.append(f)
                self.active.append(f)
                ai += 1
            self.active = [f for f in self.active if t - f.spawn <= f.length_s]
            for f in self.active:
                self.control(f, t)
            for f in self.active:
                self.climb(f, dt)
            for f in self.active:
                p = f.position(t)
                lat, lon = self.sector.from_local(p[0], p[1])
                if self.sector.in_buffer_region(float(lat), float(lon), c.buffer_deg):
                    if f.first_seen is None:
                        f.first_seen = t
                    f.last_seen = t
            if t >= next_snap - 1e-9 and t >= 0:
                states = [s for s in (self.state(f, t) for f in self.active) if s is not None]
                if states:
                    snapshots.append(Scenario(c.start_time + t, tuple(states), None, c.sector_id))
                next_snap += snap_every
        return SimulationResult(snapshots, self.flights, duration)


def simulate(config: SynthConfig) -> SimulationResult:
    return _Simulator(config).run()


def generate_stream(config: SynthConfig) -> list[Scenario]:
    """Unlabelled, time-ordered snapshots; snapshots with no aircraft are dropped."""
    return simulate(config).scenarios


def generate_dataset(config: SynthConfig, oracle_config=None) -> list[Scenario]:
    """Snapshots labelled by the scripted controller over ``config.horizon``."""
    from .oracle import OracleConfig, oracle_controller
    oc = oracle_config or OracleConfig(horizon=config.horizon)
    return oracle_controller(generate_stream(config), config.horizon, oc)
