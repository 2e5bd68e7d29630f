"""Line-delimited JSON dataset files.

Line 1 is a schema header (format version, units, flight-level band); every
following line is one scenario. Keys are sorted and floats are written in
shortest round-trip form, so identical datasets give identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Optional

from ..errors import DataError
from ..scenario import AircraftState, Scenario

SCHEMA_VERSION = "atc-demand-dataset/1"
UNITS = {
    "timestamp": "s since epoch",
    "lat": "deg", "lon": "deg",
    "flight_level": "FL (100 ft)", "cleared_fl": "FL (100 ft)", "exit_fl": "FL (100 ft)",
    "ground_speed": "kt",
    "track_unit_vector": "(east, north), unit length",
    "climb_rate": "ft/min",
    "time_to_exit": "s",
}
DEFAULT_FL_BAND = (215.0, 305.0)
DEFAULT_FL_MARGIN = 10.0

_FIELDS = ("callsign", "lat", "lon", "flight_level", "cleared_fl", "exit_fl", "ground_speed",
           "track_unit_vector", "climb_rate", "step_climb", "engine_type", "wake_category", "on_heading",
           "speed_control", "comm_state", "time_to_exit", "exit_direction")


def aircraft_to_record(a: AircraftState) -> dict:
    rec = {}
    for name in _FIELDS:
        v = getattr(a, name)
        if name == "track_unit_vector":
            v = [float(v[0]), float(v[1])]
        elif name in ("engine_type", "wake_category", "exit_direction"):
            v = v.name.lower()
        elif isinstance(v, bool) or name == "callsign":
            pass
        else:
            v = float(v)
        rec[name] = v
    return rec


def scenario_to_record(s: Scenario) -> dict:
    return {"timestamp": float(s.timestamp), "sector_id": s.sector_id,
            "aircraft": [aircraft_to_record(a) for a in s.aircraft],
            "labels": None if s.labels is None else dict(s.labels)}


def _enum(cls, value):
    if isinstance(value, str):
        try:
            return cls[value.upper()]
        except KeyError:
            raise DataError(f"unknown {cls.__name__} {value!r}") from None
    return cls(int(value))


def aircraft_from_record(rec: dict) -> AircraftState:
    from ..scenario import EngineType, ExitDirection, WakeCategory
    missing = [f for f in _FIELDS if f not in rec]
    if missing:
        raise DataError(f"aircraft record missing fields {missing}")
    unknown = sorted(set(rec) - set(_FIELDS))
    if unknown:
        raise DataError(f"aircraft record has unknown fields {unknown}")
    kw = dict(rec)
    kw["track_unit_vector"] = tuple(rec["track_unit_vector"])
    kw["engine_type"] = _enum(EngineType, rec["engine_type"])
    kw["wake_category"] = _enum(WakeCategory, rec["wake_category"])
    kw["exit_direction"] = _enum(ExitDirection, rec["exit_direction"])
    for b in ("step_climb", "on_heading", "speed_control", "comm_state"):
        if not isinstance(rec[b], bool):
            raise DataError(f"field {b} must be a boolean, got {rec[b]!r}")
    return AircraftState(**kw)


def _check_band(a: AircraftState, band, margin):
    lo, hi = band[0] - margin, band[1] + margin
    for name in ("flight_level", "cleared_fl", "exit_fl"):
        v = getattr(a, name)
        if not lo <= v <= hi:
            raise DataError(f"{a.callsign}: {name} = {v} outside [{lo}, {hi}] (flight levels are in hundreds of feet)")


def scenario_from_record(rec: dict, band=DEFAULT_FL_BAND, margin=DEFAULT_FL_MARGIN) -> Scenario:
    for key in ("timestamp", "aircraft"):
        if key not in rec:
            raise DataError(f"scenario record missing {key!r}")
    aircraft = tuple(aircraft_from_record(a) for a in rec["aircraft"])
    if band is not None:
        for a in aircraft:
            _check_band(a, band, margin)
    return Scenario(float(rec["timestamp"]), aircraft, rec.get("labels"), rec.get("sector_id", ""))


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def header_record(fl_band=DEFAULT_FL_BAND, fl_margin=DEFAULT_FL_MARGIN, meta: Optional[dict] = None) -> dict:
    h = {"schema": SCHEMA_VERSION, "units": UNITS, "fl_band": list(fl_band), "fl_margin": fl_margin}
    if meta:
        h["meta"] = meta
    return h


def write_dataset(path, scenarios: Iterable[Scenario], fl_band=DEFAULT_FL_BAND,
                  fl_margin=DEFAULT_FL_MARGIN, meta: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dump(header_record(fl_band, fl_margin, meta)) + "\n")
        for s in scenarios:
            fh.write(_dump(scenario_to_record(s)) + "\n")
    return path


def read_dataset(path, validate_band: bool = True) -> list[Scenario]:
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    out = []
    with fh:
        header = None
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if header is None:
                if not isinstance(rec, dict) or "schema" not in rec:
                    raise DataError(f"{path}:{lineno}: missing schema header")
                if rec["schema"] != SCHEMA_VERSION:
                    raise DataError(f"{path}:{lineno}: unsupported schema {rec['schema']!r}, "
                                    f"expected {SCHEMA_VERSION!r}")
                header = rec
                band = tuple(rec.get("fl_band", DEFAULT_FL_BAND)) if validate_band else None
                margin = float(rec.get("fl_margin", DEFAULT_FL_MARGIN))
                continue
            try:
                if not isinstance(rec, dict):
                    raise DataError("scenario record must be an object")
                out.append(scenario_from_record(rec, band, margin))
            except (DataError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if header is None:
        raise DataError(f"{path}: empty dataset file")
    return out

