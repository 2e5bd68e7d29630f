"""Per-aircraft task demand by node ablation, and its aggregation over a scenario stream.

The demand of aircraft i is the drop in predicted clearances when i (and
its edges) are removed: phi_i = C(G) - C(G without i). C is the ensemble's
graph-level median, clamped at zero, with C(empty graph) = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .graphs import DEFAULT_FL_BUFFER, ScenarioGraph, build_graph
from .scenario import Scenario


@dataclass(frozen=True)
class DemandReport:
    timestamp: float
    per_aircraft: dict          # callsign -> phi
    scenario_total: float
    C_of_G: float
    p10: float
    p90: float
    members: int = 1

    def __post_init__(self):
        total = math.fsum(self.per_aircraft.values())
        if abs(total - self.scenario_total) > 1e-9:
            raise DataError("scenario_total does not equal the sum of per-aircraft demand")


def _ensemble(model):
    from .gnn.training import as_ensemble
    return as_ensemble(model)


def clearance_count(model, g: Optional[ScenarioGraph]) -> float:
    """Predicted clearances for a graph; ``None`` stands for the empty graph."""
    if g is None or g.n_nodes == 0:
        return 0.0
    return float(_ensemble(model).predict([g]).graph_median[0])


def aircraft_demand(model, g: ScenarioGraph, i: int) -> float:
    if not 0 <= i < g.n_nodes:
        raise IndexError(f"node index {i} out of range for {g.n_nodes} nodes")
    return clearance_count(model, g) - clearance_count(model, g.without_node(i))


def scenario_demand(model, g: ScenarioGraph) -> DemandReport:
    """All phi_i of one graph from a single batched evaluation of G and its n leave-one-out graphs."""
    ens = _ensemble(model)
    reduced = [g.without_node(i) for i in range(g.n_nodes)]
    present = [r for r in reduced if r is not None]
    pred = ens.predict([g] + present)
    c_full = float(pred.graph_median[0])
    c_wo = iter(pred.graph_median[1:])
    phis = {}
    for node_id, r in zip(g.node_ids, reduced):
        phis[node_id] = c_full - (float(next(c_wo)) if r is not None else 0.0)
    total = math.fsum(phis.values())
    q = pred.graph_quantiles[0]
    return DemandReport(g.timestamp, phis, total, c_full, float(q[0]), float(q[2]), len(ens))


def demand_timeline(model, stream: Sequence[Scenario], interval: float = 60.0,
                    fl_buffer: float = DEFAULT_FL_BUFFER) -> list[Optional[DemandReport]]:
    """One report per tick from the first to the last timestamp; ticks without a scenario are None.

    Tick k covers [t0 + k*interval, t0 + (k+1)*interval) and uses the first
    scenario falling in it.
    """
    stream = list(stream)
    if not stream:
        return []
    if interval <= 0:
        raise DataError("interval must be > 0")
    times = [s.timestamp for s in stream]
    if any(b < a for a, b in zip(times, times[1:])):
        raise DataError("scenario stream is not in time order")
    ens = _ensemble(model)
    stats = ens.members[0].stats
    t0 = times[0]
    n_ticks = int(math.floor((times[-1] - t0) / interval + 1e-9)) + 1
    out: list[Optional[DemandReport]] = [None] * n_ticks
    for s in stream:
        k = int(math.floor((s.timestamp - t0) / interval + 1e-9))
        if out[k] is None and len(s.aircraft):
            out[k] = scenario_demand(ens, build_graph(s, stats, fl_buffer))
    return out


def timeline_totals(reports: Sequence[Optional[DemandReport]]) -> list[Optional[float]]:
    return [None if r is None else r.scenario_total for r in reports]


def demand_rows(reports: Sequence[Optional[DemandReport]]) -> list[dict]:
    """Flat (timestamp, callsign, phi, C_of_G, p10, p90) rows for CSV output."""
    rows = []
    for r in reports:
        if r is None:
            continue
        for cs, phi in r.per_aircraft.items():
            rows.append({"timestamp": r.timestamp, "callsign": cs, "phi": phi,
                         "C_of_G": r.C_of_G, "p10": r.p10, "p90": r.p90})
    return rows
