import math

import numpy as np
import pytest

from atc_demand.demand import (aircraft_demand, clearance_count, demand_rows, demand_timeline, scenario_demand,
                               timeline_totals)
from atc_demand.errors import DataError
from atc_demand.graphs import build_graph
from atc_demand.scenario import Scenario


def _graph(ensemble, s):
    return build_graph(s, ensemble.members[0].stats)


def _brute_force_phi(ensemble, s, i):
    """C(G) - C(G') where G' is rebuilt from the scenario with aircraft i removed."""
    full = ensemble.predict([_graph(ensemble, s)]).graph_median[0]
    rest = tuple(a for k, a in enumerate(s.aircraft) if k != i)
    if not rest:
        return float(full)
    reduced = Scenario(s.timestamp, rest)
    return float(full - ensemble.predict([_graph(ensemble, reduced)]).graph_median[0])


def test_single_aircraft_demand_is_whole_prediction(small_ensemble, small_dataset):
    s = next(x for x in small_dataset if len(x.aircraft) >= 2)
    lone = Scenario(s.timestamp, s.aircraft[:1])
    g = _graph(small_ensemble, lone)
    report = scenario_demand(small_ensemble, g)
    assert report.per_aircraft[lone.aircraft[0].callsign] == report.C_of_G
    assert clearance_count(small_ensemble, None) == 0.0


def test_demand_matches_leave_one_out_oracle(small_ensemble, small_dataset):
    checked = 0
    for s in small_dataset[:40]:
        g = _graph(small_ensemble, s)
        report = scenario_demand(small_ensemble, g)
        for i, a in enumerate(s.aircraft):
            oracle = _brute_force_phi(small_ensemble, s, i)
            assert report.per_aircraft[a.callsign] == pytest.approx(oracle, rel=0, abs=1e-9)
            assert aircraft_demand(small_ensemble, g, i) == pytest.approx(oracle, rel=0, abs=1e-9)
            checked += 1
    assert checked > 100


def test_demand_sums_to_scenario_total(small_ensemble, small_dataset):
    for s in small_dataset[:60]:
        r = scenario_demand(small_ensemble, _graph(small_ensemble, s))
        assert abs(math.fsum(r.per_aircraft.values()) - r.scenario_total) <= 1e-9
        assert r.p10 <= r.C_of_G <= r.p90
        assert r.members == len(small_ensemble)


def test_demand_is_consistent_under_reordering(small_ensemble, small_dataset):
    rng = np.random.default_rng(0)
    for s in [x for x in small_dataset if len(x.aircraft) >= 3][:15]:
        perm = rng.permutation(len(s.aircraft))
        shuffled = Scenario(s.timestamp, tuple(s.aircraft[k] for k in perm), s.labels)
        a = scenario_demand(small_ensemble, _graph(small_ensemble, s)).per_aircraft
        b = scenario_demand(small_ensemble, _graph(small_ensemble, shuffled)).per_aircraft
        assert a.keys() == b.keys()
        for cs in a:
            assert a[cs] == pytest.approx(b[cs], abs=1e-9)


def test_single_member_checkpoint_is_accepted(small_ensemble, small_dataset):
    m = small_ensemble.members[0]
    s = small_dataset[5]
    r = scenario_demand(m, _graph(small_ensemble, s))
    assert r.members == 1


def test_out_of_range_node(small_ensemble, small_dataset):
    g = _graph(small_ensemble, small_dataset[0])
    with pytest.raises(IndexError):
        aircraft_demand(small_ensemble, g, g.n_nodes)


def test_timeline_ticks_and_gaps(small_ensemble, small_dataset):
    base = small_dataset[:5]
    t0 = base[0].timestamp
    stream = [Scenario(t0 + dt, s.aircraft) for dt, s in zip((0, 60, 180, 200, 300), base)]
    reports = demand_timeline(small_ensemble, stream, interval=60)
    assert len(reports) == 6
    assert [r is None for r in reports] == [False, False, True, False, True, False]
    assert reports[3].timestamp == t0 + 180      # first scenario of the tick wins
    totals = timeline_totals(reports)
    assert totals[2] is None and totals[0] == reports[0].scenario_total
    rows = demand_rows(reports)
    assert len(rows) == sum(len(s.aircraft) for s in (stream[0], stream[1], stream[2], stream[4]))
    assert demand_timeline(small_ensemble, []) == []


def test_timeline_rejects_unordered_stream(small_ensemble, small_dataset):
    a, b = small_dataset[:2]
    with pytest.raises(DataError):
        demand_timeline(small_ensemble, [b, a] if b.timestamp > a.timestamp else [a, b])
    with pytest.raises(DataError):
        demand_timeline(small_ensemble, [a], interval=0)
