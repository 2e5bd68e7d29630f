"""End-to-end acceptance checks on seeded synthetic data.

Each numbered criterion prints one ``PASS``/``FAIL`` line. The shared fixture
trains a single 5-fold ensemble on about 2,000 scenarios (several minutes on
one CPU) and every data-dependent criterion reuses it.
"""

import itertools
import math

import numpy as np
import pytest

from atc_demand.analysis import (all_feature_importances, mae_with_ci, pearson, structure_ablation_eval,
                                 wilcoxon_test)
from atc_demand.baselines import minimum_clearance
from atc_demand.cli import main
from atc_demand.demand import demand_timeline, scenario_demand, timeline_totals
from atc_demand.gnn import GraphBatch, TrainConfig, cross_validate, pinball_loss
from atc_demand.graphs import build_graph, build_graphs
from atc_demand.indicators import IndicatorGraph, edge_weight, indicators, lag_correlation, scenario_indicators
from atc_demand.scenario import NODE_FEATURE_NAMES, Scenario, identity_stats
from atc_demand.synth import SynthConfig, generate_dataset
from atc_demand.synth.oracle import label_aircraft

from conftest import gradient_check, make_aircraft, random_scenario, small_graphs

pytestmark = pytest.mark.slow

NOISE_FEATURE = "wake_category"         # drawn independently of everything the oracle reads
DOMINANT_FEATURE = "delta_to_exit_fl"   # drives the level and step-clearance terms


@pytest.fixture
def verdict(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def world():
    train = generate_dataset(SynthConfig(hours=105, seed=1))
    test = generate_dataset(SynthConfig(hours=20, seed=99))
    cv = cross_validate(train, k=5, config=TrainConfig(epochs=50, seed=0))
    ens = cv.ensemble
    graphs = build_graphs(test, ens.members[0].stats)
    return {"train": train, "test": test, "cv": cv, "ensemble": ens, "graphs": graphs,
            "pred": ens.predict(graphs), "truth": np.array([s.label_total for s in test], dtype=float)}


@pytest.fixture(scope="module")
def ablations(world):
    ens, test = world["ensemble"], world["test"]
    return {"edgeless": structure_ablation_eval(ens, test, "edgeless", seed=0),
            "random": structure_ablation_eval(ens, test, "random", samples=20, seed=0),
            "features": {r.name: r for r in all_feature_importances(ens, test, repeats=20, seed=0)}}


@pytest.fixture(scope="module")
def timeline(world):
    stream = generate_dataset(SynthConfig(hours=4, snapshot_interval=60.0, seed=5))
    reports = demand_timeline(world["ensemble"], stream, interval=60.0)
    by_time = {s.timestamp: s for s in stream}
    rows = [(r, by_time[r.timestamp]) for r in reports if r is not None]
    return {"reports": reports, "stream": stream,
            "demand": np.array([r.scenario_total for r, _ in rows]),
            "clearances": np.array([s.label_total for _, s in rows], dtype=float),
            "count": np.array([len(s.aircraft) for _, s in rows], dtype=float),
            "indicators": [scenario_indicators(s).as_dict() for _, s in rows]}


# --- 1 -----------------------------------------------------------------------

def test_c01_gradient_correctness(verdict):
    from atc_demand.gnn import ModelDims, init_params
    worst = 0.0
    for seed in range(5):
        params = init_params(ModelDims(), np.random.default_rng(seed))
        for name, t in params.tensors.items():
            if name.endswith(("bias", "b1", "b2")):
                t[...] = np.random.default_rng(seed + 50).normal(0, 0.1, t.shape)
        batch = GraphBatch(small_graphs(300 + seed, count=5, lo=3, hi=8), require_labels=True)
        result = gradient_check(params, batch, np.random.default_rng(seed), per_block=8)
        worst = max(worst, max(v[0] for v in result.values()))
    verdict("C1 gradient correctness", worst < 1e-4, f"worst relative error {worst:.2e} over 5 batches")


# --- 2 -----------------------------------------------------------------------

def _brute_edges(aircraft, buffer=10.0):
    def rng_(a):
        levels = (a.flight_level, a.cleared_fl, a.exit_fl)
        return min(levels) - buffer, max(levels) + buffer
    return {(i, j) for i, j in itertools.combinations(range(len(aircraft)), 2)
            if max(rng_(aircraft[i])[0], rng_(aircraft[j])[0]) <= min(rng_(aircraft[i])[1], rng_(aircraft[j])[1])}


def test_c02_graph_construction_oracle(verdict):
    rng = np.random.default_rng(77)
    mismatches = sum(build_graph(s, identity_stats()).edge_set() != _brute_edges(s.aircraft)
                     for s in (random_scenario(rng) for _ in range(200)))
    a = make_aircraft("A", fl=250, cfl=310, xfl=310)
    b = make_aircraft("B", fl=240, lat=52.2)
    c = make_aircraft("C", fl=320, lat=52.4)
    fig = build_graph(Scenario(0.0, (a, b, c)), identity_stats()).edge_set()
    verdict("C2 graph construction", mismatches == 0 and fig == {(0, 1), (0, 2)},
            f"{mismatches} mismatches on 200 scenarios; three-aircraft edges {sorted(fig)}")


# --- 3 -----------------------------------------------------------------------

def test_c03_baseline_ordering(world, verdict):
    truth, pred = world["truth"], world["pred"].graph_median
    mc = np.array([minimum_clearance(s) for s in world["test"]], dtype=float)
    gnn_mae, gnn_ci = mae_with_ci(pred, truth)
    mc_mae, mc_ci = mae_with_ci(mc, truth)
    p = wilcoxon_test(np.abs(pred - truth), np.abs(mc - truth)).p_value
    ok = len(world["train"]) >= 2000 and gnn_mae <= 0.8 * mc_mae and p < 0.01
    verdict("C3 baseline ordering", ok,
            f"n_train={len(world['train'])}, GNN MAE {gnn_mae:.3f}±{gnn_ci:.3f} vs min-clearance "
            f"{mc_mae:.3f}±{mc_ci:.3f} (ratio {gnn_mae / mc_mae:.2f}), Wilcoxon p={p:.2e}")


# --- 4 -----------------------------------------------------------------------

def test_c04_structure_ablation_ordering(ablations, verdict):
    e, r = ablations["edgeless"].delta_mae, ablations["random"].delta_mae
    best_feature = max(ablations["features"].values(), key=lambda x: x.delta_mae)
    ok = e > r > 0 and r > best_feature.delta_mae
    verdict("C4 structure ablation ordering", ok,
            f"edgeless {e:.3f} > random {r:.3f} > 0; largest feature delta {best_feature.name} "
            f"{best_feature.delta_mae:.3f}")


# --- 5 -----------------------------------------------------------------------

def test_c05_permutation_importance_calibration(ablations, verdict):
    feats = ablations["features"]
    noise = feats[NOISE_FEATURE]
    node_ranking = sorted((feats[n] for n in NODE_FEATURE_NAMES), key=lambda x: -x.delta_mae)
    ok = abs(noise.delta_mae) <= noise.ci95 and node_ranking[0].name == DOMINANT_FEATURE
    verdict("C5 permutation importance calibration", ok,
            f"noise feature {NOISE_FEATURE} delta {noise.delta_mae:+.4f} (scenario CI {noise.ci95:.4f}, "
            f"repeat CI {noise.repeat_ci95:.4f}); top node feature {node_ranking[0].name} "
            f"{node_ranking[0].delta_mae:.3f}")


# --- 6 -----------------------------------------------------------------------

def _crossing_construction(seed):
    """One climber whose vertical path is blocked by three level aircraft on parallel tracks."""
    rng = np.random.default_rng(seed)
    track = float(rng.uniform(0, 360))
    speed = float(rng.uniform(380, 460))
    t = math.radians(track)
    ux, uy = math.sin(t), math.cos(t)
    lat0, lon0 = 52.3 + rng.uniform(-0.1, 0.1), -1.2 + rng.uniform(-0.1, 0.1)
    kx = 60.0 * math.cos(math.radians(lat0))
    base = float(rng.choice([225.0, 230.0]))
    climber = make_aircraft("CLIMB", lat=lat0, lon=lon0, fl=base, cfl=base, xfl=base + 60, speed=speed,
                            track_deg=track, climb_rate=0.0, time_to_exit=float(rng.uniform(400, 700)))
    levels = [base + 15, base + 30, base + 45]
    others = []
    sides = [-float(rng.uniform(8, 12)), float(rng.uniform(8, 12)), float(rng.uniform(14, 18))]
    for k, fl in enumerate(levels):
        offset = sides[k]                  # across-track NM: clear of the conflict distance, inside blocking range
        along = float(rng.uniform(-4, 4))
        dx = offset * uy + along * ux
        dy = -offset * ux + along * uy
        others.append(make_aircraft(f"LVL{k}", lat=lat0 + dy / 60.0, lon=lon0 + dx / kx, fl=fl, speed=speed,
                                    track_deg=track, time_to_exit=float(rng.uniform(400, 700))))
    aircraft = (climber, *others)
    return Scenario(0.0, aircraft, label_aircraft(aircraft))


def test_c06_ablation_attribution(world, verdict):
    ens = world["ensemble"]
    stats = ens.members[0].stats
    hits = 0
    worst_sum = 0.0
    oracle_ok = True
    for seed in range(50):
        s = _crossing_construction(seed)
        labels = s.labels
        oracle_ok &= labels["CLIMB"] >= 2 and all(labels[f"LVL{k}"] == 0 for k in range(3))
        r = scenario_demand(ens, build_graph(s, stats))
        hits += max(r.per_aircraft, key=r.per_aircraft.get) == "CLIMB"
        worst_sum = max(worst_sum, abs(math.fsum(r.per_aircraft.values()) - r.scenario_total))
    ok = oracle_ok and hits >= 45 and worst_sum <= 1e-9
    verdict("C6 ablation attribution", ok,
            f"climber has max phi in {hits}/50 constructions; max |sum phi - total| = {worst_sum:.1e}; "
            f"oracle interactions only from the climber: {oracle_ok}")


# --- 7 -----------------------------------------------------------------------

def _brute_indicators(g):
    nbr = {v: {} for v in range(g.n)}
    for i, j, w in g.edges:
        nbr[i][j] = w
        nbr[j][i] = w
    deg = {v: len(nbr[v]) for v in nbr}
    strength = {v: sum(nbr[v].values()) for v in nbr}
    clus = []
    for v in range(g.n):
        k = deg[v]
        if k < 2:
            clus.append(0.0)
            continue
        acc = sum((nbr[v][a] * nbr[v][b] * nbr[a][b]) ** (1 / 3)
                  for a, b in itertools.permutations(nbr[v], 2) if b in nbr[a])
        clus.append(acc / (k * (k - 1)))
    nnd = [sum(w * deg[u] for u, w in nbr[v].items()) / strength[v] for v in nbr if strength[v] > 0]
    return (len(g.edges) / (g.n * (g.n - 1) / 2), sum(strength.values()) / g.n, sum(clus) / g.n,
            sum(nnd) / len(nnd) if nnd else 0.0)


def test_c07_indicator_closed_forms(verdict):
    closed = all(tuple(indicators(IndicatorGraph(n, tuple((i, j, 1.0) for i, j in itertools.combinations(range(n), 2))))
                       .as_dict().values()) == pytest.approx((1.0, n - 1, 1.0, n - 1), abs=1e-12)
                 for n in range(3, 9))
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(40):
        n = int(rng.integers(5, 7))
        edges = tuple((i, j, float(rng.random())) for i, j in itertools.combinations(range(n), 2)
                      if rng.random() < 0.7)
        g = IndicatorGraph(n, edges)
        got = tuple(indicators(g).as_dict().values())
        worst = max(worst, max(abs(a - b) for a, b in zip(got, _brute_indicators(g))))
    weights = (edge_weight(5.0, 1000.0), edge_weight(48.0, 0.0), edge_weight(0.0, 4400.0))
    ok = closed and worst <= 1e-12 and weights == (1.0, 0.0, 0.0)
    verdict("C7 indicator closed forms", ok,
            f"K_3..K_8 closed forms {closed}; oracle max abs diff {worst:.1e}; boundary weights {weights}")


# --- 8 -----------------------------------------------------------------------

def test_c08_demand_vs_count_discrimination(timeline, verdict):
    d, c, n = timeline["demand"], timeline["clearances"], timeline["count"]
    r_dc, r_dn = pearson(d, c), pearson(d, n)
    parts = [f"demand r(clearances)={r_dc:.3f} vs r(count)={r_dn:.3f}"]
    ok = r_dc > r_dn
    for name in timeline["indicators"][0]:
        x = np.array([v[name] for v in timeline["indicators"]])
        rc, rn = pearson(x, c), pearson(x, n)
        ok &= rn > rc
        parts.append(f"{name} r(count)={rn:.3f} vs r(clearances)={rc:.3f}")
    verdict("C8 demand-vs-count discrimination", ok, "; ".join(parts))


# --- 9 -----------------------------------------------------------------------

def test_c09_lag_detection(timeline, verdict):
    demand = list(timeline["demand"])
    shifted = [demand[0]] * 4 + demand[:-4]
    res = lag_correlation(demand, shifted, max_lag=20)
    verdict("C9 lag detection", res.best_lag == 4 and res.best_r > 0.99,
            f"best lag {res.best_lag}, r={res.best_r:.4f}")


# --- 10 ----------------------------------------------------------------------

def test_c10_quantile_sanity(world, verdict):
    q = world["pred"].graph_quantiles
    truth = world["truth"]
    ordered = float(np.mean(np.all(np.diff(q, axis=1) >= 0, axis=1)))
    nodes_ordered = all(np.all(np.diff(x, axis=1) >= 0) for x in world["pred"].node_quantiles)
    model_loss = float(pinball_loss(truth, q).mean())
    train_median = float(np.median([s.label_total for s in world["train"]]))
    const_loss = float(pinball_loss(truth, np.full_like(q, train_median)).mean())
    ok = ordered == 1.0 and nodes_ordered and model_loss < const_loss
    verdict("C10 quantile sanity", ok,
            f"ordered quantiles on {ordered:.0%} of scenarios (raw crossing rate "
            f"{world['pred'].crossing_rate:.4f}); pinball {model_loss:.3f} vs constant median {const_loss:.3f}")


# --- 11 ----------------------------------------------------------------------

def _pipeline(root):
    root.mkdir(parents=True)
    d, ck = root / "data.jsonl", root / "ckpt"
    flags = ["--deterministic", "--seed", "11"]
    steps = [
        ["generate", "--hours", "3", "--out", str(d)],
        ["train", "--data", str(d), "--folds", "5", "--epochs", "2", "--out-dir", str(ck)],
        ["evaluate", "--checkpoint", str(ck), "--data", str(d), "--out", str(root / "eval")],
        ["importance", "--checkpoint", str(ck), "--data", str(d), "--repeats", "2", "--structure-samples", "2",
         "--out", str(root / "importance.csv")],
        ["ablate", "--checkpoint-dir", str(ck), "--scenario-file", str(d), "--out", str(root / "demand.csv")],
        ["indicators", "--scenario-file", str(d), "--out", str(root / "indicators.csv")],
    ]
    codes = [main(s + flags) for s in steps]
    return codes, {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c11_reproducibility(tmp_path, verdict):
    codes_a, files_a = _pipeline(tmp_path / "a")
    codes_b, files_b = _pipeline(tmp_path / "b")
    differing = sorted(k for k in files_a if files_a.get(k) != files_b.get(k))
    ok = codes_a == codes_b == [0] * 6 and files_a.keys() == files_b.keys() and not differing
    verdict("C11 reproducibility", ok,
            f"{len(files_a)} output files, exit codes {codes_a}, differing files: {differing or 'none'}")


# --- supplementary module-level checks on the same data --------------------------

def test_fold_stability(world, verdict):
    maes = [f.test_mae for f in world["cv"].folds]
    mean = float(np.mean(maes))
    ok = all(abs(m - mean) <= 0.2 * mean for m in maes)
    verdict("fold stability", ok, f"fold MAEs {[round(m, 3) for m in maes]}, mean {mean:.3f}")


def test_timeline_tracks_clearances(timeline, verdict):
    r = pearson(timeline["demand"], timeline["clearances"])
    verdict("timeline vs clearances", r > 0.7, f"Pearson r={r:.3f} over {len(timeline['demand'])} ticks")


def test_demand_leads_indicators(timeline, verdict):
    totals = timeline_totals(timeline["reports"])
    by_time = {s.timestamp: s for s in timeline["stream"]}
    t0 = timeline["stream"][0].timestamp
    grid = [None] * len(totals)
    for k in range(len(totals)):
        s = by_time.get(t0 + 60.0 * k)
        grid[k] = None if s is None else scenario_indicators(s).as_dict()
    lags = {}
    for name in ("edge_density", "strength", "clustering_coefficient", "nearest_neighbour_degree"):
        series = [None if g is None else g[name] for g in grid]
        lags[name] = lag_correlation(totals, series, max_lag=20).best_lag
    verdict("demand leads indicators", all(v > 0 for v in lags.values()), f"best lags (ticks) {lags}")
