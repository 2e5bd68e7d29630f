import math

import numpy as np
import pytest

from atc_demand.scenario import AircraftState, EngineType, ExitDirection, Scenario, WakeCategory


def make_aircraft(callsign="A", lat=52.0, lon=-1.0, fl=250.0, cfl=None, xfl=None, speed=450.0,
                  track_deg=90.0, **kw) -> AircraftState:
    """Aircraft with a compass track (degrees clockwise from north)."""
    t = math.radians(track_deg)
    return AircraftState(callsign=callsign, lat=lat, lon=lon, flight_level=fl,
                         cleared_fl=fl if cfl is None else cfl, exit_fl=fl if xfl is None else xfl,
                         ground_speed=speed, track_unit_vector=(math.sin(t), math.cos(t)), **kw)


def random_aircraft(rng: np.random.Generator, k: int, lat0=52.3, lon0=-1.2) -> AircraftState:
    t = rng.uniform(0, 2 * math.pi)
    fl = float(rng.integers(22, 31) * 10)
    return AircraftState(
        callsign=f"R{k:03d}", lat=lat0 + rng.uniform(-0.7, 0.7), lon=lon0 + rng.uniform(-1.1, 1.1),
        flight_level=fl, cleared_fl=float(rng.choice([fl, fl + 20, fl - 20])),
        exit_fl=float(rng.integers(22, 31) * 10), ground_speed=float(rng.uniform(150, 480)),
        track_unit_vector=(math.sin(t), math.cos(t)), climb_rate=float(rng.uniform(-2500, 2500)),
        step_climb=bool(rng.integers(2)), engine_type=EngineType(int(rng.integers(3))),
        wake_category=WakeCategory(int(rng.integers(3))), on_heading=bool(rng.integers(2)),
        speed_control=bool(rng.integers(2)), comm_state=bool(rng.integers(2)),
        time_to_exit=float(rng.uniform(0, 900)), exit_direction=ExitDirection(int(rng.integers(4))))


def random_scenario(rng: np.random.Generator, n=None, labelled=True, t=0.0) -> Scenario:
    n = int(rng.integers(1, 9)) if n is None else n
    ac = tuple(random_aircraft(rng, k) for k in range(n))
    labels = {a.callsign: int(rng.integers(0, 5)) for a in ac} if labelled else None
    return Scenario(t, ac, labels, "TEST")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    """A few hours of synthetic traffic, shared by tests that need realistic scenarios."""
    from atc_demand.synth import SynthConfig, generate_dataset
    return generate_dataset(SynthConfig(hours=6, seed=3))


@pytest.fixture(scope="session")
def small_ensemble(small_dataset):
    from atc_demand.gnn import TrainConfig, cross_validate
    return cross_validate(small_dataset, k=3, config=TrainConfig(epochs=4, seed=1)).ensemble


def small_graphs(seed: int, count: int = 5, lo: int = 3, hi: int = 8):
    """Labelled random graphs with 3-8 nodes, encoded with stats fitted on a reference set."""
    from atc_demand.graphs import build_graph
    from atc_demand.scenario import fit_normalization

    rng = np.random.default_rng(seed)
    reference = [random_scenario(rng, n=6) for _ in range(30)]
    stats = fit_normalization(reference)
    scenarios = [random_scenario(rng, n=int(rng.integers(lo, hi + 1))) for _ in range(count)]
    return [build_graph(s, stats) for s in scenarios]


def gradient_check(params, batch, rng: np.random.Generator, per_block: int = 12, h: float = 1e-5,
                   loss_mix: float = 0.5):
    """Worst relative error per parameter block between analytic and central-difference gradients.

    The denominator is floored at 1e-6 so entries whose gradient is at round-off
    level are judged by absolute error. Returns {block: (worst_rel_err, n_checked)}.
    """
    from atc_demand.gnn import backward, forward, total_loss

    y_node, y_graph, cache = forward(params, batch, keep_cache=True)
    _, d_node, d_graph = total_loss(y_node, y_graph, batch.y_node, batch.y_graph, loss_mix, with_grad=True)
    grads = backward(params, batch, cache, d_node, d_graph)

    def loss_at():
        yn, yg = forward(params, batch)
        return total_loss(yn, yg, batch.y_node, batch.y_graph, loss_mix)

    out = {}
    for name, tensor in params.tensors.items():
        flat = tensor.reshape(-1)
        idx = rng.choice(flat.size, size=min(per_block, flat.size), replace=False)
        worst = 0.0
        for k in idx:
            old = flat[k]
            flat[k] = old + h
            up = loss_at()
            flat[k] = old - h
            down = loss_at()
            flat[k] = old
            fd = (up - down) / (2 * h)
            an = grads[name].reshape(-1)[k]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
        out[name] = (worst, len(idx))
    return out
