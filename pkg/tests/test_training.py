import numpy as np
import pytest

from atc_demand.errors import CheckpointError, CheckpointVersionError, ConfigError, DataError
from atc_demand.gnn import Ensemble, TrainConfig, cross_validate, train_fold
from atc_demand.gnn.checkpoint import (MAGIC, checkpoint_bytes, load_checkpoint, load_ensemble, parse_checkpoint,
                                       save_checkpoint, save_ensemble)
from atc_demand.gnn.training import fold_splits, postprocess
from atc_demand.graphs import build_graphs
from atc_demand.synth import SynthConfig, generate_dataset


@pytest.fixture(scope="module")
def dataset_500():
    data = generate_dataset(SynthConfig(hours=30, seed=21))
    assert len(data) >= 550
    return data


@pytest.fixture(scope="module")
def fold_model(small_dataset):
    return train_fold(small_dataset[:80], small_dataset[80:110], TrainConfig(epochs=3, seed=2))


def _mae(ckpt, scenarios):
    graphs = build_graphs(scenarios, ckpt.stats)
    pred = Ensemble([ckpt]).predict(graphs).graph_median
    return float(np.mean(np.abs(pred - [s.label_total for s in scenarios])))


def test_best_validation_loss_never_worse_than_initial(fold_model):
    trace = fold_model.trace
    assert trace[0]["epoch"] == 0 and trace[0]["train_loss"] is None
    best = fold_model.metadata["best_epoch"]
    assert trace[best]["val_loss"] == min(t["val_loss"] for t in trace)
    assert trace[best]["val_loss"] <= trace[0]["val_loss"]


def test_training_reduces_error(dataset_500):
    train, val, test = dataset_500[:400], dataset_500[400:500], dataset_500[500:]
    cfg = TrainConfig(epochs=8, seed=4)
    trained = train_fold(train, val, cfg)
    untrained = train_fold(train, val, TrainConfig(epochs=1, seed=4, learning_rate=1e-12))
    assert untrained.metadata["best_epoch"] in (0, 1)
    assert _mae(trained, test) <= 0.7 * _mae(untrained, test)


def test_training_is_bit_reproducible(small_dataset):
    cfg = TrainConfig(epochs=2, seed=9)
    a = train_fold(small_dataset[:40], small_dataset[40:60], cfg)
    b = train_fold(small_dataset[:40], small_dataset[40:60], cfg)
    assert a.trace == b.trace
    assert np.array_equal(a.params.flat(), b.params.flat())
    c = train_fold(small_dataset[:40], small_dataset[40:60], TrainConfig(epochs=2, seed=10))
    assert not np.array_equal(a.params.flat(), c.params.flat())


def test_train_fold_input_errors(small_dataset):
    with pytest.raises(DataError):
        train_fold([], small_dataset[:5])
    with pytest.raises(DataError):
        train_fold(small_dataset[:5], small_dataset[3:8])
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=51)


@pytest.mark.parametrize("n,k", [(10, 5), (37, 5), (100, 3)])
def test_fold_splits_partition(n, k):
    splits = fold_splits(n, k, seed=1)
    tests = np.concatenate([te for _, _, te in splits])
    assert sorted(tests.tolist()) == list(range(n))
    for tr, va, te in splits:
        assert set(tr) | set(va) | set(te) == set(range(n))
        assert not (set(tr) & set(va)) and not (set(tr) & set(te)) and not (set(va) & set(te))
    again = fold_splits(n, k, seed=1)
    assert all(all(np.array_equal(x, y) for x, y in zip(s1, s2)) for s1, s2 in zip(splits, again))
    with pytest.raises(DataError):
        fold_splits(3, 5, seed=0)


def test_cross_validation_reports(small_dataset):
    result = cross_validate(small_dataset[:60], k=3, config=TrainConfig(epochs=1, seed=0))
    assert len(result.ensemble) == 3
    assert sorted(i for f in result.folds for i in f.test_indices) == list(range(60))
    for f in result.folds:
        assert f.n_train + f.n_val + f.n_test == 60
        assert f.test_mae >= 0


def test_postprocess_sorts_then_clamps():
    q = np.array([[3.0, -1.0, 2.0], [-2.0, -3.0, 0.5]])
    assert np.array_equal(postprocess(q), [[0.0, 2.0, 3.0], [0.0, 0.0, 0.5]])


def test_identical_members_equal_one_member(fold_model, small_dataset):
    graphs = build_graphs(small_dataset[110:], fold_model.stats)
    one = Ensemble([fold_model]).predict(graphs)
    five = Ensemble([fold_model] * 5).predict(graphs)
    np.testing.assert_allclose(five.graph_quantiles, one.graph_quantiles, rtol=1e-12, atol=1e-12)
    for a, b in zip(five.node_quantiles, one.node_quantiles):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_ensemble_is_mean_of_members_and_order_invariant(small_ensemble, small_dataset):
    graphs = build_graphs(small_dataset[:30], small_ensemble.members[0].stats)
    full = small_ensemble.predict(graphs)
    per_member = [Ensemble([m]).predict(graphs).graph_quantiles for m in small_ensemble.members]
    np.testing.assert_allclose(full.graph_quantiles, np.mean(per_member, axis=0), rtol=1e-12, atol=1e-12)
    reversed_ = Ensemble(small_ensemble.members[::-1]).predict(graphs)
    np.testing.assert_allclose(reversed_.graph_quantiles, full.graph_quantiles, rtol=1e-12, atol=1e-12)
    assert np.all(np.diff(full.graph_quantiles, axis=1) >= 0)
    assert np.all(full.graph_quantiles >= 0)


def test_checkpoint_round_trip_is_bitwise(fold_model, tmp_path, small_dataset):
    path = save_checkpoint(fold_model, tmp_path / "m.ckpt")
    loaded = load_checkpoint(path)
    assert np.array_equal(loaded.params.flat(), fold_model.params.flat())
    assert loaded.stats.to_dict() == fold_model.stats.to_dict()
    assert loaded.config == fold_model.config
    assert checkpoint_bytes(loaded) == checkpoint_bytes(fold_model)
    graphs = build_graphs(small_dataset[:20], fold_model.stats)
    assert np.array_equal(Ensemble([loaded]).predict(graphs).graph_quantiles,
                          Ensemble([fold_model]).predict(graphs).graph_quantiles)


def test_ensemble_directory_round_trip(small_ensemble, tmp_path):
    save_ensemble(small_ensemble.members, tmp_path / "ens")
    loaded = load_ensemble(tmp_path / "ens")
    assert len(loaded) == len(small_ensemble)
    for a, b in zip(loaded.members, small_ensemble.members):
        assert np.array_equal(a.params.flat(), b.params.flat())
    first = (tmp_path / "ens" / "fold_0" / "model.ckpt").read_bytes()
    save_ensemble(small_ensemble.members, tmp_path / "ens2")
    assert (tmp_path / "ens2" / "fold_0" / "model.ckpt").read_bytes() == first


def test_corrupt_checkpoints_rejected(fold_model, tmp_path):
    blob = checkpoint_bytes(fold_model)
    with pytest.raises(CheckpointError):
        parse_checkpoint(blob[:-8])
    with pytest.raises(CheckpointError):
        parse_checkpoint(blob[:len(MAGIC) + 10])
    with pytest.raises(CheckpointError):
        parse_checkpoint(b"NOTACKPT" + blob[8:])
    future = blob.replace(b"atc-demand-ckpt/1", b"atc-demand-ckpt/9", 1)
    with pytest.raises(CheckpointVersionError):
        parse_checkpoint(future)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")
    with pytest.raises(CheckpointError):
        load_ensemble(tmp_path)
