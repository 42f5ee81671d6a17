import numpy as np
import pandas as pd
import pytest
from conftest import TOY_HASH, make_day
from src.lstm_network import LstmNetwork
from src.sequencer import SequenceDataset, index_from_frame
from src.losses import LossKind
from src.trainer import TrainConfig, Trainer, grid_search
from src.exceptions import HashMismatch, NoValidEntries


@pytest.fixture(scope = 'module')
def datasets():
    train = SequenceDataset([make_day(rows = 300, seed = 1)], window = 120, feature_count = 4)
    val   = SequenceDataset([make_day(rows = 200, seed = 2)], window = 120, feature_count = 4)
    return train, val


def small_config(**overrides):
    options = {'hidden_units' : 4, 'epochs' : 4, 'batch_size' : 32, 'learning_rate' : 0.01, 'seed' : 3}
    options.update(overrides)
    return TrainConfig(**options)


def steady_day(rows, seed):
    """
    Toy day with a constant 0.5 target and inputs that barely move around a fixed row.
    """
    day          = make_day(rows = rows, seed = seed)
    noise        = np.random.default_rng(seed).random((rows, 4))
    day.features = (np.linspace(0.2, 0.8, 4) + 0.01 * noise).astype(np.float32)
    return day


def test_training_writes_checkpoints_and_reports(datasets, tmp_path):
    train, val = datasets
    report     = Trainer(small_config(), manifest_hash = TOY_HASH).train(train, val, str(tmp_path))
    best       = min(record.validation_loss for record in report.epochs)
    assert best < report.baseline_validation_loss
    assert len(report.epochs) == 4

    network, header = LstmNetwork.load(report.best_checkpoint)
    assert header['manifest_hash'] == TOY_HASH and header['loss'] == 'mse'
    assert header['epoch'] == report.best_epoch
    for epoch in range(4):
        assert (tmp_path / f'epoch_{epoch:02d}.ckpt').exists()

    frame = pd.read_csv(tmp_path / 'train_report.csv')
    assert list(frame.columns) == ['epoch', 'train_loss', 'validation_loss', 'learning_rate', 'checkpoint', 'best']
    assert frame['best'].sum() == 1

    index = pd.read_csv(tmp_path / 'sample_index.csv')
    assert list(index.columns) == ['day', 'day_id', 'row']
    assert len(index) == len(train) == 181
    np.testing.assert_array_equal(index_from_frame(index), train.index)


def test_constant_target_is_learned(tmp_path):
    train         = SequenceDataset([steady_day(rows = 400, seed = 1)], window = 120, feature_count = 4)
    val           = SequenceDataset([steady_day(rows = 200, seed = 2)], window = 120, feature_count = 4)
    config        = small_config(epochs = 30, learning_rate = 0.02)
    report        = Trainer(config, manifest_hash = TOY_HASH).train(train, val, str(tmp_path))
    network, _    = LstmNetwork.load(report.best_checkpoint)
    prediction, _ = network.forward(val[list(range(len(val)))].windows)
    assert np.abs(prediction - 0.5).max() <= 0.01


def test_data_from_another_manifest_is_refused(tmp_path):
    train   = SequenceDataset([make_day(rows = 200, seed = 1)], window = 120, feature_count = 4)
    foreign = SequenceDataset([make_day(rows = 200, seed = 2, manifest_hash = 'cd' * 32)], window = 120, feature_count = 4)
    trainer = Trainer(small_config(epochs = 1), manifest_hash = TOY_HASH)
    with pytest.raises(HashMismatch):
        trainer.train(train, foreign, str(tmp_path / 'val'))
    with pytest.raises(HashMismatch):
        trainer.train(foreign, train, str(tmp_path / 'train'))
    assert not (tmp_path / 'val' / 'epoch_00.ckpt').exists()


def test_training_is_reproducible(datasets, tmp_path):
    train, val = datasets
    for name in ('a', 'b'):
        Trainer(small_config(loss = LossKind.TDSE, epochs = 2)).train(train, val, str(tmp_path / name))
    assert (tmp_path / 'a' / 'best.ckpt').read_bytes() == (tmp_path / 'b' / 'best.ckpt').read_bytes()


def test_learning_rate_only_decays(datasets, tmp_path):
    train, val = datasets
    report     = Trainer(small_config(learning_rate = 0.05)).train(train, val, str(tmp_path))
    rates      = report.learning_rates
    assert rates[0] == pytest.approx(0.05)
    assert all(later <= earlier for earlier, later in zip(rates, rates[1:]))


def test_validation_loss_counts_valid_entries(datasets):
    _, val  = datasets
    trainer = Trainer(small_config())
    network = trainer.initial_network(4)
    loss    = trainer.validation_loss(network, val)
    predictions = network.predict(val[list(range(len(val)))].windows)
    assert loss == pytest.approx(np.mean((predictions - 0.5) ** 2))


def test_empty_training_set(tmp_path):
    day = make_day(rows = 100)
    with pytest.raises(NoValidEntries):
        Trainer(small_config()).train(SequenceDataset([day]), SequenceDataset([day]), str(tmp_path))


def test_grid_search_table(datasets):
    train, val = datasets
    table      = grid_search(train, val, lrs = [0.01], neuron_counts = [4], budget = 200, check_every = 100,
                             base = TrainConfig(batch_size = 50, seed = 1))
    assert table.shape == (1, 1)
    assert list(table.index) == [4] and list(table.columns) == [0.01]
    assert np.isfinite(table.iloc[0, 0])


def test_frozen_validation_loss_decays_every_epoch(datasets, tmp_path, monkeypatch):
    train, val = datasets
    monkeypatch.setattr(Trainer, 'validation_loss', lambda self, network, dataset, kind = None : 1.0)
    report = Trainer(small_config(epochs = 3)).train(train, val, str(tmp_path))
    assert report.learning_rates == pytest.approx([0.01, 0.003, 0.0009])
    assert report.best_epoch == 0
