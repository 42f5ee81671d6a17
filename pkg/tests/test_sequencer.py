import numpy as np
import pytest
from conftest import make_day
from src.data_handler import DataHandler
from src.exceptions import ConfigError, HashMismatch, WidthMismatch
from src.sequencer import (SequenceDataset, Sequencer, index_from_frame, iterate_in_order, make_batches, make_sequences,
                           sample_index_frame)


def test_full_day_sample_count():
    day = make_day(rows = 57600, features = 1)
    assert len(SequenceDataset([day], window = 120)) == 57481


def test_batch_sizes():
    dataset = SequenceDataset([make_day(rows = 2619)], window = 120)
    sizes   = [len(batch) for batch in make_batches(dataset, batch_size = 1000, seed = 1, epoch = 0)]
    assert sizes == [1000, 1000, 500]


def test_every_sample_once_per_epoch(toy_dataset):
    seen = np.concatenate([batch.indices for batch in make_batches(toy_dataset, batch_size = 64, seed = 3, epoch = 2)])
    assert sorted(seen.tolist()) == list(range(len(toy_dataset)))


def test_shuffle_is_fixed_by_seed_and_epoch():
    assert np.array_equal(Sequencer.permutation(500, 1, 0), Sequencer.permutation(500, 1, 0))
    assert not np.array_equal(Sequencer.permutation(500, 1, 0), Sequencer.permutation(500, 1, 1))
    assert not np.array_equal(Sequencer.permutation(500, 1, 0), Sequencer.permutation(500, 2, 0))


def test_window_ends_at_the_prediction_second(toy_day, toy_dataset):
    sample = toy_dataset[0]
    assert sample.window.shape == (120, 4)
    np.testing.assert_array_equal(sample.window, toy_day.features[:120].astype(np.float64))
    np.testing.assert_allclose(sample.target, np.full(6, 0.5))
    assert sample.mask.all()


def test_rows_without_valid_target_are_skipped():
    day = make_day(rows = 200)
    day.mask[150] = 0
    dataset = SequenceDataset([day], window = 120)
    assert len(dataset) == 80
    assert 150 not in dataset.index[:, 1]


def test_missing_rows_stay_in_the_window():
    day = make_day(rows = 200)
    day.features[130] = -1
    dataset = SequenceDataset([day], window = 120)
    sample  = dataset[int(np.nonzero(dataset.index[:, 1] == 140)[0][0])]
    assert np.all(sample.window[-11] == -1)


def test_partially_masked_row_keeps_its_mask():
    day = make_day(rows = 130)
    day.mask[125, 2] = 0
    day.remaining[125, 2] = -1
    dataset = SequenceDataset([day], window = 120)
    sample  = dataset[int(np.nonzero(dataset.index[:, 1] == 125)[0][0])]
    assert sample.mask.tolist() == [True, True, False, True, True, True]
    assert sample.target[2] == -1


def test_width_mismatch():
    with pytest.raises(WidthMismatch):
        SequenceDataset([make_day(features = 4)], window = 120, feature_count = 5)
    with pytest.raises(WidthMismatch):
        list(make_sequences(make_day(features = 4), window = 120, feature_count = 3))


def test_take_matches_single_items():
    dataset = SequenceDataset([make_day(rows = 200, seed = 1), make_day(rows = 180, seed = 2)], window = 120)
    batch   = dataset[[0, 90, 81, 5]]
    for slot, position in enumerate([0, 90, 81, 5]):
        sample = dataset[position]
        np.testing.assert_array_equal(batch.windows[slot], sample.window)
        np.testing.assert_array_equal(batch.targets[slot], sample.target)
        np.testing.assert_array_equal(batch.masks[slot], sample.mask)


def test_generator_and_dataset_agree(toy_day, toy_dataset):
    samples = list(make_sequences(toy_day, window = 120, feature_count = 4))
    assert len(samples) == len(toy_dataset)
    np.testing.assert_array_equal(samples[-1].window, toy_dataset[len(toy_dataset) - 1].window)


def test_in_order_iteration(toy_dataset):
    indices = np.concatenate([batch.indices for batch in iterate_in_order(toy_dataset, batch_size = 50)])
    assert indices.tolist() == list(range(len(toy_dataset)))


def test_memory_mapped_days(tmp_path):
    path = tmp_path / 'day.spd'
    day  = make_day(rows = 250)
    DataHandler().save_day(day, str(path))
    dataset = SequenceDataset([str(path)], window = 120, feature_count = 4)
    assert len(dataset) == 131
    np.testing.assert_array_equal(dataset[10].window, day.features[10:130].astype(np.float64))


def test_sample_index_frame_round_trip(toy_dataset):
    frame = sample_index_frame(toy_dataset)
    assert list(frame.columns) == ['day', 'day_id', 'row']
    assert frame['day'].iloc[0] == 'day-0'
    np.testing.assert_array_equal(index_from_frame(frame), toy_dataset.index)


def test_sample_index_names_its_day_files(tmp_path):
    paths = [str(tmp_path / 'a.spd'), str(tmp_path / 'b.spd')]
    for seed, path in enumerate(paths):
        DataHandler().save_day(make_day(rows = 200 + seed, seed = seed), path)
    frame = sample_index_frame(SequenceDataset(paths, window = 120, feature_count = 4))
    assert set(frame['day']) == set(paths)
    assert len(index_from_frame(frame, sources = paths)) == 81 + 82
    with pytest.raises(ConfigError):
        index_from_frame(frame, sources = paths[::-1])


def test_days_must_carry_the_expected_manifest(tmp_path):
    path = tmp_path / 'day.spd'
    DataHandler().save_day(make_day(rows = 250, manifest_hash = 'ff' * 32), str(path))
    with pytest.raises(HashMismatch):
        SequenceDataset([str(path)], window = 120, feature_count = 4, manifest_hash = 'aa' * 32).day(0)
    with pytest.raises(HashMismatch):
        SequenceDataset([str(path)], window = 120, feature_count = 4).require_manifest('aa' * 32)
    assert SequenceDataset([str(path)], window = 120, feature_count = 4, manifest_hash = 'ff' * 32).day(0).rows == 250
