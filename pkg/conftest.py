import copy
import yaml
import pytest
import numpy as np
from pathlib import Path
from src.data_handler import EncodedDay
from src.sequencer import SequenceDataset
from src.signal_simulator import SignalSimulator
from src.intersection import IntersectionLoader


ROOT           = Path(__file__).parent
REFERENCE_YAML = ROOT / 'config' / 'reference_intersection.yaml'
SHORT_SPAN     = (7 * 3600, 7 * 3600 + 1200)
TEST_DATE      = '2020-09-01'
TOY_HASH       = 'ab' * 32


@pytest.fixture(scope = 'session')
def reference_raw():
    with open(REFERENCE_YAML, 'r', encoding = 'utf-8') as handle:
        return yaml.safe_load(handle)


@pytest.fixture
def raw_config(reference_raw):
    return copy.deepcopy(reference_raw)


@pytest.fixture(scope = 'session')
def reference_config():
    return IntersectionLoader().load(str(REFERENCE_YAML))


@pytest.fixture(scope = 'session')
def short_config(reference_config):
    return reference_config.with_operating_span(*SHORT_SPAN)


@pytest.fixture(scope = 'session')
def short_day(short_config):
    """
    Twenty simulated minutes of the reference intersection, uncorrupted.
    """
    return SignalSimulator(short_config).simulate_day(TEST_DATE, seed = 7)


def make_day(rows : int = 300, features : int = 4, remaining : float = 100.0, seed : int = 0, start : int = 0,
             manifest_hash : str = TOY_HASH) -> EncodedDay:
    rng = np.random.default_rng(seed)
    return EncodedDay(start           = start,
                      features        = rng.random((rows, features)).astype(np.float32),
                      remaining       = np.full((rows, 6), remaining, dtype = np.float32),
                      mask            = np.ones((rows, 6), dtype = np.float32),
                      manifest_digest = bytes.fromhex(manifest_hash))


@pytest.fixture
def toy_day():
    return make_day()


@pytest.fixture
def toy_dataset(toy_day):
    return SequenceDataset([toy_day], window = 120, feature_count = 4)
