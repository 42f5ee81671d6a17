import numpy as np
import pytest
from src.controller import Indication
from src.traffic import TrafficModel, TrafficState
from src.intersection import IntersectionLoader


class FixedArrivals:
    """
    Generator stand-in with scripted Poisson draws.
    """
    def __init__(self, arrivals):
        self.arrivals = np.asarray(arrivals, dtype = float)

    def poisson(self, rates):
        return self.arrivals

    def random(self, size):
        return np.ones(size)


def lights(config, green = ()):
    return {p : Indication.GREEN if p in green else Indication.RED for p in config.phase_ids}


@pytest.fixture
def zero_demand(raw_config):
    for approach in raw_config['arrival_rates']:
        raw_config['arrival_rates'][approach] = [['06:00:00', 0.0]]
    return IntersectionLoader().from_dict(raw_config)


def test_zero_demand_is_a_fixed_point(zero_demand):
    model  = TrafficModel(zero_demand)
    lanes  = TrafficState.empty(len(zero_demand.detectors))
    state, outputs = model.step_traffic(lanes, lights(zero_demand, (2, 6)), np.random.default_rng(0), 30000)
    assert np.all(state.queue == 0) and np.all(state.discharged == 0)
    for values in (outputs.actuation, outputs.volume, outputs.occupancy, outputs.speed):
        assert np.all(values == 0)


def test_green_discharges_at_saturation_flow(reference_config):
    model = TrafficModel(reference_config)
    n     = len(reference_config.detectors)
    lane  = 2
    queue = np.zeros(n)
    queue[lane] = 5.0
    state, outputs = model.step_traffic(TrafficState(queue = queue, discharged = np.zeros(n)),
                                        lights(reference_config, (2, 6)), FixedArrivals(np.zeros(n)), 30000)
    assert reference_config.detectors[lane].phase == 2
    assert state.queue[lane] == pytest.approx(4.5)
    assert outputs.actuation[lane] == 1
    assert outputs.volume[lane] == 0
    assert state.discharged[lane] == pytest.approx(0.5)


def test_arrival_on_red_joins_the_queue(reference_config):
    model    = TrafficModel(reference_config)
    n        = len(reference_config.detectors)
    lane     = 12
    arrivals = np.zeros(n)
    arrivals[lane] = 1
    state, outputs = model.step_traffic(TrafficState.empty(n), lights(reference_config, (2, 6)),
                                        FixedArrivals(arrivals), 30000)
    assert reference_config.detectors[lane].phase == 3
    assert state.queue[lane] == 1
    assert outputs.actuation[lane] == 1
    assert outputs.occupancy[lane] == 1.0
    assert outputs.speed[lane] == 0.0


def test_free_flow_arrival_on_green_reports_speed(reference_config):
    model    = TrafficModel(reference_config)
    n        = len(reference_config.detectors)
    lane     = 2
    arrivals = np.zeros(n)
    arrivals[lane] = 1
    state, outputs = model.step_traffic(TrafficState.empty(n), lights(reference_config, (2, 6)),
                                        FixedArrivals(arrivals), 30000)
    assert state.queue[lane] == 0
    assert outputs.volume[lane] == 1
    assert outputs.speed[lane] == pytest.approx(reference_config.detectors[lane].free_flow_speed)
    assert outputs.occupancy[lane] == pytest.approx(reference_config.occupancy_per_vehicle)


def test_phase_actuations_aggregate_detectors(reference_config):
    model    = TrafficModel(reference_config)
    n        = len(reference_config.detectors)
    arrivals = np.zeros(n)
    arrivals[[0, 12]] = 1
    _, outputs = model.step_traffic(TrafficState.empty(n), lights(reference_config), FixedArrivals(arrivals), 30000)
    flags = outputs.phase_actuations(reference_config)
    assert flags == {1 : False, 2 : False, 3 : True, 4 : False, 5 : True, 6 : False}


def test_ped_call_probability(reference_config):
    model = TrafficModel(reference_config)
    rng   = np.random.default_rng(11)
    hits  = sum(model.draw_ped_calls(rng, 30000)[4] for _ in range(20000))
    p     = -np.expm1(-0.003)
    sigma = np.sqrt(20000 * p * (1 - p))
    assert abs(hits - 20000 * p) < 4 * sigma
