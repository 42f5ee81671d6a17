import pytest
from src.exceptions import ConfigError, UncoveredTime
from src.intersection import IntersectionLoader, build_plan, day_bounds, parse_time, plan_timing


def test_reference_config_loads(reference_config):
    assert reference_config.phase_ids == [1, 2, 3, 4, 5, 6]
    assert reference_config.rings == [1, 2]
    assert reference_config.coordinated_phase(1) == 2
    assert reference_config.coordinated_phase(2) == 6
    assert len(reference_config.detectors) == 18
    assert reference_config.operating_span == (21600, 79200)
    assert reference_config.dropout_prob == pytest.approx(0.10)


def test_parse_time_accepts_clock_strings_and_seconds():
    assert parse_time('06:00:00') == 21600
    assert parse_time(36000) == 36000


def test_plan_windows_and_yield_points(reference_config):
    plan   = build_plan(reference_config, 21600)
    timing = plan_timing(reference_config, plan)

    assert timing.window_start == {1 : 0, 2 : 20, 5 : 0, 6 : 20, 3 : 70, 4 : 92}
    assert timing.group_length == {1 : 70, 2 : 50}
    assert sorted(timing.yield_points) == [64, 86, 114]
    assert {p.target for p in timing.yield_points[114]} == {1, 5}
    assert all(p.cross for p in timing.yield_points[64])


def test_cycle_second_uses_offset(reference_config):
    plan   = build_plan(reference_config, 21600)
    timing = plan_timing(reference_config, plan)
    midnight, _ = day_bounds('2020-09-01')

    assert timing.cycle_second(midnight + 10) == 0
    assert timing.cycle_second(midnight + 9) == 119


def test_schedule_lookup(raw_config):
    raw_config['tod_schedule'] = [{'start' : '06:00:00', 'plan' : 1}, {'start' : '10:00:00', 'plan' : 2}]
    config = IntersectionLoader().from_dict(raw_config)

    assert build_plan(config, 21600).plan_id == 1
    assert build_plan(config, 35999).plan_id == 1
    assert build_plan(config, 36000).plan_id == 2
    with pytest.raises(UncoveredTime):
        build_plan(config, 0)
    with pytest.raises(UncoveredTime):
        build_plan(config, 86400)


def test_unequal_ring_sums_rejected(raw_config):
    raw_config['plans'][0]['splits'][5] = 25
    with pytest.raises(ConfigError, match = 'different times'):
        IntersectionLoader().from_dict(raw_config)


def test_splits_must_close_the_cycle(raw_config):
    raw_config['plans'][0]['cycle_length'] = 130
    with pytest.raises(ConfigError, match = 'cycle length'):
        IntersectionLoader().from_dict(raw_config)


def test_split_too_short_for_pedestrian_service(raw_config):
    raw_config['plans'][0]['splits'][3] = 30
    raw_config['plans'][0]['splits'][4] = 20
    with pytest.raises(ConfigError, match = 'minimum service'):
        IntersectionLoader().from_dict(raw_config)


def test_overlaps_must_pair_phases_across_rings(raw_config, reference_config):
    assert reference_config.overlaps == ((1, 6), (2, 5))
    raw_config['overlaps'] = [[1, 3]]
    with pytest.raises(ConfigError, match = 'overlaps'):
        IntersectionLoader().from_dict(raw_config)


def test_missing_key_is_named(raw_config):
    del raw_config['saturation_flow']
    with pytest.raises(ConfigError, match = 'saturation_flow'):
        IntersectionLoader().from_dict(raw_config)


def test_coordinated_phase_must_close_its_group(raw_config):
    raw_config['phases'][0], raw_config['phases'][1] = raw_config['phases'][1], raw_config['phases'][0]
    with pytest.raises(ConfigError, match = 'close its barrier group'):
        IntersectionLoader().from_dict(raw_config)


def test_schedule_must_cover_span_start(raw_config):
    raw_config['tod_schedule'] = [{'start' : '07:00:00', 'plan' : 1}]
    with pytest.raises(ConfigError, match = 'operating span'):
        IntersectionLoader().from_dict(raw_config)


def test_operating_span_override(reference_config):
    short = reference_config.with_operating_span(25200, 32400)
    assert short.operating_span == (25200, 32400)
    assert reference_config.operating_span == (21600, 79200)
