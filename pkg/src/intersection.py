import yaml
import bisect
import dataclasses
import pandas as pd
from pathlib import Path
from config import Config
from logger import LoggerSetup
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple
from src.exceptions import ConfigError, UncoveredTime


@dataclass(frozen = True)
class PhaseConfig:
    id            : int
    ring          : int
    barrier_group : int
    min_green     : int
    max_green     : int
    yellow        : int
    all_red       : int
    gap_extension : int
    coordinated   : bool = False

    @property
    def clearance(self) -> int:
        return self.yellow + self.all_red


@dataclass(frozen = True)
class DetectorConfig:
    id              : int
    approach        : str
    lane            : int
    phase           : int
    free_flow_speed : float = 15.0
    stop_bar        : bool  = True


@dataclass(frozen = True)
class PlanConfig:
    plan_id      : int
    cycle_length : int
    offset       : int
    splits       : Dict[int, int]


@dataclass(frozen = True)
class RateProfile:
    """
    Piecewise-constant rate over the day: `starts` are time-of-day seconds, `rates` the value from each start on.
    """
    starts : Tuple[int, ...]
    rates  : Tuple[float, ...]

    def at(self, time_of_day : int) -> float:
        index = bisect.bisect_right(self.starts, time_of_day) - 1
        return self.rates[index] if index >= 0 else 0.0


@dataclass(frozen = True)
class IntersectionConfig:
    intersection_id       : str
    firmware              : str
    phases                : Tuple[PhaseConfig, ...]
    overlaps              : Tuple[Tuple[int, int], ...]
    ped_phases            : Dict[int, Tuple[int, int]]
    detectors             : Tuple[DetectorConfig, ...]
    tod_schedule          : Tuple[Tuple[int, PlanConfig], ...]
    arrival_rates         : Dict[str, RateProfile]
    ped_call_rates        : Dict[int, RateProfile]
    saturation_flow       : float
    occupancy_per_vehicle : float
    dropout_prob          : float
    duplicate_prob        : float
    operating_span        : Tuple[int, int] = (21600, 79200)

    def phase(self, phase_id : int) -> PhaseConfig:
        for phase in self.phases:
            if phase.id == phase_id:
                return phase
        raise ConfigError(f'Unknown phase id {phase_id}')

    @property
    def phase_ids(self) -> List[int]:
        return [phase.id for phase in self.phases]

    @property
    def rings(self) -> List[int]:
        return sorted({phase.ring for phase in self.phases})

    @property
    def barrier_groups(self) -> List[int]:
        return sorted({phase.barrier_group for phase in self.phases})

    def ring_sequence(self, ring : int) -> List[int]:
        return [phase.id for phase in self.phases if phase.ring == ring]

    def coordinated_phase(self, ring : int) -> Optional[int]:
        for phase in self.phases:
            if phase.ring == ring and phase.coordinated:
                return phase.id
        return None

    def with_operating_span(self, start : int, end : int) -> 'IntersectionConfig':
        return dataclasses.replace(self, operating_span = (int(start), int(end)))


@dataclass(frozen = True)
class PlanTiming:
    """
    Split windows of one plan laid out on the cycle: barrier groups in order, each ring's phases in sequence.
    """
    plan           : PlanConfig
    window_start   : Dict[int, int]
    group_start    : Dict[int, int]
    group_length   : Dict[int, int]
    yield_points   : Dict[int, List['YieldPoint']] = field(default_factory = dict)
    ring_yields    : Dict[int, Tuple[int, ...]]    = field(default_factory = dict)

    @property
    def cycle_length(self) -> int:
        return self.plan.cycle_length

    def cycle_second(self, clock : int) -> int:
        return int((clock % Config.SECONDS_PER_DAY - self.plan.offset) % self.plan.cycle_length)


@dataclass(frozen = True)
class YieldPoint:
    target : int
    cross  : bool
    ring   : Optional[int] = None


def parse_time(value) -> int:
    if isinstance(value, (int, float)):
        return int(value)
    delta = pd.to_timedelta(str(value))
    return int(delta.total_seconds())


def _profile(entries) -> RateProfile:
    pairs = sorted((parse_time(start), float(rate)) for start, rate in entries)
    return RateProfile(starts = tuple(p[0] for p in pairs),
                       rates  = tuple(p[1] for p in pairs))


class IntersectionLoader:
    def __init__(self):
        """
        The IntersectionLoader reads the YAML description of an intersection and validates the ring-barrier layout,
        the plans and the time-of-day schedule before any simulation is attempted.
        """
        self.log = LoggerSetup(logger_name = 'intersection',
                               logger_file = 'intersection').get_logger()

    def load(self, path : str) -> IntersectionConfig:
        """
        Loads and validates an intersection configuration file.
        Arguments:
        ----------
            - path (str) : YAML file describing the intersection.
        Returns:
        --------
            - IntersectionConfig : the validated configuration.
        """
        try:
            with open(path, 'r', encoding = 'utf-8') as handle:
                raw = yaml.safe_load(handle)
        except (OSError, yaml.YAMLError) as e:
            self.log.error(f'Unable to read intersection config {path}: {e}')
            raise
        config = self.from_dict(raw)
        self.log.info(f'Loaded intersection {config.intersection_id} from {Path(path).name}: '
                      f'{len(config.phases)} phases, {len(config.detectors)} detectors, {len(config.tod_schedule)} plans')
        return config

    def from_dict(self, raw : dict) -> IntersectionConfig:
        try:
            phases    = tuple(PhaseConfig(id            = int(p['id']),
                                          ring          = int(p['ring']),
                                          barrier_group = int(p['barrier_group']),
                                          min_green     = int(p['min_green']),
                                          max_green     = int(p['max_green']),
                                          yellow        = int(p['yellow']),
                                          all_red       = int(p['all_red']),
                                          gap_extension = int(p['gap_extension']),
                                          coordinated   = bool(p.get('coordinated', False)))
                              for p in raw['phases'])
            detectors = tuple(DetectorConfig(id              = int(d['id']),
                                             approach        = str(d['approach']),
                                             lane            = int(d['lane']),
                                             phase           = int(d['phase']),
                                             free_flow_speed = float(d.get('free_flow_speed', 15.0)),
                                             stop_bar        = bool(d.get('stop_bar', True)))
                              for d in raw['detectors'])
            plans     = {int(p['plan_id']) : PlanConfig(plan_id      = int(p['plan_id']),
                                                        cycle_length = int(p['cycle_length']),
                                                        offset       = int(p['offset']),
                                                        splits       = {int(k) : int(v) for k, v in p['splits'].items()})
                         for p in raw['plans']}
            schedule  = tuple(sorted(((parse_time(entry['start']), plans[int(entry['plan'])])
                                      for entry in raw['tod_schedule']), key = lambda item : item[0]))
            peds      = {int(k) : (int(v['walk']), int(v['flashing'])) for k, v in (raw.get('ped_phases') or {}).items()}
            span      = raw.get('operating_span', {'start' : '06:00:00', 'end' : '22:00:00'})
            feed      = raw.get('feed_corruption', {})

            config    = IntersectionConfig(intersection_id       = str(raw.get('intersection_id', 'intersection')),
                                           firmware              = str(raw.get('firmware', 'unknown')),
                                           phases                = phases,
                                           overlaps              = tuple(tuple(int(x) for x in pair) for pair in raw.get('overlaps', [])),
                                           ped_phases            = peds,
                                           detectors             = detectors,
                                           tod_schedule          = schedule,
                                           arrival_rates         = {str(k) : _profile(v) for k, v in raw['arrival_rates'].items()},
                                           ped_call_rates        = {int(k) : _profile(v) for k, v in (raw.get('ped_call_rates') or {}).items()},
                                           saturation_flow       = float(raw['saturation_flow']),
                                           occupancy_per_vehicle = float(raw.get('occupancy_per_vehicle', 0.4)),
                                           dropout_prob          = float(feed.get('dropout_prob', 0.0)),
                                           duplicate_prob        = float(feed.get('duplicate_prob', 0.0)),
                                           operating_span        = (parse_time(span['start']), parse_time(span['end'])))
        except KeyError as e:
            self.log.error(f'Intersection config is missing key {e}')
            raise ConfigError(f'Intersection config is missing key {e}') from e
        except (TypeError, ValueError) as e:
            self.log.error(f'Intersection config has an invalid value: {e}')
            raise ConfigError(f'Intersection config has an invalid value: {e}') from e

        self.validate(config)
        return config

    def validate(self, config : IntersectionConfig):
        """
        Checks every structural invariant of the configuration and raises ConfigError on the first violation.
        """
        ids = config.phase_ids
        if len(set(ids)) != len(ids):
            raise ConfigError('phases: duplicate phase id')

        for phase in config.phases:
            if min(phase.min_green, phase.max_green, phase.yellow, phase.gap_extension) <= 0 or phase.all_red < 0:
                raise ConfigError(f'phases.{phase.id}: durations must be positive integers of seconds')
            if phase.min_green > phase.max_green:
                raise ConfigError(f'phases.{phase.id}: min_green exceeds max_green')

        for group in config.barrier_groups:
            for ring in config.rings:
                coordinated = [p for p in config.phases if p.ring == ring and p.barrier_group == group and p.coordinated]
                if len(coordinated) > 1:
                    raise ConfigError(f'ring {ring}: more than one coordinated phase in barrier group {group}')
        first_group = config.barrier_groups[0]
        for ring in config.rings:
            coordinated = config.coordinated_phase(ring)
            if coordinated is None or config.phase(coordinated).barrier_group != first_group:
                raise ConfigError(f'ring {ring}: needs exactly one coordinated phase in barrier group {first_group}')
            in_group = [p for p in config.ring_sequence(ring) if config.phase(p).barrier_group == first_group]
            if in_group[-1] != coordinated:
                raise ConfigError(f'ring {ring}: the coordinated phase must close its barrier group')

        for a, b in config.overlaps:
            pa, pb = config.phase(a), config.phase(b)
            if pa.barrier_group != pb.barrier_group or pa.ring == pb.ring:
                raise ConfigError(f'overlaps: {a}/{b} must share a barrier group on different rings')

        for phase_id, (walk, flashing) in config.ped_phases.items():
            phase = config.phase(phase_id)
            if walk <= 0 or flashing <= 0:
                raise ConfigError(f'ped_phases.{phase_id}: walk and flashing must be positive')
            if not phase.coordinated and walk + flashing > phase.max_green:
                raise ConfigError(f'ped_phases.{phase_id}: walk + flashing exceeds max_green')

        known = set(ids)
        for detector in config.detectors:
            if detector.phase not in known:
                raise ConfigError(f'detectors.{detector.id}: unknown phase {detector.phase}')
        for approach in {d.approach for d in config.detectors}:
            if approach not in config.arrival_rates:
                raise ConfigError(f'arrival_rates: no profile for approach {approach}')

        if not config.tod_schedule:
            raise ConfigError('tod_schedule: at least one entry is required')
        starts = [start for start, _ in config.tod_schedule]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ConfigError('tod_schedule: start times must be strictly increasing')
        span_start, span_end = config.operating_span
        if not 0 <= span_start < span_end <= Config.SECONDS_PER_DAY:
            raise ConfigError('operating_span: start must precede end within one day')
        if starts[0] > span_start:
            raise ConfigError('tod_schedule: does not cover the start of the operating span')

        for _, plan in config.tod_schedule:
            plan_timing(config, plan)

        if config.saturation_flow <= 0:
            raise ConfigError('saturation_flow must be positive')
        for name, value in (('dropout_prob', config.dropout_prob), ('duplicate_prob', config.duplicate_prob)):
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f'feed_corruption.{name} must lie in [0, 1]')


def plan_timing(config : IntersectionConfig, plan : PlanConfig) -> PlanTiming:
    """
    Lays the plan's splits out on the cycle and derives the yield points of the coordinated phases.
    Raises ConfigError when the splits do not close the cycle or cannot hold the phase timings.
    """
    window_start, group_start, group_length = {}, {}, {}
    cursor = 0
    for group in config.barrier_groups:
        ring_sums = {}
        for ring in config.rings:
            members = [p for p in config.ring_sequence(ring) if config.phase(p).barrier_group == group]
            if not members:
                continue
            offset = cursor
            for phase_id in members:
                if phase_id not in plan.splits:
                    raise ConfigError(f'plan {plan.plan_id}: missing split for phase {phase_id}')
                window_start[phase_id] = offset
                offset                += plan.splits[phase_id]
            ring_sums[ring] = offset - cursor
        if len(set(ring_sums.values())) != 1:
            raise ConfigError(f'plan {plan.plan_id}: rings reach barrier {group} at different times {ring_sums}')
        group_start[group]  = cursor
        group_length[group] = next(iter(ring_sums.values()))
        cursor             += group_length[group]
    if cursor != plan.cycle_length:
        raise ConfigError(f'plan {plan.plan_id}: splits sum to {cursor}, cycle length is {plan.cycle_length}')

    coordinated = {ring : config.coordinated_phase(ring) for ring in config.rings}
    max_clear   = max(config.phase(c).clearance for c in coordinated.values())
    for phase in config.phases:
        split = plan.splits[phase.id]
        if phase.coordinated:
            if split - max_clear < phase.min_green:
                raise ConfigError(f'plan {plan.plan_id}: coordinated split of phase {phase.id} cannot hold min_green')
            continue
        needed = phase.min_green
        if phase.id in config.ped_phases:
            needed = max(needed, sum(config.ped_phases[phase.id]))
        if split - phase.clearance < needed:
            raise ConfigError(f'plan {plan.plan_id}: split of phase {phase.id} cannot hold its minimum service')

    cycle        = plan.cycle_length
    first_group  = config.barrier_groups[0]
    yield_points = {}
    for phase in config.phases:
        if phase.coordinated:
            continue
        if phase.barrier_group == first_group:
            clear = config.phase(coordinated[phase.ring]).clearance
            point = YieldPoint(target = phase.id, cross = False, ring = phase.ring)
        else:
            clear = max_clear
            point = YieldPoint(target = phase.id, cross = True)
        yield_points.setdefault(int((window_start[phase.id] - clear) % cycle), []).append(point)

    ring_yields = {}
    for ring in config.rings:
        seconds = {second for second, points in yield_points.items()
                   for point in points if point.cross or point.ring == ring}
        ring_yields[ring] = tuple(sorted(seconds))

    return PlanTiming(plan         = plan,
                      window_start = window_start,
                      group_start  = group_start,
                      group_length = group_length,
                      yield_points = yield_points,
                      ring_yields  = ring_yields)


def build_plan(config : IntersectionConfig, time_of_day : int) -> PlanConfig:
    """
    Returns the plan of the latest schedule entry starting at or before `time_of_day`.
    Arguments:
    ----------
        - config      (IntersectionConfig) : the intersection whose schedule is consulted.
        - time_of_day (int)                : seconds since midnight, in [0, 86400).
    Returns:
    --------
        - PlanConfig : the active plan.
    """
    if not 0 <= time_of_day < Config.SECONDS_PER_DAY:
        raise UncoveredTime(f'time of day {time_of_day} is outside [0, 86400)')
    starts = [start for start, _ in config.tod_schedule]
    index  = bisect.bisect_right(starts, time_of_day) - 1
    if index < 0:
        raise UncoveredTime(f'no schedule entry covers time of day {time_of_day}')
    return config.tod_schedule[index][1]


def day_bounds(date) -> Tuple[int, int]:
    """
    Unix seconds of UTC midnight of `date` and of the following midnight.
    """
    midnight = pd.Timestamp(date).normalize()
    if midnight.tzinfo is None:
        midnight = midnight.tz_localize('UTC')
    start = int(midnight.timestamp())
    return start, start + Config.SECONDS_PER_DAY
