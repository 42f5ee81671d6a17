import json
import numpy as np
import pandas as pd
from config import Config
from logger import LoggerSetup
from dataclasses import dataclass
from typing import Dict, List, Tuple
from src.traffic import TrafficModel, TrafficState
from src.controller import RingBarrierController, SignalIndications
from src.intersection import IntersectionConfig, PlanConfig, build_plan, day_bounds


@dataclass(frozen = True)
class PerSecondRecord:
    """
    One second of intersection telemetry as broadcast by the controller. Serializes to one JSON object per line.
    """
    timestamp       : int
    intersection_id : str
    firmware        : str
    phases          : Dict[int, Tuple[str, str]]
    peds            : Dict[int, Tuple[str, bool]]
    detectors       : Dict[int, Tuple[int, int, float, float]]
    plan_id         : int
    cycle_length    : int
    offset          : int
    cycle_second    : int

    def to_dict(self) -> dict:
        return {'timestamp' : self.timestamp,
                'device'    : {'intersection_id' : self.intersection_id,
                               'firmware'        : self.firmware},
                'signal'    : {'phases' : {str(p) : {'state'     : state,
                                                     'exit_mode' : exit_mode}
                                           for p, (state, exit_mode) in sorted(self.phases.items())},
                               'peds'   : {str(p) : {'state' : state,
                                                     'call'  : int(call)}
                                           for p, (state, call) in sorted(self.peds.items())}},
                'detectors' : {str(d) : {'actuation' : actuation,
                                         'volume'    : volume,
                                         'occupancy' : round(occupancy, 3),
                                         'speed'     : round(speed, 3)}
                               for d, (actuation, volume, occupancy, speed) in sorted(self.detectors.items())},
                'timing'    : {'plan_id'      : self.plan_id,
                               'cycle_length' : self.cycle_length,
                               'offset'       : self.offset,
                               'cycle_second' : self.cycle_second}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators = (',', ':'))


class SignalSimulator:
    def __init__(self, config : IntersectionConfig):
        """
        The SignalSimulator runs the ring-barrier controller against the stochastic traffic model second by second and
        emits the per-second record feed, optionally corrupted the way the field connection corrupts it.
        Arguments:
        ----------
            - config (IntersectionConfig) : validated intersection description.
        """
        self.config     = config
        self.controller = RingBarrierController(config)
        self.traffic    = TrafficModel(config)
        self.log        = LoggerSetup(logger_name = 'signal_simulator',
                                      logger_file = 'signal_simulator').get_logger()

    def build_plan(self, time_of_day : int) -> PlanConfig:
        return build_plan(self.config, time_of_day)

    @staticmethod
    def day_generator(date, seed : int) -> np.random.Generator:
        """
        Each day owns its generator, seeded from (seed, day ordinal), so days can be simulated independently.
        """
        ordinal = pd.Timestamp(date).toordinal()
        return np.random.default_rng(np.random.SeedSequence([int(seed), int(ordinal)]))

    def simulate_day(self, date, seed : int) -> List[PerSecondRecord]:
        """
        Simulates the operating span of one day.
        Arguments:
        ----------
            - date (str | date) : calendar day (UTC).
            - seed (int)        : run seed.
        Returns:
        --------
            - list of PerSecondRecord : one record per second of the operating span, in time order.
        """
        midnight, _    = day_bounds(date)
        span_start, span_end = self.config.operating_span
        rng            = self.day_generator(date, seed)

        plan           = build_plan(self.config, span_start)
        state          = self.controller.initial_state(midnight + span_start - 1, plan)
        lanes          = TrafficState.empty(len(self.config.detectors))
        actuations     = {p : False for p in self.config.phase_ids}
        ped_calls      = {p : False for p in self.config.ped_phases}
        records        = []

        for time_of_day in range(span_start, span_end):
            plan               = build_plan(self.config, time_of_day)
            state, shown       = self.controller.step_controller(state, actuations, ped_calls, plan)
            lanes, outputs     = self.traffic.step_traffic(lanes, shown.phases, rng, time_of_day)
            ped_calls          = self.traffic.draw_ped_calls(rng, time_of_day)
            actuations         = outputs.phase_actuations(self.config)
            records.append(self._record(state.clock, state.plan, state.cycle_second, shown, outputs))

        self.log.info(f'Simulated {pd.Timestamp(date).date()} seed {seed}: {len(records)} records')
        return records

    def _record(self, clock : int, plan : PlanConfig, cycle_second : int, shown : SignalIndications, outputs) -> PerSecondRecord:
        detectors = {d.id : (int(outputs.actuation[i]), int(outputs.volume[i]),
                             float(outputs.occupancy[i]), float(outputs.speed[i]))
                     for i, d in enumerate(self.config.detectors)}
        return PerSecondRecord(timestamp       = int(clock),
                               intersection_id = self.config.intersection_id,
                               firmware        = self.config.firmware,
                               phases          = {p : (shown.phases[p].value, shown.exit_modes[p].value)
                                                  for p in self.config.phase_ids},
                               peds            = {p : (shown.peds[p].value, shown.ped_calls[p])
                                                  for p in self.config.ped_phases},
                               detectors       = detectors,
                               plan_id         = plan.plan_id,
                               cycle_length    = plan.cycle_length,
                               offset          = plan.offset,
                               cycle_second    = int(cycle_second))

    def corrupt_feed(self, records : list, dropout_prob : float = None, duplicate_prob : float = None, seed : int = 0) -> list:
        """
        Emulates connection loss and retries: every record is independently dropped with `dropout_prob` and otherwise
        repeated once with `duplicate_prob`. Replays carry identical payloads; time order is preserved.
        Arguments:
        ----------
            - records        (list)  : the clean feed.
            - dropout_prob   (float) : defaults to the intersection's configured value.
            - duplicate_prob (float) : defaults to the intersection's configured value.
            - seed           (int)   : corruption seed.
        Returns:
        --------
            - list : the corrupted feed.
        """
        return corrupt_feed(records,
                            self.config.dropout_prob if dropout_prob is None else dropout_prob,
                            self.config.duplicate_prob if duplicate_prob is None else duplicate_prob,
                            seed)


def corrupt_feed(records : list, dropout_prob : float, duplicate_prob : float, seed : int) -> list:
    if not (0.0 <= dropout_prob <= 1.0 and 0.0 <= duplicate_prob <= 1.0):
        raise ValueError('corruption probabilities must lie in [0, 1]')
    rng       = np.random.default_rng(seed)
    dropped   = rng.random(len(records)) < dropout_prob
    repeated  = rng.random(len(records)) < duplicate_prob
    corrupted = []
    for record, drop, repeat in zip(records, dropped, repeated):
        if drop:
            continue
        corrupted.append(record)
        if repeat:
            corrupted.append(record)
    return corrupted
