import numpy as np
from typing import Dict
from dataclasses import dataclass
from src.controller import Indication
from src.intersection import IntersectionConfig


@dataclass
class TrafficState:
    """
    Per-lane state; one lane per detector, in the order of `IntersectionConfig.detectors`.
    `discharged` is the cumulative (fractional) count of vehicles released at the stop bar.
    """
    queue      : np.ndarray
    discharged : np.ndarray

    @classmethod
    def empty(cls, n_lanes : int) -> 'TrafficState':
        return cls(queue      = np.zeros(n_lanes),
                   discharged = np.zeros(n_lanes))


@dataclass(frozen = True)
class DetectorOutputs:
    actuation : np.ndarray
    volume    : np.ndarray
    occupancy : np.ndarray
    speed     : np.ndarray

    def phase_actuations(self, config : IntersectionConfig) -> Dict[int, bool]:
        flags = {phase_id : False for phase_id in config.phase_ids}
        for detector, on in zip(config.detectors, self.actuation):
            if on:
                flags[detector.phase] = True
        return flags


class TrafficModel:
    def __init__(self, config : IntersectionConfig):
        """
        Point-queue lane model: Poisson arrivals, deterministic discharge at the saturation flow while the owning
        phase shows green, and detector statistics derived from queue presence.
        """
        self.config      = config
        self.lane_phase  = np.array([d.phase for d in config.detectors])
        self.lane_speed  = np.array([d.free_flow_speed for d in config.detectors], dtype = float)
        self.stop_bar    = np.array([d.stop_bar for d in config.detectors], dtype = bool)
        self.approaches  = [d.approach for d in config.detectors]
        self.ped_phases  = sorted(config.ped_phases)

    def arrival_rates(self, time_of_day : int) -> np.ndarray:
        return np.array([self.config.arrival_rates[a].at(time_of_day) for a in self.approaches])

    def step_traffic(self,
                     state       : TrafficState,
                     indications : Dict[int, Indication],
                     rng,
                     time_of_day : int) -> tuple:
        """
        Advances every lane by one second.
        Arguments:
        ----------
            - state       (TrafficState)        : queues before the second.
            - indications (dict)                : phase id -> displayed indication during the second.
            - rng         (np.random.Generator) : the day's seeded generator.
            - time_of_day (int)                 : seconds since midnight, selects the arrival rate.
        Returns:
        --------
            - (TrafficState, DetectorOutputs) : queues after the second and what each detector reported.
        """
        rates    = self.arrival_rates(time_of_day)
        arrivals = np.asarray(rng.poisson(rates), dtype = float)
        green    = np.array([indications[p] is Indication.GREEN for p in self.lane_phase])

        queued_before = state.queue > 0
        free_flow     = green & ~queued_before
        queue         = np.where(free_flow, state.queue, state.queue + arrivals)

        release    = np.where(green & queued_before, np.minimum(queue, self.config.saturation_flow), 0.0)
        queue      = queue - release
        queue      = np.where(queue < 1e-9, 0.0, queue)
        discharged = state.discharged + release

        passed     = np.floor(discharged) - np.floor(state.discharged)
        volume     = passed + np.where(free_flow, arrivals, 0.0)

        # advance detectors upstream of the stop bar only see vehicles passing over them
        occupied   = (queue > 0) & self.stop_bar
        release    = np.where(self.stop_bar, release, 0.0)
        actuation  = (occupied | (arrivals > 0) | (release > 0)).astype(int)
        occupancy  = np.where(occupied | (release > 0), 1.0,
                              np.minimum(1.0, arrivals * self.config.occupancy_per_vehicle))
        speed      = np.where(occupied | (release > 0), 0.0,
                              np.where(arrivals > 0, self.lane_speed, 0.0))

        outputs    = DetectorOutputs(actuation = actuation,
                                     volume    = volume.astype(int),
                                     occupancy = occupancy,
                                     speed     = speed)
        return TrafficState(queue = queue, discharged = discharged), outputs

    def draw_ped_calls(self, rng, time_of_day : int) -> Dict[int, bool]:
        """
        One Bernoulli(1 - exp(-rate)) push-button draw per pedestrian phase.
        """
        rates = np.array([self.config.ped_call_rates[p].at(time_of_day) if p in self.config.ped_call_rates else 0.0
                          for p in self.ped_phases])
        draws = rng.random(len(self.ped_phases))
        return {p : bool(hit) for p, hit in zip(self.ped_phases, draws < -np.expm1(-rates))}
