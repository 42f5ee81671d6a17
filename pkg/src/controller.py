import dataclasses
from enum import Enum
from logger import LoggerSetup
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple
from src.exceptions import InvariantViolation
from src.intersection import IntersectionConfig, PlanConfig, PlanTiming, plan_timing


class Interval(str, Enum):
    GREEN   = 'green'
    YELLOW  = 'yellow'
    ALL_RED = 'all-red'
    IDLE    = 'idle'


class Indication(str, Enum):
    GREEN  = 'green'
    YELLOW = 'yellow'
    RED    = 'red'


class ExitMode(str, Enum):
    GAP_OUT   = 'gap-out'
    MAX_OUT   = 'max-out'
    FORCE_OFF = 'force-off'
    SKIP      = 'skip'
    NONE      = 'none'


class PedInterval(str, Enum):
    WALK      = 'walk'
    FLASHING  = 'flashing'
    DONT_WALK = 'dont-walk'


@dataclass
class RingState:
    phase          : Optional[int]
    interval       : Interval
    interval_start : int
    green_start    : int           = 0
    last_actuation : int           = 0
    force_off      : Optional[int] = None
    ped_end        : Optional[int] = None
    next_phase     : Optional[int] = None
    last_phase     : Optional[int] = None


@dataclass
class PedService:
    walk_start     : int
    flashing_start : int
    end            : int

    def interval(self, clock : int) -> PedInterval:
        if self.walk_start <= clock < self.flashing_start:
            return PedInterval.WALK
        if self.flashing_start <= clock < self.end:
            return PedInterval.FLASHING
        return PedInterval.DONT_WALK


@dataclass
class ControllerState:
    clock         : int
    rings         : Dict[int, RingState]
    plan          : PlanConfig
    active_group  : int
    cycle_second  : int                    = 0
    calls         : Set[int]               = field(default_factory = set)
    ped_calls     : Set[int]               = field(default_factory = set)
    ped_service   : Dict[int, PedService]  = field(default_factory = dict)
    exit_modes    : Dict[int, ExitMode]    = field(default_factory = dict)
    pending_group : Optional[int]          = None

    def copy(self) -> 'ControllerState':
        return dataclasses.replace(self,
                                   rings       = {r : dataclasses.replace(s) for r, s in self.rings.items()},
                                   calls       = set(self.calls),
                                   ped_calls   = set(self.ped_calls),
                                   ped_service = dict(self.ped_service),
                                   exit_modes  = dict(self.exit_modes))

    def active_phase(self, ring : int) -> Optional[int]:
        return self.rings[ring].phase

    def elapsed_in_interval(self, ring : int) -> int:
        return self.clock - self.rings[ring].interval_start

    def ped_interval(self, phase_id : int) -> PedInterval:
        service = self.ped_service.get(phase_id)
        return service.interval(self.clock) if service else PedInterval.DONT_WALK


@dataclass(frozen = True)
class SignalIndications:
    phases     : Dict[int, Indication]
    exit_modes : Dict[int, ExitMode]
    peds       : Dict[int, PedInterval]
    ped_calls  : Dict[int, bool]

    def green_phases(self) -> List[int]:
        return [p for p, state in self.phases.items() if state is Indication.GREEN]


class RingBarrierController:
    def __init__(self, config : IntersectionConfig):
        """
        Coordinated-actuated NEMA ring-barrier controller ticking once per second.

        Coordinated phases rest in green and yield only at fixed points of the cycle (the start of a called phase's
        split window minus the clearance), so the background cycle never drifts. Non-coordinated phases are served
        only on a latched call, time out through gap-out, max-out or a floating force-off, and any time they leave
        unused stays with the coordinated phase of their ring. Rings cross a barrier together.
        Arguments:
        ----------
            - config (IntersectionConfig) : validated intersection description.
        """
        self.config      = config
        self.log         = LoggerSetup(logger_name = 'controller',
                                       logger_file = 'controller').get_logger()
        self._phases     = {phase.id : phase for phase in config.phases}
        self._ring_of    = {phase.id : phase.ring for phase in config.phases}
        self._group_of   = {phase.id : phase.barrier_group for phase in config.phases}
        self._coord      = {ring : config.coordinated_phase(ring) for ring in config.rings}
        self._sequences  = {ring : config.ring_sequence(ring) for ring in config.rings}
        self._timings    = {}

    def timing(self, plan : PlanConfig) -> PlanTiming:
        if plan.plan_id not in self._timings:
            self._timings[plan.plan_id] = plan_timing(self.config, plan)
        return self._timings[plan.plan_id]

    def initial_state(self, clock : int, plan : PlanConfig) -> ControllerState:
        """
        Both rings resting in their coordinated greens, min-green already served, nothing called.
        """
        rings = {}
        for ring, coordinated in self._coord.items():
            start       = clock - self._phases[coordinated].min_green
            rings[ring] = RingState(phase          = coordinated,
                                    interval       = Interval.GREEN,
                                    interval_start = start,
                                    green_start    = start,
                                    last_actuation = start)
        state = ControllerState(clock        = clock,
                                rings        = rings,
                                plan         = plan,
                                active_group = self.config.barrier_groups[0],
                                exit_modes   = {p : ExitMode.NONE for p in self._phases})
        state.cycle_second = self.timing(plan).cycle_second(clock)
        return state

    def step_controller(self,
                        state               : ControllerState,
                        detector_actuations : Dict[int, bool],
                        ped_calls           : Dict[int, bool],
                        plan                : PlanConfig) -> Tuple[ControllerState, SignalIndications]:
        """
        Advances the controller by exactly one second.
        Arguments:
        ----------
            - state               (ControllerState) : state at second t.
            - detector_actuations (dict)            : phase id -> any detector of the phase actuated during t.
            - ped_calls           (dict)            : vehicle phase id -> pedestrian push-button pressed during t.
            - plan                (PlanConfig)      : plan the time-of-day schedule selects for t + 1.
        Returns:
        --------
            - (ControllerState, SignalIndications) : state and displayed indications for second t + 1.
        """
        nxt       = state.copy()
        clock     = state.clock + 1
        nxt.clock = clock

        self._adopt_plan(nxt, plan)
        timing           = self.timing(nxt.plan)
        nxt.cycle_second = timing.cycle_second(clock)

        self._register_calls(nxt, detector_actuations, ped_calls)
        for ring in self.config.rings:
            self._advance_interval(nxt, ring)
        self._coordinated_yields(nxt, timing)
        self._start_phases(nxt, timing)
        self._serve_coordinated_peds(nxt, timing)

        indications = self.indications(nxt)
        self._check_invariants(nxt, indications)
        return nxt, indications

    def indications(self, state : ControllerState) -> SignalIndications:
        phases = {p : Indication.RED for p in self._phases}
        for ring_state in state.rings.values():
            if ring_state.phase is None:
                continue
            if ring_state.interval is Interval.GREEN:
                phases[ring_state.phase] = Indication.GREEN
            elif ring_state.interval is Interval.YELLOW:
                phases[ring_state.phase] = Indication.YELLOW
        return SignalIndications(phases     = phases,
                                 exit_modes = dict(state.exit_modes),
                                 peds       = {p : state.ped_interval(p) for p in self.config.ped_phases},
                                 ped_calls  = {p : p in state.ped_calls for p in self.config.ped_phases})

    def _adopt_plan(self, state : ControllerState, plan : PlanConfig):
        if plan.plan_id == state.plan.plan_id:
            return
        if state.pending_group is not None:
            return
        for ring, ring_state in state.rings.items():
            coordinated = self._coord[ring]
            if ring_state.phase != coordinated or ring_state.interval is not Interval.GREEN:
                return
            if state.clock - ring_state.green_start < self._phases[coordinated].min_green:
                return
            if ring_state.ped_end is not None and state.clock < ring_state.ped_end:
                return
        self.log.info(f'Plan {state.plan.plan_id} -> {plan.plan_id} at {state.clock}')
        state.plan = plan

    def _register_calls(self, state : ControllerState, actuations : Dict[int, bool], ped_calls : Dict[int, bool]):
        for phase_id in sorted(actuations):
            if not actuations[phase_id]:
                continue
            ring_state = state.rings[self._ring_of[phase_id]]
            if ring_state.phase == phase_id and ring_state.interval is Interval.GREEN:
                ring_state.last_actuation = state.clock
            elif not self._phases[phase_id].coordinated:
                state.calls.add(phase_id)
        for phase_id in sorted(ped_calls):
            if not ped_calls[phase_id] or phase_id not in self.config.ped_phases:
                continue
            service = state.ped_service.get(phase_id)
            if service is not None and state.clock < service.end:
                continue
            state.ped_calls.add(phase_id)

    def _has_call(self, state : ControllerState, phase_id : int) -> bool:
        return phase_id in state.calls or phase_id in state.ped_calls

    def _termination(self, state : ControllerState, ring_state : RingState) -> Optional[ExitMode]:
        phase   = self._phases[ring_state.phase]
        clock   = state.clock
        elapsed = clock - ring_state.green_start
        if elapsed < phase.min_green:
            return None
        if ring_state.ped_end is not None and clock < ring_state.ped_end:
            return None
        if elapsed >= phase.max_green:
            return ExitMode.MAX_OUT
        if clock >= ring_state.force_off:
            return ExitMode.FORCE_OFF
        if clock - ring_state.last_actuation > phase.gap_extension:
            return ExitMode.GAP_OUT
        return None

    def _end_green(self, state : ControllerState, ring_state : RingState, mode : ExitMode):
        phase_id                   = ring_state.phase
        state.exit_modes[phase_id] = mode
        ring_state.interval        = Interval.YELLOW
        ring_state.interval_start  = state.clock
        ring_state.ped_end         = None
        ring_state.force_off       = None
        # vehicles still on the detector when the green is cut short are carried to the next cycle
        if mode in (ExitMode.MAX_OUT, ExitMode.FORCE_OFF) and ring_state.last_actuation == state.clock:
            if not self._phases[phase_id].coordinated:
                state.calls.add(phase_id)

    def _advance_interval(self, state : ControllerState, ring : int):
        ring_state = state.rings[ring]
        if ring_state.phase is None:
            return
        phase = self._phases[ring_state.phase]
        since = state.clock - ring_state.interval_start
        if ring_state.interval is Interval.GREEN:
            if phase.coordinated:
                return
            mode = self._termination(state, ring_state)
            if mode is not None:
                self._end_green(state, ring_state, mode)
        elif ring_state.interval is Interval.YELLOW and since >= phase.yellow:
            if phase.all_red > 0:
                ring_state.interval       = Interval.ALL_RED
                ring_state.interval_start = state.clock
            else:
                self._clear(state, ring_state)
        elif ring_state.interval is Interval.ALL_RED and since >= phase.all_red:
            self._clear(state, ring_state)

    def _clear(self, state : ControllerState, ring_state : RingState):
        ring_state.last_phase     = ring_state.phase
        ring_state.phase          = None
        ring_state.interval       = Interval.IDLE
        ring_state.interval_start = state.clock

    def _resting(self, state : ControllerState, ring : int) -> bool:
        """
        True when the ring rests in its coordinated green and may be forced off now.
        """
        ring_state  = state.rings[ring]
        coordinated = self._coord[ring]
        if ring_state.phase != coordinated or ring_state.interval is not Interval.GREEN:
            return False
        if state.clock - ring_state.green_start < self._phases[coordinated].min_green:
            return False
        return ring_state.ped_end is None or state.clock >= ring_state.ped_end

    def _coordinated_yields(self, state : ControllerState, timing : PlanTiming):
        points = timing.yield_points.get(state.cycle_second, [])
        for point in sorted(points, key = lambda p : (not p.cross, p.target)):
            target = point.target
            if point.cross:
                if state.pending_group is not None:
                    continue
                if not all(self._resting(state, ring) for ring in self.config.rings):
                    continue
                if not self._has_call(state, target):
                    state.exit_modes[target] = ExitMode.SKIP
                    continue
                for ring, ring_state in state.rings.items():
                    self._end_green(state, ring_state, ExitMode.FORCE_OFF)
                    ring_state.next_phase = target if ring == self._ring_of[target] else None
                state.pending_group = self._group_of[target]
            else:
                ring_state = state.rings[point.ring]
                if state.pending_group is not None or not self._resting(state, point.ring):
                    continue
                if not self._has_call(state, target):
                    state.exit_modes[target] = ExitMode.SKIP
                    continue
                self._end_green(state, ring_state, ExitMode.FORCE_OFF)
                ring_state.next_phase = target

    def _start_green(self, state : ControllerState, ring : int, phase_id : int, timing : PlanTiming):
        phase      = self._phases[phase_id]
        clock      = state.clock
        ring_state = state.rings[ring]
        ring_state.phase          = phase_id
        ring_state.interval       = Interval.GREEN
        ring_state.interval_start = clock
        ring_state.green_start    = clock
        ring_state.last_actuation = clock
        ring_state.next_phase     = None
        ring_state.ped_end        = None
        ring_state.force_off      = None if phase.coordinated else clock + timing.plan.splits[phase_id] - phase.clearance
        state.calls.discard(phase_id)

        if phase_id in state.ped_calls and phase_id in self.config.ped_phases:
            if not phase.coordinated or self._ped_fits(state, ring, timing):
                self._start_ped(state, ring, phase_id)

    def _start_ped(self, state : ControllerState, ring : int, phase_id : int):
        walk, flashing              = self.config.ped_phases[phase_id]
        clock                       = state.clock
        service                     = PedService(walk_start     = clock,
                                                 flashing_start = clock + walk,
                                                 end            = clock + walk + flashing)
        state.ped_service[phase_id] = service
        state.rings[ring].ped_end   = service.end
        state.ped_calls.discard(phase_id)

    def _ped_fits(self, state : ControllerState, ring : int, timing : PlanTiming) -> bool:
        """
        A coordinated pedestrian interval may only start if it ends before the ring's next possible yield.
        """
        phase_id       = state.rings[ring].phase
        walk, flashing = self.config.ped_phases[phase_id]
        yields         = timing.ring_yields.get(ring, ())
        if not yields:
            return True
        cycle  = timing.cycle_length
        second = state.cycle_second
        ahead  = min((point - second - 1) % cycle + 1 for point in yields)
        return walk + flashing <= ahead

    def _serve_coordinated_peds(self, state : ControllerState, timing : PlanTiming):
        for ring, coordinated in self._coord.items():
            ring_state = state.rings[ring]
            if ring_state.phase != coordinated or ring_state.interval is not Interval.GREEN:
                continue
            if coordinated not in state.ped_calls or coordinated not in self.config.ped_phases:
                continue
            if ring_state.ped_end is not None and state.clock < ring_state.ped_end:
                continue
            if self._ped_fits(state, ring, timing):
                self._start_ped(state, ring, coordinated)

    def _group_members(self, ring : int, group : int) -> List[int]:
        return [p for p in self._sequences[ring] if self._group_of[p] == group]

    def _first_service(self, state : ControllerState, ring : int, group : int, after : Optional[int] = None) -> Optional[int]:
        """
        Next phase of `ring` in `group` to serve, marking the uncalled ones it passes over as skipped.
        The coordinated phase is always served.
        """
        members = self._group_members(ring, group)
        if after is not None and after in members:
            members = members[members.index(after) + 1:]
        for phase_id in members:
            if self._phases[phase_id].coordinated or self._has_call(state, phase_id):
                return phase_id
            state.exit_modes[phase_id] = ExitMode.SKIP
        return None

    def _start_phases(self, state : ControllerState, timing : PlanTiming):
        rings = self.config.rings
        if state.pending_group is not None:
            if all(state.rings[r].interval is Interval.IDLE for r in rings):
                group               = state.pending_group
                state.pending_group = None
                state.active_group  = group
                for ring in rings:
                    target = state.rings[ring].next_phase
                    if target is not None:
                        self._start_green(state, ring, target, timing)
                    else:
                        following = self._first_service(state, ring, group)
                        if following is not None:
                            self._start_green(state, ring, following, timing)
            return

        for ring in rings:
            ring_state = state.rings[ring]
            if ring_state.interval is not Interval.IDLE:
                continue
            if ring_state.next_phase is not None:
                self._start_green(state, ring, ring_state.next_phase, timing)
                continue
            following = self._first_service(state, ring, state.active_group, after = ring_state.last_phase)
            if following is not None:
                self._start_green(state, ring, following, timing)

        if all(state.rings[r].interval is Interval.IDLE for r in rings):
            groups             = self.config.barrier_groups
            group              = groups[(groups.index(state.active_group) + 1) % len(groups)]
            state.active_group = group
            for ring in rings:
                state.rings[ring].last_phase = None
                following = self._first_service(state, ring, group)
                if following is not None:
                    self._start_green(state, ring, following, timing)

    def _check_invariants(self, state : ControllerState, indications : SignalIndications):
        groups = {self._group_of[p] for p, s in indications.phases.items() if s is not Indication.RED}
        if len(groups) > 1:
            self.log.error(f'Barrier groups {sorted(groups)} displayed together at {state.clock}')
            raise InvariantViolation(f'barrier groups {sorted(groups)} displayed together at {state.clock}')
        for ring in self.config.rings:
            shown = [p for p in self._sequences[ring] if indications.phases[p] is not Indication.RED]
            if len(shown) > 1:
                self.log.error(f'Ring {ring} shows {shown} at {state.clock}')
                raise InvariantViolation(f'ring {ring} shows phases {shown} at {state.clock}')
        for ring, ring_state in state.rings.items():
            if ring_state.phase is None or ring_state.interval is not Interval.GREEN:
                continue
            phase = self._phases[ring_state.phase]
            if not phase.coordinated and state.clock - ring_state.green_start >= phase.max_green:
                self.log.error(f'Phase {phase.id} green beyond max_green at {state.clock}')
                raise InvariantViolation(f'phase {phase.id} green beyond max_green at {state.clock}')
