import numpy as np
import pytest
from src.intersection import build_plan, day_bounds, plan_timing
from src.controller import ExitMode, Indication, PedInterval, RingBarrierController


START = day_bounds('2020-09-01')[0] + 21600 - 1


def run(config, ticks, actuations = None, ped_calls = None):
    """
    Drives the controller from the resting state; `actuations(k)` and `ped_calls(k)` give the inputs of tick k.
    """
    controller = RingBarrierController(config)
    plan       = build_plan(config, 21600)
    state      = controller.initial_state(START, plan)
    trace      = []
    for k in range(ticks):
        phase_flags = actuations(k) if actuations else {}
        ped_flags   = ped_calls(k) if ped_calls else {}
        state, shown = controller.step_controller(state, phase_flags, ped_flags, plan)
        trace.append((state.clock, state.cycle_second, shown))
    return trace


def green_runs(trace, phase_id):
    runs, length = [], 0
    for _, _, shown in trace:
        if shown.phases[phase_id] is Indication.GREEN:
            length += 1
        elif length:
            runs.append(length)
            length = 0
    return runs


def test_zero_demand_keeps_coordinated_phases_green(reference_config):
    trace = run(reference_config, 3 * 120)
    for _, _, shown in trace:
        assert shown.green_phases() == [2, 6]
    seconds = [second for _, second, _ in trace]
    assert seconds[:120] == seconds[120:240] == seconds[240:]
    assert sorted(seconds[:120]) == list(range(120))


def test_uncalled_side_street_is_skipped(reference_config):
    trace = run(reference_config, 120)
    assert not any(shown.phases[3] is Indication.GREEN or shown.phases[4] is Indication.GREEN for _, _, shown in trace)
    assert trace[-1][2].exit_modes[3] is ExitMode.SKIP
    assert trace[-1][2].exit_modes[4] is ExitMode.SKIP


def test_continuous_actuation_maxes_out(reference_config):
    trace = run(reference_config, 2 * 120, actuations = lambda k : {1 : True})
    runs  = green_runs(trace, 1)
    assert runs and runs[0] == reference_config.phase(1).max_green

    first_end = next(i for i in range(1, len(trace))
                     if trace[i - 1][2].phases[1] is Indication.GREEN and trace[i][2].phases[1] is not Indication.GREEN)
    assert trace[first_end][2].exit_modes[1] is ExitMode.MAX_OUT
    assert trace[first_end][2].phases[1] is Indication.YELLOW


def test_single_call_gaps_out_after_min_green(reference_config):
    trace = run(reference_config, 120, actuations = lambda k : {3 : k == 0})
    assert green_runs(trace, 3) == [reference_config.phase(3).min_green]
    assert trace[-1][2].exit_modes[3] is ExitMode.GAP_OUT
    assert trace[-1][2].exit_modes[4] is ExitMode.SKIP


def test_side_street_service_crosses_the_barrier_together(reference_config):
    trace = run(reference_config, 120, actuations = lambda k : {3 : k == 0})
    served = [(second, shown) for _, second, shown in trace if shown.phases[3] is Indication.GREEN]
    # group 2 opens after the coordinated clearance that starts at the yield point
    clearance = reference_config.phase(2).clearance
    assert served[0][0] == 64 + clearance
    for _, shown in served:
        assert shown.phases[2] is Indication.RED
        assert shown.phases[6] is Indication.RED


def test_coordinated_greens_yield_once_per_cycle(reference_config):
    plan   = build_plan(reference_config, 21600)
    timing = plan_timing(reference_config, plan)
    cross  = [second for second, points in timing.yield_points.items() for point in points
              if point.cross and point.target == 3]
    trace  = run(reference_config, 5 * plan.cycle_length, actuations = lambda k : {3 : True})
    for coordinated in (2, 6):
        ends = [(clock, second, after.exit_modes[coordinated])
                for (_, _, before), (clock, second, after) in zip(trace, trace[1:])
                if before.phases[coordinated] is Indication.GREEN and after.phases[coordinated] is Indication.YELLOW]
        assert len(ends) >= 4
        assert {second for _, second, _ in ends} == set(cross)
        assert {mode for _, _, mode in ends} == {ExitMode.FORCE_OFF}
        assert set(np.diff([clock for clock, _, _ in ends]).tolist()) == {plan.cycle_length}


@pytest.mark.parametrize('seed', [0, 1, 2])
def test_phase_without_calls_is_never_served(reference_config, seed):
    rng   = np.random.default_rng(seed)
    trace = run(reference_config, 4 * 120,
                actuations = lambda k : {p : bool(rng.random() < 0.3) for p in (1, 2, 3, 5, 6)},
                ped_calls  = lambda k : {p : bool(rng.random() < 0.02) for p in (2, 6)})
    assert all(shown.phases[4] is Indication.RED for _, _, shown in trace)
    assert any(shown.exit_modes[4] is ExitMode.SKIP for _, _, shown in trace)


def test_pedestrian_call_holds_green_for_walk_and_flashing(reference_config):
    trace = run(reference_config, 160, ped_calls = lambda k : {4 : k == 0})
    walk, flashing = reference_config.ped_phases[4]
    assert green_runs(trace, 4) and green_runs(trace, 4)[0] >= walk + flashing
    intervals = [shown.peds[4] for _, _, shown in trace]
    assert intervals.count(PedInterval.WALK) == walk
    assert intervals.count(PedInterval.FLASHING) == flashing


def test_ring_barrier_invariants_hold_under_random_demand(reference_config):
    rng   = np.random.default_rng(3)
    trace = run(reference_config, 600,
                actuations = lambda k : {p : bool(rng.random() < 0.2) for p in reference_config.phase_ids},
                ped_calls  = lambda k : {p : bool(rng.random() < 0.01) for p in reference_config.ped_phases})
    groups = {p.id : p.barrier_group for p in reference_config.phases}
    for _, _, shown in trace:
        lit = [p for p, s in shown.phases.items() if s is not Indication.RED]
        assert len({groups[p] for p in lit}) <= 1
        for ring in reference_config.rings:
            assert len([p for p in reference_config.ring_sequence(ring) if p in lit]) <= 1
    for phase_id in (1, 3, 4, 5):
        assert max(green_runs(trace, phase_id), default = 0) <= reference_config.phase(phase_id).max_green


def test_state_copy_is_independent(reference_config):
    controller = RingBarrierController(reference_config)
    state      = controller.initial_state(START, build_plan(reference_config, 21600))
    clone      = state.copy()
    clone.calls.add(3)
    clone.rings[1].phase = None
    assert 3 not in state.calls
    assert state.rings[1].phase == 2
