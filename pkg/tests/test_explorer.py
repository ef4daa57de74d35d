import time
from dataclasses import replace

import pytest

from backend.errors import ConfigError, ReplayDivergence, StrategyError
from backend.explorer import Explorer, Trace, explore_bounded, replay_trace, run_strategy
from backend.rule_registry import ABSTRACT
from backend.runtime import Status, lock_pattern
from backend.strategy import GUIDED_STRATEGY


def test_guided_run_reproduces_dining_deadlock(dining_wrong):
    report = run_strategy(dining_wrong, GUIDED_STRATEGY)
    assert report.trace.terminal == Status.DEADLOCK
    assert report.final.terminal == Status.DEADLOCK
    assert len(report.deadlocks) == 1
    _, witness = report.deadlocks[0]
    # p5 and p6 are the two philosophers; forks f1 and f2 run on 3 and 4
    assert witness.processors == frozenset({5, 6})
    assert witness.cycle == (5, 6)
    assert witness.labels == {(5, 6): frozenset({4}), (6, 5): frozenset({3})}
    assert report.trace.steps[-1].terminal == 'deadlock'


def test_guided_run_is_deterministic(dining_wrong):
    first = run_strategy(dining_wrong, GUIDED_STRATEGY)
    second = run_strategy(dining_wrong, GUIDED_STRATEGY)
    assert first.trace == second.trace
    assert first.to_dict() == second.to_dict()


def test_guided_run_of_correct_variant_completes(dining_correct):
    report = run_strategy(dining_correct, GUIDED_STRATEGY)
    assert report.trace.terminal == Status.DONE
    assert report.deadlocks == []
    assert report.completed_traces == 1
    assert all(not held for held in report.final.state.rq_locks.values())


def test_deadlock_check_can_be_switched_off(dining_wrong):
    report = run_strategy(dining_wrong, GUIDED_STRATEGY, deadlock_check=False)
    assert report.deadlocks == []
    assert report.trace.terminal == Status.RUNNING


def test_pick_of_disabled_processor_fails(dining_wrong):
    with pytest.raises(StrategyError):
        run_strategy(dining_wrong, "init ; pick(4)")


def test_exploration_finds_both_outcomes_for_wrong_variant(wrong_exploration):
    assert wrong_exploration.deadlocks
    assert wrong_exploration.completed_traces >= 1
    assert not wrong_exploration.bound_hit
    for trace, witness in wrong_exploration.deadlocks:
        assert trace.terminal == Status.DEADLOCK
        assert len(witness.processors) == 2


def test_exploration_of_correct_variant_has_no_deadlock(correct_exploration):
    assert correct_exploration.deadlocks == []
    assert correct_exploration.completed_traces >= 1
    assert correct_exploration.bound_hit is False


def test_bounds_are_reported(dining_wrong):
    shallow = explore_bounded(dining_wrong, 5, 100000)
    assert shallow.bound_hit
    small = explore_bounded(dining_wrong, 200, 10)
    assert small.bound_hit
    assert small.states_visited == 10


def test_bounds_must_be_positive(dining_wrong):
    with pytest.raises(ConfigError):
        explore_bounded(dining_wrong, 0, 10)
    with pytest.raises(ConfigError):
        Explorer(dining_wrong, workers=0)


def test_parallel_expansion_gives_identical_report(dining_wrong):
    serial = explore_bounded(dining_wrong, 40, 5000)
    parallel = explore_bounded(dining_wrong, 40, 5000, workers=4)
    assert parallel.to_dict() == serial.to_dict()


def test_explored_deadlock_traces_replay(dining_wrong, wrong_exploration):
    trace, witness = wrong_exploration.deadlocks[0]
    final = replay_trace(dining_wrong, trace)
    assert final.terminal == Status.DEADLOCK
    assert all(final.state.rq_locks[p] for p in witness.processors)


def test_guided_trace_replays(dining_wrong):
    report = run_strategy(dining_wrong, GUIDED_STRATEGY)
    final = replay_trace(dining_wrong, report.trace)
    assert final.terminal == Status.DEADLOCK
    assert lock_pattern(final) == lock_pattern(report.final)


def test_replay_detects_divergence(dining_wrong, dining_correct):
    trace = run_strategy(dining_wrong, GUIDED_STRATEGY).trace
    with pytest.raises(ReplayDivergence, match="different program"):
        replay_trace(dining_correct, trace)

    steps = list(trace.steps)
    steps[3] = replace(steps[3], rule_name='release')
    with pytest.raises(ReplayDivergence, match="step 3"):
        replay_trace(dining_wrong, replace(trace, steps=tuple(steps)))

    with pytest.raises(ReplayDivergence, match="not enabled"):
        replay_trace(dining_wrong, replace(trace, steps=(replace(trace.steps[0], processor=6),)))

    with pytest.raises(ReplayDivergence):
        replay_trace(dining_wrong, replace(trace, steps=trace.steps[:-1]))

    with pytest.raises(ReplayDivergence, match="abstract"):
        replay_trace(dining_wrong, replace(trace, engine=ABSTRACT))


def test_trace_serialization_keeps_choices(dining_wrong):
    trace = run_strategy(dining_wrong, GUIDED_STRATEGY).trace
    data = trace.to_dict()
    assert data['engine'] == 'concrete'
    assert data['terminal'] == 'deadlock'
    assert [s['processor'] for s in data['steps']] == [c.processor for c in trace.choices]
    assert isinstance(trace, Trace)


def test_explored_traces_record_every_fired_rule(dining_wrong, wrong_exploration):
    trace, _ = min(wrong_exploration.deadlocks, key=lambda entry: len(entry[0]))
    assert [s.step_index for s in trace.steps] == list(range(len(trace)))
    assert {'assign', 'eval', 'wait', 'write', 'apply', 'frame_pop'} <= {s.rule_name for s in trace.steps}
    assert trace.steps[-1].terminal == 'deadlock'
    assert all(s.terminal == 'running' for s in trace.steps[:-1])
    assert replay_trace(dining_wrong, trace).terminal == Status.DEADLOCK


@pytest.mark.parametrize('variant', ['dining_wrong', 'dining_correct'])
def test_dining_exploration_stays_within_budget(variant, request):
    program = request.getfixturevalue(variant)
    started = time.perf_counter()
    report = explore_bounded(program, 200, 100000)
    assert time.perf_counter() - started < 30
    assert not report.bound_hit
    assert report.completed_traces >= 1
    assert bool(report.deadlocks) == (variant == 'dining_wrong')
