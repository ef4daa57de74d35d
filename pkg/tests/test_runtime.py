import random
from collections import Counter
from dataclasses import replace

import pytest

from backend.errors import InitializationError, LockViolation, StuckConfiguration, VoidDereference
from backend.ir import Expression, Name, Settings
from backend.runtime import (
    BOOTSTRAP,
    VOID,
    ApplyItem,
    Blocked,
    Choice,
    EvalItem,
    InstructionItem,
    LockItem,
    ReleaseItem,
    Status,
    WaitItem,
    WriteItem,
    acquire_locks,
    canonical_key,
    check_invariants,
    enabled_choices,
    evaluate_expression,
    finish_if_done,
    fire,
    initial_configuration,
    is_local_step,
    next_rule,
    release_locks,
    step,
)
from conftest import load_corpus


def _run_until(config, predicate, limit=1000):
    """Fire the lowest enabled processor until predicate holds"""
    for _ in range(limit):
        if predicate(config):
            return config
        choices = enabled_choices(config)
        assert choices, "ran out of enabled processors"
        config, _ = fire(config, choices[0])
    raise AssertionError("predicate never held")


def test_initial_configuration(dining_wrong):
    config = initial_configuration(dining_wrong)
    assert config.state.procs == frozenset({BOOTSTRAP})
    assert config.state.heap == {}
    stack = config.stack(BOOTSTRAP)
    assert len(stack) == 2
    assert isinstance(stack[0], InstructionItem)
    assert stack[1] == ReleaseItem(frozenset())
    assert enabled_choices(config) == (Choice(BOOTSTRAP),)
    assert next_rule(config, BOOTSTRAP) == 'create'


def test_initial_configuration_rejects_missing_root(dining_wrong):
    broken = replace(dining_wrong, settings=Settings(Name('APPLICATION'), Name('start')))
    with pytest.raises(InitializationError):
        initial_configuration(broken)


def test_bootstrap_creates_root_on_fresh_processor(dining_wrong):
    config, rule = fire(initial_configuration(dining_wrong), Choice(BOOTSTRAP))
    assert rule == 'create'
    assert config.state.procs == frozenset({0, 1})
    root = config.state.top_frame(BOOTSTRAP).lookup('root')
    assert config.state.heap[root].class_name == 'APPLICATION'
    assert config.state.heap[root].handler == 1
    assert next_rule(config, BOOTSTRAP) == 'command'

    config, rule = fire(config, Choice(BOOTSTRAP))
    assert rule == 'command'
    assert config.top(BOOTSTRAP) == LockItem(frozenset({1}))
    assert isinstance(config.stack(BOOTSTRAP)[1], ApplyItem)

    config, rule = fire(config, Choice(BOOTSTRAP))
    assert rule == 'lock'
    assert config.state.rq_locks[BOOTSTRAP] == frozenset({1})
    assert config.stack(BOOTSTRAP)[-1] == ReleaseItem(frozenset({1}))

    config, rule = fire(config, Choice(BOOTSTRAP))
    assert rule == 'enqueue'
    assert isinstance(config.stack(1)[-1], ApplyItem)


def test_meal_make_allocates_seven_processors(dining_wrong):
    config = _run_until(initial_configuration(dining_wrong), lambda c: len(c.state.procs) == 7)
    assert config.state.procs == frozenset(range(7))
    classes = sorted(record.class_name for record in config.state.heap.values())
    assert classes == ['APPLICATION', 'FORK', 'FORK', 'MEAL', 'PHILOSOPHER', 'PHILOSOPHER']


def test_assign_unfolds_into_channel_items(dining_wrong):
    config = _run_until(initial_configuration(dining_wrong),
                        lambda c: any(next_rule(c, p) == 'assign' for p in c.pool))
    p = next(p for p in sorted(c for c in config.pool) if next_rule(config, p) == 'assign')
    config, rule = fire(config, Choice(p))
    assert rule == 'assign'
    eval_item, wait_item, write_item = config.stack(p)[:3]
    assert isinstance(eval_item, EvalItem)
    assert isinstance(wait_item, WaitItem)
    assert isinstance(write_item, WriteItem)
    channel = eval_item.channel
    assert config.state.channels[channel] is None
    assert Choice(p) in enabled_choices(config)

    config, rule = fire(config, Choice(p))
    assert rule == 'eval'
    assert config.state.channels[channel] not in (None, VOID)
    config, rule = fire(config, Choice(p))
    assert rule == 'wait'
    config, rule = fire(config, Choice(p))
    assert rule == 'write'
    assert channel not in config.state.channels
    left = evaluate_expression(config.state, p, Expression(Name('left')))
    assert config.state.heap[left].class_name == 'FORK'


def test_evaluate_void_selector(dining_wrong):
    config, _ = fire(initial_configuration(dining_wrong), Choice(BOOTSTRAP))
    root = config.state.top_frame(BOOTSTRAP).lookup('root')
    assert evaluate_expression(config.state, BOOTSTRAP, Expression(Name('root'))) == root
    with pytest.raises(VoidDereference):
        evaluate_expression(config.state, BOOTSTRAP, Expression(Name('root'), (Name('meal'), Name('p1'))))


def test_locks_are_all_or_nothing_and_reentrant(dining_wrong):
    st = initial_configuration(dining_wrong).state
    st = replace(st, procs=frozenset({0, 1, 2, 3}), rq_locks={0: frozenset(), 1: frozenset(), 2: frozenset({3})})
    blocked = acquire_locks(st, 1, frozenset({2, 3}))
    assert isinstance(blocked, Blocked)
    assert blocked.holders == frozenset({2})
    assert blocked.contested == frozenset({3})

    granted = acquire_locks(st, 1, frozenset({2}))
    assert granted.rq_locks[1] == frozenset({2})
    assert acquire_locks(granted, 1, frozenset({2})) is granted
    assert acquire_locks(st, 2, frozenset({3})) is st

    released = release_locks(granted, 1, frozenset({2}))
    assert released.rq_locks[1] == frozenset()
    with pytest.raises(LockViolation):
        release_locks(released, 1, frozenset({2}))


def test_check_invariants_detects_shared_lock(dining_wrong):
    config = initial_configuration(dining_wrong)
    bad_state = replace(config.state, procs=frozenset({0, 1, 2}),
                        rq_locks={0: frozenset({2}), 1: frozenset({2}), 2: frozenset()})
    bad = replace(config, pool={0: (), 1: (), 2: ()}, state=bad_state)
    with pytest.raises(LockViolation):
        check_invariants(bad)


def test_fire_rejects_disabled_processor(dining_wrong):
    config = initial_configuration(dining_wrong)
    with pytest.raises(StuckConfiguration):
        fire(config, Choice(3))
    with pytest.raises(StuckConfiguration):
        fire(replace(config, terminal=Status.DONE), Choice(BOOTSTRAP))


def test_canonical_key_ignores_fresh_names(dining_wrong):
    config = _run_until(initial_configuration(dining_wrong), lambda c: len(c.state.procs) == 3)
    renamed_heap = {ref + 100: record for ref, record in config.state.heap.items()}

    def shift(ref):
        return ref + 100 if ref != VOID else VOID

    stores = {
        p: tuple(replace(f, current=shift(f.current), slots=tuple((n, shift(r)) for n, r in f.slots)) for f in frames)
        for p, frames in config.state.stores.items()
    }
    heap = {
        ref: replace(record, attributes=tuple((n, shift(r)) for n, r in record.attributes))
        for ref, record in renamed_heap.items()
    }
    pool = {
        p: tuple(replace(i, target=shift(i.target), args=tuple(shift(a) for a in i.args))
                 if isinstance(i, ApplyItem) else i for i in stack)
        for p, stack in config.pool.items()
    }
    renamed = replace(config, pool=pool, state=replace(config.state, heap=heap, stores=stores))
    assert renamed != config
    assert canonical_key(renamed) == canonical_key(config)


def test_step_matches_fire(dining_wrong):
    config = initial_configuration(dining_wrong)
    assert step(config, Choice(BOOTSTRAP)) == fire(config, Choice(BOOTSTRAP))[0]


def test_local_steps_stop_at_shared_rules(dining_wrong):
    config = initial_configuration(dining_wrong)
    assert not is_local_step(config, BOOTSTRAP)  # create on a fresh processor
    config, _ = fire(config, Choice(BOOTSTRAP))
    assert is_local_step(config, BOOTSTRAP)  # command
    config, _ = fire(config, Choice(BOOTSTRAP))
    assert not is_local_step(config, BOOTSTRAP)  # lock
    config, _ = fire(config, Choice(BOOTSTRAP))
    assert not is_local_step(config, BOOTSTRAP)  # enqueue
    config, _ = fire(config, Choice(BOOTSTRAP))
    assert next_rule(config, BOOTSTRAP) == 'release'
    assert not is_local_step(config, BOOTSTRAP)
    assert next_rule(config, 1) == 'apply'
    assert is_local_step(config, 1)
    assert not is_local_step(config, 3)


def _random_run(program, seed, limit=20000):
    """Random schedule to completion; every fired step as (processor, rule, before, after)"""
    rng = random.Random(seed)
    config = initial_configuration(program)
    steps = []
    for _ in range(limit):
        choices = enabled_choices(config)
        if not choices:
            return config, steps
        choice = rng.choice(choices)
        nxt, rule = fire(config, choice)
        nxt = finish_if_done(nxt)
        steps.append((choice.processor, rule, config, nxt))
        config = nxt
    raise AssertionError("schedule did not finish")


@pytest.mark.parametrize('name', ['straight_assign.scp', 'dining_correct.scp'])
@pytest.mark.parametrize('seed', range(4))
def test_channels_are_filled_once_and_used_once(name, seed):
    final, steps = _random_run(load_corpus(name), seed)
    assert final.terminal == Status.DONE
    created, filled, used = Counter(), Counter(), Counter()
    for _, rule, before, after in steps:
        old, new = before.state.channels, after.state.channels
        for a in set(new) - set(old):
            assert new[a] is None
            created[a] += 1
        for a in set(new) & set(old):
            if old[a] is None and new[a] is not None:
                filled[a] += 1
            else:
                assert old[a] == new[a]
        for a in set(old) - set(new):
            assert old[a] is not None
            used[a] += 1
        assert sum(1 for a in set(new) - set(old)) == (1 if rule == 'assign' else 0)
        assert sum(1 for a in set(old) - set(new)) == (1 if rule == 'write' else 0)

    assert created
    assert set(created) == set(filled) == set(used)
    assert set(created.values()) == set(filled.values()) == set(used.values()) == {1}
    assert final.state.channels == {}


@pytest.mark.parametrize('name', ['straight_assign.scp', 'dining_correct.scp'])
@pytest.mark.parametrize('seed', range(4))
def test_frames_are_balanced(name, seed):
    final, steps = _random_run(load_corpus(name), seed)
    assert final.terminal == Status.DONE
    for p, rule, before, after in steps:
        depth = len(after.state.stores.get(p, ())) - len(before.state.stores.get(p, ()))
        assert depth == {'apply': 1, 'frame_pop': -1}.get(rule, 0)

    rules = Counter(rule for _, rule, _, _ in steps)
    assert rules['apply'] == rules['frame_pop'] > 0
    assert len(final.state.stores[BOOTSTRAP]) == 1
    assert all(not frames for p, frames in final.state.stores.items() if p != BOOTSTRAP)
