import random
import time
from dataclasses import replace
from itertools import combinations

import pytest

from backend.abstract_semantics import (
    BOOTSTRAP_LABEL,
    AbstractApplyItem,
    AbstractObject,
    AbstractReleaseItem,
    abstract_enabled_choices,
    abstract_fire,
    abstract_is_local_step,
    abstract_next_rule,
    abstract_semantics,
    abstract_step,
    candidates,
    explore_abstract,
    initial_abstract_configuration,
    run_abstract,
)
from backend.alias import AliasExpr, may_alias
from backend.errors import ConfigError, EngineError
from backend.explorer import Explorer, explore_bounded, run_strategy
from backend.ir import parse_program
from backend.runtime import (
    BOOTSTRAP,
    VOID,
    Choice,
    FramePopItem,
    Status,
    enabled_choices,
    finish_if_done,
    fire,
    initial_configuration,
    lock_pattern,
)
from conftest import corpus_path, load_corpus

ROOT_SITE = 'BOOTSTRAP:init:root'


def _union(patterns):
    return set().union(*patterns) if patterns else set()


def test_initial_abstract_configuration(dining_wrong):
    config = initial_abstract_configuration(dining_wrong)
    assert config.procs == (BOOTSTRAP_LABEL,)
    assert config.alias.depth == 3
    assert [c.processor for c in abstract_enabled_choices(config)] == [BOOTSTRAP_LABEL]
    with pytest.raises(ConfigError):
        initial_abstract_configuration(dining_wrong, alias_depth=0)


def test_create_names_processor_by_site(dining_wrong):
    config = initial_abstract_configuration(dining_wrong)
    config, rule = abstract_fire(config, abstract_enabled_choices(config)[0])
    assert rule == 'create'
    assert config.procs == (BOOTSTRAP_LABEL, ROOT_SITE)
    assert config.object(ROOT_SITE).class_name == 'APPLICATION'


def test_assignment_is_one_step(straight_assign):
    concrete = run_strategy(straight_assign, "init ; run")
    abstract = run_abstract(straight_assign)
    assert concrete.trace.terminal == Status.DONE
    assert abstract.trace.terminal == Status.DONE
    assert abstract.mode == 'abstract-run'
    assert abstract.completed_traces == 1
    # ten assignments, three concrete steps each against one abstract step
    assert len(concrete.trace) - len(abstract.trace) == 30
    assert concrete.trace.processor_steps == 38
    assert abstract.trace.processor_steps == 18
    assert concrete.trace.processor_steps - abstract.trace.processor_steps == 20


def test_abstract_exploration_flags_dining_deadlock(dining_wrong):
    report = explore_abstract(dining_wrong, 200, 100000)
    assert report.mode == 'abstract'
    assert report.deadlocks
    for trace, witness in report.deadlocks:
        assert trace.terminal == Status.DEADLOCK
        assert trace.engine == 'abstract'
        assert len(witness.processors) >= 2


def test_abstract_lock_patterns_cover_concrete_ones(dining_wrong, wrong_exploration):
    abstract = explore_abstract(dining_wrong, 200, 100000)
    concrete = _union(wrong_exploration.lock_patterns)
    assert concrete
    assert concrete <= _union(abstract.lock_patterns)


def test_conditional_alias_is_a_false_positive(conditional_alias):
    concrete = explore_bounded(conditional_alias, 200, 100000)
    assert concrete.deadlocks == []
    assert concrete.completed_traces >= 1
    assert not concrete.bound_hit

    abstract = explore_abstract(conditional_alias, 200, 100000)
    assert abstract.deadlocks


def test_concrete_guided_run_of_conditional_alias_completes(conditional_alias):
    report = run_strategy(conditional_alias, conditional_alias.strategy)
    assert report.trace.terminal == Status.DONE
    assert lock_pattern(report.final) == frozenset()


def test_command_inside_conditional_is_rejected():
    with open(corpus_path('conditional_alias.scp'), 'r', encoding='utf-8') as f:
        source = f.read()
    source = source.replace(
        "( assign ('first, 'right) ; assign ('second, 'left) ; )",
        "( command ('Current . 'pick_two('left ; 'right ;)) ; )",
    )
    program = parse_program(source)
    with pytest.raises(EngineError, match="conditionals"):
        run_abstract(program, deadlock_check=False)


def test_bounds_are_checked(dining_wrong):
    with pytest.raises(ConfigError):
        explore_abstract(dining_wrong, 0, 10)
    shallow = explore_abstract(dining_wrong, 3, 100000)
    assert shallow.bound_hit
    assert shallow.deadlocks == []


def test_abstract_step_matches_fire(straight_assign):
    config = initial_abstract_configuration(straight_assign)
    choice = abstract_enabled_choices(config)[0]
    assert abstract_step(config, choice) == abstract_fire(config, choice)[0]


def test_abstract_run_flags_dining_deadlock(dining_wrong):
    report = run_abstract(dining_wrong)
    assert report.mode == 'abstract-run'
    assert report.trace.engine == 'abstract'
    assert report.trace.terminal == Status.DEADLOCK
    _, witness = report.deadlocks[0]
    assert witness.processors == frozenset({'MEAL:make:p1', 'MEAL:make:p2'})
    assert witness.labels[('MEAL:make:p1', 'MEAL:make:p2')] == frozenset({'MEAL:make:f2'})

    unchecked = run_abstract(dining_wrong, deadlock_check=False)
    assert unchecked.deadlocks == []
    assert unchecked.trace.terminal == Status.RUNNING


def test_abstract_run_follows_given_strategy(straight_assign):
    report = run_abstract(straight_assign, strategy="init ; parallelism{create}")
    assert len(report.trace) == 1
    assert report.trace.steps[0].rule_name == 'create'


def test_abstract_exploration_is_fast_enough(dining_wrong):
    started = time.perf_counter()
    report = explore_abstract(dining_wrong, 200, 100000)
    assert time.perf_counter() - started < 30
    assert any(witness.processors == frozenset({'MEAL:make:p1', 'MEAL:make:p2'})
               for _, witness in report.deadlocks)


def test_abstract_exploration_without_deadlock_check(dining_wrong):
    report = explore_abstract(dining_wrong, 200, 100000, deadlock_check=False, keep_states=True)
    assert report.deadlocks == []
    stuck = [c for c in report.configurations if c.terminal == Status.RUNNING and not abstract_enabled_choices(c)]
    assert stuck


def test_abstract_exploration_traces_replay(dining_wrong):
    report = explore_abstract(dining_wrong, 200, 100000)
    trace, _ = report.deadlocks[0]
    explorer = Explorer(dining_wrong, semantics=abstract_semantics())
    assert explorer.replay(trace).terminal == Status.DEADLOCK


def _apply_setup(dining_wrong, targets):
    """Two fork processors; the first holds an apply item naming the given targets"""
    f1, f2 = 'MEAL:make:f1', 'MEAL:make:f2'
    config = replace(
        initial_abstract_configuration(dining_wrong),
        pool=((f1, (AbstractApplyItem('use', targets),)), (f2, ())),
        frames=((f1, ()), (f2, ())),
        objects=(AbstractObject(f1, 'FORK', f1), AbstractObject(f2, 'FORK', f2)),
        rq_locks=((f1, frozenset()), (f2, frozenset())),
    )
    return config, f1, f2


def test_apply_runs_own_target_and_queues_the_rest(dining_wrong):
    config, f1, f2 = _apply_setup(dining_wrong, ('MEAL:make:f1', 'MEAL:make:f2'))
    assert abstract_next_rule(config, f1) == 'apply'
    assert not abstract_is_local_step(config, f1)

    config, rule = abstract_fire(config, Choice(f1))
    assert rule == 'apply'
    assert config.top_frame(f1).label == f1
    assert config.stack(f1)[-2:] == (AbstractReleaseItem(), FramePopItem())
    assert config.stack(f2) == (AbstractApplyItem('use', (f2,)),)


def test_apply_with_only_own_targets_is_local(dining_wrong):
    config, f1, _ = _apply_setup(dining_wrong, ('MEAL:make:f1',))
    assert abstract_is_local_step(config, f1)
    config, f1, _ = _apply_setup(dining_wrong, ('MEAL:make:f2',))
    assert abstract_next_rule(config, f1) == 'enqueue'
    assert not abstract_is_local_step(config, f1)


def _random_walk(program, seed):
    rng = random.Random(seed)
    config = initial_configuration(program)
    while True:
        choices = enabled_choices(config)
        if not choices:
            return config
        config, _ = fire(config, rng.choice(choices))
        config = finish_if_done(config)


@pytest.mark.parametrize('name', ['straight_assign.scp', 'dining_correct.scp', 'conditional_alias.scp'])
def test_abstract_relation_covers_concrete_heaps(name):
    program = load_corpus(name)
    abstract = run_abstract(program, deadlock_check=False, strategy="init ; run").final
    assert abstract.terminal == Status.DONE
    for seed in range(5):
        final = _random_walk(program, seed)
        assert final.terminal == Status.DONE
        heap = final.state.heap
        for record in heap.values():
            for attribute, ref in record.attributes:
                if ref == VOID:
                    continue
                assert heap[ref].site in candidates(abstract, AliasExpr(record.site, (attribute,)))


def test_straight_line_aliases_match_concrete_run(straight_assign):
    concrete = run_strategy(straight_assign, "init ; run").final
    root = concrete.state.top_frame(BOOTSTRAP).lookup('root')
    values = dict(concrete.state.heap[root].attributes)
    assert set(values.values()) == {root}

    relation = run_abstract(straight_assign, strategy="init ; run").final.alias
    site = AliasExpr(ROOT_SITE)
    for a, b in combinations(sorted(values), 2):
        assert may_alias(relation, site.extend((a,), relation.depth), site.extend((b,), relation.depth))
    for a in values:
        assert may_alias(relation, site.extend((a,), relation.depth), site)
