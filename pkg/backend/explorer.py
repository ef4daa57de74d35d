"""
Explorer - drives an engine over a program
Runs guided strategies, bounded breadth-first exploration and trace replay
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

from backend.deadlock import DeadlockWitness, mark_deadlock
from backend.errors import ConfigError, ReplayDivergence, StrategyError
from backend.ir import Program, program_fingerprint
from backend.rule_registry import CONCRETE, RuleRegistry
from backend.runtime import (
    Choice,
    Status,
    canonical_key,
    enabled_choices,
    finish_if_done,
    fire,
    initial_configuration,
    is_local_step,
    lock_pattern,
    lock_sets,
    next_rule,
)
from backend.strategy import DeadlockCheck, Init, Parallelism, Pick, Repeat, Run, Strategy, parse_strategy

logger = logging.getLogger(__name__)

DEFAULT_STEP_LIMIT = 100000


def _processor(value):
    """Concrete processors are ints, abstract ones are site labels"""
    if isinstance(value, str) and not value.isdigit():
        return value
    return int(value)


@dataclass(frozen=True)
class Semantics:
    """
    What a driver needs from an engine. `fire` returns the successor already
    marked done when every stack is empty; `state_key` identifies states that
    the search may merge.
    """

    engine: str
    initial: Callable[[Program], Any]
    enabled_choices: Callable[[Any], Tuple[Choice, ...]]
    fire: Callable[[Any, Choice], Tuple[Any, str]]
    next_rule: Callable[[Any, Any], Optional[str]]
    is_local_step: Callable[[Any, Any], bool]
    mark_deadlock: Callable[[Any], Tuple[Any, Optional[DeadlockWitness]]]
    lock_sets: Callable[[Any], Dict[str, list]]
    lock_pattern: Callable[[Any], frozenset]
    state_key: Callable[[Any], Any]
    run_mode: str
    explore_mode: str


def _fire_concrete(config, choice: Choice):
    nxt, rule = fire(config, choice)
    return finish_if_done(nxt), rule


CONCRETE_SEMANTICS = Semantics(
    engine=CONCRETE,
    initial=initial_configuration,
    enabled_choices=enabled_choices,
    fire=_fire_concrete,
    next_rule=next_rule,
    is_local_step=is_local_step,
    mark_deadlock=mark_deadlock,
    lock_sets=lock_sets,
    lock_pattern=lock_pattern,
    state_key=canonical_key,
    run_mode='run',
    explore_mode='explore',
)


@dataclass(frozen=True)
class TraceStep:
    step_index: int
    processor: int
    rule_name: str
    lock_sets: Dict[str, List[int]] = field(compare=False)
    terminal: str = Status.RUNNING.value

    def to_dict(self) -> Dict:
        return {
            'step_index': self.step_index,
            'processor': self.processor,
            'rule_name': self.rule_name,
            'lock_sets': self.lock_sets,
            'terminal': self.terminal,
        }

    @staticmethod
    def from_dict(data: Dict) -> "TraceStep":
        return TraceStep(
            int(data['step_index']),
            _processor(data['processor']),
            str(data['rule_name']),
            {str(k): list(v) for k, v in data.get('lock_sets', {}).items()},
            str(data.get('terminal', Status.RUNNING.value)),
        )


@dataclass(frozen=True)
class Trace:
    """Choices taken from the initial configuration, with the rule each one fired"""

    program_hash: str
    steps: Tuple[TraceStep, ...] = ()
    terminal: Status = Status.RUNNING
    engine: str = CONCRETE

    @property
    def choices(self) -> Tuple[Choice, ...]:
        return tuple(Choice(s.processor) for s in self.steps)

    @property
    def processor_steps(self) -> int:
        """Steps that are not administrative unfoldings of an instruction"""
        return sum(1 for s in self.steps if not RuleRegistry.is_administrative(s.rule_name, self.engine))

    def __len__(self) -> int:
        return len(self.steps)

    def to_dict(self) -> Dict:
        return {
            'program_hash': self.program_hash,
            'engine': self.engine,
            'terminal': self.terminal.value,
            'steps': [s.to_dict() for s in self.steps],
        }


@dataclass
class ExplorationReport:
    mode: str
    program_hash: str
    states_visited: int = 0
    deadlocks: List[Tuple[Trace, DeadlockWitness]] = field(default_factory=list)
    completed_traces: int = 0
    bound_hit: bool = False
    lock_patterns: set = field(default_factory=set, repr=False)
    configurations: list = field(default_factory=list, repr=False)
    trace: Optional[Trace] = None
    final: Any = field(default=None, repr=False)
    holdings: Dict[str, list] = field(default_factory=dict, repr=False)

    @property
    def deadlock_found(self) -> bool:
        return bool(self.deadlocks)

    def to_dict(self) -> Dict:
        report = {
            'mode': self.mode,
            'program_hash': self.program_hash,
            'states_visited': self.states_visited,
            'completed_traces': self.completed_traces,
            'bound_hit': self.bound_hit,
            'deadlocks': [
                {'trace': trace.to_dict(), 'witness': witness.to_dict()}
                for trace, witness in self.deadlocks
            ],
        }
        if self.trace is not None:
            report['trace'] = self.trace.to_dict()
        return report


class Explorer:
    """
    Runs one program under an engine's semantics (concrete unless told otherwise)
    Deadlock checking follows the program's settings unless overridden
    """

    def __init__(self, program: Program, deadlock_check: Optional[bool] = None, workers: int = 1,
                 step_limit: int = DEFAULT_STEP_LIMIT, semantics: Semantics = CONCRETE_SEMANTICS):
        if workers < 1:
            raise ConfigError(f"workers must be at least 1, got {workers}")
        self.program = program
        self.program_hash = program_fingerprint(program)
        self.deadlock_check = program.settings.deadlock_check if deadlock_check is None else deadlock_check
        self.workers = workers
        self.step_limit = step_limit
        self.semantics = semantics

    # ------------------------------------------------------------------
    # Guided runs
    # ------------------------------------------------------------------

    def run_strategy(self, strategy: Strategy) -> ExplorationReport:
        """
        Execute the strategy steps in order on a single configuration

        Returns:
            report with the followed trace; one deadlock entry if the run ended deadlocked
        """
        steps = strategy.steps
        if not steps or not isinstance(steps[0], Init):
            raise StrategyError("a strategy must start with init", 0)

        sem = self.semantics
        run = _GuidedRun(self, sem.initial(self.program))
        for index, step in enumerate(steps[1:], start=1):
            run.execute(step, index)
            if run.exhausted:
                break

        trace = Trace(self.program_hash, tuple(run.steps), run.config.terminal, engine=sem.engine)
        report = ExplorationReport(sem.run_mode, self.program_hash, states_visited=len(run.steps) + 1,
                                   trace=trace, final=run.config, bound_hit=run.exhausted,
                                   holdings=sem.lock_sets(run.config))
        report.lock_patterns.add(sem.lock_pattern(run.config))
        if run.config.terminal == Status.DEADLOCK:
            report.deadlocks.append((trace, run.witness))
        elif run.config.terminal == Status.DONE:
            report.completed_traces = 1
        logger.info("strategy finished: %s after %d steps", run.config.terminal.value, len(run.steps))
        return report

    # ------------------------------------------------------------------
    # Exhaustive search
    # ------------------------------------------------------------------

    def _advance(self, config, choice: Choice):
        """
        Fire choice, then keep firing the same processor while its next step is
        local. Returns every (rule, configuration) passed through.
        """
        sem = self.semantics
        config, rule = sem.fire(config, choice)
        fired = [(rule, config)]
        while (len(fired) < self.step_limit and config.terminal == Status.RUNNING
               and sem.is_local_step(config, choice.processor)):
            config, rule = sem.fire(config, choice)
            fired.append((rule, config))
        return fired

    def _successors(self, config):
        sem = self.semantics
        out = []
        for choice in sem.enabled_choices(config):
            fired = self._advance(config, choice)
            nxt = fired[-1][1]
            witness = None
            if self.deadlock_check:
                nxt, witness = sem.mark_deadlock(nxt)
                fired[-1] = (fired[-1][0], nxt)
            records = tuple(TraceStep(0, choice.processor, rule, sem.lock_sets(c), c.terminal.value)
                            for rule, c in fired)
            out.append((nxt, records, witness))
        return out

    def explore_bounded(self, depth_bound: int, state_bound: int, keep_states: bool = False) -> ExplorationReport:
        """
        Breadth-first search over every interleaving of non-local steps,
        deduplicating states by the engine's state key. Depth counts those
        steps; each one may carry a run of local steps after it.

        Returns:
            report with one (shortest) trace per deadlocked state found
        """
        if depth_bound < 1 or state_bound < 1:
            raise ConfigError(f"bounds must be at least 1 (depth {depth_bound}, states {state_bound})")

        sem = self.semantics
        report = ExplorationReport(sem.explore_mode, self.program_hash)
        start = sem.initial(self.program)
        start_key = sem.state_key(start)
        parents: Dict[Any, Optional[Tuple[Any, Tuple[TraceStep, ...]]]] = {start_key: None}
        report.lock_patterns.add(sem.lock_pattern(start))
        if keep_states:
            report.configurations.append(start)

        frontier = [(start, start_key)]
        depth = 0
        executor = ThreadPoolExecutor(max_workers=self.workers) if self.workers > 1 else None
        try:
            while frontier:
                expandable = [(c, k) for c, k in frontier if c.terminal == Status.RUNNING]
                if depth >= depth_bound:
                    if any(sem.enabled_choices(c) for c, _ in expandable):
                        report.bound_hit = True
                    break
                configs = [c for c, _ in expandable]
                if executor is not None:
                    expanded = list(executor.map(self._successors, configs))
                else:
                    expanded = [self._successors(c) for c in configs]

                next_frontier = []
                for (config, key), successors in zip(expandable, expanded):
                    for nxt, records, witness in successors:
                        nxt_key = sem.state_key(nxt)
                        if nxt_key in parents:
                            continue
                        if len(parents) >= state_bound:
                            report.bound_hit = True
                            continue
                        parents[nxt_key] = (key, records)
                        report.lock_patterns.add(sem.lock_pattern(nxt))
                        if keep_states:
                            report.configurations.append(nxt)
                        if nxt.terminal == Status.DEADLOCK:
                            report.deadlocks.append((self._trace_to(parents, nxt_key, nxt.terminal), witness))
                        elif nxt.terminal == Status.DONE:
                            report.completed_traces += 1
                        else:
                            next_frontier.append((nxt, nxt_key))
                depth += 1
                logger.info("layer %d: %d new states, %d visited, %d deadlocks",
                            depth, len(next_frontier), len(parents), len(report.deadlocks))
                frontier = next_frontier
        finally:
            if executor is not None:
                executor.shutdown()

        report.states_visited = len(parents)
        return report

    def _trace_to(self, parents, key, terminal: Status) -> Trace:
        chunks = []
        entry = parents[key]
        while entry is not None:
            parent_key, records = entry
            chunks.append(records)
            entry = parents[parent_key]
        chunks.reverse()
        steps = [replace(record, step_index=index)
                 for index, record in enumerate(record for chunk in chunks for record in chunk)]
        return Trace(self.program_hash, tuple(steps), terminal, engine=self.semantics.engine)

    # ------------------------------------------------------------------
    # Replay
    # ------------------------------------------------------------------

    def replay(self, trace: Trace):
        """
        Re-apply the recorded choices from the initial configuration

        Raises:
            ReplayDivergence: other program, a choice that is not enabled, a
                different rule, or a different terminal status
        """
        sem = self.semantics
        if trace.program_hash != self.program_hash:
            raise ReplayDivergence("trace was recorded for a different program")
        if trace.engine != sem.engine:
            raise ReplayDivergence(f"cannot replay a trace of the {trace.engine} engine")
        config = sem.initial(self.program)
        for index, step in enumerate(trace.steps):
            choice = Choice(step.processor)
            if choice not in sem.enabled_choices(config):
                raise ReplayDivergence(f"step {index}: processor {step.processor} is not enabled")
            config, rule = sem.fire(config, choice)
            if rule != step.rule_name:
                raise ReplayDivergence(f"step {index}: expected rule {step.rule_name}, fired {rule}")
        if trace.terminal == Status.DEADLOCK:
            config, witness = sem.mark_deadlock(config)
            if witness is None:
                raise ReplayDivergence("trace ends in a deadlock but the replayed configuration has none")
        if config.terminal != trace.terminal:
            raise ReplayDivergence(f"replay ended {config.terminal.value}, trace says {trace.terminal.value}")
        return config


class _GuidedRun:
    """Mutable cursor used while a strategy executes"""

    def __init__(self, explorer: Explorer, config):
        self.explorer = explorer
        self.semantics = explorer.semantics
        self.config = config
        self.steps: List[TraceStep] = []
        self.witness: Optional[DeadlockWitness] = None
        self.exhausted = False

    def _fire(self, choice: Choice):
        if len(self.steps) >= self.explorer.step_limit:
            self.exhausted = True
            return
        self.config, rule = self.semantics.fire(self.config, choice)
        self.steps.append(TraceStep(len(self.steps), choice.processor, rule,
                                    self.semantics.lock_sets(self.config), self.config.terminal.value))

    def _fire_while(self, accept):
        sem = self.semantics
        while not self.exhausted:
            candidates = [ch for ch in sem.enabled_choices(self.config) if accept(sem.next_rule(self.config, ch.processor))]
            if not candidates:
                return
            self._fire(candidates[0])

    def execute(self, step, index: int):
        logger.debug("strategy step %d: %s", index, step)
        if isinstance(step, Init):
            raise StrategyError("init may only appear as the first step", index)
        if isinstance(step, Parallelism):
            self._fire_while(lambda rule: rule == step.rule)
        elif isinstance(step, Run):
            self._fire_while(lambda rule: step.hold is None or rule != step.hold)
        elif isinstance(step, Pick):
            choice = Choice(step.processor)
            if choice not in self.semantics.enabled_choices(self.config):
                raise StrategyError(f"processor {step.processor} is not enabled", index)
            self._fire(choice)
        elif isinstance(step, DeadlockCheck):
            if self.explorer.deadlock_check:
                self.config, witness = self.semantics.mark_deadlock(self.config)
                self.witness = witness or self.witness
                if self.steps and witness is not None:
                    self.steps[-1] = replace(self.steps[-1], terminal=self.config.terminal.value)
        elif isinstance(step, Repeat):
            for _ in range(step.count):
                for inner in step.steps:
                    self.execute(inner, index)
                    if self.exhausted:
                        return
        else:
            raise StrategyError(f"unsupported step {step!r}", index)


def run_strategy(program: Program, strategy, deadlock_check: Optional[bool] = None) -> ExplorationReport:
    """Accepts a Strategy or its textual form"""
    if isinstance(strategy, str):
        strategy = parse_strategy(strategy)
    return Explorer(program, deadlock_check).run_strategy(strategy)


def explore_bounded(program: Program, depth_bound: int, state_bound: int,
                    deadlock_check: Optional[bool] = None, workers: int = 1,
                    keep_states: bool = False) -> ExplorationReport:
    return Explorer(program, deadlock_check, workers).explore_bounded(depth_bound, state_bound, keep_states)


def replay_trace(program: Program, trace: Trace):
    return Explorer(program).replay(trace)
