"""
Strategy language used to force interleavings, e.g.

    init ; repeat(64){ run{hold=lock} ; parallelism{lock} } ; deadlock-on ; run

Steps:
    init               build the initial configuration (first step only)
    parallelism{R}     repeatedly fire the lowest enabled processor whose next rule is R
    run                fire the lowest enabled processor until none is enabled
    run{hold=R}        same, but processors whose next rule is R are held back
    pick(n)            fire processor n once
    repeat(k){ ... }   run the block k times
    deadlock-on        run the deadlock detector
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

from lark import Lark, Transformer
from lark.exceptions import UnexpectedInput, VisitError

from backend.errors import ParseError, ScoopError, StrategyError
from backend.rule_registry import CONCRETE, RuleRegistry

logger = logging.getLogger(__name__)

GUIDED_STRATEGY = "init ; repeat(64){ run{hold=lock} ; parallelism{lock} } ; deadlock-on ; run"


@dataclass(frozen=True)
class Init:
    def __str__(self):
        return "init"


@dataclass(frozen=True)
class Parallelism:
    rule: str

    def __str__(self):
        return f"parallelism{{{self.rule}}}"


@dataclass(frozen=True)
class Run:
    hold: Optional[str] = None

    def __str__(self):
        return "run" if self.hold is None else f"run{{hold={self.hold}}}"


@dataclass(frozen=True)
class Pick:
    processor: int

    def __str__(self):
        return f"pick({self.processor})"


@dataclass(frozen=True)
class DeadlockCheck:
    def __str__(self):
        return "deadlock-on"


@dataclass(frozen=True)
class Repeat:
    count: int
    steps: Tuple["StrategyStep", ...]

    def __str__(self):
        return f"repeat({self.count}){{ {' ; '.join(map(str, self.steps))} }}"


StrategyStep = Union[Init, Parallelism, Run, Pick, DeadlockCheck, Repeat]


@dataclass(frozen=True)
class Strategy:
    steps: Tuple[StrategyStep, ...]

    def __str__(self):
        return " ; ".join(map(str, self.steps))


STRATEGY_GRAMMAR = r"""
    start: sequence
    sequence: step (";" step)*
    ?step: "init" -> init
         | "parallelism" "{" RULE "}" -> parallelism
         | "run" "{" "hold" "=" RULE "}" -> run_hold
         | "run" -> run
         | "pick" "(" INT ")" -> pick
         | "repeat" "(" INT ")" "{" sequence "}" -> repeat
         | "deadlock-on" -> deadlock_check

    RULE: /[a-z_]+/

    %import common.INT
    %import common.WS
    %ignore WS
"""


class _StrategyBuilder(Transformer):
    def start(self, children):
        return Strategy(children[0])

    def sequence(self, children):
        return tuple(children)

    def init(self, _):
        return Init()

    def parallelism(self, children):
        return Parallelism(_known_rule(children[0]))

    def run(self, _):
        return Run()

    def run_hold(self, children):
        return Run(_known_rule(children[0]))

    def pick(self, children):
        return Pick(int(children[0]))

    def repeat(self, children):
        count = int(children[0])
        if count < 1:
            raise StrategyError(f"repeat count must be at least 1, got {count}")
        return Repeat(count, children[1])

    def deadlock_check(self, _):
        return DeadlockCheck()


def _known_rule(token) -> str:
    name = str(token)
    if not RuleRegistry.is_known(name) or CONCRETE not in RuleRegistry.get_all_rules()[name]['engines']:
        raise StrategyError(f"unknown rule name '{name}' (known: {', '.join(RuleRegistry.rule_names(CONCRETE))})")
    return name


_STRATEGY_PARSER = Lark(STRATEGY_GRAMMAR, start='start', parser='lalr')


def _contains_init(steps) -> bool:
    return any(isinstance(s, Init) or (isinstance(s, Repeat) and _contains_init(s.steps)) for s in steps)


def parse_strategy(text: str) -> Strategy:
    """
    Parse a strategy expression.

    Raises:
        ParseError: malformed expression
        StrategyError: unknown rule names, repeat(0), or init anywhere but first
    """
    try:
        strategy = _STRATEGY_PARSER.parse(text)
        strategy = _StrategyBuilder().transform(strategy)
    except UnexpectedInput as exc:
        expected = getattr(exc, 'expected', None) or getattr(exc, 'allowed', None) or []
        raise ParseError("malformed strategy", max(exc.line, 1), max(exc.column, 1), expected) from None
    except VisitError as exc:
        if isinstance(exc.orig_exc, ScoopError):
            raise exc.orig_exc
        raise StrategyError(str(exc.orig_exc)) from None

    steps = strategy.steps
    if not steps or not isinstance(steps[0], Init):
        raise StrategyError("a strategy must start with init", 0)
    if _contains_init(steps[1:]):
        raise StrategyError("init may only appear as the first step")
    return strategy
