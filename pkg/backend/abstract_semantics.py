"""
Alias-based abstract semantics.

Objects are named by creation site (`Class:feature:target`); an object
created on a fresh processor gives that processor the same name. There is
no heap and there are no channels: expressions are qualified (attributes
rooted at the object's site, formals and locals at `site/feature/name`) and
one global may-alias relation says which sites an expression may denote.
Assignment is a single transition that only updates the relation.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache, partial
from typing import Dict, FrozenSet, List, Optional, Set, Tuple

import networkx as nx

from backend.alias import DEFAULT_DEPTH, AliasExpr, AliasRelation, alias_after_assign, may_alias
from backend.deadlock import DeadlockWitness, witness_from_graph
from backend.errors import ConfigError, EngineError, LockViolation, StuckConfiguration, VoidDereference
from backend.explorer import DEFAULT_STEP_LIMIT, ExplorationReport, Explorer, Semantics
from backend.ir import (
    CURRENT,
    Assign,
    Command,
    Conditional,
    Create,
    Expression,
    Name,
    NilInstruction,
    Program,
    lookup_feature,
)
from backend.rule_registry import ABSTRACT
from backend.runtime import (
    BOOTSTRAP_CLASS,
    ROOT_SLOT,
    Choice,
    FramePopItem,
    InstructionItem,
    Status,
    creation_type,
)
from backend.strategy import GUIDED_STRATEGY, Strategy, parse_strategy

logger = logging.getLogger(__name__)

BOOTSTRAP_LABEL = "bootstrap"
RESOLUTION_CACHE_SIZE = 1 << 16


@dataclass(frozen=True)
class AbstractFrame:
    label: str
    class_name: str
    feature: str


@dataclass(frozen=True)
class AbstractLockItem:
    exprs: FrozenSet[AliasExpr]


@dataclass(frozen=True)
class AbstractApplyItem:
    feature: str
    targets: Tuple[str, ...]


@dataclass(frozen=True)
class AbstractReleaseItem:
    exprs: FrozenSet[AliasExpr] = frozenset()


@dataclass(frozen=True)
class AbstractObject:
    label: str
    class_name: str
    handler: str


def _put(entries: tuple, key, value) -> tuple:
    """Replace (or append) the entry for key in a tuple of (key, value) pairs"""
    out, found = [], False
    for k, v in entries:
        if k == key:
            out.append((k, value))
            found = True
        else:
            out.append((k, v))
    if not found:
        out.append((key, value))
    return tuple(out)


def _get(entries: tuple, key, default=None):
    for k, v in entries:
        if k == key:
            return v
    return default


@dataclass(frozen=True)
class AbstractConfiguration:
    """⟨pool, procs + rq_locks over expressions, alias⟩; hashable so it can be deduplicated directly"""

    pool: Tuple[Tuple[str, tuple], ...]
    frames: Tuple[Tuple[str, Tuple[AbstractFrame, ...]], ...]
    objects: Tuple[AbstractObject, ...]
    rq_locks: Tuple[Tuple[str, FrozenSet[AliasExpr]], ...]
    alias: AliasRelation
    terminal: Status = Status.RUNNING
    program: Optional[Program] = field(default=None, compare=False, repr=False)

    @property
    def procs(self) -> Tuple[str, ...]:
        return tuple(p for p, _ in self.pool)

    def stack(self, p: str) -> tuple:
        return _get(self.pool, p, ())

    def top(self, p: str):
        stack = self.stack(p)
        return stack[0] if stack else None

    def held(self, p: str) -> FrozenSet[AliasExpr]:
        return _get(self.rq_locks, p, frozenset())

    def object(self, label: str) -> AbstractObject:
        for obj in self.objects:
            if obj.label == label:
                return obj
        raise EngineError(f"no abstract object {label}")

    def top_frame(self, p: str) -> AbstractFrame:
        frames = _get(self.frames, p, ())
        if not frames:
            raise EngineError(f"processor {p} has no active frame")
        return frames[0]


def initial_abstract_configuration(program: Program, alias_depth: int = DEFAULT_DEPTH) -> AbstractConfiguration:
    if alias_depth < 1:
        raise ConfigError(f"alias depth must be at least 1, got {alias_depth}")
    settings = program.settings
    lookup_feature(program, settings.root_class, settings.root_procedure)
    create_root = Create(Expression(Name(ROOT_SLOT)), settings.root_procedure, ())
    return AbstractConfiguration(
        pool=((BOOTSTRAP_LABEL, (InstructionItem(create_root), AbstractReleaseItem())),),
        frames=((BOOTSTRAP_LABEL, (AbstractFrame(BOOTSTRAP_LABEL, BOOTSTRAP_CLASS, "init"),)),),
        objects=(),
        rq_locks=((BOOTSTRAP_LABEL, frozenset()),),
        alias=AliasRelation(frozenset(), alias_depth),
        program=program,
    )


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------

def _local_names(program: Program, frame: AbstractFrame) -> Set[str]:
    if frame.class_name == BOOTSTRAP_CLASS:
        return {ROOT_SLOT}
    proc = lookup_feature(program, frame.class_name, frame.feature)
    return {str(e.name) for e in proc.formals + proc.locals}


def qualify(c: AbstractConfiguration, frame: AbstractFrame, e: Expression) -> AliasExpr:
    """Rewrite a frame-relative path into a global alias expression"""
    if e.is_literal:
        raise EngineError(f"boolean literal {e} does not denote an object")
    selectors = tuple(str(s) for s in e.selectors)
    if e.is_current:
        expr = AliasExpr(frame.label, selectors)
    elif str(e.root) in _local_names(c.program, frame):
        expr = AliasExpr(f"{frame.label}/{frame.feature}/{e.root}", selectors)
    else:
        expr = AliasExpr(frame.label, (str(e.root),) + selectors)
    return expr.truncate(c.alias.depth)


# Resolution only depends on the relation and the object table, which many
# configurations of one search share.

@lru_cache(maxsize=RESOLUTION_CACHE_SIZE)
def _may_alias(relation: AliasRelation, e1: AliasExpr, e2: AliasExpr) -> bool:
    return may_alias(relation, e1, e2)


@lru_cache(maxsize=RESOLUTION_CACHE_SIZE)
def _resolve(relation: AliasRelation, objects: Tuple[AbstractObject, ...], e: AliasExpr) -> Tuple[str, ...]:
    return tuple(obj.label for obj in objects if _may_alias(relation, e, AliasExpr(obj.label)))


@lru_cache(maxsize=RESOLUTION_CACHE_SIZE)
def _resolve_handlers(relation: AliasRelation, objects: Tuple[AbstractObject, ...],
                      e: AliasExpr) -> FrozenSet[str]:
    handler_of = {obj.label: obj.handler for obj in objects}
    return frozenset(handler_of[label] for label in _resolve(relation, objects, e))


def candidates(c: AbstractConfiguration, e: AliasExpr) -> Tuple[str, ...]:
    """Sites that e may denote, in creation order"""
    return _resolve(c.alias, c.objects, e)


def handlers(c: AbstractConfiguration, e: AliasExpr) -> FrozenSet[str]:
    return _resolve_handlers(c.alias, c.objects, e)


def _definite(c: AbstractConfiguration, e: AliasExpr) -> Optional[str]:
    hs = handlers(c, e)
    return next(iter(hs)) if len(hs) == 1 else None


# ---------------------------------------------------------------------------
# Locks
# ---------------------------------------------------------------------------

def _is_held(c: AbstractConfiguration, p: str, e: AliasExpr) -> bool:
    held = c.held(p)
    if e in held or handlers(c, e) == {p}:
        return True
    target = _definite(c, e)
    for h in held:
        if _may_alias(c.alias, e, h):
            return True
        if target is not None and _definite(c, h) == target:
            return True
    return False


def _fresh(c: AbstractConfiguration, p: str, item: AbstractLockItem) -> FrozenSet[AliasExpr]:
    return frozenset(e for e in item.exprs if not _is_held(c, p, e))


def _lock_blocked(c: AbstractConfiguration, p: str, item: AbstractLockItem) -> bool:
    """Blocks only on a definite conflict: both sides resolve to the same single handler"""
    for e in _fresh(c, p, item):
        target = _definite(c, e)
        if target is None:
            continue
        for other, held in c.rq_locks:
            if other != p and any(_definite(c, h) == target for h in held):
                return True
    return False


# ---------------------------------------------------------------------------
# Scheduling
# ---------------------------------------------------------------------------

def abstract_is_enabled(c: AbstractConfiguration, p: str) -> bool:
    item = c.top(p)
    if item is None:
        return False
    if isinstance(item, AbstractLockItem):
        return not _lock_blocked(c, p, item)
    return True


def abstract_enabled_choices(c: AbstractConfiguration) -> Tuple[Choice, ...]:
    """Enabled processors in creation order"""
    if c.terminal != Status.RUNNING:
        return ()
    return tuple(Choice(p) for p in c.procs if abstract_is_enabled(c, p))


def abstract_next_rule(c: AbstractConfiguration, p: str) -> Optional[str]:
    item = c.top(p)
    if item is None:
        return None
    if isinstance(item, InstructionItem):
        instr = item.instruction
        if isinstance(instr, Create):
            return "create"
        if isinstance(instr, Assign):
            return "assign"
        if isinstance(instr, Command):
            return "command"
        if isinstance(instr, Conditional):
            return "branch"
        return "skip"
    if isinstance(item, AbstractLockItem):
        return "lock" if _fresh(c, p, item) else "reenter"
    if isinstance(item, AbstractApplyItem):
        return "apply" if _own_targets(c, p, item) else "enqueue"
    if isinstance(item, AbstractReleaseItem):
        return "release"
    return "frame_pop"


def _own_targets(c: AbstractConfiguration, p: str, item: AbstractApplyItem) -> Tuple[str, ...]:
    return tuple(label for label in item.targets if c.object(label).handler == p)


def abstract_is_local_step(c: AbstractConfiguration, p: str) -> bool:
    """Same cut as the concrete engine: locks, enqueues, fresh processors and non-empty releases are shared"""
    if not abstract_is_enabled(c, p):
        return False
    rule = abstract_next_rule(c, p)
    if rule in ("lock", "enqueue"):
        return False
    item = c.top(p)
    if rule == "apply":
        return len(_own_targets(c, p, item)) == len(item.targets)
    if rule == "release":
        return not item.exprs
    if rule == "create":
        return creation_type(c.program, c.top_frame(p), item.instruction.target).processor is not None
    return True


# ---------------------------------------------------------------------------
# Rules
# ---------------------------------------------------------------------------

def _with_stack(c: AbstractConfiguration, p: str, stack: tuple, **changes) -> AbstractConfiguration:
    return replace(c, pool=_put(c.pool, p, stack), **changes)


def _branch_effect(c: AbstractConfiguration, frame: AbstractFrame, instructions,
                   relation: AliasRelation) -> AliasRelation:
    for instr in instructions:
        if isinstance(instr, Assign):
            view = replace(c, alias=relation)
            relation = alias_after_assign(relation, qualify(view, frame, instr.target),
                                          qualify(view, frame, instr.source))
        elif isinstance(instr, Conditional):
            relation = _branch_effect(c, frame, instr.then_branch, relation).union(
                _branch_effect(c, frame, instr.else_branch, relation))
        elif not isinstance(instr, NilInstruction):
            raise EngineError("the abstract engine only supports assignments and nil inside conditionals")
    return relation


def _rule_create(c: AbstractConfiguration, p: str, instr: Create, rest: tuple) -> AbstractConfiguration:
    program = c.program
    frame = c.top_frame(p)
    annot = creation_type(program, frame, instr.target)
    site = f"{frame.class_name}:{frame.feature}:{instr.target}"

    pool, frames, rq_locks = c.pool, c.frames, c.rq_locks
    if annot.processor is None:
        handler = site
        if _get(pool, site) is None:
            pool = pool + ((site, ()),)
            frames = frames + ((site, ()),)
            rq_locks = rq_locks + ((site, frozenset()),)
    elif annot.processor == CURRENT:
        handler = p
    else:
        owners = handlers(c, qualify(c, frame, Expression(annot.processor)))
        if not owners:
            raise VoidDereference(f"processor tag {annot.processor} denotes no object at creation of {instr.target}")
        handler = sorted(owners)[0]

    objects = c.objects
    if all(obj.label != site for obj in objects):
        objects = objects + (AbstractObject(site, str(annot.class_name), handler),)
    relation = alias_after_assign(c.alias, qualify(c, frame, instr.target), AliasExpr(site))
    call = Command(instr.target, instr.creator, instr.args, line=instr.line, col=instr.col)
    pool = _put(pool, p, (InstructionItem(call),) + rest)
    return replace(c, pool=pool, frames=frames, rq_locks=rq_locks, objects=objects, alias=relation)


def _rule_command(c: AbstractConfiguration, p: str, instr: Command, rest: tuple) -> AbstractConfiguration:
    frame = c.top_frame(p)
    target = qualify(c, frame, instr.target)
    targets = candidates(c, target)
    if not targets:
        raise VoidDereference(f"call {instr.feature} on {instr.target}, which denotes no object")
    proc = lookup_feature(c.program, c.object(targets[0]).class_name, instr.feature)
    args = tuple(qualify(c, frame, arg) for arg in instr.args)

    exprs = set()
    if handlers(c, target) != {p}:
        exprs.add(target)
    for formal, arg in zip(proc.formals, args):
        arg_handlers = handlers(c, arg)
        if formal.type.processor != CURRENT and arg_handlers and arg_handlers != {p}:
            exprs.add(arg)

    # formals are bound at issue time, weakly, since several requests may be pending
    relation = c.alias
    for label in targets:
        for formal, arg in zip(proc.formals, args):
            slot = AliasExpr(f"{label}/{instr.feature}/{formal.name}")
            relation = relation.union(alias_after_assign(relation, slot, arg))

    items = []
    if exprs:
        items.append(AbstractLockItem(frozenset(exprs)))
    items.append(AbstractApplyItem(str(instr.feature), targets))
    return _with_stack(c, p, tuple(items) + rest, alias=relation)


def _rule_lock(c: AbstractConfiguration, p: str, item: AbstractLockItem, rest: tuple) -> AbstractConfiguration:
    fresh = _fresh(c, p, item)
    if not fresh:
        return _with_stack(c, p, rest)
    for index, below in enumerate(rest):
        if isinstance(below, AbstractReleaseItem):
            rest = rest[:index] + (AbstractReleaseItem(below.exprs | fresh),) + rest[index + 1:]
            break
    else:
        raise LockViolation("lock acquired outside any routine: no release item below it")
    return _with_stack(c, p, rest, rq_locks=_put(c.rq_locks, p, c.held(p) | fresh))


def _rule_apply(c: AbstractConfiguration, p: str, item: AbstractApplyItem, rest: tuple) -> AbstractConfiguration:
    """
    Targets on p run in place, one after the other; every other target is
    queued on its own handler
    """
    own = _own_targets(c, p, item)
    pool = c.pool
    for label in item.targets:
        if label in own:
            continue
        handler = c.object(label).handler
        pool = _put(pool, handler, _get(pool, handler, ()) + (AbstractApplyItem(item.feature, (label,)),))
    if not own:
        return replace(c, pool=_put(pool, p, rest))

    obj = c.object(own[0])
    proc = lookup_feature(c.program, obj.class_name, item.feature)
    frames = _put(c.frames, p, (AbstractFrame(obj.label, obj.class_name, item.feature),) + _get(c.frames, p, ()))
    body = tuple(InstructionItem(instr) for instr in proc.body)
    later = tuple(AbstractApplyItem(item.feature, (label,)) for label in own[1:])
    stack = body + (AbstractReleaseItem(), FramePopItem()) + later + rest
    return replace(c, pool=_put(pool, p, stack), frames=frames)


def abstract_fire(c: AbstractConfiguration, ch: Choice) -> Tuple[AbstractConfiguration, str]:
    """
    One abstract transition for ch.processor

    Raises:
        StuckConfiguration: processor not enabled
        EngineError: the top item cannot be interpreted abstractly
    """
    p = ch.processor
    if c.terminal != Status.RUNNING or not abstract_is_enabled(c, p):
        raise StuckConfiguration(f"processor {p} is not enabled")
    stack = c.stack(p)
    item, rest = stack[0], stack[1:]
    rule = abstract_next_rule(c, p)

    if isinstance(item, InstructionItem):
        instr = item.instruction
        frame = c.top_frame(p)
        if isinstance(instr, Create):
            nxt = _rule_create(c, p, instr, rest)
        elif isinstance(instr, Assign):
            relation = alias_after_assign(c.alias, qualify(c, frame, instr.target), qualify(c, frame, instr.source))
            nxt = _with_stack(c, p, rest, alias=relation)
        elif isinstance(instr, Command):
            nxt = _rule_command(c, p, instr, rest)
        elif isinstance(instr, Conditional):
            nxt = _with_stack(c, p, rest, alias=_branch_effect(c, frame, (instr,), c.alias))
        else:
            nxt = _with_stack(c, p, rest)
    elif isinstance(item, AbstractLockItem):
        nxt = _rule_lock(c, p, item, rest)
    elif isinstance(item, AbstractApplyItem):
        nxt = _rule_apply(c, p, item, rest)
    elif isinstance(item, AbstractReleaseItem):
        held = c.held(p)
        if not item.exprs <= held:
            raise LockViolation(f"processor {p} releases expressions it does not hold")
        nxt = _with_stack(c, p, rest, rq_locks=_put(c.rq_locks, p, held - item.exprs))
    elif isinstance(item, FramePopItem):
        frames = _get(c.frames, p, ())
        if not frames:
            raise EngineError(f"processor {p} pops a frame it does not have")
        nxt = _with_stack(c, p, rest, frames=_put(c.frames, p, frames[1:]))
    else:
        raise StuckConfiguration(f"no abstract rule for stack item {item!r}")

    if nxt.terminal == Status.RUNNING and all(not stack for _, stack in nxt.pool):
        nxt = replace(nxt, terminal=Status.DONE)
    logger.debug("%s fires %s (abstract)", p, rule)
    return nxt, rule


def abstract_step(c: AbstractConfiguration, ch: Choice) -> AbstractConfiguration:
    return abstract_fire(c, ch)[0]


# ---------------------------------------------------------------------------
# Deadlock check and views
# ---------------------------------------------------------------------------

def abstract_wait_for_graph(c: AbstractConfiguration) -> nx.DiGraph:
    """Edge p -> p' when something p still has to lock may share a handler with something p' holds"""
    graph = nx.DiGraph()
    graph.add_nodes_from(c.procs)
    for p in c.procs:
        item = c.top(p)
        if not isinstance(item, AbstractLockItem):
            continue
        waiting = _fresh(c, p, item)
        for q in c.procs:
            if q == p:
                continue
            shared: Set[str] = set()
            for w in waiting:
                for h in c.held(q):
                    common = handlers(c, w) & handlers(c, h)
                    if common:
                        shared |= common
                    elif _may_alias(c.alias, w, h):
                        shared |= handlers(c, w) or {str(w)}
            if shared:
                graph.add_edge(p, q, handlers=frozenset(shared))
    return graph


def abstract_deadlock_check(c: AbstractConfiguration) -> Optional[DeadlockWitness]:
    """Cycle in the may-alias wait-for graph; over-approximates concrete deadlocks"""
    return witness_from_graph(abstract_wait_for_graph(c))


def abstract_lock_pattern(c: AbstractConfiguration) -> FrozenSet[Tuple[str, str]]:
    """(holder, handler) pairs for every handler a held expression may denote"""
    return frozenset(
        (holder, handler)
        for holder, held in c.rq_locks
        for e in held
        for handler in handlers(c, e)
    )


def abstract_lock_sets(c: AbstractConfiguration) -> Dict[str, List[str]]:
    return {p: sorted(str(e) for e in held) for p, held in c.rq_locks}


def abstract_mark_deadlock(c: AbstractConfiguration) -> Tuple[AbstractConfiguration, Optional[DeadlockWitness]]:
    if c.terminal != Status.RUNNING:
        return c, None
    witness = abstract_deadlock_check(c)
    if witness is None:
        return c, None
    return replace(c, terminal=Status.DEADLOCK), witness


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------

def abstract_semantics(alias_depth: int = DEFAULT_DEPTH) -> Semantics:
    """The abstract engine as seen by the explorer; configurations are their own state keys"""
    return Semantics(
        engine=ABSTRACT,
        initial=partial(initial_abstract_configuration, alias_depth=alias_depth),
        enabled_choices=abstract_enabled_choices,
        fire=abstract_fire,
        next_rule=abstract_next_rule,
        is_local_step=abstract_is_local_step,
        mark_deadlock=abstract_mark_deadlock,
        lock_sets=abstract_lock_sets,
        lock_pattern=abstract_lock_pattern,
        state_key=lambda c: c,
        run_mode='abstract-run',
        explore_mode='abstract',
    )


def run_abstract(program: Program, alias_depth: int = DEFAULT_DEPTH,
                 deadlock_check: Optional[bool] = None, step_limit: int = DEFAULT_STEP_LIMIT,
                 strategy=None) -> ExplorationReport:
    """
    Follow a strategy under the abstract semantics: the given one, else the
    program's `using` clause, else the guided schedule
    """
    if alias_depth < 1:
        raise ConfigError(f"alias depth must be at least 1, got {alias_depth}")
    strategy = strategy or program.strategy or GUIDED_STRATEGY
    if not isinstance(strategy, Strategy):
        strategy = parse_strategy(strategy)
    explorer = Explorer(program, deadlock_check, step_limit=step_limit, semantics=abstract_semantics(alias_depth))
    return explorer.run_strategy(strategy)


def explore_abstract(program: Program, depth_bound: int, state_bound: int,
                     alias_depth: int = DEFAULT_DEPTH, deadlock_check: Optional[bool] = None,
                     workers: int = 1, keep_states: bool = False) -> ExplorationReport:
    """
    Breadth-first search over abstract configurations; with deadlock checking
    on, every reached state goes through the may-alias check

    Returns:
        report whose deadlocks are the flagged states (possibly false positives)
    """
    if alias_depth < 1:
        raise ConfigError(f"alias depth must be at least 1, got {alias_depth}")
    explorer = Explorer(program, deadlock_check, workers, semantics=abstract_semantics(alias_depth))
    report = explorer.explore_bounded(depth_bound, state_bound, keep_states)
    logger.info("abstract exploration flagged %d state(s) out of %d", len(report.deadlocks), report.states_visited)
    return report
