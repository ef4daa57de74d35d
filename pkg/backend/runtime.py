"""
Concrete small-step semantics for SCOOP configurations

A configuration pairs every processor with its call stack and carries the
global state: heap, per-processor frame stores, request-queue locks and
channels. One call to `step` fires exactly one rule on the top item of the
chosen processor's stack and returns a new configuration; nothing is mutated.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Tuple, Union

from backend.errors import (
    ChannelViolation,
    EngineError,
    FeatureNotFound,
    InitializationError,
    LockViolation,
    StuckConfiguration,
    VoidDereference,
)
from backend.ir import (
    CURRENT,
    Assign,
    ClassDecl,
    Command,
    Conditional,
    Create,
    Expression,
    Instruction,
    Name,
    NilInstruction,
    Program,
    TypeAnnot,
    lookup_feature,
)

logger = logging.getLogger(__name__)

ProcessorId = int
Ref = int
ChannelId = int

VOID: Ref = 0
BOOTSTRAP: ProcessorId = 0
BOOTSTRAP_CLASS = "BOOTSTRAP"
ROOT_SLOT = "root"


class Status(str, Enum):
    RUNNING = "running"
    DONE = "done"
    DEADLOCK = "deadlock"


# ---------------------------------------------------------------------------
# State components
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObjectRecord:
    class_name: str
    handler: ProcessorId
    attributes: Tuple[Tuple[str, Ref], ...]
    site: str = ""

    def get(self, name: str) -> Ref:
        for attr, ref in self.attributes:
            if attr == name:
                return ref
        raise EngineError(f"object of class {self.class_name} has no attribute {name}")

    def with_attribute(self, name: str, ref: Ref) -> "ObjectRecord":
        if all(attr != name for attr, _ in self.attributes):
            raise EngineError(f"object of class {self.class_name} has no attribute {name}")
        attributes = tuple((attr, ref if attr == name else old) for attr, old in self.attributes)
        return replace(self, attributes=attributes)


@dataclass(frozen=True)
class Frame:
    """Binding of Current, formals and locals for one routine activation"""

    current: Ref
    class_name: str
    feature: str
    slots: Tuple[Tuple[str, Ref], ...] = ()

    def has(self, name: str) -> bool:
        return any(slot == name for slot, _ in self.slots)

    def lookup(self, name: str) -> Ref:
        for slot, ref in self.slots:
            if slot == name:
                return ref
        raise EngineError(f"{name} is not bound in {self.class_name}.{self.feature}")

    def bind(self, name: str, ref: Ref) -> "Frame":
        return replace(self, slots=tuple((slot, ref if slot == name else old) for slot, old in self.slots))


# Stack items

@dataclass(frozen=True)
class InstructionItem:
    instruction: Instruction


@dataclass(frozen=True)
class EvalItem:
    channel: ChannelId
    expr: Expression


@dataclass(frozen=True)
class WaitItem:
    channel: ChannelId


@dataclass(frozen=True)
class WriteItem:
    target: Expression
    channel: ChannelId


@dataclass(frozen=True)
class LockItem:
    handlers: FrozenSet[ProcessorId]


@dataclass(frozen=True)
class ApplyItem:
    feature: str
    target: Ref
    args: Tuple[Ref, ...]
    handler: ProcessorId


@dataclass(frozen=True)
class ReleaseItem:
    handlers: FrozenSet[ProcessorId] = frozenset()


@dataclass(frozen=True)
class FramePopItem:
    pass


StackItem = Union[InstructionItem, EvalItem, WaitItem, WriteItem, LockItem, ApplyItem, ReleaseItem, FramePopItem]
CallStack = Tuple[StackItem, ...]


@dataclass(frozen=True)
class State:
    heap: Dict[Ref, ObjectRecord]
    stores: Dict[ProcessorId, Tuple[Frame, ...]]
    rq_locks: Dict[ProcessorId, FrozenSet[ProcessorId]]
    channels: Dict[ChannelId, Optional[Ref]]
    procs: FrozenSet[ProcessorId]
    next_ref: int = 1
    next_channel: int = 0

    def top_frame(self, p: ProcessorId) -> Frame:
        frames = self.stores.get(p, ())
        if not frames:
            raise EngineError(f"processor {p} has no active frame")
        return frames[0]


@dataclass(frozen=True)
class Configuration:
    """⟨p1::St1 | ... | pn::Stn, σ⟩ plus its terminal status; stacks are top-first"""

    pool: Dict[ProcessorId, CallStack]
    state: State
    terminal: Status = Status.RUNNING
    program: Optional[Program] = field(default=None, compare=False, repr=False)

    def stack(self, p: ProcessorId) -> CallStack:
        return self.pool.get(p, ())

    def top(self, p: ProcessorId) -> Optional[StackItem]:
        stack = self.pool.get(p, ())
        return stack[0] if stack else None


@dataclass(frozen=True, order=True)
class Choice:
    processor: ProcessorId


@dataclass(frozen=True)
class Blocked:
    """Lock request that cannot be granted; names the processors holding the contested handlers"""

    holders: FrozenSet[ProcessorId]
    contested: FrozenSet[ProcessorId]


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def initial_configuration(program: Program) -> Configuration:
    """
    Build the bootstrap configuration: processor 0 with a frame holding the
    `root` slot and the stack `create root.make ; release(∅)`.

    Raises:
        InitializationError: root class/procedure missing or root procedure takes arguments
    """
    settings = program.settings
    try:
        root_proc = lookup_feature(program, settings.root_class, settings.root_procedure)
    except FeatureNotFound as exc:
        raise InitializationError(f"cannot start program: {exc}") from None
    if root_proc.arity > 0:
        raise InitializationError(
            f"root procedure {settings.root_class}.{settings.root_procedure} takes "
            f"{root_proc.arity} argument(s); it must be callable without arguments"
        )

    frame = Frame(VOID, BOOTSTRAP_CLASS, "init", ((ROOT_SLOT, VOID),))
    create_root = Create(Expression(Name(ROOT_SLOT)), settings.root_procedure, ())
    state = State(
        heap={},
        stores={BOOTSTRAP: (frame,)},
        rq_locks={BOOTSTRAP: frozenset()},
        channels={},
        procs=frozenset({BOOTSTRAP}),
    )
    pool = {BOOTSTRAP: (InstructionItem(create_root), ReleaseItem(frozenset()))}
    return Configuration(pool, state, Status.RUNNING, program)


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------

def _attribute_of(st: State, ref: Ref, name: str, expr: Expression) -> Ref:
    if ref == VOID:
        raise VoidDereference(f"selector {name} applied to Void while evaluating {expr}")
    return st.heap[ref].get(name)


def evaluate_expression(st: State, p: ProcessorId, e: Expression) -> Ref:
    """
    Follow a dot path from p's top frame through the heap.

    Raises:
        VoidDereference: a selector is applied to Void
        EngineError: the path is a boolean literal or names nothing
    """
    if e.is_literal:
        raise EngineError(f"boolean literal {e} does not denote an object")
    frame = st.top_frame(p)
    if e.is_current:
        ref = frame.current
    elif frame.has(e.root):
        ref = frame.lookup(e.root)
    else:
        ref = _attribute_of(st, frame.current, e.root, e)
    for selector in e.selectors:
        ref = _attribute_of(st, ref, selector, e)
    return ref


def evaluate_condition(st: State, p: ProcessorId, e: Expression) -> bool:
    """Boolean literals evaluate to themselves; paths are true iff attached"""
    if e.is_literal:
        return bool(e.literal)
    return evaluate_expression(st, p, e) != VOID


def _write_target(st: State, p: ProcessorId, target: Expression, ref: Ref) -> State:
    frame = st.top_frame(p)
    if not target.selectors and not target.is_current and frame.has(target.root):
        frames = st.stores[p]
        return replace(st, stores={**st.stores, p: (frame.bind(target.root, ref),) + frames[1:]})

    if target.selectors:
        owner = evaluate_expression(st, p, Expression(target.root, target.selectors[:-1]))
        attribute = target.selectors[-1]
    else:
        owner, attribute = frame.current, target.root
    if owner == VOID:
        raise VoidDereference(f"cannot write {target}: owner is Void")
    record = st.heap[owner].with_attribute(attribute, ref)
    return replace(st, heap={**st.heap, owner: record})


# ---------------------------------------------------------------------------
# Locks
# ---------------------------------------------------------------------------

def held_by_others(st: State, p: ProcessorId) -> Dict[ProcessorId, ProcessorId]:
    """Handler -> holder for every handler reserved by a processor other than p"""
    owners = {}
    for holder, handlers in st.rq_locks.items():
        if holder != p:
            for q in handlers:
                owners[q] = holder
    return owners


def acquire_locks(st: State, p: ProcessorId, q_set: FrozenSet[ProcessorId]) -> Union[State, Blocked]:
    """
    All-or-nothing, reentrant reservation of q_set for p.

    Returns:
        the updated State, or Blocked naming the holders of contested handlers
    """
    if not q_set:
        raise EngineError("lock sets are nonempty")
    owners = held_by_others(st, p)
    contested = frozenset(q for q in q_set if q in owners)
    if contested:
        return Blocked(frozenset(owners[q] for q in contested), contested)
    held = st.rq_locks.get(p, frozenset())
    if q_set <= held:
        return st
    return replace(st, rq_locks={**st.rq_locks, p: held | q_set})


def release_locks(st: State, p: ProcessorId, q_set: FrozenSet[ProcessorId]) -> State:
    """
    Remove exactly q_set from rq_locks(p).

    Raises:
        LockViolation: some handler in q_set is not held by p
    """
    if not q_set:
        return st
    held = st.rq_locks.get(p, frozenset())
    missing = q_set - held
    if missing:
        raise LockViolation(f"processor {p} releases {sorted(missing)} which it does not hold")
    return replace(st, rq_locks={**st.rq_locks, p: held - q_set})


def check_invariants(c: Configuration) -> None:
    """
    Lock exclusivity and pool/procs agreement.

    Raises:
        LockViolation: two processors hold the same handler, or a lock names an unknown processor
        EngineError: pool keys differ from procs
    """
    st = c.state
    if set(c.pool) != set(st.procs):
        raise EngineError("pool and processor set disagree")
    seen: Dict[ProcessorId, ProcessorId] = {}
    for holder, handlers in st.rq_locks.items():
        for q in handlers:
            if q not in st.procs:
                raise LockViolation(f"processor {holder} holds unknown processor {q}")
            if q in seen and seen[q] != holder:
                raise LockViolation(f"processors {seen[q]} and {holder} both hold {q}")
            seen[q] = holder


# ---------------------------------------------------------------------------
# Scheduling
# ---------------------------------------------------------------------------

def is_enabled(c: Configuration, p: ProcessorId) -> bool:
    item = c.top(p)
    if item is None:
        return False
    if isinstance(item, LockItem):
        return not isinstance(acquire_locks(c.state, p, item.handlers), Blocked)
    if isinstance(item, WaitItem):
        return c.state.channels.get(item.channel) is not None
    return True


def is_blocked(c: Configuration, p: ProcessorId) -> bool:
    """True when p's stack is nonempty but its top item cannot fire"""
    return c.top(p) is not None and not is_enabled(c, p)


def enabled_choices(c: Configuration) -> Tuple[Choice, ...]:
    """Enabled processors in ascending id order"""
    if c.terminal != Status.RUNNING:
        return ()
    return tuple(Choice(p) for p in sorted(c.pool) if is_enabled(c, p))


def all_stacks_empty(c: Configuration) -> bool:
    return all(not stack for stack in c.pool.values())


def finish_if_done(c: Configuration) -> Configuration:
    """Mark a running configuration done once every stack is empty"""
    if c.terminal == Status.RUNNING and all_stacks_empty(c):
        return replace(c, terminal=Status.DONE)
    return c


def next_rule(c: Configuration, p: ProcessorId) -> Optional[str]:
    """Name of the rule p's top item would fire, or None for an empty stack"""
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
    if isinstance(item, EvalItem):
        return "eval"
    if isinstance(item, WaitItem):
        return "wait"
    if isinstance(item, WriteItem):
        return "write"
    if isinstance(item, LockItem):
        held = c.state.rq_locks.get(p, frozenset())
        return "reenter" if item.handlers <= held else "lock"
    if isinstance(item, ApplyItem):
        return "enqueue" if item.handler != p else "apply"
    if isinstance(item, ReleaseItem):
        return "release"
    return "frame_pop"


def is_local_step(c: Configuration, p: ProcessorId) -> bool:
    """
    True when p is enabled and its next rule touches nothing another
    processor can observe: no lock, no enqueue, no new processor and no
    handlers given back. Searches may fire such steps without interleaving.
    """
    if not is_enabled(c, p):
        return False
    rule = next_rule(c, p)
    if rule in ("lock", "enqueue"):
        return False
    item = c.top(p)
    if rule == "release":
        return not item.handlers
    if rule == "create":
        return creation_type(_program(c), c.state.top_frame(p), item.instruction.target).processor is not None
    return True


# ---------------------------------------------------------------------------
# Rules
# ---------------------------------------------------------------------------

def _program(c: Configuration) -> Program:
    if c.program is None:
        raise EngineError("configuration is not attached to a program")
    return c.program


def _with_stack(c: Configuration, p: ProcessorId, stack: CallStack, state: Optional[State] = None) -> Configuration:
    return replace(c, pool={**c.pool, p: stack}, state=state if state is not None else c.state)


def creation_type(program: Program, frame: Frame, target: Expression) -> TypeAnnot:
    """Declared type of a creation target in the given frame"""
    if frame.class_name == BOOTSTRAP_CLASS:
        return TypeAnnot(True, None, program.settings.root_class)
    decl: ClassDecl = program.class_decl(frame.class_name)
    proc = lookup_feature(program, frame.class_name, frame.feature)
    path = list(target.selectors)
    if target.is_current:
        owner = decl
    else:
        entity = proc.entity(target.root)
        annot = entity.type if entity is not None else None
        if annot is None:
            attribute = decl.attribute(target.root)
            annot = attribute.type if attribute is not None else None
        if annot is None:
            raise EngineError(f"unknown creation target {target}")
        if not path:
            return annot
        owner = program.class_decl(annot.class_name)
    for selector in path[:-1]:
        attribute = owner.attribute(selector) if owner else None
        if attribute is None:
            raise EngineError(f"unknown creation target {target}")
        owner = program.class_decl(attribute.type.class_name)
    attribute = owner.attribute(path[-1]) if owner and path else None
    if attribute is None:
        raise EngineError(f"unknown creation target {target}")
    return attribute.type


def _rule_create(c: Configuration, p: ProcessorId, instr: Create, rest: CallStack) -> Configuration:
    program = _program(c)
    st = c.state
    frame = st.top_frame(p)
    annot = creation_type(program, frame, instr.target)

    pool = dict(c.pool)
    stores, rq_locks, procs = st.stores, st.rq_locks, st.procs
    if annot.processor is None:
        handler = len(procs)
        procs = procs | {handler}
        pool[handler] = ()
        stores = {**stores, handler: ()}
        rq_locks = {**rq_locks, handler: frozenset()}
    elif annot.processor == CURRENT:
        handler = p
    else:
        owner = evaluate_expression(st, p, Expression(annot.processor))
        if owner == VOID:
            raise VoidDereference(f"processor tag {annot.processor} is Void at creation of {instr.target}")
        handler = st.heap[owner].handler

    decl = program.class_decl(annot.class_name)
    ref = st.next_ref
    record = ObjectRecord(
        decl.name,
        handler,
        tuple((a.name, VOID) for a in decl.attributes),
        site=f"{frame.class_name}:{frame.feature}:{instr.target}",
    )
    st = replace(st, heap={**st.heap, ref: record}, stores=stores, rq_locks=rq_locks,
                 procs=procs, next_ref=ref + 1)
    st = _write_target(st, p, instr.target, ref)

    call = Command(instr.target, instr.creator, instr.args, line=instr.line, col=instr.col)
    pool[p] = (InstructionItem(call),) + rest
    return replace(c, pool=pool, state=st)


def _rule_assign(c: Configuration, p: ProcessorId, instr: Assign, rest: CallStack) -> Configuration:
    st = c.state
    a = st.next_channel
    st = replace(st, channels={**st.channels, a: None}, next_channel=a + 1)
    items = (EvalItem(a, instr.source), WaitItem(a), WriteItem(instr.target, a))
    return _with_stack(c, p, items + rest, st)


def _lock_handlers(st: State, p: ProcessorId, proc, target_handler: ProcessorId,
                   args: Tuple[Ref, ...]) -> FrozenSet[ProcessorId]:
    handlers = set()
    if target_handler != p:
        handlers.add(target_handler)
    for formal, ref in zip(proc.formals, args):
        if ref == VOID or formal.type.processor == CURRENT:
            continue
        handler = st.heap[ref].handler
        if handler != p:
            handlers.add(handler)
    return frozenset(handlers)


def _rule_command(c: Configuration, p: ProcessorId, instr: Command, rest: CallStack) -> Configuration:
    program = _program(c)
    st = c.state
    target = evaluate_expression(st, p, instr.target)
    if target == VOID:
        raise VoidDereference(f"call {instr.feature} on Void target {instr.target}")
    record = st.heap[target]
    proc = lookup_feature(program, record.class_name, instr.feature)
    args = tuple(evaluate_expression(st, p, arg) for arg in instr.args)

    items: List[StackItem] = []
    handlers = _lock_handlers(st, p, proc, record.handler, args)
    if handlers:
        items.append(LockItem(handlers))
    items.append(ApplyItem(str(instr.feature), target, args, record.handler))
    return _with_stack(c, p, tuple(items) + rest)


def _nearest_release(rest: CallStack) -> int:
    for index, item in enumerate(rest):
        if isinstance(item, ReleaseItem):
            return index
    raise LockViolation("lock acquired outside any routine: no release item below it")


def _rule_lock(c: Configuration, p: ProcessorId, item: LockItem, rest: CallStack) -> Configuration:
    st = c.state
    held = st.rq_locks.get(p, frozenset())
    outcome = acquire_locks(st, p, item.handlers)
    if isinstance(outcome, Blocked):
        raise StuckConfiguration(f"processor {p} is blocked on {sorted(outcome.contested)}")
    fresh = item.handlers - held
    if fresh:
        index = _nearest_release(rest)
        release = rest[index]
        rest = rest[:index] + (ReleaseItem(release.handlers | fresh),) + rest[index + 1:]
    return _with_stack(c, p, rest, outcome)


def _rule_apply(c: Configuration, p: ProcessorId, item: ApplyItem, rest: CallStack) -> Configuration:
    st = c.state
    record = st.heap[item.target]
    if record.handler != item.handler:
        raise EngineError(f"apply item names handler {item.handler} but target lives on {record.handler}")

    if item.handler != p:
        pool = dict(c.pool)
        pool[p] = rest
        pool[item.handler] = c.pool[item.handler] + (item,)
        return replace(c, pool=pool)

    proc = lookup_feature(_program(c), record.class_name, item.feature)
    slots = tuple((f.name, ref) for f, ref in zip(proc.formals, item.args))
    slots += tuple((local.name, VOID) for local in proc.locals)
    frame = Frame(item.target, record.class_name, item.feature, slots)
    st = replace(st, stores={**st.stores, p: (frame,) + st.stores.get(p, ())})
    body = tuple(InstructionItem(instr) for instr in proc.body)
    return _with_stack(c, p, body + (ReleaseItem(frozenset()), FramePopItem()) + rest, st)


def _rule_frame_pop(c: Configuration, p: ProcessorId, rest: CallStack) -> Configuration:
    st = c.state
    frames = st.stores.get(p, ())
    if not frames:
        raise EngineError(f"processor {p} pops a frame it does not have")
    return _with_stack(c, p, rest, replace(st, stores={**st.stores, p: frames[1:]}))


def fire(c: Configuration, ch: Choice) -> Tuple[Configuration, str]:
    """
    Apply the rule for ch.processor's top item.

    Returns:
        (successor configuration, rule name)

    Raises:
        StuckConfiguration: the processor is not enabled or its top item matches no rule
        EngineError: a semantic invariant broke while applying the rule
    """
    p = ch.processor
    if c.terminal != Status.RUNNING:
        raise StuckConfiguration(f"configuration is {c.terminal.value}")
    if not is_enabled(c, p):
        raise StuckConfiguration(f"processor {p} is not enabled")

    stack = c.pool[p]
    item, rest = stack[0], stack[1:]
    rule = next_rule(c, p)
    st = c.state

    if isinstance(item, InstructionItem):
        instr = item.instruction
        if isinstance(instr, Create):
            nxt = _rule_create(c, p, instr, rest)
        elif isinstance(instr, Assign):
            nxt = _rule_assign(c, p, instr, rest)
        elif isinstance(instr, Command):
            nxt = _rule_command(c, p, instr, rest)
        elif isinstance(instr, NilInstruction):
            nxt = _with_stack(c, p, rest)
        elif isinstance(instr, Conditional):
            branch = instr.then_branch if evaluate_condition(st, p, instr.condition) else instr.else_branch
            nxt = _with_stack(c, p, tuple(InstructionItem(i) for i in branch) + rest)
        else:
            raise StuckConfiguration(f"no rule for instruction {instr!r}")
    elif isinstance(item, EvalItem):
        if st.channels.get(item.channel, "missing") is not None:
            raise ChannelViolation(f"channel {item.channel} is not an empty channel")
        ref = evaluate_expression(st, p, item.expr)
        nxt = _with_stack(c, p, rest, replace(st, channels={**st.channels, item.channel: ref}))
    elif isinstance(item, WaitItem):
        nxt = _with_stack(c, p, rest)
    elif isinstance(item, WriteItem):
        data = st.channels.get(item.channel)
        if data is None:
            raise ChannelViolation(f"channel {item.channel} holds no data to write")
        channels = {k: v for k, v in st.channels.items() if k != item.channel}
        st = _write_target(replace(st, channels=channels), p, item.target, data)
        nxt = _with_stack(c, p, rest, st)
    elif isinstance(item, LockItem):
        nxt = _rule_lock(c, p, item, rest)
    elif isinstance(item, ApplyItem):
        nxt = _rule_apply(c, p, item, rest)
    elif isinstance(item, ReleaseItem):
        nxt = _with_stack(c, p, rest, release_locks(st, p, item.handlers))
    elif isinstance(item, FramePopItem):
        nxt = _rule_frame_pop(c, p, rest)
    else:
        raise StuckConfiguration(f"no rule for stack item {item!r}")

    check_invariants(nxt)
    logger.debug("p%d fires %s", p, rule)
    return nxt, rule


def step(c: Configuration, ch: Choice) -> Configuration:
    """One rule application; see `fire` for errors"""
    return fire(c, ch)[0]


# ---------------------------------------------------------------------------
# Canonical forms
# ---------------------------------------------------------------------------

class _Renamer:
    """Renumbers refs and channels in order of first appearance"""

    def __init__(self):
        self.refs: Dict[Ref, int] = {VOID: 0}
        self.channels: Dict[ChannelId, int] = {}

    def ref(self, r: Ref) -> int:
        if r not in self.refs:
            self.refs[r] = len(self.refs)
        return self.refs[r]

    def channel(self, a: ChannelId) -> int:
        if a not in self.channels:
            self.channels[a] = len(self.channels)
        return self.channels[a]

    def item(self, item: StackItem):
        if isinstance(item, InstructionItem):
            return ('i', item.instruction)
        if isinstance(item, EvalItem):
            return ('e', self.channel(item.channel), item.expr)
        if isinstance(item, WaitItem):
            return ('w', self.channel(item.channel))
        if isinstance(item, WriteItem):
            return ('t', item.target, self.channel(item.channel))
        if isinstance(item, LockItem):
            return ('l', tuple(sorted(item.handlers)))
        if isinstance(item, ApplyItem):
            return ('a', item.feature, self.ref(item.target), tuple(self.ref(r) for r in item.args), item.handler)
        if isinstance(item, ReleaseItem):
            return ('r', tuple(sorted(item.handlers)))
        return ('f',)


def canonical_key(c: Configuration) -> tuple:
    """
    Structural key of a configuration up to renaming of refs and channels.
    Two configurations that differ only in fresh-name allocation get equal keys.
    """
    st = c.state
    rn = _Renamer()
    pool_key = tuple((p, tuple(rn.item(i) for i in c.pool[p])) for p in sorted(c.pool))
    stores_key = tuple(
        (p, tuple((rn.ref(f.current), f.class_name, f.feature, tuple((n, rn.ref(r)) for n, r in f.slots))
                  for f in st.stores.get(p, ())))
        for p in sorted(st.procs)
    )

    heap_key = []
    emitted = set()
    while len(emitted) < len(st.heap):
        pending = [r for r in list(rn.refs) if r != VOID and r not in emitted]
        if not pending:
            # unreachable objects keep their allocation order
            pending = [min(set(st.heap) - emitted)]
        for r in pending:
            emitted.add(r)
            record = st.heap[r]
            heap_key.append((rn.ref(r), record.class_name, record.handler, record.site,
                             tuple((n, rn.ref(v)) for n, v in record.attributes)))
    heap_key.sort(key=lambda entry: entry[0])

    channel_key = tuple(
        (rn.channel(a), None if st.channels[a] is None else rn.ref(st.channels[a]))
        for a in sorted(st.channels, key=lambda a: (a not in rn.channels, rn.channels.get(a, a)))
    )
    locks_key = tuple((p, tuple(sorted(st.rq_locks.get(p, ())))) for p in sorted(st.procs))
    return (pool_key, stores_key, tuple(heap_key), channel_key, locks_key, c.terminal.value)


# ---------------------------------------------------------------------------
# Views
# ---------------------------------------------------------------------------

def processor_sites(st: State) -> Dict[ProcessorId, str]:
    """Creation-site label of the object each processor was created for"""
    sites = {BOOTSTRAP: "bootstrap"}
    for ref in sorted(st.heap):
        record = st.heap[ref]
        sites.setdefault(record.handler, record.site)
    return sites


def lock_pattern(c: Configuration) -> FrozenSet[Tuple[str, str]]:
    """(holder site, held site) pairs: rq_locks projected to creation-site labels"""
    sites = processor_sites(c.state)
    return frozenset(
        (sites.get(holder, str(holder)), sites.get(q, str(q)))
        for holder, handlers in c.state.rq_locks.items()
        for q in handlers
    )


def lock_sets(c: Configuration) -> Dict[str, List[int]]:
    return {str(p): sorted(c.state.rq_locks.get(p, ())) for p in sorted(c.state.procs)}
