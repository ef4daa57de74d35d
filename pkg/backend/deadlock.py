"""
Coffman deadlock detection over concrete configurations.

A blocked processor waits for the handlers named by the lock item on top of
its stack (minus those it already holds). The wait-for graph has an edge
p -> p' whenever p waits for something p' holds; a cycle is a deadlock.
"""

import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional, Tuple

import networkx as nx

from backend.errors import OracleSizeError
from backend.runtime import Configuration, LockItem, ProcessorId, State, Status, is_blocked

logger = logging.getLogger(__name__)

ORACLE_LIMIT = 20


def _name(p) -> str:
    return f"p{p}" if isinstance(p, int) else str(p)


@dataclass(frozen=True)
class DeadlockWitness:
    processors: FrozenSet[int]
    cycle: Tuple[int, ...]
    labels: Dict[Tuple[int, int], FrozenSet] = field(default_factory=dict, compare=False)

    def to_dict(self) -> Dict:
        return {
            'processors': sorted(self.processors),
            'cycle': list(self.cycle),
            'labels': {f"{p}→{q}": sorted(handlers) for (p, q), handlers in self.labels.items()},
        }

    def describe(self) -> List[str]:
        """One line per cycle edge: who waits for whom, and on which handlers"""
        lines = []
        for index, p in enumerate(self.cycle):
            q = self.cycle[(index + 1) % len(self.cycle)]
            handlers = ", ".join(str(h) for h in sorted(self.labels.get((p, q), ())))
            lines.append(f"{_name(p)} waits for {{{handlers}}} held by {_name(q)}")
        return lines


def held_set(st: State, p: ProcessorId) -> FrozenSet[ProcessorId]:
    """H(p): the request queues p has reserved"""
    return st.rq_locks.get(p, frozenset())


def wait_set(c: Configuration, p: ProcessorId) -> FrozenSet[ProcessorId]:
    """W(p): handlers of p's blocked lock item that p does not hold yet, else empty"""
    item = c.top(p)
    if not isinstance(item, LockItem) or not is_blocked(c, p):
        return frozenset()
    return item.handlers - held_set(c.state, p)


def build_wait_for_graph(c: Configuration) -> nx.DiGraph:
    """
    Nodes are all processors; an edge (p, p') carries `handlers`, the nonempty
    intersection W(p) ∩ H(p').
    """
    graph = nx.DiGraph()
    procs = sorted(c.state.procs)
    graph.add_nodes_from(procs)
    for p in procs:
        waiting = wait_set(c, p)
        if not waiting:
            continue
        for q in procs:
            if q == p:
                continue
            shared = waiting & held_set(c.state, q)
            if shared:
                graph.add_edge(p, q, handlers=frozenset(shared))
    return graph


def _rotate(cycle: List[int]) -> Tuple[int, ...]:
    start = cycle.index(min(cycle))
    return tuple(cycle[start:] + cycle[:start])


def witness_from_graph(graph: nx.DiGraph) -> Optional[DeadlockWitness]:
    """
    Shortest cycle of a wait-for graph, started at its lowest node; ties go to
    the lexicographically smallest rotation. Edges must carry `handlers`.
    """
    if graph.number_of_edges() == 0:
        return None
    cycles = sorted((_rotate(cycle) for cycle in nx.simple_cycles(graph)), key=lambda cy: (len(cy), cy))
    if not cycles:
        return None
    cycle = cycles[0]
    labels = {}
    for index, p in enumerate(cycle):
        q = cycle[(index + 1) % len(cycle)]
        labels[(p, q)] = graph.edges[p, q]['handlers']
    logger.debug("wait-for cycle %s", list(cycle))
    return DeadlockWitness(frozenset(cycle), cycle, labels)


def detect_deadlock(c: Configuration) -> Optional[DeadlockWitness]:
    """Witness for the first wait-for cycle, or None"""
    return witness_from_graph(build_wait_for_graph(c))


def detect_deadlock_oracle(c: Configuration) -> Optional[FrozenSet[ProcessorId]]:
    """
    Direct subset enumeration: the first D (smallest, then lexicographic) whose
    members are all blocked and each waits on something another member holds.

    Raises:
        OracleSizeError: more than ORACLE_LIMIT processors
    """
    procs = sorted(c.state.procs)
    if len(procs) > ORACLE_LIMIT:
        raise OracleSizeError(f"oracle enumerates subsets of at most {ORACLE_LIMIT} processors, got {len(procs)}")

    waits = {p: wait_set(c, p) for p in procs}
    blocked = [p for p in procs if waits[p] and is_blocked(c, p)]
    for size in range(2, len(blocked) + 1):
        for subset in itertools.combinations(blocked, size):
            members = set(subset)
            if all(
                any(q != p and waits[p] & held_set(c.state, q) for q in members)
                for p in members
            ):
                return frozenset(members)
    return None


def mark_deadlock(c: Configuration) -> Tuple[Configuration, Optional[DeadlockWitness]]:
    """Run the detector and, on a witness, make the configuration terminal"""
    if c.terminal != Status.RUNNING:
        return c, None
    witness = detect_deadlock(c)
    if witness is None:
        return c, None
    logger.info("deadlock among processors %s", sorted(witness.processors))
    return replace(c, terminal=Status.DEADLOCK), witness
