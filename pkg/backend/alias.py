"""
May-alias relations over dot-path expressions.

A relation is a set of unordered pairs {e1, e2} meaning "e1 and e2 may denote
the same object". Paths longer than the depth cutoff are cut to the cutoff
and marked widened (printed with a trailing `.*`); a widened path stands for
every path that extends it.
"""

import logging
from dataclasses import dataclass
from typing import FrozenSet, Iterable, Iterator, List, Sequence, Tuple, Union

logger = logging.getLogger(__name__)

DEFAULT_DEPTH = 3


@dataclass(frozen=True, order=True)
class AliasExpr:
    root: str
    selectors: Tuple[str, ...] = ()
    widened: bool = False

    @staticmethod
    def parse(text: str) -> "AliasExpr":
        parts = [p.strip() for p in text.split(".")]
        widened = parts[-1] == "*"
        if widened:
            parts = parts[:-1]
        return AliasExpr(parts[0], tuple(parts[1:]), widened)

    def __str__(self) -> str:
        text = ".".join((self.root,) + self.selectors)
        return text + ".*" if self.widened else text

    @property
    def depth(self) -> int:
        return len(self.selectors)

    def truncate(self, depth: int) -> "AliasExpr":
        if len(self.selectors) <= depth:
            return self
        return AliasExpr(self.root, self.selectors[:depth], True)

    def extend(self, suffix: Sequence[str], depth: int, widened: bool = False) -> "AliasExpr":
        return AliasExpr(self.root, self.selectors + tuple(suffix), self.widened or widened).truncate(depth)

    def has_prefix(self, prefix: "AliasExpr") -> bool:
        n = len(prefix.selectors)
        return self.root == prefix.root and self.selectors[:n] == prefix.selectors

    def remainder(self, prefix: "AliasExpr") -> Tuple[str, ...]:
        return self.selectors[len(prefix.selectors):]

    def covers(self, other: "AliasExpr") -> bool:
        """A widened path covers every path starting with it"""
        return self.widened and other.has_prefix(self)


ExprLike = Union[AliasExpr, str]
Pair = FrozenSet[AliasExpr]


def as_expr(value: ExprLike) -> AliasExpr:
    return value if isinstance(value, AliasExpr) else AliasExpr.parse(value)


@dataclass(frozen=True)
class AliasRelation:
    pairs: FrozenSet[Pair] = frozenset()
    depth: int = DEFAULT_DEPTH

    @staticmethod
    def of(pairs: Iterable[Tuple[ExprLike, ExprLike]], depth: int = DEFAULT_DEPTH) -> "AliasRelation":
        relation = AliasRelation(frozenset(), depth)
        return relation.with_pairs((as_expr(a), as_expr(b)) for a, b in pairs)

    def with_pairs(self, pairs: Iterable[Tuple[AliasExpr, AliasExpr]]) -> "AliasRelation":
        added = set(self.pairs)
        for a, b in pairs:
            a, b = a.truncate(self.depth), b.truncate(self.depth)
            if a != b:
                added.add(frozenset((a, b)))
        return AliasRelation(frozenset(added), self.depth)

    def union(self, other: "AliasRelation") -> "AliasRelation":
        return AliasRelation(self.pairs | other.pairs, max(self.depth, other.depth))

    def oriented(self) -> Iterator[Tuple[AliasExpr, AliasExpr]]:
        """Every stored pair in both orientations"""
        for pair in self.pairs:
            a, b = sorted(pair)
            yield a, b
            yield b, a

    def __contains__(self, pair) -> bool:
        a, b = pair
        return frozenset((as_expr(a).truncate(self.depth), as_expr(b).truncate(self.depth))) in self.pairs

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[Pair]:
        return iter(self.pairs)

    def to_list(self) -> List[List[str]]:
        return sorted(sorted(str(e) for e in pair) for pair in self.pairs)

    def __str__(self) -> str:
        return "{" + ", ".join(f"[{a}, {b}]" for a, b in self.to_list()) + "}"


def _source_aliases(r: AliasRelation, s: AliasExpr) -> set:
    """s itself and everything r lets it alias by prefix substitution"""
    sources = {s}
    for a, b in r.oriented():
        if s.has_prefix(a):
            sources.add(b.extend(s.remainder(a), r.depth, widened=a.widened))
    return sources


def alias_after_assign(r: AliasRelation, t: ExprLike, s: ExprLike) -> AliasRelation:
    """
    Relation after `t := s`: pairs about t (and paths through t) are dropped,
    then t aliases s and everything s aliased before, and paths reached
    through s are re-rooted at t.
    """
    L = r.depth
    t, s = as_expr(t).truncate(L), as_expr(s).truncate(L)
    if t == s:
        return r

    sources = _source_aliases(r, s)
    rerooted = set()
    for a, b in r.oriented():
        if a != s and a.has_prefix(s):
            rerooted.add((t.extend(a.remainder(s), L, widened=a.widened), b))

    kept = frozenset(pair for pair in r.pairs if not any(e.has_prefix(t) for e in pair))
    result = AliasRelation(kept, L)
    new_pairs = [(t, e) for e in sources if not e.has_prefix(t)]
    new_pairs += [(x, b) for x, b in rerooted if not b.has_prefix(t)]

    # t = a.f also changes every path that may reach a.f through an alias of a
    if t.selectors:
        parent = AliasExpr(t.root, t.selectors[:-1], False)
        for a, b in AliasRelation(kept, L).oriented():
            if a == parent and not b.has_prefix(t):
                through = b.extend((t.selectors[-1],), L)
                new_pairs += [(through, e) for e in sources if not e.has_prefix(t)]

    return result.with_pairs(new_pairs)


def alias_after_assignments(r: AliasRelation, body: Iterable[Tuple[ExprLike, ExprLike]]) -> AliasRelation:
    for t, s in body:
        r = alias_after_assign(r, t, s)
    return r


def alias_loop_fixpoint(r: AliasRelation, body: Sequence[Tuple[ExprLike, ExprLike]]) -> AliasRelation:
    """
    Union of the relations after 0, 1, 2, ... runs of the body; stops once a
    further run adds nothing (finite because every path is cut at the depth).
    """
    if not body:
        raise ValueError("loop body must contain at least one assignment")
    current = r
    rounds = 0
    while True:
        nxt = current.union(alias_after_assignments(current, body))
        rounds += 1
        if nxt.pairs == current.pairs:
            logger.debug("alias fixpoint after %d rounds: %d pairs", rounds, len(nxt))
            return nxt
        current = nxt


def may_alias(r: AliasRelation, e1: ExprLike, e2: ExprLike) -> bool:
    """Equality, a stored pair, or a stored pair {a, b} with e1 = a.π and e2 = b.π"""
    L = r.depth
    e1, e2 = as_expr(e1).truncate(L), as_expr(e2).truncate(L)
    if e1 == e2 or e1.covers(e2) or e2.covers(e1):
        return True
    for a, b in r.oriented():
        if not e1.has_prefix(a):
            continue
        candidate = b.extend(e1.remainder(a), L, widened=a.widened or e1.widened)
        if candidate == e2 or candidate.covers(e2) or e2.covers(candidate):
            return True
    return False
