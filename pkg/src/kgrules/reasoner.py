"""Certain answers over a knowledge base via bounded materialization.

``materialize`` saturates a knowledge base under its axioms, introducing
labelled nulls (``_:n1``, ``_:n2``, ...) for existential axioms up to a depth
budget.  Individuals sitting at the budget frontier cannot spawn successors,
so their concept memberships are completed from a type closure that simulates
the missing subtree; ``cert`` is therefore sound and complete for connected
queries whose radius does not exceed the budget, and its results do not
depend on how far past that radius the budget goes.

``cert`` finds answers by indexed backtracking homomorphism search.
``cert_naive`` recomputes them by enumerating every variable assignment over
the materialized domain; it exists purely as a correctness oracle for small
bases.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

from .kb import (
    EXEMPLAR,
    Assertion,
    ConceptAssertion,
    ConceptExpr,
    ConceptInclusion,
    KnowledgeBase,
    RoleAssertion,
    RoleInclusion,
)
from .queries import ConceptAtom, InstanceQuery, RoleAtom, query_radius

NULL_PREFIX = "_:n"


class BudgetError(RuntimeError):
    """A query needs more materialization depth than the chase was given."""

    def __init__(self, needed: int, available: int):
        self.needed = needed
        self.available = available
        super().__init__(
            f"query radius {needed} exceeds materialization depth {available}; "
            f"re-materialize with a budget of at least {needed}"
        )


def is_null(name: str) -> bool:
    return name.startswith(NULL_PREFIX)


@dataclass
class Match:
    """A homomorphism from query variables into the materialized domain."""

    assignment: dict[str, str]


# ---------------------------------------------------------------------------
# Normalized TBox
# ---------------------------------------------------------------------------

class _Rules:
    """Axioms split by shape, plus the reflexive-transitive role hierarchy."""

    def __init__(self, kb: KnowledgeBase):
        self.concept_rules: list[tuple[ConceptExpr, str]] = []
        self.exist_rules: list[tuple[ConceptExpr, str, bool]] = []
        self.role_rules: list[tuple[str, str]] = []
        for ax in kb.tbox:
            if isinstance(ax, RoleInclusion):
                self.role_rules.append((ax.sub, ax.sup))
            elif isinstance(ax, ConceptInclusion):
                if ax.rhs.is_atomic:
                    self.concept_rules.append((ax.lhs, ax.rhs.name))
                else:
                    self.exist_rules.append((ax.lhs, ax.rhs.role, ax.rhs.inverse))
        self.concept_rules.sort(key=lambda r: (r[0].render(), r[1]))
        self.exist_rules.sort(key=lambda r: (r[0].render(), r[1], r[2]))
        self.role_rules.sort()
        sups: dict[str, set[str]] = defaultdict(set)
        for r in kb.vocabulary.role_names:
            sups[r].add(r)
        changed = True
        while changed:
            changed = False
            for sub, sup in self.role_rules:
                before = len(sups[sub])
                sups[sub] |= sups[sup]
                changed |= len(sups[sub]) != before
        self.role_sups: dict[str, frozenset[str]] = {
            r: frozenset(s) for r, s in sups.items()
        }


class _TypeClosure:
    """Concept closure of chase nulls, computed on abstract node types.

    A null is characterized by its creating role, its direction, and the
    concept set of its parent.  ``type_of`` returns every concept the null
    would eventually carry if the chase ran to any depth below it.  Solved
    as a least fixpoint over a table of such keys.
    """

    def __init__(self, rules: _Rules):
        self.rules = rules
        self.table: dict[tuple[str, bool, frozenset[str]], frozenset[str]] = {}

    def type_of(self, role: str, inverse: bool, parent_type: frozenset[str]) -> frozenset[str]:
        key = (role, inverse, parent_type)
        if key not in self.table:
            self.table[key] = frozenset()
            self._solve()
        return self.table[key]

    def _solve(self):
        while True:
            changed = False
            for key in sorted(self.table, key=lambda k: (k[0], k[1], tuple(sorted(k[2])))):
                derived = self._derive(key)
                if derived != self.table[key]:
                    self.table[key] = derived
                    changed = True
            if not changed:
                break

    def _derive(self, key) -> frozenset[str]:
        role, inverse, parent_type = key
        sups = self.rules.role_sups.get(role, frozenset({role}))
        concepts = set(self.table[key])
        # (roles_on_edge, concepts_at_other_end) seen from this node
        edges_out: list[tuple[frozenset[str], frozenset[str]]] = []
        edges_in: list[tuple[frozenset[str], frozenset[str]]] = []
        if inverse:
            edges_out.append((sups, parent_type))
        else:
            edges_in.append((sups, parent_type))

        def expr_holds(expr: ConceptExpr) -> bool:
            if expr.is_atomic:
                return expr.name in concepts
            edges = edges_in if expr.inverse else edges_out
            for roles, other in edges:
                if expr.role in roles and (expr.filler is None or expr.filler in other):
                    return True
            return False

        progress = True
        while progress:
            progress = False
            for lhs, name in self.rules.concept_rules:
                if name not in concepts and expr_holds(lhs):
                    concepts.add(name)
                    progress = True
            for lhs, erole, einv in self.rules.exist_rules:
                if not expr_holds(lhs):
                    continue
                esups = self.rules.role_sups.get(erole, frozenset({erole}))
                existing = edges_in if einv else edges_out
                if any(erole in roles for roles, _ in existing):
                    continue
                child_key = (erole, einv, frozenset(concepts))
                if child_key not in self.table:
                    self.table[child_key] = frozenset()
                child_type = self.table[child_key]
                if einv:
                    edges_in.append((esups, child_type))
                else:
                    edges_out.append((esups, child_type))
                progress = True
        return frozenset(concepts)


# ---------------------------------------------------------------------------
# Materialization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaterializedKB:
    """A knowledge base saturated up to ``chase_depth``; read-only."""

    base: KnowledgeBase
    derived_assertions: frozenset[Assertion]
    nulls: tuple[str, ...]
    chase_depth: int
    concept_ext: dict[str, frozenset[str]] = field(compare=False, repr=False, default=None)
    role_pairs: dict[str, frozenset[tuple[str, str]]] = field(compare=False, repr=False, default=None)

    def __post_init__(self):
        ext: dict[str, set[str]] = defaultdict(set)
        pairs: dict[str, set[tuple[str, str]]] = defaultdict(set)
        for a in self.derived_assertions:
            if isinstance(a, ConceptAssertion):
                ext[a.concept].add(a.individual)
            else:
                pairs[a.role].add((a.subject, a.target))
        object.__setattr__(self, "concept_ext", {c: frozenset(s) for c, s in ext.items()})
        object.__setattr__(self, "role_pairs", {r: frozenset(s) for r, s in pairs.items()})
        fwd: dict[str, dict[str, set[str]]] = defaultdict(lambda: defaultdict(set))
        bwd: dict[str, dict[str, set[str]]] = defaultdict(lambda: defaultdict(set))
        for r, ps in pairs.items():
            for u, v in ps:
                fwd[r][u].add(v)
                bwd[r][v].add(u)
        object.__setattr__(self, "_fwd", {r: dict(m) for r, m in fwd.items()})
        object.__setattr__(self, "_bwd", {r: dict(m) for r, m in bwd.items()})

    @property
    def named(self) -> frozenset[str]:
        return self.base.vocabulary.individual_names

    @property
    def entities(self) -> tuple[str, ...]:
        return tuple(sorted(self.named)) + self.nulls

    @property
    def exemplars(self) -> frozenset[str]:
        return self.base.exemplars

    def successors(self, role: str, entity: str) -> frozenset[str]:
        return frozenset(self._fwd.get(role, {}).get(entity, ()))

    def predecessors(self, role: str, entity: str) -> frozenset[str]:
        return frozenset(self._bwd.get(role, {}).get(entity, ()))

    def dump_text(self) -> str:
        """Materialized ABox in the KB text format; nulls keep their ``_:nK`` names."""
        lines = []
        concept_rows = sorted(
            (a.concept, a.individual)
            for a in self.derived_assertions
            if isinstance(a, ConceptAssertion)
        )
        role_rows = sorted(
            (a.role, a.subject, a.target)
            for a in self.derived_assertions
            if isinstance(a, RoleAssertion)
        )
        for c, a in concept_rows:
            lines.append(f"exemplar {a}" if c == EXEMPLAR else f"concept {c} {a}")
        for r, s, o in role_rows:
            lines.append(f"role {r} {s} {o}")
        return "\n".join(lines) + ("\n" if lines else "")


def _entity_key(name: str):
    if is_null(name):
        return (1, int(name[len(NULL_PREFIX):]))
    return (0, name)


def materialize(kb: KnowledgeBase, depth_budget: int) -> MaterializedKB:
    """Saturate ``kb`` under its axioms with nulls up to ``depth_budget``.

    Deterministic: axioms fire in a fixed order and nulls are numbered in
    creation order, so equal inputs give identical outputs.
    """
    if depth_budget < 0:
        raise ValueError("depth budget must be non-negative")
    rules = _Rules(kb)
    closure = _TypeClosure(rules)

    ext: dict[str, set[str]] = defaultdict(set)
    pairs: dict[str, set[tuple[str, str]]] = defaultdict(set)
    fwd: dict[str, dict[str, set[str]]] = defaultdict(lambda: defaultdict(set))
    bwd: dict[str, dict[str, set[str]]] = defaultdict(lambda: defaultdict(set))
    node_concepts: dict[str, set[str]] = defaultdict(set)
    depth: dict[str, int] = {a: 0 for a in kb.vocabulary.individual_names}
    parent_edge: dict[str, tuple[str, bool, str]] = {}
    nulls: list[str] = []

    def add_concept(name: str, entity: str) -> bool:
        if entity in ext[name]:
            return False
        ext[name].add(entity)
        node_concepts[entity].add(name)
        return True

    def add_pair(role: str, u: str, v: str) -> bool:
        if (u, v) in pairs[role]:
            return False
        pairs[role].add((u, v))
        fwd[role][u].add(v)
        bwd[role][v].add(u)
        return True

    for a in kb.abox:
        if isinstance(a, ConceptAssertion):
            add_concept(a.concept, a.individual)
        else:
            add_pair(a.role, a.subject, a.target)

    def lhs_holders(expr: ConceptExpr) -> set[str]:
        if expr.is_atomic:
            return set(ext[expr.name])
        adj = bwd[expr.role] if not expr.inverse else fwd[expr.role]
        # for "some r A": x qualifies when r(x, y) and A(y); walk from the y side
        holders = set()
        if expr.filler is None:
            source = adj.keys()
        else:
            source = [y for y in adj if y in ext[expr.filler]]
        for y in source:
            holders |= adj[y]
        return holders

    def saturate() -> bool:
        changed_any = False
        progress = True
        while progress:
            progress = False
            for sub, sup in rules.role_rules:
                for u, v in list(pairs[sub]):
                    if add_pair(sup, u, v):
                        progress = True
            for lhs, name in rules.concept_rules:
                for entity in lhs_holders(lhs):
                    if add_concept(name, entity):
                        progress = True
            changed_any |= progress
        return changed_any

    def frontier_closure() -> bool:
        if not rules.exist_rules:
            return False
        changed = False
        frontier = sorted((e for e, d in depth.items() if d == depth_budget), key=_entity_key)
        for entity in frontier:
            for name in sorted(_virtual_concepts(entity)):
                changed |= add_concept(name, entity)
        return changed

    def _virtual_concepts(entity: str) -> set[str]:
        concepts = set(node_concepts[entity])
        vkids: list[tuple[frozenset[str], bool, frozenset[str]]] = []

        def expr_holds(expr: ConceptExpr) -> bool:
            if expr.is_atomic:
                return expr.name in concepts
            if not expr.inverse:
                for y in fwd[expr.role].get(entity, ()):
                    if expr.filler is None or y in ext[expr.filler]:
                        return True
                for roles, kinv, ktype in vkids:
                    if expr.role in roles and not kinv and (
                        expr.filler is None or expr.filler in ktype
                    ):
                        return True
            else:
                for y in bwd[expr.role].get(entity, ()):
                    if expr.filler is None or y in ext[expr.filler]:
                        return True
                for roles, kinv, ktype in vkids:
                    if expr.role in roles and kinv and (
                        expr.filler is None or expr.filler in ktype
                    ):
                        return True
            return False

        def has_successor(role: str, inverse: bool) -> bool:
            if not inverse and fwd[role].get(entity):
                return True
            if inverse and bwd[role].get(entity):
                return True
            return any(role in roles and kinv == inverse for roles, kinv, _ in vkids)

        progress = True
        while progress:
            progress = False
            for lhs, erole, einv in rules.exist_rules:
                if has_successor(erole, einv) or not expr_holds(lhs):
                    continue
                ktype = closure.type_of(erole, einv, frozenset(concepts))
                vkids.append((rules.role_sups.get(erole, frozenset({erole})), einv, ktype))
                progress = True
            for lhs, name in rules.concept_rules:
                if name not in concepts and expr_holds(lhs):
                    concepts.add(name)
                    progress = True
        return concepts - node_concepts[entity]

    def existential_round() -> bool:
        created = False
        for lhs, erole, einv in rules.exist_rules:
            holders = sorted(
                (e for e in lhs_holders(lhs) if depth[e] < depth_budget),
                key=_entity_key,
            )
            for entity in holders:
                if not einv and fwd[erole].get(entity):
                    continue
                if einv and bwd[erole].get(entity):
                    continue
                null = f"{NULL_PREFIX}{len(nulls) + 1}"
                nulls.append(null)
                depth[null] = depth[entity] + 1
                parent_edge[null] = (erole, einv, entity)
                if einv:
                    add_pair(erole, null, entity)
                else:
                    add_pair(erole, entity, null)
                created = True
        return created

    while True:
        progress = True
        while progress:
            progress = saturate()
            progress |= frontier_closure()
        if not existential_round():
            break

    assertions: set[Assertion] = set()
    for c, members in ext.items():
        for e in members:
            assertions.add(ConceptAssertion(c, e))
    for r, ps in pairs.items():
        for u, v in ps:
            assertions.add(RoleAssertion(r, u, v))
    return MaterializedKB(kb, frozenset(assertions), tuple(nulls), depth_budget)


# ---------------------------------------------------------------------------
# Query answering
# ---------------------------------------------------------------------------

def _check_budget(q: InstanceQuery, mkb: MaterializedKB):
    radius = query_radius(q)
    if radius > mkb.chase_depth:
        raise BudgetError(radius, mkb.chase_depth)


def _find_match(q: InstanceQuery, mkb: MaterializedKB, root: str) -> dict[str, str] | None:
    """One homomorphism with the answer variable fixed to ``root``, or None."""
    concept_of: dict[str, list[str]] = defaultdict(list)
    for a in q.concept_atoms:
        concept_of[a.var].append(a.concept)
    constraints: dict[str, list[tuple[RoleAtom, bool]]] = defaultdict(list)
    for a in q.role_atoms:
        constraints[a.subject].append((a, True))
        constraints[a.target].append((a, False))

    assignment = {q.answer_var: root}

    def ok(var: str, entity: str) -> bool:
        for c in concept_of[var]:
            if entity not in mkb.concept_ext.get(c, frozenset()):
                return False
        for atom, is_subject in constraints[var]:
            other = atom.target if is_subject else atom.subject
            if other == var:
                if (entity, entity) not in mkb.role_pairs.get(atom.role, frozenset()):
                    return False
            elif other in assignment:
                pair = (entity, assignment[other]) if is_subject else (assignment[other], entity)
                if pair not in mkb.role_pairs.get(atom.role, frozenset()):
                    return False
        return True

    if not ok(q.answer_var, root):
        return None

    def candidates(var: str) -> set[str] | None:
        """Entities adjacent (via some assigned neighbor) that satisfy concepts."""
        pools = []
        for atom, is_subject in constraints[var]:
            other = atom.target if is_subject else atom.subject
            if other in assignment and other != var:
                if is_subject:
                    pools.append(mkb.predecessors(atom.role, assignment[other]))
                else:
                    pools.append(mkb.successors(atom.role, assignment[other]))
        if not pools:
            return None
        pool = set(pools[0])
        for p in pools[1:]:
            pool &= p
        return pool

    remaining = [v for v in q.variables if v != q.answer_var]

    def search(todo: list[str]) -> bool:
        if not todo:
            return True
        scored = []
        for v in todo:
            pool = candidates(v)
            if pool is not None:
                scored.append((len(pool), v, pool))
        if not scored:
            # no variable touches the assigned part yet; connectivity makes this
            # unreachable for canonical queries, but stay safe
            v = todo[0]
            pool = set(mkb.entities)
            scored.append((len(pool), v, pool))
        _, var, pool = min(scored, key=lambda t: (t[0], t[1]))
        rest = [w for w in todo if w != var]
        for entity in sorted(pool):
            if ok(var, entity):
                assignment[var] = entity
                if search(rest):
                    return True
                del assignment[var]
        return False

    if search(remaining):
        return dict(assignment)
    return None


def iter_matches(q: InstanceQuery, mkb: MaterializedKB):
    """All matches of ``q`` whose answer variable lands on a named individual."""
    _check_budget(q, mkb)
    for root in sorted(mkb.named):
        m = _find_match(q, mkb, root)
        if m is not None:
            yield Match(m)


def cert(q: InstanceQuery, mkb: MaterializedKB) -> frozenset[str]:
    """Certain answers of ``q``: named individuals only, never nulls."""
    _check_budget(q, mkb)
    roots = set(mkb.named)
    for a in q.concept_atoms:
        if a.var == q.answer_var:
            roots &= mkb.concept_ext.get(a.concept, frozenset())
    answers = set()
    for root in sorted(roots):
        if _find_match(q, mkb, root) is not None:
            answers.add(root)
    return frozenset(answers)


def cert_naive(q: InstanceQuery, kb: KnowledgeBase, chase_depth: int | None = None) -> frozenset[str]:
    """Brute-force oracle: try every assignment over the materialized domain.

    No indexing, no pruning; only suitable for small bases.  ``chase_depth``
    defaults to the query radius.
    """
    if chase_depth is None:
        chase_depth = query_radius(q)
    mkb = materialize(kb, chase_depth)
    _check_budget(q, mkb)
    entities = list(mkb.entities)
    evars = [v for v in q.variables if v != q.answer_var]
    answers = set()
    for root in sorted(mkb.named):
        found = False
        for combo in _product(entities, len(evars)):
            assignment = {q.answer_var: root}
            assignment.update(zip(evars, combo))
            if _satisfies(q, mkb, assignment):
                found = True
                break
        if found:
            answers.add(root)
    return frozenset(answers)


def _product(items, repeat):
    if repeat == 0:
        yield ()
        return
    for head in items:
        for tail in _product(items, repeat - 1):
            yield (head,) + tail


def _satisfies(q: InstanceQuery, mkb: MaterializedKB, assignment: dict[str, str]) -> bool:
    for a in q.body:
        if isinstance(a, ConceptAtom):
            if assignment[a.var] not in mkb.concept_ext.get(a.concept, frozenset()):
                return False
        else:
            pair = (assignment[a.subject], assignment[a.target])
            if pair not in mkb.role_pairs.get(a.role, frozenset()):
                return False
    return True
