"""Instance queries and their calculus: subsumption, condensation, intersection.

An instance query is a connected conjunction of concept atoms ``C(u)`` and
role atoms ``r(u,v)`` over variables only, with a single answer variable.
Queries are kept in a canonical form: the answer variable is named ``x``,
the remaining variables ``y1, y2, ...`` in a deterministic traversal order,
and the body is sorted.  Two tree-shaped queries are equal as values exactly
when they are equal up to variable renaming.

``q1 <= q2`` in the subsumption order means there is a substitution ``theta``
with ``q2.theta`` a subset of ``q1`` and ``theta(x) = x``.
"""

from __future__ import annotations

import itertools
import re
from collections import defaultdict, deque
from dataclasses import dataclass

ANSWER_VAR = "x"

Substitution = dict[str, str]


@dataclass(frozen=True)
class ConceptAtom:
    concept: str
    var: str

    def rename(self, mapping: Substitution) -> ConceptAtom:
        return ConceptAtom(self.concept, mapping.get(self.var, self.var))

    def render(self) -> str:
        return f"{self.concept}({self.var})"


@dataclass(frozen=True)
class RoleAtom:
    role: str
    subject: str
    target: str

    def rename(self, mapping: Substitution) -> RoleAtom:
        return RoleAtom(
            self.role,
            mapping.get(self.subject, self.subject),
            mapping.get(self.target, self.target),
        )

    def render(self) -> str:
        return f"{self.role}({self.subject},{self.target})"


Atom = ConceptAtom | RoleAtom

_ATOM_RE = re.compile(
    r"([A-Za-z_][A-Za-z0-9_.-]*)\(\s*([A-Za-z_][A-Za-z0-9_.-]*)"
    r"(?:\s*,\s*([A-Za-z_][A-Za-z0-9_.-]*))?\s*\)"
)


def _atom_vars(atom: Atom):
    if isinstance(atom, ConceptAtom):
        yield atom.var
    else:
        yield atom.subject
        yield atom.target


def _var_index(name: str) -> int:
    if name == ANSWER_VAR:
        return 0
    return int(name[1:])


def _render_key(atom: Atom):
    """Sort key giving the canonical reading order of a body.

    Atoms are grouped by the deepest variable they touch; an edge atom comes
    before the concept atoms of the variable it introduces.
    """
    if isinstance(atom, ConceptAtom):
        i = _var_index(atom.var)
        return (i, 1, 0 if atom.concept == "Exemplar" else 1, atom.concept, "")
    i, j = _var_index(atom.subject), _var_index(atom.target)
    return (max(i, j), 0, min(i, j), atom.role, "f" if i < j else "b")


# ---------------------------------------------------------------------------
# Canonical variable naming
# ---------------------------------------------------------------------------

def _adjacency(atoms) -> dict[str, list[tuple[str, str, str]]]:
    """var -> list of (role, direction, other_var) over role atoms."""
    adj: dict[str, list[tuple[str, str, str]]] = defaultdict(list)
    for a in atoms:
        if isinstance(a, RoleAtom):
            adj[a.subject].append((a.role, "f", a.target))
            adj[a.target].append((a.role, "b", a.subject))
    return adj


def _is_tree(variables: set[str], atoms) -> bool:
    pairs = {
        frozenset((a.subject, a.target))
        for a in atoms
        if isinstance(a, RoleAtom) and a.subject != a.target
    }
    if any(
        isinstance(a, RoleAtom) and a.subject == a.target for a in atoms
    ):
        return False
    return len(pairs) == len(variables) - 1


def _tree_naming(atoms, answer_var: str) -> Substitution:
    concepts: dict[str, list[str]] = defaultdict(list)
    for a in atoms:
        if isinstance(a, ConceptAtom):
            concepts[a.var].append(a.concept)
    adj = _adjacency(atoms)
    neighbors: dict[str, set[str]] = defaultdict(set)
    edge_atoms: dict[frozenset, set[tuple[str, str]]] = defaultdict(set)
    for v, entries in adj.items():
        for role, direction, u in entries:
            neighbors[v].add(u)
            if direction == "f":
                edge_atoms[frozenset((v, u))].add((role, v))

    def edge_key(parent: str, child: str):
        key = []
        for role, src in sorted(edge_atoms[frozenset((parent, child))]):
            key.append((role, "f" if src == parent else "b"))
        return tuple(sorted(key))

    def signature(v: str, parent: str | None):
        kids = sorted(
            (
                (edge_key(v, u), signature(u, v))
                for u in neighbors[v]
                if u != parent
            ),
        )
        return (tuple(sorted(concepts[v])), tuple(kids))

    mapping: Substitution = {answer_var: ANSWER_VAR}
    counter = itertools.count(1)
    queue: deque[tuple[str, str | None]] = deque([(answer_var, None)])
    while queue:
        v, parent = queue.popleft()
        kids = sorted(
            (u for u in neighbors[v] if u != parent),
            key=lambda u: (edge_key(v, u), signature(u, v)),
        )
        for u in kids:
            mapping[u] = f"y{next(counter)}"
            queue.append((u, v))
    return mapping


def _refine_colors(variables, atoms, answer_var, seed: dict[str, int] | None = None):
    concepts: dict[str, tuple[str, ...]] = defaultdict(tuple)
    for a in atoms:
        if isinstance(a, ConceptAtom):
            concepts[a.var] = tuple(sorted(concepts[a.var] + (a.concept,)))
    adj = _adjacency(atoms)
    colors = {
        v: (v != answer_var, concepts[v], -1 if seed is None else seed.get(v, -1))
        for v in variables
    }
    ranks = _compress(colors)
    while True:
        refined = {
            v: (ranks[v], tuple(sorted((r, d, ranks[u]) for r, d, u in adj[v])))
            for v in variables
        }
        new_ranks = _compress(refined)
        if new_ranks == ranks:
            return ranks
        ranks = new_ranks


def _compress(colors: dict) -> dict[str, int]:
    order = sorted(set(colors.values()))
    index = {c: i for i, c in enumerate(order)}
    return {v: index[colors[v]] for v in colors}


def _general_naming(atoms, answer_var: str) -> Substitution:
    """Canonical naming for connected non-tree bodies.

    Colour refinement plus individualization on ties; the lexicographically
    least renamed body wins, so the result is invariant under renaming.
    """
    variables = sorted({v for a in atoms for v in _atom_vars(a)})

    def solve(seed: dict[str, int], next_id: int):
        ranks = _refine_colors(variables, atoms, answer_var, seed)
        groups: dict[int, list[str]] = defaultdict(list)
        for v in variables:
            groups[ranks[v]].append(v)
        tied = [vs for vs in groups.values() if len(vs) > 1]
        if not tied:
            ordered = sorted(variables, key=lambda v: ranks[v])
            mapping = {v: (ANSWER_VAR if i == 0 else f"y{i}") for i, v in enumerate(ordered)}
            body = tuple(sorted((a.rename(mapping).render() for a in atoms)))
            return body, mapping
        group = min(tied, key=lambda vs: min(ranks[v] for v in vs))
        best = None
        for v in group:
            seed2 = dict(seed)
            seed2[v] = next_id
            candidate = solve(seed2, next_id + 1)
            if best is None or candidate[0] < best[0]:
                best = candidate
        return best

    _, mapping = solve({}, 0)
    return mapping


def canonical_atoms(atoms, answer_var: str) -> tuple[Atom, ...]:
    variables = {v for a in atoms for v in _atom_vars(a)}
    if _is_tree(variables, atoms):
        mapping = _tree_naming(atoms, answer_var)
    else:
        mapping = _general_naming(atoms, answer_var)
    renamed = {a.rename(mapping) for a in atoms}
    return tuple(sorted(renamed, key=_render_key))


# ---------------------------------------------------------------------------
# InstanceQuery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InstanceQuery:
    """A canonical instance query.  Construct through :meth:`make` or :meth:`parse`."""

    answer_var: str
    body: tuple[Atom, ...]

    @classmethod
    def make(cls, atoms, answer_var: str = ANSWER_VAR) -> InstanceQuery:
        atoms = list(atoms)
        if not atoms:
            raise ValueError("query body must be non-empty")
        variables = {v for a in atoms for v in _atom_vars(a)}
        if answer_var not in variables:
            raise ValueError(f"answer variable '{answer_var}' occurs in no atom")
        if not _connected(variables, atoms, answer_var):
            raise ValueError("query graph is not connected")
        return cls(ANSWER_VAR, canonical_atoms(atoms, answer_var))

    @classmethod
    def parse(cls, text: str) -> InstanceQuery:
        """Parse either ``{A(x), r(x,y1)}_x`` or a bare ``A(x), r(x,y1)`` body."""
        text = text.strip()
        answer_var = ANSWER_VAR
        m = re.fullmatch(r"\{(.*)\}_([A-Za-z_][A-Za-z0-9_.-]*)", text, re.S)
        if m:
            text, answer_var = m.group(1), m.group(2)
        atoms: list[Atom] = []
        consumed = 0
        for m in _ATOM_RE.finditer(text):
            if m.group(3) is None:
                atoms.append(ConceptAtom(m.group(1), m.group(2)))
            else:
                atoms.append(RoleAtom(m.group(1), m.group(2), m.group(3)))
            consumed += 1
        leftovers = _ATOM_RE.sub("", text).replace(",", "").strip()
        if leftovers or not consumed:
            raise ValueError(f"cannot parse query text {text!r}")
        return cls.make(atoms, answer_var)

    # -- views ----------------------------------------------------------------

    @property
    def variables(self) -> tuple[str, ...]:
        seen = sorted({v for a in self.body for v in _atom_vars(a)}, key=_var_index)
        return tuple(seen)

    @property
    def concept_atoms(self) -> tuple[ConceptAtom, ...]:
        return tuple(a for a in self.body if isinstance(a, ConceptAtom))

    @property
    def role_atoms(self) -> tuple[RoleAtom, ...]:
        return tuple(a for a in self.body if isinstance(a, RoleAtom))

    def body_text(self) -> str:
        return ", ".join(a.render() for a in self.body)

    def text(self) -> str:
        return "{" + self.body_text() + "}_" + self.answer_var

    def __len__(self) -> int:
        return len(self.body)


def _connected(variables: set[str], atoms, start: str) -> bool:
    adj = _adjacency(atoms)
    seen = {start}
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for _, _, u in adj[v]:
            if u not in seen:
                seen.add(u)
                queue.append(u)
    return seen == variables


# ---------------------------------------------------------------------------
# Embedding search (the core of subsumption and condensation)
# ---------------------------------------------------------------------------

def _embed(src_atoms, dst_atoms, pinned: Substitution) -> Substitution | None:
    """Find a substitution mapping every atom of ``src_atoms`` into ``dst_atoms``.

    ``pinned`` fixes the image of selected variables (the answer variable in
    all callers).  Backtracking with forward filtering; complete.
    """
    dst_concepts: dict[str, set[str]] = defaultdict(set)
    dst_pairs: dict[str, set[tuple[str, str]]] = defaultdict(set)
    dst_vars: set[str] = set()
    for a in dst_atoms:
        if isinstance(a, ConceptAtom):
            dst_concepts[a.concept].add(a.var)
            dst_vars.add(a.var)
        else:
            dst_pairs[a.role].add((a.subject, a.target))
            dst_vars.add(a.subject)
            dst_vars.add(a.target)

    src_vars = sorted({v for a in src_atoms for v in _atom_vars(a)})
    candidates: dict[str, set[str]] = {}
    for v in src_vars:
        if v in pinned:
            candidates[v] = {pinned[v]}
        else:
            candidates[v] = set(dst_vars)
    for a in src_atoms:
        if isinstance(a, ConceptAtom):
            candidates[a.var] &= {
                u for u in candidates[a.var] if u in dst_concepts[a.concept]
            }
    if any(not c for c in candidates.values()):
        return None

    role_constraints: dict[str, list[tuple[RoleAtom, bool]]] = defaultdict(list)
    for a in src_atoms:
        if isinstance(a, RoleAtom):
            role_constraints[a.subject].append((a, True))
            role_constraints[a.target].append((a, False))

    assignment: Substitution = dict(pinned)

    def consistent(v: str, image: str) -> bool:
        for atom, is_subject in role_constraints[v]:
            other = atom.target if is_subject else atom.subject
            if other == v:
                pair = (image, image)
                if pair not in dst_pairs[atom.role]:
                    return False
                continue
            if other in assignment:
                pair = (image, assignment[other]) if is_subject else (assignment[other], image)
                if pair not in dst_pairs[atom.role]:
                    return False
        return True

    def search(remaining: list[str]) -> bool:
        if not remaining:
            return True
        v = min(remaining, key=lambda w: len(candidates[w]))
        rest = [w for w in remaining if w != v]
        for image in sorted(candidates[v]):
            if consistent(v, image):
                assignment[v] = image
                if search(rest):
                    return True
                del assignment[v]
        return False

    free = [v for v in src_vars if v not in pinned]
    for v, image in pinned.items():
        if v in src_vars and not consistent(v, image):
            return None
    if search(free):
        return {v: assignment[v] for v in src_vars}
    return None


# ---------------------------------------------------------------------------
# Subsumption, equivalence, condensation, intersection
# ---------------------------------------------------------------------------

def subsumes(general: InstanceQuery, specific: InstanceQuery) -> Substitution | None:
    """Substitution ``theta`` with ``general.theta`` a subset of ``specific``, or None.

    ``subsumes(q2, q1) is not None`` means ``q1 <= q2`` in the subsumption
    order.  The answer variable is always mapped to itself.
    """
    return _embed(general.body, specific.body, {ANSWER_VAR: ANSWER_VAR})


def subsumed_by(q1: InstanceQuery, q2: InstanceQuery) -> bool:
    """``q1 <= q2``: q2 subsumes q1."""
    return subsumes(q2, q1) is not None


def syntactically_equivalent(q1: InstanceQuery, q2: InstanceQuery) -> bool:
    if q1.body == q2.body:
        return True
    return subsumes(q1, q2) is not None and subsumes(q2, q1) is not None


def condense(q: InstanceQuery) -> InstanceQuery:
    """Smallest subset of the body that the whole body maps into.

    The result is syntactically equivalent to ``q`` and unique as a canonical
    query.
    """
    atoms: list[Atom] = list(q.body)
    changed = True
    while changed:
        changed = False
        for a in sorted(atoms, key=_render_key):
            rest = [b for b in atoms if b != a]
            if not rest:
                continue
            theta = _embed(atoms, rest, {ANSWER_VAR: ANSWER_VAR})
            if theta is not None:
                atoms = sorted({b.rename(theta) for b in atoms}, key=_render_key)
                changed = True
                break
    return InstanceQuery.make(atoms)


def intersect(q1: InstanceQuery, q2: InstanceQuery) -> InstanceQuery:
    """Most general query subsumed by both inputs: glue at the answer variable.

    The result is ``condense(q1 union q2')`` where ``q2'`` renames the
    non-answer variables of ``q2`` apart from those of ``q1``.
    """
    if subsumes(q2, q1) is not None:
        return condense(q1)
    if subsumes(q1, q2) is not None:
        return condense(q2)
    offset = len(q1.variables)
    renaming = {
        v: f"y{_var_index(v) + offset}" for v in q2.variables if v != ANSWER_VAR
    }
    merged = set(q1.body) | {a.rename(renaming) for a in q2.body}
    return condense(InstanceQuery.make(merged))


def query_depth(q: InstanceQuery) -> int:
    """Longest root-to-leaf path of a tree-shaped query; errors on non-trees."""
    variables = set(q.variables)
    if not _is_tree(variables, q.body):
        raise ValueError("query graph is not a tree")
    adj = _adjacency(q.body)
    depth = {ANSWER_VAR: 0}
    queue = deque([ANSWER_VAR])
    best = 0
    while queue:
        v = queue.popleft()
        for _, _, u in adj[v]:
            if u not in depth:
                depth[u] = depth[v] + 1
                best = max(best, depth[u])
                queue.append(u)
    return best


def query_radius(q: InstanceQuery) -> int:
    """Eccentricity of the answer variable; equals depth on tree queries."""
    adj = _adjacency(q.body)
    dist = {ANSWER_VAR: 0}
    queue = deque([ANSWER_VAR])
    best = 0
    while queue:
        v = queue.popleft()
        for _, _, u in adj[v]:
            if u not in dist:
                dist[u] = dist[v] + 1
                best = max(best, dist[u])
                queue.append(u)
    return best
