"""The query-space DAG: enumerate tree-shaped queries, merge equal answer sets.

The builder enumerates every tree-shaped query up to a depth and branching
bound whose answer set clears a size threshold, keeps one node per distinct
answer set, replaces each node's query by the intersection of all generated
queries sharing that answer set (the most specific one), and orders nodes by
strict answer-set containment, transitively reduced.

Answer sets are manipulated as integer bitmasks over the exemplars, so the
hot loop is pure integer arithmetic; queries are only materialized once per
surviving node.  Candidate subqueries with empty (or sub-threshold) answer
sets are never extended, which is what makes the search space tractable.
"""

from __future__ import annotations

import itertools
import json
from collections import defaultdict
from dataclasses import dataclass, field
from multiprocessing import Pool

from .kb import EXEMPLAR
from .queries import (
    ANSWER_VAR,
    ConceptAtom,
    InstanceQuery,
    RoleAtom,
    condense,
    subsumed_by,
)
from .reasoner import MaterializedKB, cert


class SearchBudgetError(RuntimeError):
    """The query enumeration outgrew the configured budget."""

    def __init__(self, completed_depth: int, generated: int):
        self.completed_depth = completed_depth
        self.generated = generated
        super().__init__(
            f"query budget exhausted after {generated} candidate queries; "
            f"depths up to {completed_depth} were completed"
        )


@dataclass(frozen=True)
class BuilderConfig:
    """Knobs of the DAG construction.

    ``max_depth`` bounds the query tree depth, ``max_branching`` the number of
    children per tree node.  ``min_answer_set_size`` drops queries with fewer
    answers.  ``condense_queries`` and ``keep_most_specific`` trade the
    guarantees of the default profile for speed when disabled.  ``max_queries``
    is an optional cap on generated candidates; ``workers`` fans the
    enumeration out over processes.
    """

    max_depth: int
    max_branching: int = 3
    min_answer_set_size: int = 1
    condense_queries: bool = True
    keep_most_specific: bool = True
    max_queries: int | None = None
    workers: int = 1

    def __post_init__(self):
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.max_branching < 1:
            raise ValueError("max_branching must be >= 1")
        if self.min_answer_set_size < 0:
            raise ValueError("min_answer_set_size must be >= 0")

    @classmethod
    def default(cls, max_depth: int, **kw) -> BuilderConfig:
        return cls(max_depth=max_depth, **kw)

    @classmethod
    def fast(cls, max_depth: int, **kw) -> BuilderConfig:
        """Keep an arbitrary query per answer set and skip condensation."""
        return cls(max_depth=max_depth, condense_queries=False, keep_most_specific=False, **kw)


@dataclass(frozen=True)
class ConceptCombo:
    """A conjunction of concept names attached to one query variable."""

    concepts: frozenset[str]

    def sort_key(self):
        return (len(self.concepts), tuple(sorted(self.concepts)))


@dataclass(frozen=True)
class EdgeCombo:
    """Role atoms between one parent/child variable pair.

    ``directions`` maps each participating role to ``forward`` (parent to
    child), ``backward`` (child to parent) or ``both``.
    """

    directions: tuple[tuple[str, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "directions", tuple(sorted(self.directions)))

    def atoms(self, parent: str, child: str) -> list[RoleAtom]:
        out: list[RoleAtom] = []
        for role, marker in self.directions:
            if marker in ("forward", "both"):
                out.append(RoleAtom(role, parent, child))
            if marker in ("backward", "both"):
                out.append(RoleAtom(role, child, parent))
        return out

    def atom_keys(self) -> frozenset[tuple[str, str]]:
        keys = set()
        for role, marker in self.directions:
            if marker in ("forward", "both"):
                keys.add((role, "f"))
            if marker in ("backward", "both"):
                keys.add((role, "b"))
        return frozenset(keys)


@dataclass(frozen=True)
class DagNode:
    query: InstanceQuery
    answers: frozenset[str]


@dataclass(frozen=True)
class QuerySpaceDAG:
    """Nodes with pairwise distinct answer sets; edges point child to parent."""

    nodes: tuple[DagNode, ...]
    edges: tuple[tuple[int, int], ...]
    root: int

    def node_by_answers(self, answers: frozenset[str]) -> DagNode | None:
        for node in self.nodes:
            if node.answers == answers:
                return node
        return None

    def children(self, index: int) -> list[int]:
        return sorted(c for c, p in self.edges if p == index)

    def parents(self, index: int) -> list[int]:
        return sorted(p for c, p in self.edges if c == index)

    def to_json_dict(self) -> dict:
        return {
            "root": self.root,
            "nodes": [
                {
                    "id": i,
                    "query": node.query.text(),
                    "answers": sorted(node.answers),
                }
                for i, node in enumerate(self.nodes)
            ],
            "edges": [list(e) for e in sorted(self.edges)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"

    def to_text(self) -> str:
        lines = [f"query space: {len(self.nodes)} nodes, root={self.root}"]
        for i, node in enumerate(self.nodes):
            answers = ",".join(sorted(node.answers))
            lines.append(f"[{i}] {{{answers}}} {node.query.text()}")
        for child, parent in sorted(self.edges):
            lines.append(f"{child} -> {parent}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Bitmask workspace over the materialized domain
# ---------------------------------------------------------------------------

class _Space:
    def __init__(self, mkb: MaterializedKB):
        self.mkb = mkb
        self.entities = list(mkb.entities)
        self.pos = {e: i for i, e in enumerate(self.entities)}
        self.exemplars = sorted(mkb.exemplars)
        self.en_pos = {e: i for i, e in enumerate(self.exemplars)}
        self.en_all = (1 << len(self.exemplars)) - 1
        self.full_all = (1 << len(self.entities)) - 1
        self.concept_mask: dict[str, int] = {}
        for c, members in mkb.concept_ext.items():
            m = 0
            for e in members:
                m |= 1 << self.pos[e]
            self.concept_mask[c] = m
        # adjacency per (role, direction): entity index -> mask of viable child images
        self.adj: dict[tuple[str, str], dict[int, int]] = {}
        for r, ps in mkb.role_pairs.items():
            f: dict[int, int] = defaultdict(int)
            b: dict[int, int] = defaultdict(int)
            for u, v in ps:
                f[self.pos[u]] |= 1 << self.pos[v]
                b[self.pos[v]] |= 1 << self.pos[u]
            self.adj[(r, "f")] = dict(f)
            self.adj[(r, "b")] = dict(b)
        self._support_cache: dict[tuple, int] = {}
        self._neigh_cache: dict[frozenset, dict[int, int]] = {}

    def to_en_mask(self, full_mask: int) -> int:
        m = 0
        for i, e in enumerate(self.exemplars):
            if (full_mask >> self.pos[e]) & 1:
                m |= 1 << i
        return m

    def en_names(self, en_mask: int) -> frozenset[str]:
        names = []
        k = en_mask
        while k:
            b = (k & -k).bit_length() - 1
            k &= k - 1
            names.append(self.exemplars[b])
        return frozenset(names)

    def neighbor_maps(self, keys: frozenset[tuple[str, str]]) -> dict[int, int]:
        """entity index -> mask of entities reachable under every (role, dir) key."""
        if keys in self._neigh_cache:
            return self._neigh_cache[keys]
        maps = [self.adj.get(k, {}) for k in sorted(keys)]
        first = maps[0]
        out: dict[int, int] = {}
        for u, m in first.items():
            for other in maps[1:]:
                m &= other.get(u, 0)
                if not m:
                    break
            if m:
                out[u] = m
        self._neigh_cache[keys] = out
        return out

    def support(self, keys: frozenset[tuple[str, str]], target_mask: int) -> int:
        """Mask of entities with at least one compatible neighbor inside target."""
        cache_key = (keys, target_mask)
        if cache_key in self._support_cache:
            return self._support_cache[cache_key]
        m = 0
        for u, neigh in self.neighbor_maps(keys).items():
            if neigh & target_mask:
                m |= 1 << u
        self._support_cache[cache_key] = m
        return m


# ---------------------------------------------------------------------------
# Concept and edge lattices (the sets B and F)
# ---------------------------------------------------------------------------

def _concept_lattice(space: _Space) -> list[tuple[frozenset[str], int]]:
    """Concept sets with at least one common member in the materialized domain."""
    names = sorted(
        c
        for c, m in space.concept_mask.items()
        if c != EXEMPLAR and m
    )
    out: list[tuple[frozenset[str], int]] = []

    def extend(combo: frozenset[str], mask: int, start: int):
        for i in range(start, len(names)):
            m = mask & space.concept_mask[names[i]]
            if m:
                bigger = combo | {names[i]}
                out.append((bigger, m))
                extend(bigger, m, i + 1)

    extend(frozenset(), space.full_all, 0)
    out.sort(key=lambda cm: (len(cm[0]), tuple(sorted(cm[0]))))
    return out


def build_B(mkb: MaterializedKB, config: BuilderConfig) -> list[ConceptCombo]:
    """All concept conjunctions with at least one witness, by lattice ascent.

    Witnesses are sought over the whole materialized domain (nulls included)
    because the combos also decorate existential variables; the answer-set
    size threshold applies later, to assembled queries.
    """
    space = _Space(mkb)
    return [ConceptCombo(combo) for combo, _ in _concept_lattice(space)]


def _edge_combos(mkb: MaterializedKB) -> list[tuple[EdgeCombo, frozenset[tuple[str, str]]]]:
    roles = sorted(r for r, ps in mkb.role_pairs.items() if ps)
    out: list[tuple[EdgeCombo, frozenset]] = []

    def extend(i: int, chosen: tuple, pairset: frozenset | None):
        if i == len(roles):
            if chosen:
                out.append((EdgeCombo(chosen), pairset))
            return
        r = roles[i]
        fwd = frozenset(mkb.role_pairs[r])
        bwd = frozenset((v, u) for u, v in fwd)
        for marker, ps in (("forward", fwd), ("backward", bwd), ("both", fwd & bwd)):
            np = ps if pairset is None else pairset & ps
            if np:
                extend(i + 1, chosen + ((r, marker),), np)
        extend(i + 1, chosen, pairset)

    extend(0, (), None)
    out.sort(key=lambda ep: ep[0].directions)
    return out


def build_F(mkb: MaterializedKB, config: BuilderConfig) -> list[EdgeCombo]:
    """All role-direction assignments with at least one matching entity pair."""
    return [e for e, _ in _edge_combos(mkb)]


# ---------------------------------------------------------------------------
# Tree shapes
# ---------------------------------------------------------------------------

Tree = tuple  # nested tuples; () is a leaf


def tree_depth(tree: Tree) -> int:
    if not tree:
        return 0
    return 1 + max(tree_depth(t) for t in tree)


def tree_size(tree: Tree) -> int:
    return 1 + sum(tree_size(t) for t in tree)


def enumerate_trees(depth: int, max_branching: int) -> list[Tree]:
    """Rooted unlabeled trees of exactly ``depth``, one per isomorphism class.

    Every node has at most ``max_branching`` children.  Children are kept in
    sorted order, which makes the nested-tuple form canonical.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if depth == 0:
        return [()]
    pool: list[Tree] = []
    for d in range(depth):
        pool.extend(enumerate_trees(d, max_branching))
    pool = sorted(set(pool))
    exact = set(enumerate_trees(depth - 1, max_branching))
    trees = []
    for size in range(1, max_branching + 1):
        for combo in itertools.combinations_with_replacement(pool, size):
            if any(child in exact for child in combo):
                trees.append(tuple(sorted(combo)))
    return sorted(set(trees))


def assemble_queries(
    tree: Tree,
    b_combos: list[ConceptCombo],
    f_combos: list[EdgeCombo],
    mkb: MaterializedKB | None = None,
    min_answer_set_size: int = 1,
):
    """Decorate ``tree`` in every non-equivalent way, pruning dead prefixes.

    Each node receives a concept combo (or nothing), each edge an edge combo,
    and the root always carries ``Exemplar(x)``.  When ``mkb`` is given, a
    partial decoration whose answers already fall below the threshold is never
    extended.  Yields canonical queries, deduplicated.
    """
    nodes: list[tuple[int, Tree]] = []  # (parent slot, subtree), BFS order

    def walk(parent: int, t: Tree):
        my = len(nodes)
        nodes.append((parent, t))
        for child in t:
            walk(my, child)

    walk(-1, tree)
    var_names = [ANSWER_VAR] + [f"y{i}" for i in range(1, len(nodes))]
    combo_options: list[frozenset[str]] = [frozenset()] + [c.concepts for c in b_combos]
    seen: set[tuple] = set()

    def alive(atoms) -> bool:
        if mkb is None:
            return True
        q = InstanceQuery.make(atoms)
        return len(cert(q, mkb)) >= min_answer_set_size

    def place(slot: int, atoms: list):
        if slot == len(nodes):
            q = InstanceQuery.make(atoms)
            if q.body not in seen:
                seen.add(q.body)
                yield q
            return
        parent, _ = nodes[slot]
        edge_options = [None] if slot == 0 else f_combos
        for edge in edge_options:
            base = list(atoms)
            if edge is not None:
                base.extend(edge.atoms(var_names[parent], var_names[slot]))
            for combo in combo_options:
                attempt = base + [ConceptAtom(c, var_names[slot]) for c in sorted(combo)]
                if slot == 0:
                    attempt.append(ConceptAtom(EXEMPLAR, var_names[0]))
                if not alive(attempt):
                    continue
                yield from place(slot + 1, attempt)

    yield from place(0, [])


# ---------------------------------------------------------------------------
# Subtree variants (decorated trees with their extensions)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Subtree:
    combo: frozenset[str]
    branches: tuple[tuple[EdgeCombo, "_Subtree"], ...]

    def sort_key(self):
        return (
            tuple(sorted(self.combo)),
            tuple((e.directions, s.sort_key()) for e, s in self.branches),
        )


def _subtree_depth(sub: _Subtree) -> int:
    if not sub.branches:
        return 0
    return 1 + max(_subtree_depth(s) for _, s in sub.branches)


def _subtree_le(a: _Subtree, b: _Subtree, memo: dict) -> bool:
    """True when ``a`` embeds into ``b`` (so ``a`` is redundant next to ``b``)."""
    key = (a, b)
    if key in memo:
        return memo[key]
    ok = a.combo <= b.combo
    if ok:
        for ea, sa in a.branches:
            if not any(
                ea.atom_keys() <= eb.atom_keys() and _subtree_le(sa, sb, memo)
                for eb, sb in b.branches
            ):
                ok = False
                break
    memo[key] = ok
    return ok


def _antichain_multisets(n: int, le, max_size: int):
    """Index tuples (ascending) of pairwise incomparable items, sizes 1..max_size."""
    incomp = []
    for i in range(n):
        m = 0
        for j in range(n):
            if i != j and not le(i, j) and not le(j, i):
                m |= 1 << j
        incomp.append(m)

    def extend(chosen: tuple, candidates: int, lowest: int):
        c = candidates >> lowest << lowest
        while c:
            j = (c & -c).bit_length() - 1
            c &= c - 1
            combo = chosen + (j,)
            yield combo
            if len(combo) < max_size:
                yield from extend(combo, candidates & incomp[j], j + 1)

    for i in range(n):
        yield (i,)
        if max_size > 1:
            yield from extend((i,), incomp[i], i + 1)


def _build_variants(space: _Space, lattice, edge_pairs, depth: int, branching: int):
    """All decorated subtrees of depth <= ``depth`` with non-empty extension.

    Returns a list of (subtree, full-domain extension mask), deduplicated and
    deterministically ordered.
    """
    level: dict[_Subtree, int] = {}
    for combo, mask in [(frozenset(), space.full_all)] + list(lattice):
        level[_Subtree(combo, ())] = mask

    for _ in range(depth):
        subs = sorted(level.items(), key=lambda kv: kv[0].sort_key())
        branches: list[tuple[EdgeCombo, _Subtree, int]] = []
        for edge, _pairs in edge_pairs:
            keys = edge.atom_keys()
            for sub, ext in subs:
                sup = space.support(keys, ext)
                if sup:
                    branches.append((edge, sub, sup))
        memo: dict = {}

        def le(i: int, j: int) -> bool:
            ei, si, _ = branches[i]
            ej, sj, _ = branches[j]
            return ei.atom_keys() <= ej.atom_keys() and _subtree_le(si, sj, memo)

        nxt: dict[_Subtree, int] = dict(level)
        for combo, cmask in [(frozenset(), space.full_all)] + list(lattice):
            for idxs in _antichain_multisets(len(branches), le, branching):
                ext = cmask
                chosen = []
                for i in idxs:
                    ext &= branches[i][2]
                    if not ext:
                        break
                    chosen.append((branches[i][0], branches[i][1]))
                if not ext or len(chosen) < len(idxs):
                    continue
                sub = _Subtree(
                    combo,
                    tuple(sorted(chosen, key=lambda es: (es[0].directions, es[1].sort_key()))),
                )
                if sub not in nxt:
                    nxt[sub] = ext
        level = nxt
    return sorted(level.items(), key=lambda kv: kv[0].sort_key())


# ---------------------------------------------------------------------------
# Root assembly
# ---------------------------------------------------------------------------

_SCAN_STATE: dict = {}


def _scan_init(state: dict):
    _SCAN_STATE.update(state)


def _scan_task(args):
    """Enumerate root multisets with a fixed first branch; pure function of state."""
    wave, first = args
    st = _SCAN_STATE
    branch_masks: list[int] = st["branch_masks"]
    branch_depths: list[int] = st["branch_depths"]
    incomp: list[int] = st["incomp"]
    combos: list[int] = st["combo_masks"]
    min_size: int = st["min_size"]
    records: dict[int, list] = {}
    generated = 0

    def record(mask: int, chosen: tuple, max_depth: int):
        nonlocal generated
        if max_depth != wave:
            return
        for ci, cmask in enumerate(combos):
            m = mask & cmask
            generated += 1
            if m.bit_count() < min_size:
                continue
            key = (ci, chosen)
            entry = records.get(m)
            bits = 0
            for b in chosen:
                bits |= 1 << b
            if entry is None:
                records[m] = [1 << ci, bits, key]
            else:
                entry[0] |= 1 << ci
                entry[1] |= bits
                if key < entry[2]:
                    entry[2] = key

    if first < 0:
        record(st["en_all"], (), 0)
        return records, generated

    max_size = st["branching"]

    def extend(chosen: tuple, mask: int, candidates: int, lowest: int, max_depth: int):
        c = candidates >> lowest << lowest
        while c:
            j = (c & -c).bit_length() - 1
            c &= c - 1
            m = mask & branch_masks[j]
            if m.bit_count() < min_size:
                continue
            combo = chosen + (j,)
            d = max(max_depth, branch_depths[j])
            record(m, combo, d)
            if len(combo) < max_size:
                extend(combo, m, candidates & incomp[j], j + 1, d)

    m0 = st["en_all"] & branch_masks[first]
    if m0.bit_count() >= min_size:
        record(m0, (first,), branch_depths[first])
        if max_size > 1:
            extend((first,), m0, incomp[first], first + 1, branch_depths[first])
    return records, generated


def _merge_records(target: dict, source: dict):
    for mask, entry in source.items():
        existing = target.get(mask)
        if existing is None:
            target[mask] = list(entry)
        else:
            existing[0] |= entry[0]
            existing[1] |= entry[1]
            if entry[2] < existing[2]:
                existing[2] = entry[2]


# ---------------------------------------------------------------------------
# build_dag
# ---------------------------------------------------------------------------

def build_dag(mkb: MaterializedKB, config: BuilderConfig) -> QuerySpaceDAG:
    """Run the full search and return the query-space DAG.

    Requires ``mkb.chase_depth >= config.max_depth`` so that every candidate
    query can be answered exactly.
    """
    if mkb.chase_depth < config.max_depth:
        raise ValueError(
            f"materialization depth {mkb.chase_depth} is below max_depth {config.max_depth}"
        )
    space = _Space(mkb)
    lattice = _concept_lattice(space)
    edge_pairs = _edge_combos(mkb)

    variants = _build_variants(space, lattice, edge_pairs, max(config.max_depth - 1, 0), config.max_branching)

    # Root branches: an edge combo plus a subtree, scored over the exemplars.
    branches: list[tuple[EdgeCombo, _Subtree]] = []
    branch_masks: list[int] = []
    branch_depths: list[int] = []
    if config.max_depth > 0:
        for edge, _pairs in edge_pairs:
            keys = edge.atom_keys()
            for sub, ext in variants:
                sup = space.support(keys, ext)
                en = space.to_en_mask(sup)
                if en:
                    branches.append((edge, sub))
                    branch_masks.append(en)
                    branch_depths.append(1 + _subtree_depth(sub))

    memo: dict = {}

    def branch_le(i: int, j: int) -> bool:
        ei, si = branches[i]
        ej, sj = branches[j]
        return ei.atom_keys() <= ej.atom_keys() and _subtree_le(si, sj, memo)

    incomp = []
    for i in range(len(branches)):
        m = 0
        for j in range(len(branches)):
            if i != j and not branch_le(i, j) and not branch_le(j, i):
                m |= 1 << j
        incomp.append(m)

    combo_entries: list[tuple[frozenset[str], int]] = [(frozenset(), space.en_all)]
    for combo, mask in lattice:
        en = space.to_en_mask(mask)
        if en.bit_count() >= config.min_answer_set_size:
            combo_entries.append((combo, en))

    state = {
        "branch_masks": branch_masks,
        "branch_depths": branch_depths,
        "incomp": incomp,
        "combo_masks": [m for _, m in combo_entries],
        "min_size": config.min_answer_set_size,
        "en_all": space.en_all,
        "branching": config.max_branching,
    }

    records: dict[int, list] = {}
    generated = 0
    for wave in range(config.max_depth + 1):
        tasks = [(wave, -1)] if wave == 0 else [
            (wave, i) for i in range(len(branches)) if branch_depths[i] <= wave
        ]
        if config.workers > 1 and len(tasks) > 4:
            with Pool(config.workers, initializer=_scan_init, initargs=(state,)) as pool:
                results = pool.map(_scan_task, tasks, chunksize=max(1, len(tasks) // (config.workers * 8)))
        else:
            _scan_init(state)
            results = [_scan_task(t) for t in tasks]
        for recs, count in results:
            _merge_records(records, recs)
            generated += count
        if config.max_queries is not None and generated > config.max_queries:
            raise SearchBudgetError(wave - 1 if wave > 0 else -1, generated)

    if space.en_all not in records:
        records[space.en_all] = [1, 0, (0, ())]  # the bare Exemplar(x) query

    # -- node construction ---------------------------------------------------

    def emit_atoms(root_concepts: frozenset[str], chosen: list[tuple[EdgeCombo, _Subtree]]):
        atoms: list = [ConceptAtom(EXEMPLAR, ANSWER_VAR)]
        atoms.extend(ConceptAtom(c, ANSWER_VAR) for c in sorted(root_concepts))
        counter = itertools.count(1)

        def emit(parent_var: str, edge: EdgeCombo, sub: _Subtree):
            var = f"v{next(counter)}"
            atoms.extend(edge.atoms(parent_var, var))
            atoms.extend(ConceptAtom(c, var) for c in sorted(sub.combo))
            for e2, s2 in sub.branches:
                emit(var, e2, s2)

        for edge, sub in chosen:
            emit(ANSWER_VAR, edge, sub)
        return atoms

    def node_query(entry) -> InstanceQuery:
        combo_bits, branch_bits, order_key = entry
        deep = False
        if config.keep_most_specific:
            root_concepts: set[str] = set()
            ci = combo_bits
            idx = 0
            while ci:
                if ci & 1:
                    root_concepts |= combo_entries[idx][0]
                ci >>= 1
                idx += 1
            present = []
            j = branch_bits
            idx = 0
            while j:
                if j & 1:
                    present.append(idx)
                j >>= 1
                idx += 1
            kept = [
                i
                for i in present
                if not any(k != i and branch_le(i, k) for k in present)
            ]
            chosen = [branches[i] for i in kept]
            deep = any(branch_depths[i] > 1 for i in kept)
            atoms = emit_atoms(frozenset(root_concepts), chosen)
        else:
            ci, idxs = order_key
            chosen = [branches[i] for i in idxs]
            deep = any(branch_depths[i] > 1 for i in idxs)
            atoms = emit_atoms(combo_entries[ci][0], chosen)
        q = InstanceQuery.make(atoms)
        if config.condense_queries and deep:
            q = condense(q)
        return q

    ordered_masks = sorted(
        records, key=lambda m: (-m.bit_count(), tuple(sorted(space.en_names(m))))
    )
    nodes = tuple(
        DagNode(node_query(records[m]), space.en_names(m)) for m in ordered_masks
    )
    root = ordered_masks.index(space.en_all)
    edges = _hasse_edges(ordered_masks)
    return QuerySpaceDAG(nodes, tuple(edges), root)


def _hasse_edges(masks: list[int]) -> list[tuple[int, int]]:
    """Strict-containment edges, transitively reduced (child -> parent).

    Superset candidates for a node come from intersecting the inverted index
    of its few globally rarest exemplars, then filtering exactly; surviving
    supersets are reduced to the minimal ones.
    """
    n = len(masks)
    width = max((m.bit_length() for m in masks), default=0)
    containing = [0] * width  # exemplar bit -> node-id bitset
    for i, m in enumerate(masks):
        k = m
        while k:
            b = (k & -k).bit_length() - 1
            k &= k - 1
            containing[b] |= 1 << i
    counts = [c.bit_count() for c in containing]
    pops = [m.bit_count() for m in masks]
    all_nodes = (1 << n) - 1
    edges: list[tuple[int, int]] = []
    for i, m in enumerate(masks):
        if m == 0:
            cand = all_nodes & ~(1 << i)
        else:
            bits = []
            k = m
            while k:
                b = (k & -k).bit_length() - 1
                k &= k - 1
                bits.append(b)
            bits.sort(key=lambda b: counts[b])
            cand = containing[bits[0]]
            for b in bits[1:3]:
                cand &= containing[b]
            cand &= ~(1 << i)
        supersets = []
        c = cand
        while c:
            j = (c & -c).bit_length() - 1
            c &= c - 1
            if masks[j] & m == m and masks[j] != m:
                supersets.append(j)
        supersets.sort(key=lambda j: pops[j])
        kept: list[int] = []
        for j in supersets:
            mj = masks[j]
            if not any(masks[k2] & mj == masks[k2] for k2 in kept):
                kept.append(j)
        edges.extend((i, j) for j in kept)
    return sorted(edges)


def verify_dag(dag: QuerySpaceDAG, mkb: MaterializedKB) -> None:
    """Re-derive every invariant of the DAG; raises AssertionError on failure."""
    seen = set()
    for node in dag.nodes:
        assert node.answers not in seen, "duplicate answer set"
        seen.add(node.answers)
        assert cert(node.query, mkb) == node.answers, (
            f"stored answers diverge from cert for {node.query.text()}"
        )
    assert dag.nodes[dag.root].answers == mkb.exemplars, "root must answer all exemplars"
    for child, parent in dag.edges:
        a, b = dag.nodes[child].answers, dag.nodes[parent].answers
        assert a < b, "edge without strict containment"
    # transitive reduction: no edge implied by a two-step path
    parent_sets = {i: set(dag.parents(i)) for i in range(len(dag.nodes))}
    for child, parent in dag.edges:
        for mid in parent_sets[child]:
            if mid != parent and parent in parent_sets[mid]:
                raise AssertionError("edge is transitively implied")
