"""Knowledge bases: vocabularies, axioms, assertions, and a line-based text format.

A knowledge base couples a vocabulary (concept, role and individual names), a
TBox restricted to the inclusion shapes below, and an ABox of concept and role
assertions.  The reserved concept ``Exemplar`` marks the individuals that stand
for items fed to a classifier; it may appear in assertions but never inside an
axiom.

Accepted axiom shapes (``C``, ``D``, ``A`` atomic concepts, ``r``, ``s`` roles)::

    C sub D
    C sub some r top            C sub some inv r top
    some r A sub D              some inv r A sub D      (A may be "top")
    some r A sub some s top     (existential on both sides)
    r sub s                     (role inclusion, "raxiom" statement)
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

EXEMPLAR = "Exemplar"

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.-]*\Z")

# Keywords of the axiom grammar; allowing them as names would make lines ambiguous.
RESERVED_WORDS = frozenset({"top", "some", "inv", "sub"})


class KBFormatError(ValueError):
    """Raised on malformed KB text or on structural violations at parse time."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# ---------------------------------------------------------------------------
# Concept expressions and axioms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConceptExpr:
    """An atomic concept or an existential restriction ``some [inv] r A``.

    ``name`` is set for atomic concepts.  For restrictions, ``role`` is set,
    ``inverse`` flags the inverted role, and ``filler`` is an atomic concept
    name or ``None`` for top.
    """

    name: str | None = None
    role: str | None = None
    inverse: bool = False
    filler: str | None = None

    @classmethod
    def atomic(cls, name: str) -> ConceptExpr:
        return cls(name=name)

    @classmethod
    def some(cls, role: str, inverse: bool = False, filler: str | None = None) -> ConceptExpr:
        return cls(role=role, inverse=inverse, filler=filler)

    @property
    def is_atomic(self) -> bool:
        return self.name is not None

    def render(self) -> str:
        if self.is_atomic:
            return str(self.name)
        inv = "inv " if self.inverse else ""
        filler = self.filler if self.filler is not None else "top"
        return f"some {inv}{self.role} {filler}"


@dataclass(frozen=True)
class ConceptInclusion:
    lhs: ConceptExpr
    rhs: ConceptExpr

    def render(self) -> str:
        return f"axiom {self.lhs.render()} sub {self.rhs.render()}"


@dataclass(frozen=True)
class RoleInclusion:
    sub: str
    sup: str

    def render(self) -> str:
        return f"raxiom {self.sub} sub {self.sup}"


Axiom = ConceptInclusion | RoleInclusion


def axiom_shape_violations(axiom: Axiom) -> list[str]:
    """Check one axiom against the inclusion grammar and the Exemplar ban."""
    problems: list[str] = []
    if isinstance(axiom, RoleInclusion):
        return problems
    lhs, rhs = axiom.lhs, axiom.rhs
    if not lhs.is_atomic and lhs.role is None:
        problems.append(f"malformed left-hand side in '{axiom.render()}'")
    if rhs.is_atomic:
        pass
    elif rhs.role is not None:
        if rhs.filler is not None:
            problems.append(
                f"existential right-hand side must have top filler in '{axiom.render()}'"
            )
    else:
        problems.append(f"malformed right-hand side in '{axiom.render()}'")
    for name in _axiom_concept_names(axiom):
        if name == EXEMPLAR:
            problems.append(f"reserved concept '{EXEMPLAR}' appears in '{axiom.render()}'")
    return problems


def _axiom_concept_names(axiom: Axiom) -> set[str]:
    if isinstance(axiom, RoleInclusion):
        return set()
    names = set()
    for expr in (axiom.lhs, axiom.rhs):
        if expr.name is not None:
            names.add(expr.name)
        if expr.filler is not None:
            names.add(expr.filler)
    return names


def _axiom_role_names(axiom: Axiom) -> set[str]:
    if isinstance(axiom, RoleInclusion):
        return {axiom.sub, axiom.sup}
    names = set()
    for expr in (axiom.lhs, axiom.rhs):
        if expr.role is not None:
            names.add(expr.role)
    return names


# ---------------------------------------------------------------------------
# Assertions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConceptAssertion:
    concept: str
    individual: str

    def render(self) -> str:
        if self.concept == EXEMPLAR:
            return f"exemplar {self.individual}"
        return f"concept {self.concept} {self.individual}"


@dataclass(frozen=True)
class RoleAssertion:
    role: str
    subject: str
    target: str

    def render(self) -> str:
        return f"role {self.role} {self.subject} {self.target}"


Assertion = ConceptAssertion | RoleAssertion


# ---------------------------------------------------------------------------
# Vocabulary and knowledge base
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Vocabulary:
    """Mutually disjoint sets of concept, role and individual names."""

    concept_names: frozenset[str]
    role_names: frozenset[str]
    individual_names: frozenset[str]

    def __post_init__(self):
        if self.concept_names & self.role_names:
            raise KBFormatError(
                "names used both as concept and role: "
                + ", ".join(sorted(self.concept_names & self.role_names))
            )
        if self.concept_names & self.individual_names:
            raise KBFormatError(
                "names used both as concept and individual: "
                + ", ".join(sorted(self.concept_names & self.individual_names))
            )
        if self.role_names & self.individual_names:
            raise KBFormatError(
                "names used both as role and individual: "
                + ", ".join(sorted(self.role_names & self.individual_names))
            )
        if EXEMPLAR not in self.concept_names:
            object.__setattr__(
                self, "concept_names", self.concept_names | {EXEMPLAR}
            )


@dataclass(frozen=True)
class KnowledgeBase:
    """Immutable vocabulary + TBox + ABox.

    ``exemplars`` is derived: it is exactly the set of individuals with an
    ``Exemplar`` assertion.  The TBox is stored sorted so that equal bases
    compare equal regardless of statement order.
    """

    vocabulary: Vocabulary
    tbox: tuple[Axiom, ...]
    abox: frozenset[Assertion]
    exemplars: frozenset[str] = field(default=frozenset())

    def __post_init__(self):
        ordered = tuple(sorted(set(self.tbox), key=lambda ax: ax.render()))
        object.__setattr__(self, "tbox", ordered)
        derived = frozenset(
            a.individual
            for a in self.abox
            if isinstance(a, ConceptAssertion) and a.concept == EXEMPLAR
        )
        object.__setattr__(self, "exemplars", derived)

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_parts(
        cls,
        tbox: list[Axiom] | tuple[Axiom, ...] = (),
        abox: set[Assertion] | frozenset[Assertion] = frozenset(),
        exemplars: set[str] | frozenset[str] = frozenset(),
    ) -> KnowledgeBase:
        """Build a KB, inferring the vocabulary from usage.

        ``exemplars`` is a convenience: listed individuals get an ``Exemplar``
        assertion added.
        """
        abox = set(abox)
        for a in exemplars:
            abox.add(ConceptAssertion(EXEMPLAR, a))
        concepts, roles, individuals = {EXEMPLAR}, set(), set()
        for ax in tbox:
            concepts |= _axiom_concept_names(ax)
            roles |= _axiom_role_names(ax)
        for st in abox:
            if isinstance(st, ConceptAssertion):
                concepts.add(st.concept)
                individuals.add(st.individual)
            else:
                roles.add(st.role)
                individuals.add(st.subject)
                individuals.add(st.target)
        vocab = Vocabulary(frozenset(concepts), frozenset(roles), frozenset(individuals))
        return cls(vocab, tuple(tbox), frozenset(abox))

    # -- views ---------------------------------------------------------------

    def concept_assertions(self) -> list[ConceptAssertion]:
        return sorted(
            (a for a in self.abox if isinstance(a, ConceptAssertion)),
            key=lambda a: (a.concept, a.individual),
        )

    def role_assertions(self) -> list[RoleAssertion]:
        return sorted(
            (a for a in self.abox if isinstance(a, RoleAssertion)),
            key=lambda a: (a.role, a.subject, a.target),
        )


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _check_name(token: str, line: int) -> str:
    if token in RESERVED_WORDS:
        raise KBFormatError(f"reserved word '{token}' used as a name", line)
    if not IDENT_RE.match(token):
        raise KBFormatError(f"invalid identifier '{token}'", line)
    return token


def _parse_concept_expr(tokens: list[str], line: int, side: str) -> tuple[ConceptExpr, list[str]]:
    """Consume one concept expression from the front of ``tokens``."""
    if not tokens:
        raise KBFormatError(f"missing {side} concept expression", line)
    if tokens[0] != "some":
        return ConceptExpr.atomic(_check_name(tokens[0], line)), tokens[1:]
    tokens = tokens[1:]
    inverse = False
    if tokens and tokens[0] == "inv":
        inverse = True
        tokens = tokens[1:]
    if len(tokens) < 2:
        raise KBFormatError(f"incomplete existential on {side} side", line)
    role = _check_name(tokens[0], line)
    filler_tok = tokens[1]
    filler = None if filler_tok == "top" else _check_name(filler_tok, line)
    return ConceptExpr.some(role, inverse=inverse, filler=filler), tokens[2:]


def _parse_axiom_line(tokens: list[str], line: int) -> ConceptInclusion:
    lhs, rest = _parse_concept_expr(tokens, line, "left")
    if not rest or rest[0] != "sub":
        raise KBFormatError("expected 'sub' in axiom", line)
    rhs, rest = _parse_concept_expr(rest[1:], line, "right")
    if rest:
        raise KBFormatError(f"trailing tokens {' '.join(rest)!r} in axiom", line)
    axiom = ConceptInclusion(lhs, rhs)
    problems = axiom_shape_violations(axiom)
    if problems:
        raise KBFormatError(problems[0], line)
    return axiom


def parse_kb(text: str) -> KnowledgeBase:
    """Parse the line-based KB format.

    Statements: ``concept C a``, ``role r a b``, ``exemplar a``, ``axiom ...``,
    ``raxiom r sub s``, ``declare concept|role|individual NAME``.  ``#`` starts
    a comment.  When any ``declare`` line is present the vocabulary is fixed to
    the declared names (strict mode); otherwise it is inferred from usage.
    """
    tbox: list[Axiom] = []
    abox: set[Assertion] = set()
    declared: dict[str, set[str]] = {"concept": set(), "role": set(), "individual": set()}
    strict = False
    first_use: dict[str, int] = {}

    concepts_used: dict[str, int] = {}
    roles_used: dict[str, int] = {}
    individuals_used: dict[str, int] = {}

    def note(table: dict[str, int], name: str, line: int):
        table.setdefault(name, line)
        first_use.setdefault(name, line)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        stmt = raw.split("#", 1)[0].strip()
        if not stmt:
            continue
        tokens = stmt.split()
        kind, args = tokens[0], tokens[1:]
        if kind == "concept":
            if len(args) != 2:
                raise KBFormatError("expected 'concept NAME INDIVIDUAL'", lineno)
            c, a = _check_name(args[0], lineno), _check_name(args[1], lineno)
            abox.add(ConceptAssertion(c, a))
            note(concepts_used, c, lineno)
            note(individuals_used, a, lineno)
        elif kind == "role":
            if len(args) != 3:
                raise KBFormatError("expected 'role NAME SUBJECT OBJECT'", lineno)
            r = _check_name(args[0], lineno)
            s, o = _check_name(args[1], lineno), _check_name(args[2], lineno)
            abox.add(RoleAssertion(r, s, o))
            note(roles_used, r, lineno)
            note(individuals_used, s, lineno)
            note(individuals_used, o, lineno)
        elif kind == "exemplar":
            if len(args) != 1:
                raise KBFormatError("expected 'exemplar INDIVIDUAL'", lineno)
            a = _check_name(args[0], lineno)
            abox.add(ConceptAssertion(EXEMPLAR, a))
            note(individuals_used, a, lineno)
        elif kind == "axiom":
            axiom = _parse_axiom_line(args, lineno)
            tbox.append(axiom)
            for n in _axiom_concept_names(axiom):
                note(concepts_used, n, lineno)
            for n in _axiom_role_names(axiom):
                note(roles_used, n, lineno)
        elif kind == "raxiom":
            if len(args) != 3 or args[1] != "sub":
                raise KBFormatError("expected 'raxiom ROLE sub ROLE'", lineno)
            sub, sup = _check_name(args[0], lineno), _check_name(args[2], lineno)
            tbox.append(RoleInclusion(sub, sup))
            note(roles_used, sub, lineno)
            note(roles_used, sup, lineno)
        elif kind == "declare":
            if len(args) != 2 or args[0] not in declared:
                raise KBFormatError(
                    "expected 'declare concept|role|individual NAME'", lineno
                )
            strict = True
            declared[args[0]].add(_check_name(args[1], lineno))
        else:
            raise KBFormatError(f"unknown statement '{kind}'", lineno)

    # Disjointness across the three inferred categories, with line context.
    for name in sorted(set(concepts_used) & set(roles_used)):
        raise KBFormatError(
            f"'{name}' used both as concept and role",
            max(concepts_used[name], roles_used[name]),
        )
    for name in sorted(set(concepts_used) & set(individuals_used)):
        raise KBFormatError(
            f"'{name}' used both as concept and individual",
            max(concepts_used[name], individuals_used[name]),
        )
    for name in sorted(set(roles_used) & set(individuals_used)):
        raise KBFormatError(
            f"'{name}' used both as role and individual",
            max(roles_used[name], individuals_used[name]),
        )

    if strict:
        for used, category in (
            (concepts_used, "concept"),
            (roles_used, "role"),
            (individuals_used, "individual"),
        ):
            for name in sorted(set(used) - declared[category] - {EXEMPLAR}):
                raise KBFormatError(
                    f"undeclared {category} '{name}' (strict mode)", used[name]
                )
        vocab = Vocabulary(
            frozenset(declared["concept"]) | {EXEMPLAR},
            frozenset(declared["role"]),
            frozenset(declared["individual"]),
        )
        return KnowledgeBase(vocab, tuple(tbox), frozenset(abox))
    return KnowledgeBase.from_parts(tbox, abox)


def serialize(kb: KnowledgeBase) -> str:
    """Render a KB back to the text format, in a fixed statement order."""
    lines: list[str] = []
    declared_individuals = kb.vocabulary.individual_names - {
        a.individual for a in kb.abox if isinstance(a, ConceptAssertion)
    } - {
        n for a in kb.abox if isinstance(a, RoleAssertion) for n in (a.subject, a.target)
    }
    # Names present only in the vocabulary must be preserved explicitly.
    used_concepts = {a.concept for a in kb.abox if isinstance(a, ConceptAssertion)}
    used_roles = {a.role for a in kb.abox if isinstance(a, RoleAssertion)}
    for ax in kb.tbox:
        used_concepts |= _axiom_concept_names(ax)
        used_roles |= _axiom_role_names(ax)
    for name in sorted(kb.vocabulary.concept_names - used_concepts - {EXEMPLAR}):
        lines.append(f"declare concept {name}")
    for name in sorted(kb.vocabulary.role_names - used_roles):
        lines.append(f"declare role {name}")
    for name in sorted(declared_individuals):
        lines.append(f"declare individual {name}")
    if lines:
        # Entering strict mode requires every used name to be declared too.
        for name in sorted(used_concepts - {EXEMPLAR}):
            lines.append(f"declare concept {name}")
        for name in sorted(used_roles):
            lines.append(f"declare role {name}")
        for name in sorted(kb.vocabulary.individual_names - declared_individuals):
            lines.append(f"declare individual {name}")
        lines.sort()
    for ax in kb.tbox:
        lines.append(ax.render())
    for a in sorted(kb.exemplars):
        lines.append(f"exemplar {a}")
    for ca in kb.concept_assertions():
        if ca.concept != EXEMPLAR:
            lines.append(ca.render())
    for ra in kb.role_assertions():
        lines.append(ra.render())
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# Validation against the structural constraints
# ---------------------------------------------------------------------------

def validate(kb: KnowledgeBase, class_labels: set[str] | frozenset[str] = frozenset()) -> list[str]:
    """Return all structural violations of ``kb`` w.r.t. a set of class labels.

    An empty list means the base is well formed: the vocabulary is disjoint,
    every name resolves, axioms follow the inclusion grammar, ``Exemplar``
    assertions and the exemplar set coincide, and no class label leaks into
    the base.
    """
    violations: list[str] = []
    vocab = kb.vocabulary

    for ax in kb.tbox:
        violations.extend(axiom_shape_violations(ax))
        for n in _axiom_concept_names(ax):
            if n not in vocab.concept_names:
                violations.append(f"unknown concept '{n}' in '{ax.render()}'")
        for n in _axiom_role_names(ax):
            if n not in vocab.role_names:
                violations.append(f"unknown role '{n}' in '{ax.render()}'")

    for st in kb.abox:
        if isinstance(st, ConceptAssertion):
            if st.concept not in vocab.concept_names:
                violations.append(f"unknown concept '{st.concept}' in assertion")
            if st.individual not in vocab.individual_names:
                violations.append(f"unknown individual '{st.individual}' in assertion")
        else:
            if st.role not in vocab.role_names:
                violations.append(f"unknown role '{st.role}' in assertion")
            for n in (st.subject, st.target):
                if n not in vocab.individual_names:
                    violations.append(f"unknown individual '{n}' in assertion")

    asserted = {
        a.individual
        for a in kb.abox
        if isinstance(a, ConceptAssertion) and a.concept == EXEMPLAR
    }
    if asserted != kb.exemplars:
        violations.append("exemplar set does not match Exemplar assertions")

    labels = frozenset(class_labels)
    vocab_all = vocab.concept_names | vocab.role_names | vocab.individual_names
    for label in sorted(labels & vocab_all):
        violations.append(f"class label '{label}' appears in the knowledge base")
    return violations
