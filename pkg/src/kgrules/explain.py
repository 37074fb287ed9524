"""From a query-space DAG and classifier labels to scored explanation rules.

A rule ``Exemplar(x), c1, ..., cn -> C(x)`` is correct when every certain
answer of its body query is labelled ``C``; correctness, recall and precision
are all computed from answer sets against the pos-set of the class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .dag import QuerySpaceDAG
from .kb import EXEMPLAR, KnowledgeBase, validate
from .queries import ConceptAtom, InstanceQuery
from .reasoner import MaterializedKB, cert


class UnknownClassError(ValueError):
    pass


@dataclass(frozen=True)
class ExplanationDataset:
    """Exemplars, their semantic descriptions, and the classifier's labels."""

    kb: KnowledgeBase
    labels: dict[str, str]
    class_labels: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "class_labels", frozenset(self.class_labels))
        missing = sorted(self.kb.exemplars - set(self.labels))
        if missing:
            raise ValueError(f"exemplars without a label: {', '.join(missing)}")
        stray = sorted(set(self.labels) - self.kb.exemplars)
        if stray:
            raise ValueError(f"labels for unknown exemplars: {', '.join(stray)}")
        bad = sorted(set(self.labels.values()) - self.class_labels)
        if bad:
            raise ValueError(f"labels outside the class set: {', '.join(bad)}")
        clashes = validate(self.kb, self.class_labels)
        clashes = [v for v in clashes if "class label" in v]
        if clashes:
            raise ValueError("; ".join(clashes))


@dataclass(frozen=True)
class RuleMetrics:
    correct: bool
    recall: float
    precision: float
    support: int
    length: int


@dataclass(frozen=True)
class ExplanationRule:
    head_class: str
    body: InstanceQuery
    metrics: RuleMetrics

    def text(self) -> str:
        return f"{self.body.body_text()} -> {self.head_class}({self.body.answer_var})"

    def compact_text(self, elide_role: str = "contains") -> str:
        """Display form that drops Exemplar(x) and bare scene-linking atoms."""
        kept = []
        for atom in self.body.body:
            if isinstance(atom, ConceptAtom) and atom.concept == EXEMPLAR:
                continue
            if (
                not isinstance(atom, ConceptAtom)
                and atom.role == elide_role
                and atom.subject == self.body.answer_var
            ):
                continue
            kept.append(atom.render())
        body = ", ".join(kept) if kept else EXEMPLAR + "(x)"
        return f"{body} -> {self.head_class}({self.body.answer_var})"


@dataclass
class RuleSetReport:
    rules: list[ExplanationRule]
    fidelity: float
    rule_count: int
    avg_length: float

    def to_json_dict(self) -> dict:
        return {
            "rules": [
                {
                    "class": r.head_class,
                    "body_text": r.body.body_text(),
                    "correct": r.metrics.correct,
                    "recall": r.metrics.recall,
                    "precision": r.metrics.precision,
                    "support": r.metrics.support,
                    "length": r.metrics.length,
                }
                for r in self.rules
            ],
            "fidelity": self.fidelity,
            "rule_count": self.rule_count,
            "avg_length": self.avg_length,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"

    def to_text(self) -> str:
        lines = []
        for r in self.rules:
            flag = "correct" if r.metrics.correct else "incorrect"
            lines.append(
                f"{r.text()}   [{flag}, recall={r.metrics.recall:.4f}, "
                f"precision={r.metrics.precision:.4f}, support={r.metrics.support}]"
            )
        lines.append(
            f"fidelity={self.fidelity:.4f} rules={self.rule_count} "
            f"avg_length={self.avg_length:.2f}"
        )
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Pos-sets and correctness
# ---------------------------------------------------------------------------

def pos_set(ds: ExplanationDataset, class_label: str) -> frozenset[str]:
    """Exemplars the classifier put into ``class_label``."""
    if class_label not in ds.class_labels:
        raise UnknownClassError(f"unknown class label '{class_label}'")
    return frozenset(a for a, c in ds.labels.items() if c == class_label)


def is_correct(
    q: InstanceQuery, ds: ExplanationDataset, mkb: MaterializedKB, class_label: str
) -> bool:
    """True when every certain answer of ``q`` is labelled ``class_label``."""
    return cert(q, mkb) <= pos_set(ds, class_label)


def _rule_for(node_query: InstanceQuery, answers: frozenset[str], pos: frozenset[str], c: str) -> ExplanationRule:
    support = len(answers)
    hits = len(answers & pos)
    recall = hits / len(pos) if pos else 0.0
    precision = hits / support if support else 1.0
    length = sum(
        1
        for a in node_query.body
        if not (isinstance(a, ConceptAtom) and a.concept == EXEMPLAR)
    )
    metrics = RuleMetrics(
        correct=answers <= pos,
        recall=recall,
        precision=precision,
        support=support,
        length=length,
    )
    return ExplanationRule(c, node_query, metrics)


def extract_rules(
    dag: QuerySpaceDAG,
    ds: ExplanationDataset,
    class_label: str,
    mode: str = "all_correct",
    include_vacuous: bool = False,
) -> list[ExplanationRule]:
    """Read explanation rules for one class off the DAG.

    ``exact`` returns the rules whose answer set equals the pos-set (recall 1).
    ``max_recall`` returns the correct rules of greatest recall, shortest-body
    first on ties.  ``all_correct`` returns every correct rule.  Rules with an
    empty answer set are vacuously correct and skipped unless
    ``include_vacuous`` is set.
    """
    if mode not in ("all_correct", "max_recall", "exact"):
        raise ValueError(f"unknown extraction mode '{mode}'")
    pos = pos_set(ds, class_label)
    correct_nodes = [
        node
        for node in dag.nodes
        if node.answers <= pos and (node.answers or include_vacuous)
    ]
    rules = [_rule_for(n.query, n.answers, pos, class_label) for n in correct_nodes]
    rules.sort(key=lambda r: (-r.metrics.recall, r.metrics.length, r.text()))
    if mode == "exact":
        return [r for r in rules if r.metrics.support == len(pos) and pos]
    if mode == "max_recall":
        if not rules:
            return []
        best = rules[0].metrics.recall
        shortlist = [r for r in rules if r.metrics.recall == best]
        min_len = min(r.metrics.length for r in shortlist)
        return [r for r in shortlist if r.metrics.length == min_len]
    return rules


def greedy_cover(
    rules: list[ExplanationRule], ds: ExplanationDataset, mkb: MaterializedKB
) -> list[ExplanationRule]:
    """Pick a small rule subset that still covers every covered exemplar.

    Rules are taken in quality order (recall, then brevity); a rule enters the
    cover only if it reaches an exemplar no earlier pick reached.
    """
    ordered = sorted(rules, key=lambda r: (-r.metrics.recall, r.metrics.length, r.text()))
    covered: set[str] = set()
    chosen: list[ExplanationRule] = []
    total = set().union(*(cert(r.body, mkb) for r in rules)) if rules else set()
    for rule in ordered:
        answers = cert(rule.body, mkb)
        if answers - covered:
            chosen.append(rule)
            covered |= answers
        if covered == total:
            break
    return chosen


# ---------------------------------------------------------------------------
# Fidelity
# ---------------------------------------------------------------------------

def evaluate_fidelity(
    rules: list[ExplanationRule],
    ds_test: ExplanationDataset,
    mkb_test: MaterializedKB,
) -> RuleSetReport:
    """Score a rule set against labels on (possibly held-out) exemplars.

    Each exemplar is predicted by the matching rule of highest recall; an
    exemplar no rule matches counts as a disagreement.
    """
    ranked = sorted(rules, key=lambda r: (-r.metrics.recall, r.metrics.length, r.text()))
    answer_cache = [cert(r.body, mkb_test) for r in ranked]
    agreements = 0
    for exemplar in sorted(ds_test.kb.exemplars):
        predicted = None
        for rule, answers in zip(ranked, answer_cache):
            if exemplar in answers:
                predicted = rule.head_class
                break
        if predicted is not None and predicted == ds_test.labels[exemplar]:
            agreements += 1
    total = len(ds_test.kb.exemplars)
    fidelity = agreements / total if total else 0.0
    avg_length = (
        sum(r.metrics.length for r in rules) / len(rules) if rules else 0.0
    )
    return RuleSetReport(
        rules=list(rules),
        fidelity=fidelity,
        rule_count=len(rules),
        avg_length=avg_length,
    )


# ---------------------------------------------------------------------------
# Labels file
# ---------------------------------------------------------------------------

def labels_to_json(ds: ExplanationDataset) -> str:
    return json.dumps(
        {
            "classes": sorted(ds.class_labels),
            "labels": {a: ds.labels[a] for a in sorted(ds.labels)},
        },
        indent=2,
    ) + "\n"


def labels_from_json(text: str, kb: KnowledgeBase) -> ExplanationDataset:
    data = json.loads(text)
    classes = frozenset(data["classes"])
    labels = dict(data["labels"])
    return ExplanationDataset(kb, labels, classes)


def report_rules_from_json(text: str) -> list[ExplanationRule]:
    """Rebuild rules from a report written by :class:`RuleSetReport`."""
    data = json.loads(text)
    rules = []
    for row in data["rules"]:
        body = InstanceQuery.parse(row["body_text"])
        metrics = RuleMetrics(
            correct=row["correct"],
            recall=row["recall"],
            precision=row["precision"],
            support=row["support"],
            length=row["length"],
        )
        rules.append(ExplanationRule(row["class"], body, metrics))
    return rules
