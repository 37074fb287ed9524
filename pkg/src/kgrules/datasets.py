"""Desk-scale synthetic datasets: tabular rows, attribute scenes, a tiny hierarchy.

Three generators feed the experiments end to end:

* ``tabular_to_kb`` encodes categorical rows as a role-free ABox with one
  concept per feature=value pair;
* ``generate_scenes`` builds attribute scenes (images containing objects with
  a colour, size, shape and material) whose classes are defined by ground
  truth rules, optionally confounded on the training split;
* ``hierarchy_scene_kb`` is a hand-sized scene-graph base with a concept
  hierarchy in the TBox, where only superclass rules cover all cases.

Everything is a pure function of its arguments and a seed.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from random import Random

from .explain import ExplanationDataset
from .kb import (
    EXEMPLAR,
    ConceptAssertion,
    ConceptExpr,
    ConceptInclusion,
    KnowledgeBase,
    RoleAssertion,
)
from .queries import ConceptAtom, InstanceQuery, RoleAtom
from .reasoner import MaterializedKB, cert


class UnsatisfiableSpecError(ValueError):
    """A class definition and a bias injection demand conflicting attributes."""


# ---------------------------------------------------------------------------
# Tabular pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TabularSchema:
    """Ordered categorical features with finite value domains."""

    features: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        for name, values in self.features:
            if not values:
                raise ValueError(f"feature '{name}' has an empty domain")

    @property
    def concept_names(self) -> list[str]:
        return [f"{name}_{v}" for name, values in self.features for v in values]


def tabular_to_kb(schema: TabularSchema, rows: list[tuple[str, ...]]) -> KnowledgeBase:
    """One exemplar per row, one concept assertion per cell; no TBox, no roles."""
    abox: set = set()
    for i, row in enumerate(rows):
        if len(row) != len(schema.features):
            raise ValueError(f"row {i} has {len(row)} cells, expected {len(schema.features)}")
        individual = f"r{i}"
        abox.add(ConceptAssertion(EXEMPLAR, individual))
        for (feature, domain), value in zip(schema.features, row):
            if value not in domain:
                raise ValueError(
                    f"row {i}: value '{value}' outside the domain of '{feature}'"
                )
            abox.add(ConceptAssertion(f"{feature}_{value}", individual))
    kb = KnowledgeBase.from_parts((), abox)
    if not rows:
        # keep the declared concepts even with no data
        from .kb import Vocabulary

        vocab = Vocabulary(
            frozenset(schema.concept_names) | {EXEMPLAR}, frozenset(), frozenset()
        )
        kb = KnowledgeBase(vocab, (), frozenset())
    return kb


def read_tabular_csv(text: str) -> tuple[TabularSchema, list[tuple[str, ...]]]:
    """CSV with a header row of feature names; domains inferred from the data."""
    reader = csv.reader(io.StringIO(text))
    table = [row for row in reader if row]
    if not table:
        raise ValueError("empty CSV input")
    header, data = table[0], table[1:]
    domains: list[set[str]] = [set() for _ in header]
    for row in data:
        if len(row) != len(header):
            raise ValueError("ragged CSV row")
        for i, v in enumerate(row):
            domains[i].add(v.strip())
    schema = TabularSchema(
        tuple(
            (name.strip(), tuple(sorted(domains[i])))
            for i, name in enumerate(header)
        )
    )
    return schema, [tuple(v.strip() for v in row) for row in data]


def random_rows(schema: TabularSchema, n: int, seed: int) -> list[tuple[str, ...]]:
    rng = Random(seed)
    return [
        tuple(rng.choice(values) for _, values in schema.features) for _ in range(n)
    ]


# ---------------------------------------------------------------------------
# Oracle classifiers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleClassifier:
    """An ordered rule list standing in for a trained classifier."""

    rules: tuple[tuple[str, InstanceQuery], ...]
    default: str

    @property
    def class_labels(self) -> frozenset[str]:
        return frozenset(label for label, _ in self.rules) | {self.default}


def oracle_labels(
    kb: KnowledgeBase, oracle: OracleClassifier, mkb: MaterializedKB
) -> dict[str, str]:
    """First matching rule wins; the default class catches the rest."""
    labels: dict[str, str] = {}
    answer_sets = [(label, cert(q, mkb)) for label, q in oracle.rules]
    for exemplar in sorted(kb.exemplars):
        labels[exemplar] = oracle.default
        for label, answers in answer_sets:
            if exemplar in answers:
                labels[exemplar] = label
                break
    return labels


# ---------------------------------------------------------------------------
# Attribute scenes
# ---------------------------------------------------------------------------

CLEVR_COLORS = ("Blue", "Brown", "Cyan", "Gray", "Green", "Purple", "Red", "Yellow")
CLEVR_SIZES = ("Large", "Small")
CLEVR_SHAPES = ("Cube", "Cylinder", "Sphere")
CLEVR_MATERIALS = ("Metal", "Rubber")

DEFAULT_FAMILIES: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("color", CLEVR_COLORS),
    ("size", CLEVR_SIZES),
    ("shape", CLEVR_SHAPES),
    ("material", CLEVR_MATERIALS),
)


@dataclass(frozen=True)
class ClassRule:
    """Ground truth for one class: each entry is one required object's attributes."""

    label: str
    objects: tuple[frozenset[str], ...]

    def query(self, role: str = "contains") -> InstanceQuery:
        atoms: list = [ConceptAtom(EXEMPLAR, "x")]
        for i, attrs in enumerate(self.objects, start=1):
            var = f"y{i}"
            atoms.append(RoleAtom(role, "x", var))
            atoms.extend(ConceptAtom(a, var) for a in sorted(attrs))
        return InstanceQuery.make(atoms)


@dataclass(frozen=True)
class BiasInjection:
    """Extra attributes forced on one required object, train split only."""

    class_label: str
    target: frozenset[str]
    extra: frozenset[str]


@dataclass(frozen=True)
class SceneSpec:
    min_objects: int
    max_objects: int
    families: tuple[tuple[str, tuple[str, ...]], ...]
    classes: tuple[ClassRule, ...]
    biases: tuple[BiasInjection, ...] = ()
    role: str = "contains"

    def family_of(self, value: str) -> str:
        for family, values in self.families:
            if value in values:
                return family
        raise ValueError(f"attribute '{value}' belongs to no family")


def clevr_hans_spec(min_objects: int = 2, max_objects: int = 4) -> SceneSpec:
    """Three classes over CLEVR attribute domains, gray-cube bias on class 1."""
    classes = (
        ClassRule(
            "Class_1",
            (frozenset({"Large", "Cube"}), frozenset({"Large", "Cylinder"})),
        ),
        ClassRule(
            "Class_2",
            (frozenset({"Small", "Metal", "Cube"}), frozenset({"Small", "Sphere"})),
        ),
        ClassRule(
            "Class_3",
            (
                frozenset({"Large", "Blue", "Sphere"}),
                frozenset({"Small", "Yellow", "Sphere"}),
            ),
        ),
    )
    biases = (
        BiasInjection("Class_1", frozenset({"Large", "Cube"}), frozenset({"Gray"})),
    )
    return SceneSpec(min_objects, max_objects, DEFAULT_FAMILIES, classes, biases)


def _check_spec(spec: SceneSpec):
    for bias in spec.biases:
        rule = next((c for c in spec.classes if c.label == bias.class_label), None)
        if rule is None:
            raise UnsatisfiableSpecError(f"bias targets unknown class '{bias.class_label}'")
        target = next((o for o in rule.objects if bias.target <= o), None)
        if target is None:
            raise UnsatisfiableSpecError(
                f"bias target {sorted(bias.target)} matches no required object of "
                f"'{bias.class_label}'"
            )
        merged = target | bias.extra
        by_family: dict[str, set[str]] = {}
        for attr in merged:
            by_family.setdefault(spec.family_of(attr), set()).add(attr)
        for family, values in by_family.items():
            if len(values) > 1:
                raise UnsatisfiableSpecError(
                    f"bias on '{bias.class_label}' forces conflicting {family} "
                    f"values {sorted(values)}"
                )
    if max(len(c.objects) for c in spec.classes) > spec.max_objects:
        raise UnsatisfiableSpecError("max_objects below a class's required object count")


def _object_attrs(spec: SceneSpec, rng: Random, fixed: frozenset[str]) -> frozenset[str]:
    attrs = set(fixed)
    present = {spec.family_of(a) for a in fixed}
    for family, values in spec.families:
        if family not in present:
            attrs.add(rng.choice(values))
    return frozenset(attrs)


def _scene_matches(rule: ClassRule, objects: list[frozenset[str]]) -> bool:
    return all(any(req <= obj for obj in objects) for req in rule.objects)


def generate_scenes(
    spec: SceneSpec, n: int, split: str = "train", seed: int = 0
) -> tuple[KnowledgeBase, ExplanationDataset]:
    """Generate ``n`` labelled scene exemplars, deterministic in ``seed``.

    Scenes are assigned classes round-robin; each scene embeds its class's
    required objects (with bias attributes added on the train split) plus
    random padding objects, and is resampled if any other class definition
    accidentally matches, so the class patterns stay mutually exclusive.
    """
    if n < 1:
        raise ValueError("need at least one scene")
    if split not in ("train", "test"):
        raise ValueError("split must be 'train' or 'test'")
    _check_spec(spec)
    rng = Random(seed)
    abox: set = set()
    labels: dict[str, str] = {}
    for i in range(n):
        cls_idx = i % len(spec.classes)
        rule = spec.classes[cls_idx]
        image = f"im{i}"
        forced: list[frozenset[str]] = []
        for req in rule.objects:
            fixed = set(req)
            if split == "train":
                for bias in spec.biases:
                    if bias.class_label == rule.label and bias.target <= req:
                        fixed |= bias.extra
            forced.append(frozenset(fixed))
        for _attempt in range(1000):
            count = rng.randint(max(spec.min_objects, len(forced)), spec.max_objects)
            objects = [_object_attrs(spec, rng, f) for f in forced]
            objects += [
                _object_attrs(spec, rng, frozenset())
                for _ in range(count - len(forced))
            ]
            if any(
                j != cls_idx and _scene_matches(spec.classes[j], objects)
                for j in range(len(spec.classes))
            ):
                continue
            break
        else:
            raise UnsatisfiableSpecError(
                f"could not sample a scene for '{rule.label}' distinct from the other classes"
            )
        abox.add(ConceptAssertion(EXEMPLAR, image))
        labels[image] = rule.label
        for j, attrs in enumerate(objects):
            obj = f"{image}_o{j}"
            abox.add(RoleAssertion(spec.role, image, obj))
            for attr in sorted(attrs):
                abox.add(ConceptAssertion(attr, obj))
    kb = KnowledgeBase.from_parts((), abox)
    class_labels = frozenset(c.label for c in spec.classes)
    ds = ExplanationDataset(kb, labels, class_labels)
    return kb, ds


def ground_truth_oracle(spec: SceneSpec) -> OracleClassifier:
    rules = tuple((c.label, c.query(spec.role)) for c in spec.classes)
    return OracleClassifier(rules, default=spec.classes[-1].label)


def biased_class1_oracle(spec: SceneSpec) -> OracleClassifier:
    """The confounded stand-in: class 1 keyed on a gray large object."""
    biased = ClassRule(
        "Class_1",
        (frozenset({"Gray", "Large"}), frozenset({"Large", "Cylinder"})),
    )
    rules = ((biased.label, biased.query(spec.role)),) + tuple(
        (c.label, c.query(spec.role)) for c in spec.classes[1:]
    )
    return OracleClassifier(rules, default=spec.classes[-1].label)


# ---------------------------------------------------------------------------
# Hierarchy scene graph
# ---------------------------------------------------------------------------

def hierarchy_scene_kb(seed: int = 0) -> KnowledgeBase:
    """A miniature scene-graph base whose TBox groups leaf concepts.

    Domestic scenes show an animal wearing a man-made artifact (dog/collar,
    cat/bowtie); wild scenes have none, including decoys: an unworn collar
    lying in one scene and a monkey wearing a leaf in another.  Only the
    superclass rule ``animal(y), wear(y,z), artifact(z)`` covers every
    domestic scene.
    """
    sub = ConceptExpr.atomic
    tbox = [
        ConceptInclusion(sub("dog"), sub("animal")),
        ConceptInclusion(sub("cat"), sub("animal")),
        ConceptInclusion(sub("wolf"), sub("animal")),
        ConceptInclusion(sub("fox"), sub("animal")),
        ConceptInclusion(sub("monkey"), sub("animal")),
        ConceptInclusion(sub("collar"), sub("artifact")),
        ConceptInclusion(sub("bowtie"), sub("artifact")),
        ConceptInclusion(sub("leash"), sub("artifact")),
        ConceptInclusion(sub("leaf"), sub("plant")),
    ]
    rng = Random(seed)
    scenes = [
        ("dog", "collar"),
        ("dog", "leash"),
        ("cat", "bowtie"),
        ("cat", "collar"),
        ("wolf", None),
        ("fox", None),
        ("monkey", "leaf"),  # wild: wears something, but not an artifact
        ("fox", "collar-unworn"),  # wild: an artifact present but not worn
    ]
    abox: set = set()
    distractors = ("tree", "rock", "bush")
    for i, (animal, worn) in enumerate(scenes):
        image = f"img{i}"
        abox.add(ConceptAssertion(EXEMPLAR, image))
        subject = f"img{i}_a"
        abox.add(RoleAssertion("contains", image, subject))
        abox.add(ConceptAssertion(animal, subject))
        if worn == "collar-unworn":
            thing = f"img{i}_t"
            abox.add(RoleAssertion("contains", image, thing))
            abox.add(ConceptAssertion("collar", thing))
        elif worn is not None:
            thing = f"img{i}_t"
            abox.add(RoleAssertion("contains", image, thing))
            abox.add(ConceptAssertion(worn, thing))
            abox.add(RoleAssertion("wear", subject, thing))
        extra = f"img{i}_d"
        abox.add(RoleAssertion("contains", image, extra))
        abox.add(ConceptAssertion(rng.choice(distractors), extra))
    return KnowledgeBase.from_parts(tbox, abox)


def hierarchy_oracle() -> OracleClassifier:
    domestic = InstanceQuery.parse(
        "Exemplar(x), contains(x,y1), animal(y1), wear(y1,y2), artifact(y2)"
    )
    return OracleClassifier((("Domestic", domestic),), default="Wild")


def hierarchy_dataset(mkb: MaterializedKB) -> ExplanationDataset:
    oracle = hierarchy_oracle()
    labels = oracle_labels(mkb.base, oracle, mkb)
    return ExplanationDataset(mkb.base, labels, oracle.class_labels)
