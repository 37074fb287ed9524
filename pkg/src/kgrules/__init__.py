"""Rule-based global explanations of black-box classifiers over DL knowledge bases."""

from .dag import (
    BuilderConfig,
    ConceptCombo,
    DagNode,
    EdgeCombo,
    QuerySpaceDAG,
    SearchBudgetError,
    assemble_queries,
    build_B,
    build_F,
    build_dag,
    enumerate_trees,
    verify_dag,
)
from .explain import (
    ExplanationDataset,
    ExplanationRule,
    RuleMetrics,
    RuleSetReport,
    evaluate_fidelity,
    extract_rules,
    greedy_cover,
    is_correct,
    labels_from_json,
    labels_to_json,
    pos_set,
)
from .kb import (
    EXEMPLAR,
    Assertion,
    Axiom,
    ConceptAssertion,
    ConceptExpr,
    ConceptInclusion,
    KBFormatError,
    KnowledgeBase,
    RoleAssertion,
    RoleInclusion,
    Vocabulary,
    parse_kb,
    serialize,
    validate,
)
from .queries import (
    Atom,
    ConceptAtom,
    InstanceQuery,
    RoleAtom,
    Substitution,
    condense,
    intersect,
    query_depth,
    subsumed_by,
    subsumes,
    syntactically_equivalent,
)
from .reasoner import (
    BudgetError,
    Match,
    MaterializedKB,
    cert,
    cert_naive,
    materialize,
)

__version__ = "0.1.0"
