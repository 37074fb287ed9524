"""Command-line front end: validate, materialize, dag, extract, evaluate, bench, gen.

Every subcommand reads files, writes its declared output file, and exits with
0 on success, 2 on validation failures and 3 on exhausted search or
materialization budgets.  Outputs are deterministic for fixed inputs and
seeds.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .dag import BuilderConfig, SearchBudgetError, build_dag
from .datasets import (
    TabularSchema,
    biased_class1_oracle,
    clevr_hans_spec,
    generate_scenes,
    ground_truth_oracle,
    hierarchy_dataset,
    hierarchy_scene_kb,
    oracle_labels,
    random_rows,
    tabular_to_kb,
)
from .explain import (
    ExplanationDataset,
    evaluate_fidelity,
    extract_rules,
    greedy_cover,
    labels_from_json,
    labels_to_json,
    report_rules_from_json,
)
from .kb import EXEMPLAR, KBFormatError, parse_kb, validate
from .queries import InstanceQuery, query_radius, syntactically_equivalent
from .reasoner import BudgetError, materialize

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_BUDGET = 3


@dataclass
class RunConfig:
    """Validated invocation parameters shared by the pipeline subcommands."""

    max_depth: int = 1
    max_branching: int = 3
    min_answer_set_size: int = 1
    fast: bool = False
    max_queries: int | None = None
    workers: int = 1
    seed: int = 0

    def builder(self) -> BuilderConfig:
        if self.fast:
            return BuilderConfig.fast(
                self.max_depth,
                max_branching=self.max_branching,
                min_answer_set_size=self.min_answer_set_size,
                max_queries=self.max_queries,
                workers=self.workers,
            )
        return BuilderConfig(
            max_depth=self.max_depth,
            max_branching=self.max_branching,
            min_answer_set_size=self.min_answer_set_size,
            max_queries=self.max_queries,
            workers=self.workers,
        )


def _default_workers() -> int:
    env = os.environ.get("KGRULES_WORKERS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def _add_builder_flags(p: argparse.ArgumentParser):
    p.add_argument("--max-depth", type=int, default=1, help="query tree depth bound k")
    p.add_argument("--max-branching", type=int, default=3, help="children per tree node")
    p.add_argument("--min-answer-set-size", type=int, default=1)
    p.add_argument("--fast", action="store_true", help="skip condensation and most-specific merging")
    p.add_argument("--max-queries", type=int, default=None, help="abort after this many candidates")
    p.add_argument(
        "--workers",
        type=int,
        default=None,
        help="worker processes (default: KGRULES_WORKERS or 1)",
    )


def _run_config(args) -> RunConfig:
    return RunConfig(
        max_depth=args.max_depth,
        max_branching=args.max_branching,
        min_answer_set_size=args.min_answer_set_size,
        fast=args.fast,
        max_queries=args.max_queries,
        workers=args.workers if args.workers is not None else _default_workers(),
        seed=getattr(args, "seed", 0),
    )


def _load_kb(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise KBFormatError(f"cannot read '{path}': {exc}")
    try:
        return parse_kb(text)
    except KBFormatError as exc:
        raise KBFormatError(f"{path}: {exc}") from exc


def _load_dataset(kb, labels_path: str) -> ExplanationDataset:
    text = Path(labels_path).read_text()
    try:
        return labels_from_json(text, kb)
    except ValueError as exc:
        raise ValueError(f"{labels_path}: {exc}") from exc


def _write(path: str | None, text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    kb = _load_kb(args.kb)
    class_labels: frozenset[str] = frozenset()
    problems: list[str] = []
    if args.labels:
        data = json.loads(Path(args.labels).read_text())
        class_labels = frozenset(data["classes"])
        labelled = set(data["labels"])
        for missing in sorted(kb.exemplars - labelled):
            problems.append(f"exemplar '{missing}' has no label")
        for stray in sorted(labelled - kb.exemplars):
            problems.append(f"label for unknown exemplar '{stray}'")
    problems.extend(validate(kb, class_labels))
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return EXIT_VALIDATION
    print(
        f"ok: {len(kb.exemplars)} exemplars, "
        f"{len(kb.vocabulary.concept_names) - 1} concepts, "
        f"{len(kb.vocabulary.role_names)} roles, {len(kb.tbox)} axioms"
    )
    return EXIT_OK


def cmd_materialize(args) -> int:
    kb = _load_kb(args.kb)
    mkb = materialize(kb, args.depth)
    _write(args.out, mkb.dump_text())
    return EXIT_OK


def cmd_dag(args) -> int:
    kb = _load_kb(args.kb)
    cfg = _run_config(args)
    mkb = materialize(kb, cfg.max_depth + 1)
    dag = build_dag(mkb, cfg.builder())
    _write(args.out, dag.to_text() if args.text else dag.to_json())
    return EXIT_OK


def cmd_extract(args) -> int:
    kb = _load_kb(args.kb)
    ds = _load_dataset(kb, args.labels)
    classes = [args.class_label] if args.class_label else sorted(ds.class_labels)
    for c in classes:
        if c not in ds.class_labels:
            raise ValueError(f"unknown class '{c}'")
    cfg = _run_config(args)
    mkb = materialize(kb, cfg.max_depth + 1)
    dag = build_dag(mkb, cfg.builder())
    if args.emit_dag:
        _write(args.emit_dag, dag.to_json())
    rules = []
    for c in classes:
        class_rules = extract_rules(dag, ds, c, mode=args.mode)
        if args.cover:
            class_rules = greedy_cover(class_rules, ds, mkb)
        rules.extend(class_rules)
    report = evaluate_fidelity(rules, ds, mkb)
    _write(args.out, report.to_json())
    if args.out_text:
        _write(args.out_text, report.to_text())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    kb = _load_kb(args.kb)
    ds = _load_dataset(kb, args.labels)
    rules = report_rules_from_json(Path(args.rules).read_text())
    depth = max((query_radius(r.body) for r in rules), default=0)
    mkb = materialize(kb, depth)
    report = evaluate_fidelity(rules, ds, mkb)
    _write(args.out, report.to_json())
    return EXIT_OK


# -- synthetic data ---------------------------------------------------------

def _tabular_schema() -> TabularSchema:
    features = tuple(
        (f"f{i}", ("a", "b", "c")) for i in range(7)
    )
    return TabularSchema(features)


def _tabular_oracle_label(row: tuple[str, ...]) -> str:
    # poison when f0=a, or f1=b together with f2=c
    if row[0] == "a":
        return "Poison"
    if row[1] == "b" and row[2] == "c":
        return "Poison"
    return "Edible"


def _tabular_dataset(n: int, seed: int) -> ExplanationDataset:
    schema = _tabular_schema()
    rows = random_rows(schema, n, seed)
    kb = tabular_to_kb(schema, rows)
    labels = {f"r{i}": _tabular_oracle_label(row) for i, row in enumerate(rows)}
    return ExplanationDataset(kb, labels, frozenset({"Poison", "Edible"}))


def cmd_gen(args) -> int:
    if args.experiment == "tabular":
        ds = _tabular_dataset(args.n, args.seed)
        kb = ds.kb
    elif args.experiment == "clevr":
        spec = clevr_hans_spec(args.scene_min, args.scene_max)
        kb, ds = generate_scenes(spec, args.n, split=args.split, seed=args.seed)
        if args.oracle == "biased":
            oracle = biased_class1_oracle(spec)
            mkb = materialize(kb, 1)
            labels = oracle_labels(kb, oracle, mkb)
            ds = ExplanationDataset(kb, labels, oracle.class_labels)
    elif args.experiment == "hierarchy":
        kb = hierarchy_scene_kb(args.seed)
        ds = hierarchy_dataset(materialize(kb, 2))
    else:
        raise ValueError(f"unknown experiment '{args.experiment}'")
    from .kb import serialize

    _write(args.out_kb, serialize(kb))
    _write(args.out_labels, labels_to_json(ds))
    return EXIT_OK


# -- bundled benchmarks -----------------------------------------------------

def _bench_tabular(sizes: list[int], seed: int, cfg: RunConfig) -> list[dict]:
    rows_out = []
    test_ds = _tabular_dataset(200, seed + 999)
    test_mkb = materialize(test_ds.kb, 1)
    for size in sizes:
        ds = _tabular_dataset(size, seed)
        mkb = materialize(ds.kb, 1)
        builder = BuilderConfig(
            max_depth=0,
            max_branching=cfg.max_branching,
            min_answer_set_size=cfg.min_answer_set_size,
            workers=cfg.workers,
        )
        dag = build_dag(mkb, builder)
        rules = []
        for c in sorted(ds.class_labels):
            rules.extend(greedy_cover(extract_rules(dag, ds, c, "all_correct"), ds, mkb))
        train = evaluate_fidelity(rules, ds, mkb)
        test = evaluate_fidelity(rules, test_ds, test_mkb)
        rows_out.append(
            {
                "size": size,
                "train_fidelity": train.fidelity,
                "fidelity": test.fidelity,
                "rule_count": test.rule_count,
                "avg_length": test.avg_length,
            }
        )
    return rows_out


def _bench_clevr(sizes: list[int], seed: int, cfg: RunConfig) -> list[dict]:
    spec = clevr_hans_spec()
    gt = {c.label: c.query(spec.role) for c in spec.classes}
    rows_out = []
    for size in sizes:
        kb, ds = generate_scenes(spec, size, split="test", seed=seed)
        mkb = materialize(kb, cfg.max_depth + 1)
        dag = build_dag(mkb, cfg.builder())
        recovered = 0
        rules = []
        for label in sorted(ds.class_labels):
            exact = extract_rules(dag, ds, label, "exact")
            if any(syntactically_equivalent(r.body, gt[label]) for r in exact):
                recovered += 1
            best = extract_rules(dag, ds, label, "max_recall")
            rules.extend(best[:1])
        report = evaluate_fidelity(rules, ds, mkb)
        rows_out.append(
            {
                "size": size,
                "recovered": recovered,
                "fidelity": report.fidelity,
                "rule_count": report.rule_count,
                "avg_length": report.avg_length,
            }
        )
    return rows_out


def _bench_hierarchy(seed: int, cfg: RunConfig) -> list[dict]:
    kb = hierarchy_scene_kb(seed)
    mkb = materialize(kb, max(cfg.max_depth, 2) + 1)
    ds = hierarchy_dataset(mkb)
    builder = BuilderConfig(
        max_depth=max(cfg.max_depth, 2),
        max_branching=cfg.max_branching,
        min_answer_set_size=cfg.min_answer_set_size,
        workers=cfg.workers,
    )
    dag = build_dag(mkb, builder)
    rules = extract_rules(dag, ds, "Domestic", "all_correct")
    superclasses = {"animal", "artifact", "plant"}

    def uses_superclass(rule) -> bool:
        return any(
            getattr(a, "concept", None) in superclasses for a in rule.body.body
        )

    super_recall = max(
        (r.metrics.recall for r in rules if uses_superclass(r)), default=0.0
    )
    leaf_recall = max(
        (r.metrics.recall for r in rules if not uses_superclass(r)), default=0.0
    )
    best = extract_rules(dag, ds, "Domestic", "max_recall")
    report = evaluate_fidelity(best[:1], ds, mkb)
    return [
        {
            "size": len(kb.exemplars),
            "superclass_recall": super_recall,
            "leaf_recall": leaf_recall,
            "fidelity": report.fidelity,
            "rule_count": report.rule_count,
            "avg_length": report.avg_length,
        }
    ]


def cmd_bench(args) -> int:
    cfg = _run_config(args)
    if args.experiment == "tabular":
        rows = _bench_tabular(args.sizes or [100, 200, 600], args.seed, cfg)
    elif args.experiment == "clevr":
        rows = _bench_clevr(args.sizes or [20, 40, 600], args.seed, cfg)
    elif args.experiment == "hierarchy":
        rows = _bench_hierarchy(args.seed, cfg)
    else:
        raise ValueError(f"unknown experiment '{args.experiment}'")
    payload = {"experiment": args.experiment, "seed": args.seed, "rows": rows}
    text = json.dumps(payload, indent=2) + "\n"
    _write(args.out, text)
    if args.out != "-" and args.out is not None:
        header = sorted({k for row in rows for k in row})
        print("\t".join(header))
        for row in rows:
            print("\t".join(str(row.get(k, "")) for k in header))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kgrules",
        description="Extract correct, global explanation rules from a labelled knowledge base.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a KB file (and optional labels) for violations")
    p.add_argument("--kb", required=True)
    p.add_argument("--labels")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("materialize", help="saturate a KB and dump the derived ABox")
    p.add_argument("--kb", required=True)
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_materialize)

    p = sub.add_parser("dag", help="build and export the query-space DAG")
    p.add_argument("--kb", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--text", action="store_true", help="plain-text instead of JSON")
    _add_builder_flags(p)
    p.set_defaults(func=cmd_dag)

    p = sub.add_parser("extract", help="extract explanation rules for labelled exemplars")
    p.add_argument("--kb", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--class", dest="class_label", default=None)
    p.add_argument("--mode", choices=["exact", "max_recall", "all_correct"], default="max_recall")
    p.add_argument("--cover", action="store_true", help="greedy-cover reduction of the rule set")
    p.add_argument("--out", default="-")
    p.add_argument("--out-text", default=None)
    p.add_argument("--emit-dag", default=None)
    _add_builder_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("evaluate", help="score a rule report against a (test) KB + labels")
    p.add_argument("--rules", required=True)
    p.add_argument("--kb", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gen", help="emit a synthetic dataset (KB + labels)")
    p.add_argument("--experiment", choices=["tabular", "clevr", "hierarchy"], required=True)
    p.add_argument("--n", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--oracle", choices=["exact", "biased"], default="exact")
    p.add_argument("--scene-min", type=int, default=2)
    p.add_argument("--scene-max", type=int, default=4)
    p.add_argument("--out-kb", required=True)
    p.add_argument("--out-labels", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("bench", help="run a bundled synthetic experiment end to end")
    p.add_argument("--experiment", choices=["tabular", "clevr", "hierarchy"], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", type=int, nargs="*", default=None)
    p.add_argument("--out", default="-")
    _add_builder_flags(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KBFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (BudgetError, SearchBudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
