"""Diagnostic decision trees: path enumeration, textualization, interactive
clarification, and exhaustive tree Q&A generation.

A tree is a directed graph of internal condition nodes (an attribute such
as "severity" with labelled branches) and leaf diagnosis nodes. Resolving
user evidence against the tree either pins down exactly one root-to-leaf
path (a diagnosis) or yields the set of unresolved attributes to ask about
next. Both outcomes render through the same deterministic templates used
for the generated Q&A dataset, so dialogue answers and dataset answers are
byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping

from .corpus import Domain, QAPair
from .errors import (
    ContradictoryEvidence,
    MalformedTree,
    PathTooDeep,
    UnknownAttribute,
    UnknownValue,
)
from .textutil import tokenize


@dataclass(frozen=True)
class Node:
    """Internal condition node (attribute + prompt) or leaf (diagnosis)."""

    id: str
    attribute: str | None = None
    prompt: str | None = None
    diagnosis: str | None = None

    @property
    def is_leaf(self) -> bool:
        return self.diagnosis is not None


@dataclass(frozen=True)
class Edge:
    parent: str
    label: str
    child: str


@dataclass
class DecisionTree:
    id: str
    domain: Domain
    nodes: dict[str, Node]
    edges: list[Edge]
    root: str
    # The complaint the tree diagnoses (e.g. "diarrhea"); used in question
    # templates so even an all-attributes-missing question names it.
    subject: str | None = None

    def effective_subject(self) -> str:
        """Declared subject, else the tokens shared by every root branch
        label (Table-style trees name the complaint there), else the id."""
        if self.subject:
            return self.subject
        root_labels = [e.label for e in self.children(self.root)]
        if root_labels:
            common = set(tokenize(root_labels[0]))
            for label in root_labels[1:]:
                common &= set(tokenize(label))
            if common:
                ordered = [t for t in tokenize(root_labels[0]) if t in common]
                return " ".join(ordered)
        return self.id

    def children(self, node_id: str) -> list[Edge]:
        """Outgoing edges of a node, sorted by branch label."""
        return sorted(
            (e for e in self.edges if e.parent == node_id), key=lambda e: e.label
        )

    def attribute_labels(self) -> dict[str, tuple[str, ...]]:
        """Attribute name -> sorted union of its branch labels."""
        labels: dict[str, set[str]] = {}
        for node in self.nodes.values():
            if node.is_leaf:
                continue
            labels.setdefault(node.attribute, set()).update(
                e.label for e in self.children(node.id)
            )
        return {attr: tuple(sorted(vals)) for attr, vals in labels.items()}

    def symptom_vocabulary(self) -> dict[str, set[str]]:
        """Branch label -> its token set, for free-text routing/extraction.
        The tree's subject counts as one more routable entry."""
        vocabulary = {
            label: set(tokenize(label))
            for labels in self.attribute_labels().values()
            for label in labels
        }
        subject = self.effective_subject()
        vocabulary.setdefault(subject, set(tokenize(subject)))
        return vocabulary

    def validate(self) -> None:
        """Check every structural invariant; MalformedTree names the rule."""
        if self.root not in self.nodes:
            raise MalformedTree(f"tree {self.id!r}: root {self.root!r} is not a node")
        targets = {e.child for e in self.edges}
        if self.root in targets:
            raise MalformedTree(f"tree {self.id!r}: root {self.root!r} has incoming edges")
        for edge in self.edges:
            for end in (edge.parent, edge.child):
                if end not in self.nodes:
                    raise MalformedTree(
                        f"tree {self.id!r}: edge {edge.parent!r}-[{edge.label!r}]->"
                        f"{edge.child!r} references unknown node {end!r}"
                    )
        for node in self.nodes.values():
            if node.id != self.root and node.id not in targets:
                raise MalformedTree(
                    f"tree {self.id!r}: node {node.id!r} is a second root (no incoming edges)"
                )
        for node in self.nodes.values():
            outgoing = self.children(node.id)
            if node.is_leaf:
                if node.attribute is not None:
                    raise MalformedTree(
                        f"tree {self.id!r}: node {node.id!r} has both attribute and diagnosis"
                    )
                if not node.diagnosis.strip():
                    raise MalformedTree(f"tree {self.id!r}: leaf {node.id!r} has empty diagnosis")
                if outgoing:
                    raise MalformedTree(
                        f"tree {self.id!r}: leaf {node.id!r} has outgoing edges"
                    )
            else:
                if not node.attribute:
                    raise MalformedTree(
                        f"tree {self.id!r}: node {node.id!r} has neither attribute nor diagnosis"
                    )
                labels = [e.label for e in outgoing]
                if len(labels) < 2:
                    raise MalformedTree(
                        f"tree {self.id!r}: internal node {node.id!r} has "
                        f"{len(labels)} outgoing edges, need at least 2"
                    )
                if len(set(labels)) != len(labels):
                    raise MalformedTree(
                        f"tree {self.id!r}: internal node {node.id!r} has duplicate branch labels"
                    )
        self._check_reachable_acyclic_unique_attrs()

    def _check_reachable_acyclic_unique_attrs(self) -> None:
        visited: set[str] = set()

        def walk(node_id: str, stack: tuple[str, ...], attrs: frozenset[str]) -> None:
            if node_id in stack:
                raise MalformedTree(f"tree {self.id!r}: cycle through node {node_id!r}")
            visited.add(node_id)
            node = self.nodes[node_id]
            if not node.is_leaf:
                if node.attribute in attrs:
                    raise MalformedTree(
                        f"tree {self.id!r}: attribute {node.attribute!r} repeats "
                        f"along a path at node {node_id!r}"
                    )
                attrs = attrs | {node.attribute}
            for edge in self.children(node_id):
                walk(edge.child, stack + (node_id,), attrs)

        walk(self.root, (), frozenset())
        unreachable = set(self.nodes) - visited
        if unreachable:
            raise MalformedTree(
                f"tree {self.id!r}: nodes not reachable from root: {sorted(unreachable)}"
            )


@dataclass(frozen=True)
class PathStep:
    node_id: str
    attribute: str
    prompt: str | None
    label: str


@dataclass(frozen=True)
class DiagnosticPath:
    """One complete root-to-leaf condition sequence."""

    tree_id: str
    k: int  # 1-based path index in enumeration order
    steps: tuple[PathStep, ...]
    leaf_id: str
    diagnosis: str

    @property
    def assignments(self) -> dict[str, str]:
        return {step.attribute: step.label for step in self.steps}

    @property
    def depth(self) -> int:
        return len(self.steps)


def enumerate_paths(tree: DecisionTree) -> list[DiagnosticPath]:
    """One path per leaf, depth-first with branch labels sorted."""
    tree.validate()
    paths: list[DiagnosticPath] = []

    def walk(node_id: str, steps: tuple[PathStep, ...]) -> None:
        node = tree.nodes[node_id]
        if node.is_leaf:
            paths.append(
                DiagnosticPath(
                    tree_id=tree.id,
                    k=len(paths) + 1,
                    steps=steps,
                    leaf_id=node.id,
                    diagnosis=node.diagnosis,
                )
            )
            return
        for edge in tree.children(node_id):
            step = PathStep(node.id, node.attribute, node.prompt, edge.label)
            walk(edge.child, steps + (step,))

    walk(tree.root, ())
    return paths


def textualize_path(path: DiagnosticPath) -> str:
    """Render a path as one conditional-chain sentence."""
    if not path.steps:
        return f"The likely diagnosis is {path.diagnosis}."
    conditions = " and ".join(f"{s.attribute} is {s.label}" for s in path.steps)
    return f"If {conditions} then the likely diagnosis is {path.diagnosis}."


@dataclass(frozen=True)
class Evidence:
    """User-supplied attribute -> branch label assignments."""

    assignments: Mapping[str, str] = field(default_factory=dict)

    def get(self, attribute: str) -> str | None:
        return self.assignments.get(attribute)

    def merged(self, extra: Mapping[str, str]) -> "Evidence":
        merged = dict(self.assignments)
        merged.update(extra)
        return Evidence(merged)

    def __len__(self) -> int:
        return len(self.assignments)


@dataclass(frozen=True)
class ClarificationQuestion:
    attribute: str
    prompt: str
    allowed: tuple[str, ...]


@dataclass(frozen=True)
class Clarification:
    """The unresolved attributes across paths consistent with the evidence."""

    questions: tuple[ClarificationQuestion, ...]

    @property
    def attributes(self) -> tuple[str, ...]:
        return tuple(q.attribute for q in self.questions)


@dataclass(frozen=True)
class Diagnosis:
    text: str
    path: DiagnosticPath


def _consistent(path: DiagnosticPath, evidence: Evidence) -> bool:
    return all(
        evidence.get(step.attribute) in (None, step.label) for step in path.steps
    )


def resolve(tree: DecisionTree, evidence: Evidence) -> Diagnosis | Clarification:
    """Return a diagnosis when the evidence pins down exactly one path,
    otherwise the clarification questions for the still-open paths.

    Raises:
        UnknownAttribute: evidence names an attribute absent from the tree.
        UnknownValue: a value is not among that attribute's branch labels.
        ContradictoryEvidence: no path is consistent with the assignments.
    """
    vocabulary = tree.attribute_labels()
    for attribute, value in evidence.assignments.items():
        if attribute not in vocabulary:
            raise UnknownAttribute(
                f"tree {tree.id!r} has no attribute {attribute!r}"
            )
        if value not in vocabulary[attribute]:
            raise UnknownValue(
                f"{value!r} is not a branch label of {attribute!r} "
                f"(allowed: {', '.join(vocabulary[attribute])})"
            )
    paths = enumerate_paths(tree)
    candidates = [p for p in paths if _consistent(p, evidence)]
    if not candidates:
        raise ContradictoryEvidence(
            f"no diagnostic path of tree {tree.id!r} is consistent with the evidence"
        )
    resolved = [
        p for p in candidates
        if all(step.attribute in evidence.assignments for step in p.steps)
    ]
    if resolved:
        # Paths diverge at a shared node, so at most one can be fully assigned.
        return Diagnosis(text=resolved[0].diagnosis, path=resolved[0])
    questions: list[ClarificationQuestion] = []
    seen: set[str] = set()
    label_union: dict[str, set[str]] = {}
    prompts: dict[str, str] = {}
    for path in candidates:
        for step in path.steps:
            if step.attribute in evidence.assignments:
                continue
            label_union.setdefault(step.attribute, set()).update(
                e.label for e in tree.children(step.node_id)
            )
            prompts.setdefault(step.attribute, step.prompt or step.attribute)
            if step.attribute not in seen:
                seen.add(step.attribute)
                questions.append(step.attribute)  # placeholder, ordered
    ordered = [
        ClarificationQuestion(
            attribute=attr,
            prompt=prompts[attr],
            allowed=tuple(sorted(label_union[attr])),
        )
        for attr in questions
    ]
    return Clarification(questions=tuple(ordered))


# --- deterministic rendering -------------------------------------------------

def render_diagnosis(diagnosis: Diagnosis) -> str:
    return f"The likely diagnosis is {diagnosis.text}."


def render_clarification(clarification: Clarification) -> str:
    questions = clarification.questions
    if len(questions) == 1:
        q = questions[0]
        return f"Please tell me the {q.prompt} ({' / '.join(q.allowed)})."
    items = "; ".join(
        f"{n}. {q.prompt} ({' / '.join(q.allowed)})"
        for n, q in enumerate(questions, start=1)
    )
    return f"To give a precise diagnosis, please supply: {items}."


def render_resolution(resolution: Diagnosis | Clarification) -> str:
    if isinstance(resolution, Diagnosis):
        return render_diagnosis(resolution)
    return render_clarification(resolution)


def render_question(
    assignments: Mapping[str, str], order: Iterable[str], subject: str = "trouble"
) -> str:
    """Deterministic user-question template for a set of observations."""
    parts = [f"{attr}: {assignments[attr]}" for attr in order if attr in assignments]
    if not parts:
        return f"My goat has {subject}. What could be the cause?"
    return f"My goat shows {'; '.join(parts)}. What could be the cause?"


# --- dataset generation -------------------------------------------------------

@dataclass(frozen=True)
class TreeQADataset:
    """Exhaustively generated interactive pairs, with per-path counts."""

    tree_id: str
    pairs: tuple[QAPair, ...]
    per_path_counts: dict[int, int]

    @property
    def total(self) -> int:
        return len(self.pairs)


def generate_tree_qa(tree: DecisionTree, cap: int = 6) -> TreeQADataset:
    """One Q&A pair per evidence subset of every path (2^d pairs for a path
    with d internal attributes), answers rendered through resolve().

    Raises:
        PathTooDeep: some path has more than `cap` internal attributes.
    """
    paths = enumerate_paths(tree)
    subject = tree.effective_subject()
    pairs: list[QAPair] = []
    per_path: dict[int, int] = {}
    for path in paths:
        attrs = [step.attribute for step in path.steps]
        if len(attrs) > cap:
            raise PathTooDeep(
                f"tree {tree.id!r} path {path.k} has {len(attrs)} attributes, cap is {cap}"
            )
        full = path.assignments
        index = 0
        for missing_size in range(len(attrs) + 1):
            for missing in combinations(range(len(attrs)), missing_size):
                index += 1
                assigned = {
                    attr: full[attr]
                    for pos, attr in enumerate(attrs)
                    if pos not in missing
                }
                resolution = resolve(tree, Evidence(assigned))
                pairs.append(
                    QAPair(
                        id=f"{tree.id}:p{path.k}:s{index}",
                        kind="tree",
                        domain=tree.domain,
                        question=render_question(assigned, attrs, subject),
                        answer=render_resolution(resolution),
                        source_refs=(tree.id,),
                    )
                )
        per_path[path.k] = index
    return TreeQADataset(tree_id=tree.id, pairs=tuple(pairs), per_path_counts=per_path)


# --- free-text routing helpers -------------------------------------------------

def routing_overlap(tree: DecisionTree, question: str) -> int:
    """Number of branch labels sharing at least one token with the question.

    Used by the service to decide whether a free-text question enters the
    clarification flow; the threshold is configuration, not a claim.
    """
    query_tokens = set(tokenize(question))
    return sum(
        1 for tokens in tree.symptom_vocabulary().values() if tokens & query_tokens
    )


def extract_evidence(tree: DecisionTree, question: str) -> Evidence:
    """Assignments whose branch label is wholly contained (token-wise) in
    the question. Ambiguous attributes (two full matches) stay unassigned."""
    query_tokens = set(tokenize(question))
    assignments: dict[str, str] = {}
    for attribute, labels in tree.attribute_labels().items():
        matches = [
            label for label in labels
            if set(tokenize(label)) and set(tokenize(label)) <= query_tokens
        ]
        if not matches:
            continue
        matches.sort(key=lambda lab: (-len(tokenize(lab)), lab))
        best = matches[0]
        runner_up = matches[1] if len(matches) > 1 else None
        if runner_up and len(tokenize(runner_up)) == len(tokenize(best)):
            continue  # ambiguous
        assignments[attribute] = best
    return Evidence(assignments)


# --- file interface -------------------------------------------------------------

def tree_from_dict(data: dict, *, source: str = "<memory>") -> DecisionTree:
    """Build and validate a tree from its machine-readable document.

    Expected fields: id, domain, root, nodes (attribute+prompt or
    diagnosis), edges (from/label/to). Errors name the offending element.
    """
    try:
        nodes = {}
        for entry in data["nodes"]:
            node = Node(
                id=entry["id"],
                attribute=entry.get("attribute"),
                prompt=entry.get("prompt"),
                diagnosis=entry.get("diagnosis"),
            )
            if node.id in nodes:
                raise MalformedTree(f"{source}: duplicate node id {node.id!r}")
            nodes[node.id] = node
        edges = [
            Edge(parent=e["from"], label=e["label"], child=e["to"])
            for e in data["edges"]
        ]
        tree = DecisionTree(
            id=data["id"],
            domain=Domain.parse(data["domain"]),
            nodes=nodes,
            edges=edges,
            root=data["root"],
            subject=data.get("subject"),
        )
    except KeyError as exc:
        raise MalformedTree(f"{source}: missing required field {exc}") from exc
    tree.validate()
    return tree


def load_tree_file(path: str | Path) -> DecisionTree:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedTree(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return tree_from_dict(data, source=str(path))


def load_trees_dir(directory: str | Path) -> list[DecisionTree]:
    return [load_tree_file(p) for p in sorted(Path(directory).glob("*.json"))]
