"""Answer-quality evaluation and the ablation experiment runner.

Candidates are scored against references with token-level greedy-matching
embedding similarity (precision, recall, harmonic-mean F1), classified
correct at a threshold (default 0.85, boundary inclusive), and optionally
hand-labelled with an error category. The experiment runner rebuilds the
pipeline per preset (retrieval, table narratives, tree knowledge, web
search toggles) and reports accuracy per domain and kind.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Mapping

import numpy as np

from .corpus import Chunk, DatasetSplit, Domain, DOMAINS, QAPair
from .errors import DimensionMismatch, EmptySequence, LabelOnCorrect, MissingComponent
from .generate import LLMBackend, PromptTemplate, DEFAULT_TEMPLATE
from .pipeline import (
    AnswerPipeline,
    PipelineConfig,
    narrative_chunks,
    tree_qa_chunks,
)
from .retrieval import (
    BM25Params,
    EmbeddingProvider,
    HybridParams,
    build_index,
    embed,
    tokenize,
)
from .tablex import Table
from .treex import DecisionTree, generate_tree_qa, render_clarification
from .websearch import SearchProvider, TriggerConfig


# --- similarity metric ------------------------------------------------------------

@dataclass(frozen=True)
class TokenEmbeddingSequence:
    tokens: tuple[str, ...]
    vectors: np.ndarray  # len(tokens) x dimension, unit rows (or zero)

    @classmethod
    def from_text(cls, text: str, provider: EmbeddingProvider) -> "TokenEmbeddingSequence":
        tokens = tuple(tokenize(text))
        if tokens:
            vectors = np.vstack([embed(token, provider) for token in tokens])
        else:
            vectors = np.zeros((0, provider.dimension), dtype=np.float64)
        return cls(tokens=tokens, vectors=vectors)


@dataclass(frozen=True)
class SimilarityScore:
    precision: float
    recall: float
    f1: float


def similarity_score(
    candidate: TokenEmbeddingSequence, reference: TokenEmbeddingSequence
) -> SimilarityScore:
    """Greedy-matching embedding similarity.

    Precision is the mean over candidate tokens of the best cosine against
    any reference token; recall mirrors it from the reference side; F1 is
    the harmonic mean (zero when both sides are zero).

    Raises:
        EmptySequence: either side has no tokens.
        DimensionMismatch: embedding widths differ.
    """
    if len(candidate.tokens) == 0 or len(reference.tokens) == 0:
        raise EmptySequence("similarity needs at least one token on each side")
    if candidate.vectors.shape[1] != reference.vectors.shape[1]:
        raise DimensionMismatch(
            f"candidate dimension {candidate.vectors.shape[1]} != "
            f"reference dimension {reference.vectors.shape[1]}"
        )
    sims = candidate.vectors @ reference.vectors.T
    precision = float(sims.max(axis=1).mean())
    recall = float(sims.max(axis=0).mean())
    denominator = precision + recall
    f1 = 2.0 * precision * recall / denominator if denominator != 0.0 else 0.0
    return SimilarityScore(precision=precision, recall=recall, f1=f1)


@dataclass(frozen=True)
class Verdict:
    correct: bool
    threshold: float = 0.85


def classify(score: SimilarityScore, threshold: float = 0.85) -> Verdict:
    """Correct iff F1 is at or above the threshold (boundary inclusive)."""
    return Verdict(correct=score.f1 >= threshold, threshold=threshold)


class ErrorCategory(str, Enum):
    OMISSION = "omission"
    HALLUCINATION = "hallucination"
    UNSUPPORTED_REASONING = "unsupported_reasoning"
    NON_ERROR = "non_error"


# --- experiment configuration --------------------------------------------------------

@dataclass(frozen=True)
class ExperimentToggles:
    local_retrieval: bool = False
    table_textualization: bool = False
    tree_textualization: bool = False
    web_search: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    id: str
    toggles: ExperimentToggles
    retrieval: HybridParams = HybridParams()
    bm25: BM25Params = BM25Params()
    threshold: float = 0.85
    repetitions: int = 3


EXPERIMENT_PRESETS: dict[str, ExperimentConfig] = {
    "Exp1": ExperimentConfig("Exp1", ExperimentToggles()),
    "Exp2": ExperimentConfig("Exp2", ExperimentToggles(local_retrieval=True)),
    "Exp3": ExperimentConfig(
        "Exp3", ExperimentToggles(local_retrieval=True, table_textualization=True)
    ),
    "Exp4": ExperimentConfig(
        "Exp4", ExperimentToggles(local_retrieval=True, tree_textualization=True)
    ),
    "Exp5": ExperimentConfig(
        "Exp5",
        ExperimentToggles(
            local_retrieval=True, table_textualization=True, tree_textualization=True
        ),
    ),
    "Exp6": ExperimentConfig(
        "Exp6",
        ExperimentToggles(
            local_retrieval=True,
            table_textualization=True,
            tree_textualization=True,
            web_search=True,
        ),
    ),
}


@dataclass
class PipelineHandles:
    """Everything the runner needs to rebuild the pipeline per preset."""

    embedder: EmbeddingProvider
    backend: LLMBackend
    article_chunks: list[Chunk] = field(default_factory=list)
    tables: list[Table] = field(default_factory=list)
    trees: list[DecisionTree] = field(default_factory=list)
    search_provider: SearchProvider | None = None
    trigger: TriggerConfig = TriggerConfig()
    template: PromptTemplate = DEFAULT_TEMPLATE
    # "state_machine" routes tree questions through live clarification;
    # "indexed" folds tree Q&A pairs into the retrieval corpus instead.
    tree_route_mode: str = "state_machine"
    tree_overlap_threshold: int = 1
    min_context_score: float = 0.0


# --- report -------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalRecord:
    pair_id: str
    split: str  # "validation" | "test"
    kind: str
    domain: Domain
    question: str
    reference: str
    candidate: str
    score: SimilarityScore
    verdict: Verdict
    correct_rate: float
    category: ErrorCategory | None = None


@dataclass
class EvalReport:
    experiment_id: str
    toggles: ExperimentToggles
    records: list[EvalRecord]

    def accuracy(
        self,
        *,
        split: str | None = None,
        kind: str | None = None,
        domain: Domain | None = None,
    ) -> float | None:
        rows = [
            r
            for r in self.records
            if (split is None or r.split == split)
            and (kind is None or r.kind == kind)
            and (domain is None or r.domain == domain)
        ]
        if not rows:
            return None
        return sum(r.correct_rate for r in rows) / len(rows)

    def domain_row(self, split: str = "validation") -> dict[str, float | None]:
        """Per-domain accuracy plus the average over the five domain columns."""
        row: dict[str, float | None] = {}
        present = []
        for domain in DOMAINS:
            acc = self.accuracy(split=split, domain=domain)
            row[domain.value] = acc
            if acc is not None:
                present.append(acc)
        row["average"] = sum(present) / len(present) if present else None
        return row

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment_id,
            "toggles": {
                "local_retrieval": self.toggles.local_retrieval,
                "table_textualization": self.toggles.table_textualization,
                "tree_textualization": self.toggles.tree_textualization,
                "web_search": self.toggles.web_search,
            },
            "records": [
                {
                    "pair_id": r.pair_id,
                    "split": r.split,
                    "kind": r.kind,
                    "domain": r.domain.value,
                    "question": r.question,
                    "reference": r.reference,
                    "candidate": r.candidate,
                    "precision": r.score.precision,
                    "recall": r.score.recall,
                    "f1": r.score.f1,
                    "correct": r.verdict.correct,
                    "threshold": r.verdict.threshold,
                    "correct_rate": r.correct_rate,
                    "category": r.category.value if r.category else None,
                }
                for r in self.records
            ],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def label_error(record: EvalRecord, category: ErrorCategory) -> EvalRecord:
    """Attach a human-assigned error category to an incorrect record.

    Raises:
        LabelOnCorrect: the record's verdict is correct.
    """
    if record.verdict.correct:
        raise LabelOnCorrect(f"record {record.pair_id!r} is correct; nothing to label")
    return replace(record, category=category)


def load_error_labels(path: str | Path) -> dict[str, ErrorCategory]:
    """Read a label records file: a JSON list of {"pair_id", "category"}
    rows (or a plain {pair_id: category} object)."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if isinstance(payload, dict):
        rows = [{"pair_id": k, "category": v} for k, v in payload.items()]
    else:
        rows = payload
    return {row["pair_id"]: ErrorCategory(row["category"]) for row in rows}


def apply_error_labels(
    report: EvalReport, labels: Mapping[str, ErrorCategory]
) -> EvalReport:
    """Apply a {pair id -> category} mapping to a report's records."""
    by_id = {r.pair_id: r for r in report.records}
    for pair_id, category in labels.items():
        if pair_id in by_id:
            by_id[pair_id] = label_error(by_id[pair_id], category)
    return EvalReport(
        experiment_id=report.experiment_id,
        toggles=report.toggles,
        records=[by_id[r.pair_id] for r in report.records],
    )


def category_counts(report: EvalReport) -> dict[str, dict[str, int]]:
    """Error-category tallies per domain, for labelled incorrect records."""
    counts: dict[str, dict[str, int]] = {
        category.value: {d.value: 0 for d in DOMAINS} for category in ErrorCategory
    }
    for record in report.records:
        if record.category is not None:
            counts[record.category.value][record.domain.value] += 1
    return counts


def render_accuracy_table(reports: list[EvalReport], split: str = "validation") -> str:
    """Experiments x five domains + average, in percent."""
    headers = ["Experiment"] + [d.label for d in DOMAINS] + ["Average"]
    rows = []
    for report in reports:
        row_values = report.domain_row(split=split)
        cells = [report.experiment_id]
        for key in [d.value for d in DOMAINS] + ["average"]:
            value = row_values[key]
            cells.append("-" if value is None else f"{100.0 * value:.2f}")
        rows.append(cells)
    widths = [max(len(r[i]) for r in [headers] + rows) for i in range(len(headers))]
    lines = [
        "  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip()
        for r in [headers] + rows
    ]
    return "\n".join(lines)


# --- runner -------------------------------------------------------------------------

def build_experiment_pipeline(
    config: ExperimentConfig, handles: PipelineHandles
) -> AnswerPipeline:
    """Assemble the pipeline for one preset's toggles."""
    toggles = config.toggles
    chunks: list[Chunk] = []
    trees: list[DecisionTree] = []
    if toggles.local_retrieval:
        chunks.extend(handles.article_chunks)
        if toggles.table_textualization:
            chunks.extend(narrative_chunks(handles.tables))
        if toggles.tree_textualization:
            if handles.tree_route_mode == "state_machine":
                trees = list(handles.trees)
            else:
                for tree in handles.trees:
                    chunks.extend(tree_qa_chunks(list(generate_tree_qa(tree).pairs)))
    index = None
    if toggles.local_retrieval:
        if not chunks:
            raise MissingComponent(
                f"{config.id}: local retrieval enabled but no chunks supplied"
            )
        index = build_index(chunks, handles.embedder, config.bm25)
    search_provider = handles.search_provider if toggles.web_search else None
    if toggles.web_search and search_provider is None:
        raise MissingComponent(f"{config.id}: web search enabled but no provider supplied")
    pipeline_config = PipelineConfig(
        retrieval=config.retrieval,
        trigger=replace(handles.trigger, enabled=toggles.web_search),
        template=handles.template,
        tree_routing=bool(trees),
        tree_overlap_threshold=handles.tree_overlap_threshold,
        min_context_score=handles.min_context_score,
    )
    return AnswerPipeline(
        handles.backend,
        index,
        trees=trees,
        search_provider=search_provider,
        config=pipeline_config,
    )


def _score_pair(
    candidate_text: str,
    reference_text: str,
    embedder: EmbeddingProvider,
) -> SimilarityScore:
    try:
        candidate = TokenEmbeddingSequence.from_text(candidate_text, embedder)
        reference = TokenEmbeddingSequence.from_text(reference_text, embedder)
        return similarity_score(candidate, reference)
    except EmptySequence:
        return SimilarityScore(precision=0.0, recall=0.0, f1=0.0)


def run_experiment(
    config: ExperimentConfig,
    dataset: DatasetSplit,
    handles: PipelineHandles,
) -> EvalReport:
    """Answer every validation and test pair under the preset's pipeline,
    score and classify each, and aggregate accuracy per domain and kind.

    Each pair runs ``config.repetitions`` times with the mean correctness
    reported; with deterministic backends the repetitions coincide.
    """
    pipeline = build_experiment_pipeline(config, handles)
    records: list[EvalRecord] = []
    work: list[tuple[str, QAPair]] = [
        ("validation", pair)
        for kind in ("text", "table", "tree")
        for pair in dataset.validation.get(kind, [])
    ]
    work.extend(("test", pair) for pair in dataset.test)
    for split, pair in work:
        correct_runs = 0
        first_score: SimilarityScore | None = None
        first_candidate = ""
        for _ in range(config.repetitions):
            outcome = pipeline.ask(pair.question)
            candidate_text = outcome.answer if outcome.answer is not None else (
                "" if outcome.clarification is None else _clarification_text(outcome)
            )
            score = _score_pair(candidate_text, pair.answer, handles.embedder)
            verdict = classify(score, config.threshold)
            if verdict.correct:
                correct_runs += 1
            if first_score is None:
                first_score = score
                first_candidate = candidate_text
        assert first_score is not None
        records.append(
            EvalRecord(
                pair_id=pair.id,
                split=split,
                kind=pair.kind,
                domain=pair.domain,
                question=pair.question,
                reference=pair.answer,
                candidate=first_candidate,
                score=first_score,
                verdict=classify(first_score, config.threshold),
                correct_rate=correct_runs / config.repetitions,
            )
        )
    return EvalReport(experiment_id=config.id, toggles=config.toggles, records=records)


def _clarification_text(outcome) -> str:
    return render_clarification(outcome.clarification)
