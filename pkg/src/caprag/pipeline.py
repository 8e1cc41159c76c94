"""End-to-end answering pipeline.

One object composes the full flow: hybrid search, the web-search trigger,
context merging, prompt assembly, and backend generation. Questions that
overlap a loaded decision tree's symptom vocabulary route into the
clarification flow instead, resolving user evidence against the tree. With
mock backends the whole pipeline is a pure function of the index and the
question.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .errors import ProviderUnavailable, QuotaExceeded
from .generate import (
    Citation,
    DEFAULT_TEMPLATE,
    LLMBackend,
    PromptTemplate,
    build_prompt_within_budget,
    generate_answer,
)
from .retrieval import HybridParams, Index, ScoredHit, search
from .tablex import Table, textualize_table
from .treex import (
    Clarification,
    DecisionTree,
    Diagnosis,
    Evidence,
    extract_evidence,
    render_resolution,
    resolve,
    routing_overlap,
)
from .corpus import Chunk, QAPair
from .textutil import tokenize
from .websearch import (
    SearchProvider,
    TriggerConfig,
    WebResult,
    merge_context,
    should_trigger,
    web_search,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    retrieval: HybridParams = HybridParams()
    trigger: TriggerConfig = TriggerConfig()
    template: PromptTemplate = DEFAULT_TEMPLATE
    byte_budget: int | None = None
    web_result_cap: int = 5
    allowlist: tuple[str, ...] = ()
    tree_routing: bool = True
    tree_overlap_threshold: int = 1
    # Hits at or below this fused score carry no signal and are kept out of
    # the prompt (normalized-mode scores are nonnegative).
    min_context_score: float = 0.0


@dataclass(frozen=True)
class AskOutcome:
    """Either an answer or a clarification, with full provenance."""

    answer: str | None
    citations: tuple[Citation, ...]
    hits: tuple[ScoredHit, ...]
    clarification: Clarification | None
    used_web: bool
    tree_id: str | None = None
    diagnosis: Diagnosis | None = None


class AnswerPipeline:
    """Search -> trigger -> web -> merge -> prompt -> generate, or the
    decision-tree clarification flow when a question routes there."""

    def __init__(
        self,
        backend: LLMBackend,
        index: Index | None = None,
        *,
        trees: list[DecisionTree] | None = None,
        search_provider: SearchProvider | None = None,
        config: PipelineConfig = PipelineConfig(),
    ) -> None:
        self.backend = backend
        self.index = index
        self.trees = list(trees or [])
        self.search_provider = search_provider
        self.config = config

    # --- routing -----------------------------------------------------------

    def route_tree(self, question: str) -> DecisionTree | None:
        """Best-overlapping tree at or above the overlap threshold."""
        if not self.config.tree_routing or not self.trees:
            return None
        scored = [(routing_overlap(t, question), t.id, t) for t in self.trees]
        scored.sort(key=lambda item: (-item[0], item[1]))
        overlap, _, tree = scored[0]
        return tree if overlap >= self.config.tree_overlap_threshold else None

    # --- tree flow -----------------------------------------------------------

    def resolve_tree(self, tree: DecisionTree, evidence: Evidence) -> AskOutcome:
        resolution = resolve(tree, evidence)
        if isinstance(resolution, Diagnosis):
            return AskOutcome(
                answer=render_resolution(resolution),
                citations=(Citation(origin="local", ref=tree.id),),
                hits=(),
                clarification=None,
                used_web=False,
                tree_id=tree.id,
                diagnosis=resolution,
            )
        return AskOutcome(
            answer=None,
            citations=(),
            hits=(),
            clarification=resolution,
            used_web=False,
            tree_id=tree.id,
        )

    def ask_tree(self, tree: DecisionTree, question: str) -> AskOutcome:
        return self.resolve_tree(tree, extract_evidence(tree, question))

    # --- retrieval flow ---------------------------------------------------------

    def ask_rag(self, question: str) -> AskOutcome:
        hits: list[ScoredHit] = []
        if self.index is not None:
            hits = search(self.index, question, self.config.retrieval)
        context_hits = [h for h in hits if h.score > self.config.min_context_score]
        web_results: list[WebResult] = []
        used_web = False
        trigger = None
        if self.search_provider is not None:
            trigger = should_trigger(hits, question, self.config.trigger)
        if trigger is not None:
            try:
                web_results = web_search(
                    question,
                    context_hits,
                    self.search_provider,
                    index=self.index,
                    allowlist=self.config.allowlist or (),
                    cap=self.config.web_result_cap,
                )
                used_web = bool(web_results)
            except (ProviderUnavailable, QuotaExceeded) as exc:
                logger.warning("web search degraded to local-only: %s", exc)
        ctx = merge_context(context_hits, web_results, index=self.index)
        prompt = build_prompt_within_budget(
            question, ctx, self.config.template, byte_budget=self.config.byte_budget
        )
        answer = generate_answer(prompt, self.backend)
        return AskOutcome(
            answer=answer.text,
            citations=answer.citations,
            hits=tuple(hits),
            clarification=None,
            used_web=used_web,
        )

    # --- entry point ---------------------------------------------------------------

    def ask(self, question: str) -> AskOutcome:
        tree = self.route_tree(question)
        if tree is not None:
            return self.ask_tree(tree, question)
        return self.ask_rag(question)


# --- corpus composition helpers ------------------------------------------------------

def narrative_chunks(tables: list[Table]) -> list[Chunk]:
    """One retrievable chunk per table narrative (template parser)."""
    chunks = []
    for table in tables:
        narrative = textualize_table(table)
        text = narrative.unified_text
        if table.caption:
            text = f"{table.caption}\n{text}"
        chunks.append(
            Chunk(
                id=f"{table.id}:text",
                doc_id=table.id,
                heading=table.caption,
                text=text,
                term_count=len(tokenize(text)),
                ordinal=0,
            )
        )
    return chunks


def tree_qa_chunks(pairs: list[QAPair]) -> list[Chunk]:
    """Tree Q&A pairs as discrete retrievable units, for serving tree
    knowledge through retrieval instead of the live dialogue."""
    chunks = []
    for pair in pairs:
        text = f"{pair.question}\n{pair.answer}"
        chunks.append(
            Chunk(
                id=f"{pair.id}:text",
                doc_id=pair.source_refs[0] if pair.source_refs else pair.id,
                heading=None,
                text=text,
                term_count=len(tokenize(text)),
                ordinal=0,
            )
        )
    return chunks
