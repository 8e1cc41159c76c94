"""Augmented-prompt assembly and answer generation over pluggable backends.

Prompts fuse system instructions, ranked context blocks (each tagged with
its provenance), and the user question through an editable template.
Context never changes model weights; it is injected per request. The
deterministic mock backend makes the whole pipeline reproducible for tests;
the HTTP backend speaks the open chat-completion schema via ``llm``.

This module also turns chunks into question/answer pairs for the
validation dataset.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

from .corpus import Chunk, Domain, QAPair, content_id
from .errors import BackendUnavailable, EmptyChunk, OversizePrompt, TemplateError
from .llm import ChatClient, ChatResponse, DEFAULT_SETTINGS, GenerationSettings
from .textutil import first_sentences
from .websearch import CompositeContext, ContextBlock


@dataclass(frozen=True)
class PromptTemplate:
    """Three-part template; each placeholder must appear exactly once."""

    id: str
    system_instructions: str
    context_block_format: str  # placeholders {provenance} {text}
    query_format: str  # placeholder {question}

    def validate(self) -> None:
        for part, text, placeholder in (
            ("context", self.context_block_format, "{provenance}"),
            ("context", self.context_block_format, "{text}"),
            ("query", self.query_format, "{question}"),
        ):
            if text.count(placeholder) != 1:
                raise TemplateError(
                    f"template {self.id!r}: {part} format needs {placeholder} exactly once"
                )


DEFAULT_TEMPLATE = PromptTemplate(
    id="default",
    system_instructions=(
        "You are a goat-farming advisory assistant. Answer using only the "
        "context blocks below and say when they are insufficient."
    ),
    context_block_format="[{provenance}] {text}",
    query_format="Question: {question}",
)


@dataclass(frozen=True)
class AugmentedPrompt:
    """Rendered prompt: system text, context blocks in merged order, query."""

    system: str
    blocks: tuple[ContextBlock, ...]
    rendered_blocks: tuple[str, ...]
    question: str
    rendered_question: str
    byte_length: int

    def full_text(self) -> str:
        return "\n\n".join([self.system, *self.rendered_blocks, self.rendered_question])


@dataclass(frozen=True)
class Citation:
    origin: str  # "local" | "web"
    ref: str


@dataclass(frozen=True)
class LLMExchange:
    """One backend call: the structured request and its response."""

    prompt: AugmentedPrompt
    settings: GenerationSettings
    response: ChatResponse


@dataclass(frozen=True)
class Answer:
    text: str
    citations: tuple[Citation, ...]
    exchange: LLMExchange | None = None


def _blocks_of(ctx: CompositeContext | Sequence[ContextBlock]) -> tuple[ContextBlock, ...]:
    if isinstance(ctx, CompositeContext):
        return ctx.merged
    return tuple(ctx)


def build_prompt(
    question: str,
    ctx: CompositeContext | Sequence[ContextBlock],
    template: PromptTemplate = DEFAULT_TEMPLATE,
    *,
    byte_budget: int | None = None,
) -> AugmentedPrompt:
    """Deterministically render the prompt; blocks keep their merged order.

    Raises:
        OversizePrompt: rendered size exceeds the byte budget.
    """
    if not question.strip():
        raise ValueError("question must be non-empty")
    template.validate()
    blocks = _blocks_of(ctx)
    rendered_blocks = tuple(
        template.context_block_format.format(
            provenance=f"{block.origin}:{block.ref}", text=block.text
        )
        for block in blocks
    )
    rendered_question = template.query_format.format(question=question)
    prompt = AugmentedPrompt(
        system=template.system_instructions,
        blocks=blocks,
        rendered_blocks=rendered_blocks,
        question=question,
        rendered_question=rendered_question,
        byte_length=0,
    )
    byte_length = len(prompt.full_text().encode("utf-8"))
    prompt = AugmentedPrompt(
        system=prompt.system,
        blocks=prompt.blocks,
        rendered_blocks=prompt.rendered_blocks,
        question=prompt.question,
        rendered_question=prompt.rendered_question,
        byte_length=byte_length,
    )
    if byte_budget is not None and byte_length > byte_budget:
        raise OversizePrompt(
            f"prompt is {byte_length} bytes, budget is {byte_budget}"
        )
    return prompt


def build_prompt_within_budget(
    question: str,
    ctx: CompositeContext | Sequence[ContextBlock],
    template: PromptTemplate = DEFAULT_TEMPLATE,
    *,
    byte_budget: int | None = None,
) -> AugmentedPrompt:
    """Like build_prompt, dropping lowest-ranked blocks until it fits."""
    blocks = list(_blocks_of(ctx))
    while True:
        try:
            return build_prompt(question, blocks, template, byte_budget=byte_budget)
        except OversizePrompt:
            if not blocks:
                raise
            blocks.pop()


# --- backends -------------------------------------------------------------------

class LLMBackend(Protocol):
    """Structured-prompt completion: an AugmentedPrompt in, text out."""

    def generate(
        self, prompt: AugmentedPrompt, settings: GenerationSettings | None = None
    ) -> ChatResponse: ...


class MockLLMBackend:
    """Deterministic backend: the first sentence of each context block,
    concatenated and prefixed "MOCK:"."""

    def generate(
        self, prompt: AugmentedPrompt, settings: GenerationSettings | None = None
    ) -> ChatResponse:
        sentences = [first_sentences(block.text, 1) for block in prompt.blocks]
        sentences = [s for s in sentences if s]
        text = "MOCK: " + " ".join(sentences) if sentences else "MOCK:"
        return ChatResponse(text=text)


class ChatCompletionBackend:
    """Production backend delegating to a wire-level chat client."""

    def __init__(self, client: ChatClient, settings: GenerationSettings | None = None) -> None:
        self.client = client
        self.settings = settings or GenerationSettings()

    def generate(
        self, prompt: AugmentedPrompt, settings: GenerationSettings | None = None
    ) -> ChatResponse:
        user = "\n\n".join([*prompt.rendered_blocks, prompt.rendered_question])
        return self.client.complete(prompt.system, user, settings or self.settings)


def generate_answer(
    prompt: AugmentedPrompt,
    backend: LLMBackend,
    settings: GenerationSettings | None = None,
) -> Answer:
    """Answer text plus the provenance of every block in the prompt."""
    response = backend.generate(prompt, settings)
    if not response.text:
        raise BackendUnavailable("backend returned an empty completion")
    citations = tuple(Citation(origin=b.origin, ref=b.ref) for b in prompt.blocks)
    return Answer(
        text=response.text,
        citations=citations,
        exchange=LLMExchange(
            prompt=prompt, settings=settings or DEFAULT_SETTINGS, response=response
        ),
    )


# --- Q&A pair generation ----------------------------------------------------------

_QA_SYSTEM = (
    "You write exam-style question/answer pairs about the passage. Reply "
    "with lines starting 'Q:' and 'A:' only."
)


def _chunk_body(chunk: Chunk) -> str:
    if chunk.heading and chunk.text.startswith(chunk.heading):
        return chunk.text[len(chunk.heading):].lstrip("\n")
    return chunk.text


def _mock_pair_texts(chunk: Chunk) -> tuple[str, str]:
    if chunk.heading:
        question = f"What does the section {chunk.heading} cover?"
    else:
        # No heading to cite, so quote the opening words; they double as
        # retrieval keys when these pairs are evaluated.
        opening = " ".join(first_sentences(chunk.text, 1).split()[:6])
        question = f'What does the passage starting with "{opening}" cover?'
    body = _chunk_body(chunk)
    answer = first_sentences(body, 2) or first_sentences(chunk.text, 2)
    return question, answer


def _parse_qa_lines(text: str) -> list[tuple[str, str]]:
    pairs: list[tuple[str, str]] = []
    question: str | None = None
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.lower().startswith("q:"):
            question = stripped[2:].strip()
        elif stripped.lower().startswith("a:") and question:
            answer = stripped[2:].strip()
            if answer:
                pairs.append((question, answer))
            question = None
    return pairs


def generate_text_qa(
    chunk: Chunk,
    backend: LLMBackend,
    *,
    domain: Domain,
    kind: str = "text",
) -> list[QAPair]:
    """At least one Q&A pair per chunk.

    The mock backend emits one templated pair; a production backend is
    instructed to produce Q:/A: lines, which are parsed into pairs (falling
    back to a single pair holding the whole response).

    Raises:
        EmptyChunk: the chunk text is blank.
    """
    if not chunk.text.strip():
        raise EmptyChunk(f"chunk {chunk.id!r} is blank")
    if isinstance(backend, MockLLMBackend):
        question, answer = _mock_pair_texts(chunk)
        texts = [(question, answer)]
    else:
        block = ContextBlock(origin="local", ref=chunk.id, text=chunk.text)
        template = PromptTemplate(
            id="qa-generation",
            system_instructions=_QA_SYSTEM,
            context_block_format="[{provenance}] {text}",
            query_format="{question}",
        )
        prompt = build_prompt(
            "Write question/answer pairs covering this passage.", [block], template
        )
        response = backend.generate(prompt)
        texts = _parse_qa_lines(response.text)
        if not texts:
            fallback_q, _ = _mock_pair_texts(chunk)
            texts = [(fallback_q, response.text.strip())]
    return [
        QAPair(
            id=content_id(chunk.id, str(i), question, prefix=f"qa-{kind}-"),
            kind=kind,
            domain=domain,
            question=question,
            answer=answer,
            source_refs=(chunk.id,),
        )
        for i, (question, answer) in enumerate(texts)
    ]


# --- template files ----------------------------------------------------------------

_SECTION_NAMES = ("system", "context", "query")


def parse_template(text: str, template_id: str) -> PromptTemplate:
    """Parse an editable template file with [system]/[context]/[query]
    sections."""
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for line in text.split("\n"):
        name = line.strip().lower()
        if name.startswith("[") and name.endswith("]") and name[1:-1] in _SECTION_NAMES:
            current = name[1:-1]
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
    missing = [name for name in _SECTION_NAMES if name not in sections]
    if missing:
        raise TemplateError(f"template {template_id!r}: missing sections {missing}")
    template = PromptTemplate(
        id=template_id,
        system_instructions="\n".join(sections["system"]).strip(),
        context_block_format="\n".join(sections["context"]).strip(),
        query_format="\n".join(sections["query"]).strip(),
    )
    template.validate()
    return template


def load_template(path: str | Path) -> PromptTemplate:
    path = Path(path)
    return parse_template(path.read_text(encoding="utf-8"), path.stem)


def save_template(template: PromptTemplate, path: str | Path) -> None:
    Path(path).write_text(
        "[system]\n"
        f"{template.system_instructions}\n"
        "[context]\n"
        f"{template.context_block_format}\n"
        "[query]\n"
        f"{template.query_format}\n",
        encoding="utf-8",
    )
