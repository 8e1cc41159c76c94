import pytest

from caprag.corpus import Chunk, Domain
from caprag.errors import EmptyChunk, OversizePrompt, TemplateError
from caprag.generate import (
    DEFAULT_TEMPLATE,
    ChatCompletionBackend,
    MockLLMBackend,
    PromptTemplate,
    build_prompt,
    build_prompt_within_budget,
    generate_answer,
    generate_text_qa,
    load_template,
    parse_template,
    save_template,
)
from caprag.llm import MockChatClient
from caprag.websearch import ContextBlock


def _blocks(n=3):
    return [
        ContextBlock(origin="local", ref=f"c{i}", text=f"Sentence number {i} is here. Extra tail {i}.")
        for i in range(1, n + 1)
    ]


def _chunk(text="FEEDING\nGive fresh hay daily. Clean the trough. Check water.", heading="FEEDING"):
    from caprag.retrieval import tokenize

    return Chunk(
        id="doc#0",
        doc_id="doc",
        heading=heading,
        text=text,
        term_count=len(tokenize(text)),
        ordinal=0,
    )


class TestBuildPrompt:
    def test_zero_blocks(self):
        prompt = build_prompt("How much hay?", [])
        assert prompt.blocks == ()
        assert prompt.full_text() == (
            DEFAULT_TEMPLATE.system_instructions + "\n\nQuestion: How much hay?"
        )

    def test_blocks_keep_rank_order(self):
        prompt = build_prompt("q?", _blocks())
        assert [b.ref for b in prompt.blocks] == ["c1", "c2", "c3"]
        assert prompt.rendered_blocks[0] == "[local:c1] Sentence number 1 is here. Extra tail 1."

    def test_byte_length_exact(self):
        prompt = build_prompt("q?", _blocks(2))
        assert prompt.byte_length == len(prompt.full_text().encode("utf-8"))

    def test_empty_question_rejected(self):
        with pytest.raises(ValueError):
            build_prompt("  ", [])

    def test_budget_drops_lowest_ranked_block(self):
        blocks = _blocks(3)
        full = build_prompt("q?", blocks)
        two = build_prompt("q?", blocks[:2])
        budget = full.byte_length - 1
        trimmed = build_prompt_within_budget("q?", blocks, byte_budget=budget)
        assert [b.ref for b in trimmed.blocks] == ["c1", "c2"]
        assert trimmed.byte_length == two.byte_length

    def test_budget_too_small_even_for_empty(self):
        with pytest.raises(OversizePrompt):
            build_prompt_within_budget("q?", _blocks(1), byte_budget=10)

    def test_oversize_raises_without_budget_helper(self):
        with pytest.raises(OversizePrompt):
            build_prompt("q?", _blocks(3), byte_budget=20)

    def test_template_placeholder_validation(self):
        bad = PromptTemplate(
            id="bad",
            system_instructions="s",
            context_block_format="{text} only",
            query_format="{question}",
        )
        with pytest.raises(TemplateError):
            build_prompt("q?", [], bad)


class TestBackends:
    def test_mock_concatenates_first_sentences(self):
        prompt = build_prompt("q?", _blocks(2))
        answer = generate_answer(prompt, MockLLMBackend())
        assert answer.text == "MOCK: Sentence number 1 is here. Sentence number 2 is here."

    def test_mock_no_blocks(self):
        prompt = build_prompt("q?", [])
        answer = generate_answer(prompt, MockLLMBackend())
        assert answer.text == "MOCK:"

    def test_mock_deterministic(self):
        prompt = build_prompt("q?", _blocks(3))
        backend = MockLLMBackend()
        assert generate_answer(prompt, backend) == generate_answer(prompt, backend)

    def test_citations_match_blocks(self):
        prompt = build_prompt("q?", _blocks(2))
        answer = generate_answer(prompt, MockLLMBackend())
        assert [(c.origin, c.ref) for c in answer.citations] == [
            ("local", "c1"),
            ("local", "c2"),
        ]

    def test_exchange_records_request_and_response(self):
        prompt = build_prompt("q?", _blocks(1))
        answer = generate_answer(prompt, MockLLMBackend())
        assert answer.exchange is not None
        assert answer.exchange.prompt is prompt
        assert answer.exchange.response.text == answer.text
        assert answer.exchange.response.finish_reason == "stop"

    def test_empty_completion_rejected(self):
        class EmptyBackend:
            def generate(self, prompt, settings=None):
                from caprag.llm import ChatResponse

                return ChatResponse(text="")

        from caprag.errors import BackendUnavailable

        with pytest.raises(BackendUnavailable):
            generate_answer(build_prompt("q?", []), EmptyBackend())

    def test_chat_completion_backend_renders_wire_request(self):
        client = MockChatClient(responses={"Question: q?": "wire answer"})
        backend = ChatCompletionBackend(client)
        prompt = build_prompt("q?", _blocks(1))
        answer = generate_answer(prompt, backend)
        assert answer.text == "wire answer"
        system, user = client.calls[0]
        assert system == DEFAULT_TEMPLATE.system_instructions
        assert "[local:c1]" in user
        assert user.endswith("Question: q?")


class TestTextQA:
    def test_mock_pair_uses_heading(self):
        pairs = generate_text_qa(_chunk(), MockLLMBackend(), domain=Domain.NUTRITION)
        assert len(pairs) == 1
        assert pairs[0].question == "What does the section FEEDING cover?"
        assert pairs[0].answer == "Give fresh hay daily. Clean the trough."
        assert pairs[0].kind == "text"
        assert pairs[0].source_refs == ("doc#0",)

    def test_mock_pair_without_heading(self):
        chunk = _chunk(text="Plain prose sentence one. Sentence two.", heading=None)
        pairs = generate_text_qa(chunk, MockLLMBackend(), domain=Domain.REARING)
        assert pairs[0].question == (
            'What does the passage starting with "Plain prose sentence one." cover?'
        )

    def test_blank_chunk_rejected(self):
        chunk = _chunk(text="   ", heading=None)
        with pytest.raises(EmptyChunk):
            generate_text_qa(chunk, MockLLMBackend(), domain=Domain.REARING)

    def test_three_chunks_three_pairs(self):
        backend = MockLLMBackend()
        chunks = [_chunk(), _chunk(text="HOUSING\nKeep dry.", heading="HOUSING"),
                  _chunk(text="WATER\nRefill often.", heading="WATER")]
        pairs = [
            p
            for c in chunks
            for p in generate_text_qa(c, backend, domain=Domain.NUTRITION)
        ]
        assert len(pairs) == 3

    def test_production_backend_parses_qa_lines(self):
        client = MockChatClient(
            responses={"passage": "Q: How often to feed?\nA: Daily.\nQ: What feed?\nA: Hay."}
        )
        backend = ChatCompletionBackend(client)
        pairs = generate_text_qa(_chunk(), backend, domain=Domain.NUTRITION)
        assert [(p.question, p.answer) for p in pairs] == [
            ("How often to feed?", "Daily."),
            ("What feed?", "Hay."),
        ]

    def test_production_backend_fallback_single_pair(self):
        client = MockChatClient(responses={"passage": "no structured output"})
        backend = ChatCompletionBackend(client)
        pairs = generate_text_qa(_chunk(), backend, domain=Domain.NUTRITION)
        assert len(pairs) == 1
        assert pairs[0].answer == "no structured output"

    def test_table_kind_passthrough(self):
        pairs = generate_text_qa(
            _chunk(), MockLLMBackend(), domain=Domain.NUTRITION, kind="table"
        )
        assert pairs[0].kind == "table"


class TestTemplateFiles:
    def test_parse_sections(self):
        template = parse_template(
            "[system]\nBe helpful.\n[context]\n[{provenance}] {text}\n[query]\nQ: {question}",
            "custom",
        )
        assert template.system_instructions == "Be helpful."
        assert template.query_format == "Q: {question}"

    def test_missing_section(self):
        with pytest.raises(TemplateError, match="missing sections"):
            parse_template("[system]\nonly system", "broken")

    def test_save_load_round_trip(self, tmp_path):
        path = tmp_path / "tpl.txt"
        save_template(DEFAULT_TEMPLATE, path)
        loaded = load_template(path)
        assert loaded.system_instructions == DEFAULT_TEMPLATE.system_instructions
        assert loaded.context_block_format == DEFAULT_TEMPLATE.context_block_format
        assert loaded.query_format == DEFAULT_TEMPLATE.query_format
