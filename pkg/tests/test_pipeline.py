import pytest

from caprag.errors import ProviderUnavailable
from caprag.generate import MockLLMBackend
from caprag.pipeline import AnswerPipeline, PipelineConfig, narrative_chunks, tree_qa_chunks
from caprag.retrieval import HashEmbeddingProvider, HybridParams, build_index
from caprag.treex import generate_tree_qa
from caprag.websearch import FixtureSearchProvider, TriggerConfig
from helpers import EVAL_TABLE, make_chunk, diarrhea_tree


@pytest.fixture()
def index():
    chunks = [
        make_chunk("c-feed", "Lactating goats eat alfalfa hay every morning."),
        make_chunk("c-vax", "Clostridial boosters follow the first vaccine dose."),
        make_chunk("c-house", "Straw bedding keeps pens dry and warm."),
    ]
    return build_index(chunks, HashEmbeddingProvider(dimension=2048))


def _pipeline(index, **kwargs):
    defaults = dict(
        trees=None,
        search_provider=None,
        config=PipelineConfig(retrieval=HybridParams(top_k=2), min_context_score=0.2),
    )
    defaults.update(kwargs)
    return AnswerPipeline(MockLLMBackend(), index, **defaults)


class TestRagFlow:
    def test_answer_cites_matching_chunk(self, index):
        pipeline = _pipeline(index)
        outcome = pipeline.ask("What do lactating goats eat in the morning?")
        assert outcome.answer.startswith("MOCK:")
        assert "alfalfa" in outcome.answer
        assert outcome.citations[0].ref == "c-feed"
        assert outcome.used_web is False
        assert outcome.clarification is None

    def test_deterministic(self, index):
        pipeline = _pipeline(index)
        first = pipeline.ask("What do lactating goats eat in the morning?")
        second = pipeline.ask("What do lactating goats eat in the morning?")
        assert first == second

    def test_no_index_means_no_context(self):
        pipeline = AnswerPipeline(MockLLMBackend(), None)
        outcome = pipeline.ask_rag("Anything at all?")
        assert outcome.answer == "MOCK:"
        assert outcome.citations == ()

    def test_low_scoring_hits_kept_out_of_prompt(self, index):
        pipeline = _pipeline(index)
        outcome = pipeline.ask_rag("zebra quantum xylophone")
        assert outcome.answer == "MOCK:"
        assert outcome.citations == ()
        assert len(outcome.hits) == 2  # hits still reported with their scores


class TestWebFlow:
    def _provider(self):
        return FixtureSearchProvider(
            fixtures={
                "latest research": [
                    {
                        "title": "t",
                        "url": "https://research.example/goats",
                        "snippet": "Fresh findings on goat genetics emerged.",
                    }
                ]
            },
            default=[],
        )

    def test_keyword_triggers_web(self, index):
        pipeline = _pipeline(index, search_provider=self._provider())
        outcome = pipeline.ask("any latest research on goats?")
        assert outcome.used_web is True
        assert any(c.origin == "web" for c in outcome.citations)
        assert "Fresh findings" in outcome.answer

    def test_provider_failure_degrades_to_local(self, index):
        class DeadProvider:
            def search(self, query, cap):
                raise ProviderUnavailable("down")

        pipeline = _pipeline(index, search_provider=DeadProvider())
        outcome = pipeline.ask("latest research on alfalfa feeding for goats?")
        assert outcome.used_web is False
        assert outcome.answer.startswith("MOCK:")

    def test_web_disabled_is_pure_function_of_index_and_query(self, index):
        config = PipelineConfig(
            retrieval=HybridParams(top_k=2),
            trigger=TriggerConfig(enabled=False),
            min_context_score=0.2,
        )
        provider = self._provider()
        pipeline = _pipeline(index, search_provider=provider, config=config)
        outcome = pipeline.ask("any latest research on goats?")
        assert outcome.used_web is False
        assert provider.queries == []


class TestTreeFlow:
    def test_routing_to_clarification(self, index):
        pipeline = _pipeline(index, trees=[diarrhea_tree()])
        outcome = pipeline.ask("my lamb has diarrhea")
        assert outcome.clarification is not None
        assert outcome.answer is None
        assert outcome.tree_id == "tree-diarrhea"
        assert [q.attribute for q in outcome.clarification.questions] == [
            "severity",
            "duration",
            "clinical pattern",
        ]

    def test_full_symptoms_diagnose_directly(self, index):
        pipeline = _pipeline(index, trees=[diarrhea_tree()])
        outcome = pipeline.ask(
            "my lamb has mild diarrhea for 1–3 weeks with "
            "variable signs & lambs limping"
        )
        assert outcome.answer == "The likely diagnosis is Rota/coronavirus/Giardia."
        assert outcome.diagnosis is not None
        assert outcome.citations[0].ref == "tree-diarrhea"

    def test_unrelated_question_skips_tree(self, index):
        pipeline = _pipeline(index, trees=[diarrhea_tree()])
        outcome = pipeline.ask("What do lactating goats eat in the morning?")
        assert outcome.clarification is None
        assert outcome.tree_id is None

    def test_routing_disabled_by_config(self, index):
        config = PipelineConfig(
            retrieval=HybridParams(top_k=2), tree_routing=False, min_context_score=0.2
        )
        pipeline = _pipeline(index, trees=[diarrhea_tree()], config=config)
        outcome = pipeline.ask("my lamb has diarrhea")
        assert outcome.clarification is None


class TestCompositionHelpers:
    def test_narrative_chunks_contain_cells(self):
        (chunk,) = narrative_chunks([EVAL_TABLE])
        assert "Alfalfa" in chunk.text and "17" in chunk.text
        assert chunk.id == "table-feed-protein:text"

    def test_tree_qa_chunks_one_per_pair(self):
        tree = diarrhea_tree()
        pairs = list(generate_tree_qa(tree).pairs)
        chunks = tree_qa_chunks(pairs)
        assert len(chunks) == len(pairs)
        assert chunks[0].text.startswith(pairs[0].question)
