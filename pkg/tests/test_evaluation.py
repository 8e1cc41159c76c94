import random

import pytest

from caprag.corpus import Domain
from caprag.errors import (
    DimensionMismatch,
    EmptySequence,
    LabelOnCorrect,
    MissingComponent,
)
from caprag.evaluation import (
    EXPERIMENT_PRESETS,
    ErrorCategory,
    EvalReport,
    ExperimentToggles,
    SimilarityScore,
    TokenEmbeddingSequence,
    apply_error_labels,
    category_counts,
    classify,
    label_error,
    render_accuracy_table,
    run_experiment,
    similarity_score,
)
from caprag.retrieval import HashEmbeddingProvider
from helpers import OneHotEmbedder, build_eval_fixture, eval_presets


def _sequence(text, embedder):
    return TokenEmbeddingSequence.from_text(text, embedder)


class TestSimilarityScore:
    def test_identical_sequences(self):
        embedder = HashEmbeddingProvider(dimension=512)
        seq = _sequence("fresh hay every morning", embedder)
        score = similarity_score(seq, seq)
        assert score.precision == pytest.approx(1.0, abs=1e-9)
        assert score.recall == pytest.approx(1.0, abs=1e-9)
        assert score.f1 == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal_sequences(self):
        embedder = OneHotEmbedder(["a", "b", "c", "d"])
        score = similarity_score(
            _sequence("a b", embedder), _sequence("c d", embedder)
        )
        assert score == SimilarityScore(precision=0.0, recall=0.0, f1=0.0)

    def test_one_hot_subset(self):
        embedder = OneHotEmbedder(["a", "b"])
        score = similarity_score(_sequence("a", embedder), _sequence("a b", embedder))
        assert score.precision == pytest.approx(1.0, abs=1e-9)
        assert score.recall == pytest.approx(0.5, abs=1e-9)
        assert score.f1 == pytest.approx(2.0 / 3.0, abs=1e-9)

    def test_swap_symmetry_and_permutation_invariance(self):
        rng = random.Random(2024)
        embedder = HashEmbeddingProvider(dimension=512)
        vocabulary = [f"tok{i}" for i in range(40)]
        for _ in range(500):
            left = [rng.choice(vocabulary) for _ in range(rng.randint(1, 10))]
            right = [rng.choice(vocabulary) for _ in range(rng.randint(1, 10))]
            a = _sequence(" ".join(left), embedder)
            b = _sequence(" ".join(right), embedder)
            forward = similarity_score(a, b)
            backward = similarity_score(b, a)
            assert forward.precision == pytest.approx(backward.recall, abs=1e-12)
            assert forward.recall == pytest.approx(backward.precision, abs=1e-12)
            assert forward.f1 == pytest.approx(backward.f1, abs=1e-12)
            # nonnegative-similarity embeddings keep all three in [0, 1]
            for value in (forward.precision, forward.recall, forward.f1):
                assert -1e-12 <= value <= 1.0 + 1e-12
            shuffled = list(left)
            rng.shuffle(shuffled)
            permuted = similarity_score(_sequence(" ".join(shuffled), embedder), b)
            assert permuted.precision == pytest.approx(forward.precision, abs=1e-12)
            assert permuted.recall == pytest.approx(forward.recall, abs=1e-12)

    def test_appending_matching_token_never_decreases_recall(self):
        embedder = OneHotEmbedder(["a", "b", "c", "d"])
        reference = _sequence("a b c", embedder)
        base = similarity_score(_sequence("a d", embedder), reference)
        extended = similarity_score(_sequence("a d b", embedder), reference)
        assert extended.recall >= base.recall

    def test_empty_sequence_rejected(self):
        embedder = OneHotEmbedder(["a"])
        with pytest.raises(EmptySequence):
            similarity_score(_sequence("", embedder), _sequence("a", embedder))

    def test_dimension_mismatch(self):
        a = _sequence("a", OneHotEmbedder(["a"]))
        b = _sequence("a b", OneHotEmbedder(["a", "b"]))
        with pytest.raises(DimensionMismatch):
            similarity_score(a, b)


class TestClassify:
    def test_boundary_inclusive(self):
        assert classify(SimilarityScore(1, 1, 0.85)).correct is True

    def test_just_below_boundary(self):
        assert classify(SimilarityScore(1, 1, 0.8499)).correct is False

    def test_threshold_override(self):
        assert classify(SimilarityScore(1, 1, 0.87), threshold=0.9).correct is False


class TestErrorLabels:
    def _record(self, correct):
        from caprag.evaluation import EvalRecord, Verdict

        return EvalRecord(
            pair_id="p1",
            split="validation",
            kind="text",
            domain=Domain.NUTRITION,
            question="q",
            reference="r",
            candidate="c",
            score=SimilarityScore(0, 0, 1.0 if correct else 0.0),
            verdict=Verdict(correct=correct),
            correct_rate=1.0 if correct else 0.0,
        )

    def test_label_incorrect_record(self):
        labelled = label_error(self._record(False), ErrorCategory.OMISSION)
        assert labelled.category is ErrorCategory.OMISSION

    def test_label_on_correct_rejected(self):
        with pytest.raises(LabelOnCorrect):
            label_error(self._record(True), ErrorCategory.OMISSION)

    def test_category_counts_by_domain(self):
        report = EvalReport(
            experiment_id="Exp1",
            toggles=ExperimentToggles(),
            records=[
                label_error(self._record(False), ErrorCategory.OMISSION),
                label_error(self._record(False), ErrorCategory.HALLUCINATION),
            ],
        )
        counts = category_counts(report)
        assert counts["omission"]["nutrition"] == 1
        assert counts["hallucination"]["nutrition"] == 1

    def test_apply_labels_from_mapping(self):
        report = EvalReport(
            experiment_id="Exp1",
            toggles=ExperimentToggles(),
            records=[self._record(False)],
        )
        updated = apply_error_labels(report, {"p1": ErrorCategory.NON_ERROR})
        assert updated.records[0].category is ErrorCategory.NON_ERROR

    def test_reference_distribution_aggregates(self):
        # A 16-error batch labelled 8/3/2/3 tallies cleanly per category.
        composition = [
            (ErrorCategory.OMISSION, 8),
            (ErrorCategory.HALLUCINATION, 3),
            (ErrorCategory.UNSUPPORTED_REASONING, 2),
            (ErrorCategory.NON_ERROR, 3),
        ]
        records = []
        for category, count in composition:
            for _ in range(count):
                records.append(label_error(self._record(False), category))
        report = EvalReport(
            experiment_id="Exp5", toggles=ExperimentToggles(), records=records
        )
        counts = category_counts(report)
        totals = {cat: sum(row.values()) for cat, row in counts.items()}
        assert totals == {
            "omission": 8,
            "hallucination": 3,
            "unsupported_reasoning": 2,
            "non_error": 3,
        }

    def test_load_labels_file(self, tmp_path):
        import json

        from caprag.evaluation import load_error_labels

        rows = tmp_path / "labels.json"
        rows.write_text(
            json.dumps([{"pair_id": "p1", "category": "omission"}]), encoding="utf-8"
        )
        assert load_error_labels(rows) == {"p1": ErrorCategory.OMISSION}
        obj = tmp_path / "labels_obj.json"
        obj.write_text(json.dumps({"p2": "hallucination"}), encoding="utf-8")
        assert load_error_labels(obj) == {"p2": ErrorCategory.HALLUCINATION}


class TestExperimentPresets:
    def test_exp1_all_off(self):
        toggles = EXPERIMENT_PRESETS["Exp1"].toggles
        assert toggles == ExperimentToggles(False, False, False, False)

    def test_exp2_retrieval_only(self):
        toggles = EXPERIMENT_PRESETS["Exp2"].toggles
        assert toggles == ExperimentToggles(True, False, False, False)

    def test_exp6_all_on(self):
        toggles = EXPERIMENT_PRESETS["Exp6"].toggles
        assert toggles == ExperimentToggles(True, True, True, True)

    def test_defaults(self):
        preset = EXPERIMENT_PRESETS["Exp2"]
        assert preset.retrieval.alpha == 0.3
        assert preset.retrieval.top_k == 3
        assert preset.bm25.k1 == 1.5
        assert preset.bm25.b == 0.75
        assert preset.threshold == 0.85
        assert preset.repetitions == 3


@pytest.fixture(scope="module")
def fixture():
    corpus, dataset, handles = build_eval_fixture()
    presets = eval_presets()
    reports = {
        name: run_experiment(preset, dataset, handles)
        for name, preset in presets.items()
    }
    return dataset, handles, reports


class TestRunExperiment:
    def test_exp2_strictly_beats_exp1(self, fixture):
        _, _, reports = fixture
        assert reports["Exp2"].accuracy(split="validation") > reports["Exp1"].accuracy(
            split="validation"
        )

    def test_tree_accuracy_by_preset(self, fixture):
        _, _, reports = fixture
        for name in ("Exp1", "Exp2", "Exp3"):
            assert reports[name].accuracy(split="validation", kind="tree") == 0.0
        for name in ("Exp4", "Exp5"):
            assert reports[name].accuracy(split="validation", kind="tree") == 1.0

    def test_table_accuracy_unlocked_by_textualization(self, fixture):
        _, _, reports = fixture
        assert reports["Exp2"].accuracy(split="validation", kind="table") == 0.0
        assert reports["Exp3"].accuracy(split="validation", kind="table") == 1.0

    def test_new_question_needs_web(self, fixture):
        _, _, reports = fixture
        for name in ("Exp2", "Exp3", "Exp4", "Exp5"):
            assert reports[name].accuracy(split="test") == 0.0
        assert reports["Exp6"].accuracy(split="test") == 1.0
        record = [r for r in reports["Exp6"].records if r.split == "test"][0]
        assert "goat milk yield" in record.candidate

    def test_repetition_mean_equals_single_run(self, fixture):
        dataset, handles, reports = fixture
        three = run_experiment(eval_presets(repetitions=3)["Exp2"], dataset, handles)
        single = reports["Exp2"]
        for a, b in zip(three.records, single.records):
            assert a.correct_rate == b.correct_rate
            assert a.candidate == b.candidate

    def test_aggregate_equals_recomputation(self, fixture):
        _, _, reports = fixture
        report = reports["Exp5"]
        rows = [r for r in report.records if r.split == "validation"]
        manual = sum(r.correct_rate for r in rows) / len(rows)
        assert report.accuracy(split="validation") == pytest.approx(manual)

    def test_domain_row_average_over_domain_columns(self, fixture):
        _, _, reports = fixture
        row = reports["Exp5"].domain_row(split="validation")
        present = [row[d.value] for d in Domain if row[d.value] is not None]
        assert row["average"] == pytest.approx(sum(present) / len(present))

    def test_render_table_layout(self, fixture):
        _, _, reports = fixture
        text = render_accuracy_table(list(reports.values()), split="validation")
        lines = text.splitlines()
        assert lines[0].startswith("Experiment")
        assert "Average" in lines[0]
        assert len(lines) == 1 + 6

    def test_missing_web_provider_rejected(self, fixture):
        dataset, handles, _ = fixture
        from dataclasses import replace

        broken = replace(handles)
        broken.search_provider = None
        with pytest.raises(MissingComponent):
            run_experiment(eval_presets()["Exp6"], dataset, broken)

    def test_report_save_round_trip(self, fixture, tmp_path):
        import json

        _, _, reports = fixture
        path = tmp_path / "report.json"
        reports["Exp2"].save(path)
        payload = json.loads(path.read_text())
        assert payload["experiment"] == "Exp2"
        assert payload["toggles"]["local_retrieval"] is True
        assert len(payload["records"]) == len(reports["Exp2"].records)
