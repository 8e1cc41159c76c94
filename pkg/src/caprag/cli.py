"""Command-line entry points: ingest, textualize, index, ask, eval, serve.

Exit codes: 0 success, 1 unexpected failure, 2 usage error, 3 data error
(corpus/table/tree/eval), 4 missing file or resource, 5 external backend or
provider unavailable.
"""

from __future__ import annotations

import functools
import json
import shutil
import sys
from pathlib import Path

import click

from . import corpus as corpus_mod
from .corpus import Corpus, Domain, load_articles_dir, load_corpus, save_corpus, save_manifest
from .errors import (
    BackendTimeout,
    BackendUnavailable,
    CapragError,
    ProviderUnavailable,
    QuotaExceeded,
)
from .evaluation import (
    EXPERIMENT_PRESETS,
    EvalReport,
    PipelineHandles,
    render_accuracy_table,
    run_experiment,
)
from .generate import DEFAULT_TEMPLATE, MockLLMBackend, ChatCompletionBackend, generate_text_qa, load_template
from .llm import HTTPChatClient
from .pipeline import AnswerPipeline, PipelineConfig, narrative_chunks, tree_qa_chunks
from .retrieval import HashEmbeddingProvider, HTTPEmbeddingProvider, Index, build_index
from .service import KnowledgeService, ServiceConfig, SessionStore, create_app
from .tablex import check_semantic_preservation, load_tables_dir, textualize_table
from .treex import enumerate_paths, generate_tree_qa, load_trees_dir, textualize_path
from .websearch import CustomSearchProvider, FixtureSearchProvider

EXIT_DATA = 3
EXIT_MISSING = 4
EXIT_BACKEND = 5

_BACKEND_ERRORS = (BackendUnavailable, BackendTimeout, ProviderUnavailable, QuotaExceeded)


def _die(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    """Map engine errors to documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _BACKEND_ERRORS as exc:
            _die(EXIT_BACKEND, str(exc))
        except FileNotFoundError as exc:
            _die(EXIT_MISSING, str(exc))
        except CapragError as exc:
            _die(EXIT_DATA, str(exc))

    return wrapper


@click.group()
def main() -> None:
    """Goat-farming knowledge assistant: corpus tools, retrieval, service."""


# --- ingest ---------------------------------------------------------------------

@main.command()
@click.argument("src", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--work", type=click.Path(path_type=Path), required=True, help="Output work directory.")
@click.option("--default-domain", default=None, help="Domain for articles without one.")
@_guarded
def ingest(src: Path, work: Path, default_domain: str | None) -> None:
    """Build the corpus from SRC (articles/, tables/, trees/)."""
    work.mkdir(parents=True, exist_ok=True)
    corpus = Corpus()
    articles_dir = src / "articles"
    if articles_dir.is_dir():
        default = Domain.parse(default_domain) if default_domain else None
        docs = load_articles_dir(corpus, articles_dir, default_domain=default)
        click.echo(f"ingested {len(docs)} articles, {len(corpus.all_chunks())} chunks")
    for name in ("tables", "trees"):
        source_dir = src / name
        if source_dir.is_dir():
            target = work / name
            if target.exists():
                shutil.rmtree(target)
            shutil.copytree(source_dir, target)
    tables_dir = work / "tables"
    if tables_dir.is_dir():
        for table in load_tables_dir(tables_dir):
            if not corpus.knows(table.id):
                corpus.register_source(table.id)
        click.echo(f"registered {len(load_tables_dir(tables_dir))} tables")
    trees_dir = work / "trees"
    if trees_dir.is_dir():
        trees = load_trees_dir(trees_dir)
        for tree in trees:
            if not corpus.knows(tree.id):
                corpus.register_source(tree.id)
        click.echo(f"registered {len(trees)} decision trees")
    test_file = src / "test_questions.json"
    if test_file.is_file():
        shutil.copy(test_file, work / "test_questions.json")
    save_corpus(corpus, work / "corpus.json")
    save_manifest(corpus, work / "manifest.json")
    click.echo(f"wrote {work / 'corpus.json'} and {work / 'manifest.json'}")


# --- textualize ------------------------------------------------------------------

@main.command()
@click.option("--work", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@_guarded
def textualize(work: Path) -> None:
    """Convert tables and decision trees in WORK into narratives and Q&A."""
    tables_dir = work / "tables"
    if tables_dir.is_dir():
        narratives_dir = work / "narratives"
        preservation_dir = work / "preservation"
        narratives_dir.mkdir(exist_ok=True)
        preservation_dir.mkdir(exist_ok=True)
        failed = 0
        tables = load_tables_dir(tables_dir)
        for table in tables:
            narrative = textualize_table(table)
            report = check_semantic_preservation(table, narrative.unified_text)
            (narratives_dir / f"{table.id}.txt").write_text(
                narrative.unified_text + "\n", encoding="utf-8"
            )
            (preservation_dir / f"{table.id}.json").write_text(
                json.dumps(
                    {
                        "source": report.source,
                        "covered": [list(c) for c in report.covered],
                        "missing": [list(m) for m in report.missing],
                        "pass": report.passed,
                    },
                    indent=2,
                )
                + "\n",
                encoding="utf-8",
            )
            if not report.passed:
                failed += 1
        click.echo(f"textualized {len(tables)} tables ({failed} preservation failures)")
    trees_dir = work / "trees"
    if trees_dir.is_dir():
        trees = load_trees_dir(trees_dir)
        qa_records = []
        path_lines = []
        for tree in trees:
            for path in enumerate_paths(tree):
                path_lines.append(textualize_path(path))
            dataset = generate_tree_qa(tree)
            qa_records.extend(
                {
                    "id": p.id,
                    "kind": p.kind,
                    "domain": p.domain.value,
                    "question": p.question,
                    "answer": p.answer,
                    "source_refs": list(p.source_refs),
                }
                for p in dataset.pairs
            )
        (work / "tree_paths.txt").write_text("\n".join(path_lines) + "\n", encoding="utf-8")
        (work / "tree_qa.json").write_text(
            json.dumps(qa_records, indent=2) + "\n", encoding="utf-8"
        )
        click.echo(
            f"textualized {len(trees)} trees: {len(path_lines)} paths, "
            f"{len(qa_records)} interactive Q&A pairs"
        )


# --- index -----------------------------------------------------------------------

def _collect_chunks(work: Path, *, include_tables: bool, tree_mode: str):
    corpus = load_corpus(work / "corpus.json")
    chunks = corpus.all_chunks()
    tables_dir = work / "tables"
    if include_tables and tables_dir.is_dir():
        chunks.extend(narrative_chunks(load_tables_dir(tables_dir)))
    if tree_mode == "indexed" and (work / "trees").is_dir():
        for tree in load_trees_dir(work / "trees"):
            chunks.extend(tree_qa_chunks(list(generate_tree_qa(tree).pairs)))
    return corpus, chunks


@main.command()
@click.option("--work", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--include-tables/--no-include-tables", default=True)
@click.option("--tree-mode", type=click.Choice(["state_machine", "indexed"]), default="state_machine")
@click.option("--embedder", type=click.Choice(["hash", "http"]), default="hash")
@_guarded
def index(work: Path, include_tables: bool, tree_mode: str, embedder: str) -> None:
    """Build and persist the retrieval index."""
    _, chunks = _collect_chunks(work, include_tables=include_tables, tree_mode=tree_mode)
    provider = HTTPEmbeddingProvider() if embedder == "http" else HashEmbeddingProvider()
    config = _load_service_config(work, None)
    built = build_index(chunks, provider, config.bm25_params())
    built.save(work / "index.json")
    click.echo(
        f"indexed {built.stats.N} chunks (dimension {built.dimension}, "
        f"version {built.version}) -> {work / 'index.json'}"
    )


# --- shared service construction ----------------------------------------------------

def _load_service_config(work: Path, config_path: Path | None) -> ServiceConfig:
    if config_path is not None:
        return ServiceConfig.from_file(config_path)
    default_path = work / "config.json"
    if default_path.is_file():
        return ServiceConfig.from_file(default_path)
    return ServiceConfig()


def _build_backend(kind: str):
    if kind == "http":
        return ChatCompletionBackend(HTTPChatClient())
    return MockLLMBackend()


def _build_search_provider(fixtures: Path | None, enabled: bool):
    if not enabled:
        return None
    if fixtures is not None:
        data = json.loads(fixtures.read_text(encoding="utf-8"))
        return FixtureSearchProvider(
            fixtures=data.get("fixtures", {}), default=data.get("default", [])
        )
    import os

    if os.environ.get("SEARCH_API_KEY") and os.environ.get("SEARCH_ENGINE_ID"):
        return CustomSearchProvider()
    return None


def _build_service(
    work: Path,
    *,
    config_path: Path | None,
    backend_kind: str,
    embedder_kind: str,
    search_fixtures: Path | None,
) -> KnowledgeService:
    config = _load_service_config(work, config_path)
    corpus = load_corpus(work / "corpus.json")
    provider = HTTPEmbeddingProvider() if embedder_kind == "http" else HashEmbeddingProvider()
    index_path = work / "index.json"
    if index_path.is_file():
        built = Index.load(index_path, provider)
    else:
        _, chunks = _collect_chunks(
            work, include_tables=True, tree_mode=config.tree_route_mode
        )
        built = build_index(chunks, provider, config.bm25_params())
    trees = []
    if config.tree_routing and config.tree_route_mode == "state_machine" and (work / "trees").is_dir():
        trees = load_trees_dir(work / "trees")
    template = DEFAULT_TEMPLATE
    template_path = work / "templates" / f"{config.prompt_template}.txt"
    if template_path.is_file():
        template = load_template(template_path)
    pipeline = AnswerPipeline(
        _build_backend(backend_kind),
        built,
        trees=trees,
        search_provider=_build_search_provider(search_fixtures, config.web_enabled),
        config=PipelineConfig(
            retrieval=config.hybrid_params(),
            trigger=config.trigger_config(),
            template=template,
            byte_budget=config.byte_budget,
            web_result_cap=config.web_result_cap,
            allowlist=config.allowlist,
            tree_routing=config.tree_routing and bool(trees),
            tree_overlap_threshold=config.tree_overlap_threshold,
        ),
    )
    sessions = SessionStore(
        ttl_seconds=config.session_ttl_seconds,
        persist_path=config.session_store_path,
    )
    domain_by_doc = {d.id: d.domain for d in corpus.documents.values()}
    return KnowledgeService(pipeline, sessions, domain_by_doc=domain_by_doc)


# --- ask --------------------------------------------------------------------------

@main.command()
@click.argument("question")
@click.option("--work", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--backend", type=click.Choice(["mock", "http"]), default="mock")
@click.option("--embedder", type=click.Choice(["hash", "http"]), default="hash")
@click.option("--search-fixtures", type=click.Path(exists=True, path_type=Path), default=None)
@_guarded
def ask(
    question: str,
    work: Path,
    config_path: Path | None,
    backend: str,
    embedder: str,
    search_fixtures: Path | None,
) -> None:
    """Answer one question; clarification turns prompt on the terminal."""
    service = _build_service(
        work,
        config_path=config_path,
        backend_kind=backend,
        embedder_kind=embedder,
        search_fixtures=search_fixtures,
    )
    result = service.handle_ask(question)
    while result.clarification is not None:
        click.echo("I need a little more information.")
        assignments = {}
        for q in result.clarification.questions:
            if q.allowed:
                value = click.prompt(q.prompt, type=click.Choice(list(q.allowed)))
            else:
                value = click.prompt(q.prompt)
            assignments[q.attribute] = value
        result = service.handle_evidence(result.session_id, assignments)
    click.echo(result.answer)
    if result.citations:
        refs = ", ".join(f"{c.origin}:{c.ref}" for c in result.citations)
        click.echo(f"sources: {refs}")
    if result.used_web:
        click.echo("(answer used web search results)")


# --- eval --------------------------------------------------------------------------

def _load_test_pairs(work: Path, corpus: Corpus) -> None:
    test_file = work / "test_questions.json"
    if not test_file.is_file():
        return
    entries = json.loads(test_file.read_text(encoding="utf-8"))
    for i, entry in enumerate(entries):
        corpus.add_qa(
            corpus_mod.QAPair(
                id=entry.get("id", f"test-{i}"),
                kind=entry.get("kind", "text"),
                domain=Domain.parse(entry["domain"]),
                question=entry["question"],
                answer=entry["answer"],
                source_refs=tuple(entry.get("source_refs", ())),
            ),
            split="test",
        )


@main.command(name="eval")
@click.option("--experiment", default="all", help="Exp1..Exp6, comma list, or 'all'.")
@click.option("--work", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--backend", type=click.Choice(["mock", "http"]), default="mock")
@click.option("--repetitions", type=int, default=3, show_default=True)
@click.option(
    "--top-k",
    type=int,
    default=1,
    show_default=True,
    help="Context blocks per answer; 1 keeps mock answers aligned with "
    "single-chunk references on small corpora (production-scale runs use 3).",
)
@click.option("--alpha", type=float, default=0.3, show_default=True)
@click.option("--search-fixtures", type=click.Path(exists=True, path_type=Path), default=None)
@_guarded
def eval_command(
    experiment: str,
    work: Path,
    backend: str,
    repetitions: int,
    top_k: int,
    alpha: float,
    search_fixtures: Path | None,
) -> None:
    """Run ablation experiments and write evaluation reports."""
    from dataclasses import replace as dc_replace

    from .retrieval import HybridParams

    names = (
        list(EXPERIMENT_PRESETS)
        if experiment.lower() == "all"
        else [n.strip() for n in experiment.split(",")]
    )
    for name in names:
        if name not in EXPERIMENT_PRESETS:
            raise click.UsageError(f"unknown experiment {name!r} (use Exp1..Exp6)")
    corpus = load_corpus(work / "corpus.json")
    embedder = HashEmbeddingProvider()
    llm = _build_backend(backend)
    tables = load_tables_dir(work / "tables") if (work / "tables").is_dir() else []
    trees = load_trees_dir(work / "trees") if (work / "trees").is_dir() else []

    # Generated validation pairs: text from article chunks, table from
    # narrative chunks, tree from exhaustive subtree enumeration.
    article_chunks = corpus.all_chunks()
    for chunk in article_chunks:
        doc = corpus.documents[chunk.doc_id]
        for pair in generate_text_qa(chunk, llm, domain=doc.domain):
            corpus.add_qa(pair)
    for table, chunk in zip(tables, narrative_chunks(tables)):
        if not corpus.knows(chunk.id):
            corpus.register_source(chunk.id)
        for pair in generate_text_qa(chunk, llm, domain=table.domain, kind="table"):
            corpus.add_qa(pair)
    for tree in trees:
        for pair in generate_tree_qa(tree).pairs:
            corpus.add_qa(pair)
    _load_test_pairs(work, corpus)
    dataset = corpus_mod.assemble_dataset(corpus)

    handles = PipelineHandles(
        embedder=embedder,
        backend=llm,
        article_chunks=article_chunks,
        tables=tables,
        trees=trees,
        search_provider=_build_search_provider(search_fixtures, True),
        min_context_score=0.25,
    )
    reports_dir = work / "reports"
    reports_dir.mkdir(exist_ok=True)
    reports: list[EvalReport] = []
    for name in names:
        preset = dc_replace(
            EXPERIMENT_PRESETS[name],
            repetitions=repetitions,
            retrieval=HybridParams(alpha=alpha, top_k=top_k),
        )
        report = run_experiment(preset, dataset, handles)
        report.save(reports_dir / f"{name}.json")
        reports.append(report)
        click.echo(f"{name}: toggles={preset.toggles} saved -> {reports_dir / (name + '.json')}")
    for split in ("validation", "test"):
        table_text = render_accuracy_table(reports, split=split)
        (reports_dir / f"accuracy_{split}.txt").write_text(table_text + "\n", encoding="utf-8")
        click.echo(f"\n{split} accuracy (%):\n{table_text}")


# --- serve -------------------------------------------------------------------------

@main.command()
@click.option("--work", type=click.Path(exists=True, file_okay=False, path_type=Path), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--backend", type=click.Choice(["mock", "http"]), default="mock")
@click.option("--embedder", type=click.Choice(["hash", "http"]), default="hash")
@click.option("--search-fixtures", type=click.Path(exists=True, path_type=Path), default=None)
@_guarded
def serve(
    work: Path,
    config_path: Path | None,
    host: str,
    port: int,
    backend: str,
    embedder: str,
    search_fixtures: Path | None,
) -> None:
    """Start the HTTP service."""
    import uvicorn

    service = _build_service(
        work,
        config_path=config_path,
        backend_kind=backend,
        embedder_kind=embedder,
        search_fixtures=search_fixtures,
    )
    app = create_app(service)
    click.echo(f"serving on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
