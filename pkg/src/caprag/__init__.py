"""caprag: retrieval-augmented knowledge assistant engine for goat farming.

Subsystems: corpus ingestion and chunking, table and decision-tree
textualization, hybrid sparse+dense retrieval, web-search fallback, prompt
assembly and generation, an embedding-similarity evaluation harness with
ablation presets, and an HTTP/CLI service layer.
"""

from .corpus import Chunk, Corpus, DatasetSplit, Document, Domain, QAPair, assemble_dataset
from .errors import CapragError
from .evaluation import (
    EXPERIMENT_PRESETS,
    ExperimentConfig,
    SimilarityScore,
    classify,
    run_experiment,
    similarity_score,
)
from .generate import AugmentedPrompt, MockLLMBackend, build_prompt, generate_answer
from .pipeline import AnswerPipeline, PipelineConfig
from .retrieval import (
    BM25Params,
    HashEmbeddingProvider,
    HybridParams,
    Index,
    ScoredHit,
    bm25_score,
    build_index,
    idf,
    search,
    tokenize,
)
from .service import KnowledgeService, ServiceConfig, SessionStore, create_app
from .tablex import Table, check_semantic_preservation, textualize_table, validate_table
from .treex import (
    Clarification,
    DecisionTree,
    Diagnosis,
    Evidence,
    enumerate_paths,
    generate_tree_qa,
    resolve,
    textualize_path,
)
from .websearch import TriggerConfig, merge_context, should_trigger, web_search

__version__ = "0.1.0"
