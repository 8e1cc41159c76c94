"""HTTP service and session layer over the answering pipeline.

Endpoints: POST /ask, POST /sessions/{id}/evidence, GET /sessions/{id},
POST /ingest (admin), GET /healthz. Request/response bodies are JSON; error
bodies carry {code, message, detail}. Clarification dialogues run over
sessions with a TTL; evidence only grows while a session is open, and a
diagnosis closes it.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .corpus import Corpus, Domain, parse_article_file
from .errors import (
    BackendTimeout,
    BackendUnavailable,
    CapragError,
    ConfigError,
    ContradictoryEvidence,
    EmptyQuery,
    IndexUnavailable,
    ProviderUnavailable,
    SessionClosed,
    UnknownAttribute,
    UnknownSession,
    UnknownValue,
)
from .generate import Citation
from .pipeline import AnswerPipeline, AskOutcome
from .retrieval import BM25Params, HybridParams, ScoredHit, build_index
from .treex import Clarification, DecisionTree, Evidence, extract_evidence, render_clarification
from .websearch import TriggerConfig


# --- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class ServiceConfig:
    """Validated startup configuration; every field has a documented key."""

    alpha: float = 0.3
    top_k: int = 3
    score_mode: str = "normalized"
    k1: float = 1.5
    b: float = 0.75
    confidence_threshold: float = 0.35
    trigger_phrases: tuple[str, ...] = ("latest research", "real-time data")
    web_enabled: bool = True
    web_result_cap: int = 5
    allowlist: tuple[str, ...] = ()
    prompt_template: str = "default"
    byte_budget: int | None = None
    tree_routing: bool = True
    tree_route_mode: str = "state_machine"  # or "indexed"
    tree_overlap_threshold: int = 1
    session_ttl_seconds: float = 3600.0
    session_store_path: str | None = None

    def validate(self) -> None:
        checks = (
            (0.0 <= self.alpha <= 1.0, "alpha", "must be in [0, 1]"),
            (self.top_k >= 1, "top_k", "must be a positive integer"),
            (self.score_mode in ("raw", "normalized"), "score_mode", "must be raw|normalized"),
            (self.k1 > 0.0, "k1", "must be positive"),
            (0.0 <= self.b <= 1.0, "b", "must be in [0, 1]"),
            (
                0.0 <= self.confidence_threshold <= 1.0 or self.score_mode == "raw",
                "confidence_threshold",
                "must be in [0, 1] in normalized mode",
            ),
            (self.web_result_cap >= 1, "web_result_cap", "must be a positive integer"),
            (
                self.tree_route_mode in ("state_machine", "indexed"),
                "tree_route_mode",
                "must be state_machine|indexed",
            ),
            (self.tree_overlap_threshold >= 1, "tree_overlap_threshold", "must be >= 1"),
            (self.session_ttl_seconds > 0.0, "session_ttl_seconds", "must be positive"),
        )
        for ok, field_name, message in checks:
            if not ok:
                raise ConfigError(f"config field {field_name}: {message}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "ServiceConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values = dict(data)
        for key in ("trigger_phrases", "allowlist"):
            if key in values:
                values[key] = tuple(values[key])
        config = cls(**values)
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_dict(data)

    def hybrid_params(self) -> HybridParams:
        return HybridParams(alpha=self.alpha, top_k=self.top_k, mode=self.score_mode)

    def bm25_params(self) -> BM25Params:
        return BM25Params(k1=self.k1, b=self.b)

    def trigger_config(self) -> TriggerConfig:
        return TriggerConfig(
            confidence_threshold=self.confidence_threshold,
            trigger_phrases=self.trigger_phrases,
            enabled=self.web_enabled,
        )


# --- sessions ------------------------------------------------------------------

@dataclass
class TranscriptEntry:
    role: str  # "user" | "assistant"
    text: str
    timestamp: float


@dataclass
class Session:
    id: str
    tree_id: str
    evidence: Evidence = field(default_factory=Evidence)
    transcript: list[TranscriptEntry] = field(default_factory=list)
    state: str = "open"  # open | diagnosed | expired
    created_at: float = 0.0
    updated_at: float = 0.0


class SessionStore:
    """In-memory sessions with TTL expiry and an optional file-backed copy.

    Mutations on one session are serialized by a per-store lock; the clock
    and id factory are injectable so tests stay deterministic.
    """

    def __init__(
        self,
        ttl_seconds: float = 3600.0,
        *,
        clock: Callable[[], float] = time.time,
        id_factory: Callable[[], str] | None = None,
        persist_path: str | Path | None = None,
    ) -> None:
        self.ttl_seconds = ttl_seconds
        self.clock = clock
        self.id_factory = id_factory or (lambda: uuid.uuid4().hex[:12])
        self.persist_path = Path(persist_path) if persist_path else None
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()
        if self.persist_path and self.persist_path.exists():
            self._load()

    def create(self, tree_id: str) -> Session:
        with self._lock:
            now = self.clock()
            session = Session(
                id=self.id_factory(),
                tree_id=tree_id,
                created_at=now,
                updated_at=now,
            )
            self._sessions[session.id] = session
            self._persist()
            return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            session = self._sessions.get(session_id)
            if session is None:
                raise UnknownSession(f"no session {session_id!r}")
            if (
                session.state == "open"
                and self.clock() - session.updated_at > self.ttl_seconds
            ):
                session.state = "expired"
                self._persist()
            return session

    def append(
        self,
        session: Session,
        *,
        user_text: str | None = None,
        assistant_text: str | None = None,
        evidence: Evidence | None = None,
        state: str | None = None,
    ) -> None:
        with self._lock:
            now = self.clock()
            if user_text is not None:
                session.transcript.append(TranscriptEntry("user", user_text, now))
            if assistant_text is not None:
                session.transcript.append(TranscriptEntry("assistant", assistant_text, now))
            if evidence is not None:
                session.evidence = evidence
            if state is not None:
                session.state = state
            session.updated_at = now
            self._persist()

    def _persist(self) -> None:
        if self.persist_path is None:
            return
        payload = {
            sid: {
                "id": s.id,
                "tree_id": s.tree_id,
                "evidence": dict(s.evidence.assignments),
                "transcript": [asdict(t) for t in s.transcript],
                "state": s.state,
                "created_at": s.created_at,
                "updated_at": s.updated_at,
            }
            for sid, s in self._sessions.items()
        }
        self.persist_path.write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    def _load(self) -> None:
        payload = json.loads(self.persist_path.read_text(encoding="utf-8"))
        for sid, entry in payload.items():
            self._sessions[sid] = Session(
                id=entry["id"],
                tree_id=entry["tree_id"],
                evidence=Evidence(entry["evidence"]),
                transcript=[TranscriptEntry(**t) for t in entry["transcript"]],
                state=entry["state"],
                created_at=entry["created_at"],
                updated_at=entry["updated_at"],
            )


# --- service core -----------------------------------------------------------------

@dataclass(frozen=True)
class AskResult:
    """Service-level outcome: adds session tracking to the pipeline result."""

    answer: str | None
    citations: tuple[Citation, ...]
    hits: tuple[ScoredHit, ...]
    clarification: Clarification | None
    used_web: bool
    session_id: str | None = None


class KnowledgeService:
    """Session-aware facade over the pipeline, shared by HTTP and CLI."""

    def __init__(
        self,
        pipeline: AnswerPipeline,
        sessions: SessionStore | None = None,
        *,
        domain_by_doc: Mapping[str, Domain] | None = None,
    ) -> None:
        self.pipeline = pipeline
        self.sessions = sessions or SessionStore()
        self.domain_by_doc = dict(domain_by_doc or {})

    @property
    def trees_by_id(self) -> dict[str, DecisionTree]:
        return {t.id: t for t in self.pipeline.trees}

    def handle_ask(
        self,
        question: str,
        *,
        session_id: str | None = None,
        domain: Domain | None = None,
        overrides: Mapping | None = None,
    ) -> AskResult:
        if not question.strip():
            raise EmptyQuery("question must be non-empty")
        if session_id is not None:
            return self._continue_session(session_id, question)
        pipeline = self._pipeline_for(overrides)
        tree = pipeline.route_tree(question)
        if tree is not None:
            evidence = extract_evidence(tree, question)
            outcome = pipeline.resolve_tree(tree, evidence)
            return self._finish_tree_turn(
                outcome, question, tree.id, session=None, evidence=evidence
            )
        if pipeline.index is None:
            raise IndexUnavailable("no retrieval index loaded")
        outcome = pipeline.ask_rag(question)
        if domain is not None:
            outcome = self._filter_domain(outcome, domain)
        return AskResult(
            answer=outcome.answer,
            citations=outcome.citations,
            hits=outcome.hits,
            clarification=None,
            used_web=outcome.used_web,
        )

    def handle_evidence(self, session_id: str, assignments: Mapping[str, str]) -> AskResult:
        session = self.sessions.get(session_id)
        if session.state != "open":
            raise SessionClosed(f"session {session_id!r} is {session.state}")
        tree = self.trees_by_id.get(session.tree_id)
        if tree is None:
            raise UnknownSession(f"session {session_id!r} references unloaded tree")
        merged = session.evidence.merged(assignments)
        outcome = self.pipeline.resolve_tree(tree, merged)
        user_text = "; ".join(f"{k}: {v}" for k, v in assignments.items())
        return self._finish_tree_turn(
            outcome, user_text, session.tree_id, session=session, evidence=merged
        )

    def transcript(self, session_id: str) -> Session:
        return self.sessions.get(session_id)

    # --- internals ----------------------------------------------------------

    def _continue_session(self, session_id: str, question: str) -> AskResult:
        """Free-text turn on an existing session: extract evidence from the
        question against the session's tree and resolve."""
        session = self.sessions.get(session_id)
        if session.state != "open":
            raise SessionClosed(f"session {session_id!r} is {session.state}")
        tree = self.trees_by_id.get(session.tree_id)
        if tree is None:
            raise UnknownSession(f"session {session_id!r} references unloaded tree")
        merged = session.evidence.merged(extract_evidence(tree, question).assignments)
        outcome = self.pipeline.resolve_tree(tree, merged)
        return self._finish_tree_turn(
            outcome, question, session.tree_id, session=session, evidence=merged
        )

    def _finish_tree_turn(
        self,
        outcome: AskOutcome,
        user_text: str,
        tree_id: str,
        *,
        session: Session | None,
        evidence: Evidence | None = None,
    ) -> AskResult:
        if outcome.clarification is not None:
            assistant_text = render_clarification(outcome.clarification)
            if session is None:
                session = self.sessions.create(tree_id)
            self.sessions.append(
                session,
                user_text=user_text,
                assistant_text=assistant_text,
                evidence=evidence,
                state="open",
            )
            return AskResult(
                answer=None,
                citations=(),
                hits=(),
                clarification=outcome.clarification,
                used_web=False,
                session_id=session.id,
            )
        assert outcome.answer is not None
        if session is not None:
            self.sessions.append(
                session,
                user_text=user_text,
                assistant_text=outcome.answer,
                evidence=evidence,
                state="diagnosed",
            )
        return AskResult(
            answer=outcome.answer,
            citations=outcome.citations,
            hits=outcome.hits,
            clarification=None,
            used_web=outcome.used_web,
            session_id=session.id if session is not None else None,
        )

    def _pipeline_for(self, overrides: Mapping | None) -> AnswerPipeline:
        if not overrides:
            return self.pipeline
        base = self.pipeline
        retrieval = base.config.retrieval
        retrieval = HybridParams(
            alpha=float(overrides.get("alpha", retrieval.alpha)),
            top_k=int(overrides.get("top_k", retrieval.top_k)),
            mode=str(overrides.get("mode", retrieval.mode)),
        )
        trigger = base.config.trigger
        if "web_search" in overrides:
            trigger = replace(trigger, enabled=bool(overrides["web_search"]))
        config = replace(base.config, retrieval=retrieval, trigger=trigger)
        return AnswerPipeline(
            base.backend,
            base.index,
            trees=base.trees,
            search_provider=base.search_provider,
            config=config,
        )

    def _filter_domain(self, outcome: AskOutcome, domain: Domain) -> AskOutcome:
        if not self.domain_by_doc or self.pipeline.index is None:
            return outcome
        index = self.pipeline.index
        kept_hits = tuple(
            h
            for h in outcome.hits
            if self.domain_by_doc.get(index.chunk(h.chunk_id).doc_id) in (None, domain)
        )
        kept_refs = {h.chunk_id for h in kept_hits}
        kept_citations = tuple(
            c for c in outcome.citations if c.origin != "local" or c.ref in kept_refs
        )
        return AskOutcome(
            answer=outcome.answer,
            citations=kept_citations,
            hits=kept_hits,
            clarification=outcome.clarification,
            used_web=outcome.used_web,
        )

    def ingest_documents(self, files: list[tuple[str, str]]) -> int:
        """Admin ingestion: rebuild the corpus and index, then swap the
        pipeline snapshot atomically. Returns the new chunk count."""
        if self.pipeline.index is None or self.pipeline.index.provider is None:
            raise IndexUnavailable("service has no embedding provider to rebuild with")
        corpus = Corpus()
        for filename, content in files:
            meta, body = parse_article_file(content)
            corpus.ingest(
                body,
                title=meta.get("title", filename),
                domain=Domain.parse(meta.get("domain", "basic_farming")),
                source_kind=meta.get("kind", "article"),
                provenance=filename,
            )
        chunks = corpus.all_chunks()
        index = build_index(
            chunks, self.pipeline.index.provider, self.pipeline.index.bm25_params
        )
        self.pipeline = AnswerPipeline(
            self.pipeline.backend,
            index,
            trees=self.pipeline.trees,
            search_provider=self.pipeline.search_provider,
            config=self.pipeline.config,
        )
        self.domain_by_doc = {d.id: d.domain for d in corpus.documents.values()}
        return len(chunks)


# --- HTTP layer ----------------------------------------------------------------------

class AskRequestBody(BaseModel):
    question: str
    session_id: str | None = None
    domain: str | None = None
    overrides: dict | None = None


class CitationBody(BaseModel):
    origin: str
    ref: str


class HitBody(BaseModel):
    chunk_id: str
    bm25: float
    cosine: float
    score: float


class ClarificationQuestionBody(BaseModel):
    attribute: str
    prompt: str
    allowed: list[str]


class ClarificationBody(BaseModel):
    questions: list[ClarificationQuestionBody]


class AskResponseBody(BaseModel):
    answer: str | None
    citations: list[CitationBody]
    scores: list[HitBody]
    clarification: ClarificationBody | None
    used_web: bool
    session_id: str | None


class EvidenceRequestBody(BaseModel):
    assignments: dict[str, str]


class TranscriptEntryBody(BaseModel):
    role: str
    text: str
    timestamp: float


class SessionBody(BaseModel):
    id: str
    tree_id: str
    state: str
    evidence: dict[str, str]
    transcript: list[TranscriptEntryBody]


class IngestFileBody(BaseModel):
    filename: str
    content: str


class IngestRequestBody(BaseModel):
    documents: list[IngestFileBody]


_STATUS_BY_CODE = {
    EmptyQuery.code: 400,
    UnknownSession.code: 404,
    SessionClosed.code: 409,
    UnknownAttribute.code: 422,
    UnknownValue.code: 422,
    ContradictoryEvidence.code: 422,
    IndexUnavailable.code: 503,
    BackendUnavailable.code: 502,
    BackendTimeout.code: 504,
    ProviderUnavailable.code: 502,
    ConfigError.code: 500,
}


def _ask_response(result: AskResult) -> AskResponseBody:
    clarification = None
    if result.clarification is not None:
        clarification = ClarificationBody(
            questions=[
                ClarificationQuestionBody(
                    attribute=q.attribute, prompt=q.prompt, allowed=list(q.allowed)
                )
                for q in result.clarification.questions
            ]
        )
    return AskResponseBody(
        answer=result.answer,
        citations=[CitationBody(origin=c.origin, ref=c.ref) for c in result.citations],
        scores=[
            HitBody(chunk_id=h.chunk_id, bm25=h.bm25, cosine=h.cosine, score=h.score)
            for h in result.hits
        ],
        clarification=clarification,
        used_web=result.used_web,
        session_id=result.session_id,
    )


def create_app(service: KnowledgeService) -> FastAPI:
    app = FastAPI(title="caprag", docs_url=None, redoc_url=None)
    # The browser chat client is served from its own origin.
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(CapragError)
    async def handle_engine_error(request, exc: CapragError):
        status = _STATUS_BY_CODE.get(exc.code, 400)
        return JSONResponse(
            status_code=status,
            content={"code": exc.code, "message": str(exc), "detail": type(exc).__name__},
        )

    @app.post("/ask", response_model=AskResponseBody)
    async def ask(body: AskRequestBody):
        domain = Domain.parse(body.domain) if body.domain else None
        result = service.handle_ask(
            body.question,
            session_id=body.session_id,
            domain=domain,
            overrides=body.overrides,
        )
        return _ask_response(result)

    @app.post("/sessions/{session_id}/evidence", response_model=AskResponseBody)
    async def post_evidence(session_id: str, body: EvidenceRequestBody):
        result = service.handle_evidence(session_id, body.assignments)
        return _ask_response(result)

    @app.get("/sessions/{session_id}", response_model=SessionBody)
    async def get_session(session_id: str):
        session = service.transcript(session_id)
        return SessionBody(
            id=session.id,
            tree_id=session.tree_id,
            state=session.state,
            evidence=dict(session.evidence.assignments),
            transcript=[
                TranscriptEntryBody(role=t.role, text=t.text, timestamp=t.timestamp)
                for t in session.transcript
            ],
        )

    @app.post("/ingest")
    async def ingest(body: IngestRequestBody):
        count = service.ingest_documents([(f.filename, f.content) for f in body.documents])
        return {"status": "ok", "chunks": count}

    @app.get("/healthz")
    async def healthz():
        index = service.pipeline.index
        return {
            "status": "ok" if index is not None else "degraded",
            "index_version": index.version if index is not None else None,
        }

    return app
