"""Online search fallback: trigger decision, provider query, context merge.

A web search runs when the user explicitly asks for fresh information
(configurable trigger phrases) or when local retrieval confidence is low
(top fused score under a threshold, normalized mode). Results from an
allowlist of authoritative domains are ranked first; provider failures
degrade to local-only answering instead of erroring the request.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol
from urllib.parse import urlparse

import httpx

from .errors import ProviderUnavailable, QuotaExceeded
from .retrieval import Index, ScoredHit

DEFAULT_TRIGGER_PHRASES = ("latest research", "real-time data")
DEFAULT_ALLOWLIST = ("fao.org", "europa.eu", ".gov", ".edu")


@dataclass(frozen=True)
class TriggerConfig:
    confidence_threshold: float = 0.35  # normalized-mode fused score
    trigger_phrases: tuple[str, ...] = DEFAULT_TRIGGER_PHRASES
    enabled: bool = True


@dataclass(frozen=True)
class SearchTrigger:
    """Why a web search fired: exactly one reason."""

    reason: str  # "explicit_keyword" | "low_confidence"
    matched_phrase: str | None = None
    top_score: float | None = None


@dataclass(frozen=True)
class WebResult:
    title: str
    url: str
    snippet: str
    source_rank: int
    authority_tag: bool = False


@dataclass(frozen=True)
class ContextBlock:
    """One unit of prompt context with provenance."""

    origin: str  # "local" | "web"
    ref: str  # chunk id or url
    text: str
    score: float | None = None


@dataclass(frozen=True)
class CompositeContext:
    local: tuple[ScoredHit, ...]
    web: tuple[WebResult, ...]
    merged: tuple[ContextBlock, ...] = field(default_factory=tuple)


def should_trigger(
    hits: list[ScoredHit], query: str, config: TriggerConfig = TriggerConfig()
) -> SearchTrigger | None:
    """Keyword trigger first, then the low-confidence check; None otherwise."""
    if not config.enabled:
        return None
    lowered = query.lower()
    for phrase in config.trigger_phrases:
        if phrase.lower() in lowered:
            return SearchTrigger(reason="explicit_keyword", matched_phrase=phrase)
    top = max((h.score for h in hits), default=None)
    if top is None or top < config.confidence_threshold:
        return SearchTrigger(reason="low_confidence", top_score=top)
    return None


class SearchProvider(Protocol):
    """External search: query text and a result cap in, raw results out."""

    def search(self, query: str, cap: int) -> list[dict]: ...


class FixtureSearchProvider:
    """Deterministic provider returning canned results, for tests.

    ``fixtures`` maps a query substring to its result dicts; unmatched
    queries fall back to the ``default`` list.
    """

    def __init__(
        self,
        fixtures: dict[str, list[dict]] | None = None,
        default: list[dict] | None = None,
    ) -> None:
        self.fixtures = dict(fixtures or {})
        self.default = list(default or [])
        self.queries: list[str] = []

    def search(self, query: str, cap: int) -> list[dict]:
        self.queries.append(query)
        for pattern in sorted(self.fixtures):
            if pattern.lower() in query.lower():
                return self.fixtures[pattern][:cap]
        return self.default[:cap]


class CustomSearchProvider:
    """Client for the Google Custom Search JSON API.

    Key and engine id come from ``SEARCH_API_KEY`` / ``SEARCH_ENGINE_ID``
    unless passed explicitly.
    """

    ENDPOINT = "https://www.googleapis.com/customsearch/v1"

    def __init__(
        self,
        api_key: str | None = None,
        engine_id: str | None = None,
        *,
        timeout: float = 15.0,
        max_in_flight: int = 8,
    ) -> None:
        self.api_key = api_key or os.environ.get("SEARCH_API_KEY", "")
        self.engine_id = engine_id or os.environ.get("SEARCH_ENGINE_ID", "")
        self.timeout = timeout
        self._gate = threading.BoundedSemaphore(max_in_flight)
        if not self.api_key or not self.engine_id:
            raise ProviderUnavailable(
                "search provider not configured (set SEARCH_API_KEY and SEARCH_ENGINE_ID)"
            )

    def search(self, query: str, cap: int) -> list[dict]:
        params = {
            "key": self.api_key,
            "cx": self.engine_id,
            "q": query,
            "num": min(cap, 10),
        }
        try:
            with self._gate:
                response = httpx.get(self.ENDPOINT, params=params, timeout=self.timeout)
            if response.status_code == 429:
                raise QuotaExceeded("search provider quota exhausted")
            response.raise_for_status()
            items = response.json().get("items", [])
        except QuotaExceeded:
            raise
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(f"search request failed: {exc}") from exc
        return [
            {
                "title": item.get("title", ""),
                "url": item.get("link", ""),
                "snippet": item.get("snippet", ""),
            }
            for item in items
        ]


def load_allowlist(path: str | Path) -> tuple[str, ...]:
    """Domain suffixes, one per line; blank lines and ``#`` comments skipped."""
    suffixes = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            suffixes.append(line)
    return tuple(suffixes)


def _is_authoritative(url: str, allowlist: tuple[str, ...]) -> bool:
    host = urlparse(url).netloc.lower()
    return any(host.endswith(suffix.lower()) for suffix in allowlist)


def web_search(
    query: str,
    local_hits: list[ScoredHit],
    provider: SearchProvider,
    *,
    index: Index | None = None,
    allowlist: tuple[str, ...] = DEFAULT_ALLOWLIST,
    cap: int = 5,
) -> list[WebResult]:
    """Query the provider with the question contextualized by top local
    headings; allowlisted results move to the front, original order kept
    otherwise, capped.

    Raises:
        ProviderUnavailable, QuotaExceeded: surfaced for the caller's
        degraded-mode handling.
    """
    headings = []
    if index is not None:
        for hit in local_hits:
            heading = index.chunk(hit.chunk_id).heading
            if heading and heading not in headings:
                headings.append(heading)
    contextualized = query if not headings else f"{query} ({'; '.join(headings)})"
    raw = provider.search(contextualized, cap)
    results = []
    for rank, item in enumerate(raw, start=1):
        url = item.get("url", "")
        snippet = item.get("snippet", "").strip()
        parsed = urlparse(url)
        if not snippet or not parsed.scheme or not parsed.netloc:
            continue  # malformed provider rows carry no usable evidence
        results.append(
            WebResult(
                title=item.get("title", ""),
                url=url,
                snippet=snippet,
                source_rank=rank,
                authority_tag=_is_authoritative(url, allowlist),
            )
        )
    results.sort(key=lambda r: (not r.authority_tag, r.source_rank))
    return results[:cap]


def merge_context(
    local_hits: list[ScoredHit],
    web_results: list[WebResult],
    *,
    index: Index | None = None,
) -> CompositeContext:
    """All local blocks in rank order, then all web blocks; exact duplicate
    texts keep the local copy."""
    blocks: list[ContextBlock] = []
    seen_texts: set[str] = set()
    for hit in local_hits:
        text = index.chunk(hit.chunk_id).text if index is not None else hit.chunk_id
        if text in seen_texts:
            continue
        seen_texts.add(text)
        blocks.append(ContextBlock(origin="local", ref=hit.chunk_id, text=text, score=hit.score))
    for result in web_results:
        if result.snippet in seen_texts:
            continue
        seen_texts.add(result.snippet)
        blocks.append(ContextBlock(origin="web", ref=result.url, text=result.snippet))
    return CompositeContext(
        local=tuple(local_hits), web=tuple(web_results), merged=tuple(blocks)
    )
