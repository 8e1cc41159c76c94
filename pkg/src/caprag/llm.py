"""Chat-completion clients: an HTTP backend and a deterministic mock.

The wire contract matches the common open chat-completion schema:

    POST {base_url}/chat/completions
    request  {"model": ..., "messages": [{"role": "system"|"user",
              "content": ...}], "temperature": ..., "max_tokens": ...}
    response {"choices": [{"message": {"content": ...},
              "finish_reason": ...}]}

Base URL and key come from ``LLM_API_BASE`` / ``LLM_API_KEY`` unless passed
explicitly.
"""

from __future__ import annotations

import os
import threading
import time
from dataclasses import dataclass
from typing import Protocol

import httpx

from .errors import BackendTimeout, BackendUnavailable


@dataclass(frozen=True)
class GenerationSettings:
    model: str = "default"
    temperature: float = 0.0
    max_tokens: int = 1024


DEFAULT_SETTINGS = GenerationSettings()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    finish_reason: str = "stop"
    latency_ms: float = 0.0


class ChatClient(Protocol):
    """Wire-level chat completion: system + user text in, text out."""

    def complete(
        self, system: str, user: str, settings: GenerationSettings = DEFAULT_SETTINGS
    ) -> ChatResponse: ...


class MockChatClient:
    """Deterministic stand-in for tests and offline runs.

    Responses are chosen by substring match against the user text, falling
    back to echoing the first line of the user text.
    """

    def __init__(self, responses: dict[str, str] | None = None) -> None:
        self.responses = dict(responses or {})
        self.calls: list[tuple[str, str]] = []

    def complete(
        self, system: str, user: str, settings: GenerationSettings = DEFAULT_SETTINGS
    ) -> ChatResponse:
        self.calls.append((system, user))
        for pattern in sorted(self.responses):
            if pattern in user:
                return ChatResponse(text=self.responses[pattern])
        first_line = user.strip().split("\n", 1)[0]
        return ChatResponse(text=f"MOCK: {first_line}")


class HTTPChatClient:
    """HTTP chat-completion client with a per-call timeout and a bounded
    number of in-flight requests."""

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        *,
        timeout: float = 30.0,
        max_in_flight: int = 8,
    ) -> None:
        self.base_url = (base_url or os.environ.get("LLM_API_BASE", "")).rstrip("/")
        self.api_key = api_key or os.environ.get("LLM_API_KEY", "")
        self.timeout = timeout
        self._gate = threading.BoundedSemaphore(max_in_flight)
        if not self.base_url:
            raise BackendUnavailable("no chat backend configured (set LLM_API_BASE)")

    def complete(
        self, system: str, user: str, settings: GenerationSettings = DEFAULT_SETTINGS
    ) -> ChatResponse:
        messages = []
        if system:
            messages.append({"role": "system", "content": system})
        messages.append({"role": "user", "content": user})
        payload = {
            "model": settings.model,
            "messages": messages,
            "temperature": settings.temperature,
            "max_tokens": settings.max_tokens,
        }
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        started = time.monotonic()
        try:
            with self._gate:
                response = httpx.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout,
                )
            response.raise_for_status()
        except httpx.TimeoutException as exc:
            raise BackendTimeout(f"chat backend timed out after {self.timeout}s") from exc
        except httpx.HTTPError as exc:
            raise BackendUnavailable(f"chat backend request failed: {exc}") from exc
        latency_ms = (time.monotonic() - started) * 1000.0
        try:
            choice = response.json()["choices"][0]
            text = choice["message"]["content"]
            finish = choice.get("finish_reason", "stop")
        except (KeyError, IndexError, ValueError) as exc:
            raise BackendUnavailable(f"malformed chat backend response: {exc}") from exc
        if not text:
            raise BackendUnavailable("chat backend returned an empty completion")
        return ChatResponse(text=text, finish_reason=finish, latency_ms=latency_ms)
