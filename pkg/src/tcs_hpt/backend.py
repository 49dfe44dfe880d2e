"""Chat-completion backends: OpenAI-compatible HTTP, Ollama native HTTP, and scripted."""

from __future__ import annotations

import logging
import os
import threading
import time
from collections import deque
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

import httpx

from .core import HPTError

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.2
DEFAULT_MAX_TOKENS = 1024
DEFAULT_TIMEOUT_S = 300.0
MAX_RETRIES = 3
BACKOFF_S = (1.0, 2.0, 4.0)


class BackendError(HPTError):
    pass


class BackendTimeout(BackendError):
    pass


class HttpError(BackendError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"HTTP {status}: {body[:200]}")
        self.status = status


class EmptyResponse(BackendError):
    pass


class ScriptExhausted(BackendError):
    pass


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def to_dict(self) -> dict:
        return {"role": Role(self.role).value, "content": self.content}


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int | None = DEFAULT_MAX_TOKENS
    timeout_s: float = DEFAULT_TIMEOUT_S

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        if any(Role(m.role) is Role.SYSTEM for m in self.messages[1:]):
            raise ValueError("the system message, if any, must come first")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens is not None and self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")

    @classmethod
    def from_prompt(cls, prompt, model: str, **kw) -> ChatRequest:
        return cls(model, (ChatMessage(Role.SYSTEM, prompt.system), ChatMessage(Role.USER, prompt.user)), **kw)

    def extended(self, *messages: ChatMessage) -> ChatRequest:
        return ChatRequest(self.model, self.messages + messages, self.temperature, self.max_tokens, self.timeout_s)

    def first_user(self) -> str:
        for m in self.messages:
            if Role(m.role) is Role.USER:
                return m.content
        return ""


@dataclass(frozen=True)
class ChatResponse:
    content: str
    model: str
    latency_s: float
    token_counts: dict[str, int] | None = None


class Backend(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


def _transient(exc: Exception) -> bool:
    if isinstance(exc, HttpError):
        return exc.status == 429 or exc.status >= 500
    return isinstance(exc, httpx.TransportError) and not isinstance(exc, httpx.TimeoutException)


class _HttpBackend:
    path = ""

    def __init__(self, base_url: str, api_key_env: str | None = None,
                 client: httpx.Client | None = None, sleep: Callable[[float], None] = time.sleep):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self._client = client or httpx.Client()
        self._sleep = sleep

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def _payload(self, request: ChatRequest) -> dict:
        raise NotImplementedError

    def _parse(self, data: dict, request: ChatRequest, latency: float) -> ChatResponse:
        raise NotImplementedError

    def _post_once(self, request: ChatRequest) -> ChatResponse:
        t0 = time.monotonic()
        try:
            resp = self._client.post(self.base_url + self.path, json=self._payload(request),
                                     headers=self._headers(), timeout=request.timeout_s)
        except httpx.TimeoutException as exc:
            raise BackendTimeout(f"no response within {request.timeout_s}s") from exc
        if resp.status_code >= 400:
            raise HttpError(resp.status_code, resp.text)
        try:
            data = resp.json()
        except ValueError as exc:
            raise BackendError(f"response is not JSON: {resp.text[:200]}") from exc
        out = self._parse(data, request, time.monotonic() - t0)
        if not out.content:
            raise EmptyResponse("model returned no content")
        return out

    def complete(self, request: ChatRequest) -> ChatResponse:
        for attempt in range(MAX_RETRIES + 1):
            try:
                return self._post_once(request)
            except (HttpError, httpx.TransportError) as exc:
                if attempt == MAX_RETRIES or not _transient(exc):
                    if isinstance(exc, httpx.TransportError):
                        raise BackendError(f"connection failed: {exc}") from exc
                    raise
                delay = BACKOFF_S[attempt]
                log.warning("transient backend failure (%s); retry %d in %.0fs", exc, attempt + 1, delay)
                self._sleep(delay)
        raise AssertionError("unreachable")


class OpenAIBackend(_HttpBackend):
    """POST {base_url}/v1/chat/completions."""

    path = "/v1/chat/completions"

    def _payload(self, request: ChatRequest) -> dict:
        body = {
            "model": request.model,
            "messages": [m.to_dict() for m in request.messages],
            "temperature": request.temperature,
        }
        if request.max_tokens is not None:
            body["max_tokens"] = request.max_tokens
        return body

    def _parse(self, data: dict, request: ChatRequest, latency: float) -> ChatResponse:
        try:
            content = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise EmptyResponse("no choices[0].message.content in response") from None
        usage = data.get("usage") or {}
        counts = None
        if "prompt_tokens" in usage:
            counts = {"prompt": usage["prompt_tokens"], "completion": usage.get("completion_tokens", 0)}
        return ChatResponse(content, data.get("model", request.model), latency, counts)


class OllamaBackend(_HttpBackend):
    """POST {base_url}/api/chat with stream=false."""

    path = "/api/chat"

    def _payload(self, request: ChatRequest) -> dict:
        options = {"temperature": request.temperature}
        if request.max_tokens is not None:
            options["num_predict"] = request.max_tokens
        return {
            "model": request.model,
            "messages": [m.to_dict() for m in request.messages],
            "stream": False,
            "options": options,
        }

    def _parse(self, data: dict, request: ChatRequest, latency: float) -> ChatResponse:
        content = (data.get("message") or {}).get("content") or ""
        counts = None
        if "prompt_eval_count" in data:
            counts = {"prompt": data["prompt_eval_count"], "completion": data.get("eval_count", 0)}
        return ChatResponse(content, data.get("model", request.model), latency, counts)


class ScriptedBackend:
    """Replays a fixed queue of responses, one per call."""

    is_scripted = True

    def __init__(self, responses: Iterable[str]):
        self._queue = deque(responses)
        self._lock = threading.Lock()
        self.requests: list[ChatRequest] = []

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.requests.append(request)
            if not self._queue:
                raise ScriptExhausted("scripted response queue is empty")
            content = self._queue.popleft()
        return ChatResponse(content, request.model or "scripted", 0.0)


@dataclass
class PolicyBackend:
    """Answers each request with ``policy(first user message)``.

    The first user message is the original prompt; later ones are corrective
    follow-ups, so a retry gets the same deterministic answer.
    """

    policy: Callable[[str], str]
    name: str = "policy"
    calls: int = field(default=0, init=False)
    is_scripted = True

    def complete(self, request: ChatRequest) -> ChatResponse:
        self.calls += 1
        return ChatResponse(self.policy(request.first_user()), request.model or self.name, 0.0)


def scripted_from_policy(policy: Callable[[str], str] | str) -> PolicyBackend:
    """Deterministic backend from a policy function or a built-in policy name."""
    if isinstance(policy, str):
        from .policies import POLICIES

        try:
            return PolicyBackend(POLICIES[policy], name=policy)
        except KeyError:
            raise ValueError(f"unknown policy {policy!r}; known: {sorted(POLICIES)}") from None
    return PolicyBackend(policy, name=getattr(policy, "__name__", "policy"))


def make_backend(kind: str, base_url: str | None = None, api_key_env: str | None = None,
                 policy: str | None = None, responses: list[str] | None = None) -> Backend:
    kind = kind.lower()
    if kind in ("openai", "openai-compatible"):
        return OpenAIBackend(base_url or "http://localhost:8000", api_key_env)
    if kind == "ollama":
        return OllamaBackend(base_url or "http://localhost:11434", api_key_env)
    if kind == "scripted":
        if responses is not None:
            return ScriptedBackend(responses)
        return scripted_from_policy(policy or "coordinate-search")
    raise ValueError(f"unknown backend kind {kind!r}")
