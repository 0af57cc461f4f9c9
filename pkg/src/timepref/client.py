"""Chat-completions client with retries, bounded concurrency and usage metering.

The network is behind a transport callable so tests and simulated runs never
open a socket: a transport takes the serialized request body and a timeout
and returns the decoded JSON response, raising :class:`TransportError` for
HTTP failures and :class:`TransportTimeout` when the deadline passes.
"""
from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .design import Language
from .prompting import ChatMessage

log = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"
DEFAULT_KEY_ENV = "OPENAI_API_KEY"


class ClientError(Exception):
    pass


class AuthError(ClientError):
    pass


class RateLimited(ClientError):
    pass


class ProtocolError(ClientError):
    pass


class Timeout(ClientError):
    pass


class BudgetExceeded(ClientError):
    pass


class TransportError(Exception):
    def __init__(self, status: int, message: str = ""):
        super().__init__(f"HTTP {status}: {message}" if message else f"HTTP {status}")
        self.status = status


class TransportTimeout(Exception):
    pass


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 1.0
    max_output_tokens: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ValueError("a completion request needs at least one message")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must lie in [0, 2]")

    def to_payload(self) -> dict:
        payload = {
            "model": self.model_id,
            "messages": [m.to_dict() for m in self.messages],
            "temperature": self.temperature,
        }
        if self.max_output_tokens is not None:
            payload["max_tokens"] = self.max_output_tokens
        return payload

    def serialize(self) -> bytes:
        return json.dumps(self.to_payload(), sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


@dataclass(frozen=True)
class CompletionResponse:
    content: str
    finish_reason: str
    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self):
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("usage counts must be non-negative")


@dataclass
class TransportPolicy:
    max_in_flight: int = 4
    retry_max: int = 3
    backoff_base: float = 1.0
    backoff_cap: float = 60.0
    timeout: float = 60.0

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")
        if self.retry_max < 0:
            raise ValueError("retry_max must be non-negative")

    def backoff(self, attempt: int) -> float:
        return min(self.backoff_cap, self.backoff_base * 2 ** attempt)


@dataclass
class UsageMeter:
    budget_tokens: int | None = None
    input_tokens: int = 0
    output_tokens: int = 0
    requests: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens

    def check(self) -> None:
        if self.budget_tokens is not None and self.total_tokens >= self.budget_tokens:
            raise BudgetExceeded(f"token budget of {self.budget_tokens} exhausted ({self.total_tokens} used)")

    def add(self, response: CompletionResponse) -> None:
        with self._lock:
            self.input_tokens += response.input_tokens
            self.output_tokens += response.output_tokens
            self.requests += 1

    def as_dict(self) -> dict:
        return {
            "requests": self.requests,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "total_tokens": self.total_tokens,
        }


def parse_response(data: dict) -> CompletionResponse:
    try:
        choice = data["choices"][0]
        content = choice["message"]["content"]
        if not isinstance(content, str):
            raise TypeError("content is not text")
        usage = data.get("usage") or {}
        return CompletionResponse(
            content=content,
            finish_reason=str(choice.get("finish_reason") or ""),
            input_tokens=int(usage.get("prompt_tokens", usage.get("input_tokens", 0))),
            output_tokens=int(usage.get("completion_tokens", usage.get("output_tokens", 0))),
        )
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed completion response: {exc}") from exc


class HttpTransport:
    """POSTs JSON bodies to a chat-completions endpoint."""

    def __init__(self, endpoint: str, api_key: str, http_client=None):
        import httpx

        self.endpoint = endpoint
        self._headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}
        self._http = http_client or httpx.Client()
        self._httpx = httpx

    @classmethod
    def from_env(cls, endpoint: str = DEFAULT_ENDPOINT, key_env: str = DEFAULT_KEY_ENV) -> "HttpTransport":
        key = os.environ.get(key_env)
        if not key:
            raise AuthError(f"environment variable {key_env} is not set")
        return cls(endpoint, key)

    def __call__(self, body: bytes, timeout: float) -> dict:
        try:
            resp = self._http.post(self.endpoint, content=body, headers=self._headers, timeout=timeout)
        except self._httpx.TimeoutException as exc:
            raise TransportTimeout(str(exc)) from exc
        except self._httpx.TransportError as exc:
            # connection resets and similar are retried like a 503
            raise TransportError(503, str(exc)) from exc
        if resp.status_code >= 400:
            raise TransportError(resp.status_code, resp.text[:200])
        try:
            return resp.json()
        except ValueError as exc:
            raise ProtocolError(f"response is not JSON: {exc}") from exc

    def close(self) -> None:
        self._http.close()


def completion_json(content: str, input_tokens: int = 0, output_tokens: int = 0, finish_reason: str = "stop") -> dict:
    return {
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": finish_reason}],
        "usage": {"prompt_tokens": input_tokens, "completion_tokens": output_tokens},
    }


class MockTransport:
    """Scriptable stand-in for the network.

    ``reply`` may be a fixed string, a callable receiving the decoded request
    payload, or a sequence of ``(regex, reply)`` pairs matched against the
    last message. ``failures`` are raised, in order, before replies start.
    Token usage is approximated by whitespace-separated word counts.
    """

    def __init__(self, reply="(1)", failures: Iterable[Exception] = (), delay: float = 0.0):
        self._reply = reply
        self._failures = list(failures)
        self._delay = delay
        self._lock = threading.Lock()
        self.calls: list[dict] = []
        self.in_flight = 0
        self.max_seen_in_flight = 0

    def _content_for(self, payload: dict) -> str:
        if callable(self._reply):
            return self._reply(payload)
        if isinstance(self._reply, str):
            return self._reply
        last = payload["messages"][-1]["content"]
        for pattern, reply in self._reply:
            if re.search(pattern, last):
                return reply
        raise TransportError(500, "no scripted reply matched")

    def __call__(self, body: bytes, timeout: float) -> dict:
        payload = json.loads(body)
        with self._lock:
            self.calls.append(payload)
            self.in_flight += 1
            self.max_seen_in_flight = max(self.max_seen_in_flight, self.in_flight)
            failure = self._failures.pop(0) if self._failures else None
        try:
            if self._delay:
                time.sleep(self._delay)
            if failure is not None:
                raise failure
            content = self._content_for(payload)
            n_in = sum(len(m["content"].split()) for m in payload["messages"])
            return completion_json(content, n_in, len(content.split()))
        finally:
            with self._lock:
                self.in_flight -= 1


class ChatClient:
    def __init__(
        self,
        transport: Callable[[bytes, float], dict],
        policy: TransportPolicy | None = None,
        budget_tokens: int | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.transport = transport
        self.policy = policy or TransportPolicy()
        self.usage = UsageMeter(budget_tokens)
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(self.policy.max_in_flight)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        body = request.serialize()
        attempts = self.policy.retry_max + 1
        last: Exception | None = None
        for attempt in range(attempts):
            self.usage.check()
            try:
                with self._slots:
                    data = self.transport(body, self.policy.timeout)
                response = parse_response(data)
                self.usage.add(response)
                return response
            except TransportTimeout as exc:
                last = exc
            except TransportError as exc:
                if exc.status in (401, 403):
                    raise AuthError(str(exc)) from exc
                if exc.status != 429 and exc.status < 500:
                    raise ProtocolError(str(exc)) from exc
                last = exc
            if attempt + 1 < attempts:
                wait = self.policy.backoff(attempt)
                log.warning("transient failure (%s), retry %d/%d in %.1fs", last, attempt + 1, self.policy.retry_max, wait)
                self._sleep(wait)
        if isinstance(last, TransportTimeout):
            raise Timeout(f"request timed out after {attempts} attempts") from last
        raise RateLimited(f"giving up after {attempts} attempts: {last}") from last

    def chat(self, model_id: str, messages: Sequence[ChatMessage], temperature: float = 1.0, max_output_tokens: int | None = None) -> str:
        return self.complete(CompletionRequest(model_id, tuple(messages), temperature, max_output_tokens)).content

    def translate(self, text: str, target_language: Language, model_id: str, source_language: str = "English") -> str:
        """Translate ``text`` in a fresh single-turn conversation."""
        if not text:
            return ""
        return self.translate_response(text, target_language, model_id, source_language).content

    def translate_response(self, text: str, target_language: Language, model_id: str, source_language: str = "English") -> CompletionResponse:
        prompt = (
            f"Translate the following text from {source_language} into {target_language.display_name}. "
            "Keep every placeholder in curly braces unchanged. Reply with the translation only.\n\n" + text
        )
        return self.complete(CompletionRequest(model_id, (ChatMessage("user", prompt),)))
