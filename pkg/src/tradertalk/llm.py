"""Chat backend gateway: request types, error taxonomy, and three backends.

``LiveBackend`` speaks the chat-completion wire protocol over HTTP,
``ScriptedBackend`` answers from a fingerprint-keyed script, and
``ReplayBackend`` plays back a previously recorded exchange log. All three
append one ``LlmExchange`` per successful call to a shared ``Recorder``.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import random
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import httpx

logger = logging.getLogger(__name__)

API_KEY_ENV = "TRADERTALK_API_KEY"
API_BASE_ENV = "TRADERTALK_API_BASE"
DEFAULT_API_BASE = "https://api.openai.com"
DEFAULT_MODEL = "gpt-4o-mini"
CHAT_PATH = "/v1/chat/completions"


class BackendError(Exception):
    """Base class for every failure surfaced by a backend."""


class TransportError(BackendError):
    """Network or server failure that persisted through every retry."""


class RateLimited(BackendError):
    """Backend kept throttling the client through every retry."""


class MalformedResponse(BackendError):
    """Backend answered, but without a usable assistant message."""


class RequestRejected(BackendError):
    """Backend refused the request outright (4xx other than 429)."""


class ReplayDivergence(BackendError):
    def __init__(self, index: int, reason: str = "") -> None:
        self.index = index
        super().__init__(f"replay diverged at request {index}" + (f": {reason}" if reason else ""))


class ConfigError(Exception):
    """Invalid or missing configuration, raised before any request is sent."""


class Role(str, enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", Role(self.role))
        if self.role is not Role.ASSISTANT and not self.content:
            raise ValueError(f"{self.role.value} message content must be non-empty")

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role.value, "content": self.content}


@dataclass(frozen=True)
class LlmRequest:
    messages: tuple[ChatMessage, ...]
    model_id: str = DEFAULT_MODEL
    temperature: float = 1.0
    max_tokens: int = 512

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))

    def validate(self) -> None:
        if not self.messages:
            raise ValueError("request has no messages")
        if not self.model_id:
            raise ValueError("request has no model id")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if isinstance(self.max_tokens, bool) or not isinstance(self.max_tokens, int) or self.max_tokens <= 0:
            raise ValueError(f"max_tokens must be a positive int, got {self.max_tokens!r}")

    def wire_body(self) -> dict[str, Any]:
        return {
            "model": self.model_id,
            "messages": [m.to_dict() for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }

    @classmethod
    def from_wire(cls, body: Mapping[str, Any]) -> LlmRequest:
        return cls(
            messages=tuple(ChatMessage(Role(m["role"]), m["content"]) for m in body["messages"]),
            model_id=body["model"],
            temperature=body["temperature"],
            max_tokens=body["max_tokens"],
        )


def prompt_text(messages: Iterable[ChatMessage]) -> str:
    """The exact string a prompt fingerprint is computed over.

    Each message renders as ``[role]`` on its own line followed by the
    content; messages are joined with a blank line.
    """
    return "\n\n".join(f"[{m.role.value}]\n{m.content}" for m in messages)


def fingerprint(prompt: str | Sequence[ChatMessage] | LlmRequest) -> str:
    """Stable 64-bit BLAKE2b hash of the rendered prompt, as 16 hex digits.

    Whitespace-sensitive on purpose: any template edit changes every key.
    """
    if isinstance(prompt, LlmRequest):
        prompt = prompt.messages
    if not isinstance(prompt, str):
        prompt = prompt_text(prompt)
    return hashlib.blake2b(prompt.encode("utf-8"), digest_size=8).hexdigest()


@dataclass(frozen=True)
class LlmExchange:
    request: LlmRequest
    response_text: str
    latency: float  # seconds
    attempt_count: int = 1
    run_index: int | None = None
    sequence: int = 0  # position within the run

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_index": self.run_index,
            "sequence": self.sequence,
            "request": self.request.wire_body(),
            "response_text": self.response_text,
            "latency_ms": round(self.latency * 1000.0, 3),
            "attempt_count": self.attempt_count,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> LlmExchange:
        return cls(
            request=LlmRequest.from_wire(data["request"]),
            response_text=data["response_text"],
            latency=data.get("latency_ms", 0.0) / 1000.0,
            attempt_count=data.get("attempt_count", 1),
            run_index=data.get("run_index"),
            sequence=data.get("sequence", 0),
        )


class Recorder:
    """Thread-safe, append-only log of successful exchanges."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._exchanges: list[LlmExchange] = []
        self._per_run: dict[int | None, int] = defaultdict(int)

    def record(self, request: LlmRequest, text: str, latency: float, attempts: int, run_index: int | None) -> LlmExchange:
        with self._lock:
            seq = self._per_run[run_index]
            self._per_run[run_index] += 1
            exchange = LlmExchange(request, text, latency, attempts, run_index, seq)
            self._exchanges.append(exchange)
        return exchange

    def __len__(self) -> int:
        with self._lock:
            return len(self._exchanges)

    @property
    def exchanges(self) -> list[LlmExchange]:
        with self._lock:
            return list(self._exchanges)

    def for_run(self, run_index: int | None) -> list[LlmExchange]:
        with self._lock:
            found = [e for e in self._exchanges if e.run_index == run_index]
        return sorted(found, key=lambda e: e.sequence)

    def dump_jsonl(self, path: str | Path) -> None:
        ordered = sorted(self.exchanges, key=lambda e: (e.run_index is not None, e.run_index or 0, e.sequence))
        with open(path, "w", encoding="utf-8") as fh:
            for exchange in ordered:
                fh.write(json.dumps(exchange.to_dict(), ensure_ascii=False) + "\n")


class Backend:
    """Common front door: validates, times, and records every completion."""

    kind = "abstract"

    def __init__(self, recorder: Recorder | None = None) -> None:
        self.recorder = recorder if recorder is not None else Recorder()

    def complete(self, request: LlmRequest, *, run_index: int | None = None) -> str:
        request.validate()
        started = time.perf_counter()
        text, attempts = self._send(request, run_index)
        if not text or not text.strip():
            raise MalformedResponse("empty assistant message")
        self.recorder.record(request, text, time.perf_counter() - started, attempts, run_index)
        return text

    def _send(self, request: LlmRequest, run_index: int | None) -> tuple[str, int]:
        raise NotImplementedError


class ScriptedBackend(Backend):
    """Deterministic test double keyed on prompt fingerprints.

    Lookup order is the per-run table (if the call carries a run index),
    then the global table, then ``default``. With a ``seed``, per-run tables
    are dealt to run indices by a seeded shuffle, so the multiset of scripted
    outcomes is preserved while their assignment to runs changes.
    """

    kind = "scripted"

    def __init__(
        self,
        script: Mapping[str, str] | None = None,
        default: str | None = None,
        *,
        runs: Mapping[int, Mapping[str, str]] | None = None,
        seed: int | None = None,
        recorder: Recorder | None = None,
    ) -> None:
        super().__init__(recorder)
        self.script = dict(script or {})
        self.default = default
        self.seed = seed
        runs = {int(k): dict(v) for k, v in (runs or {}).items()}
        slots = sorted(runs)
        dealt = list(slots)
        if seed is not None:
            random.Random(seed).shuffle(dealt)
        self._runs = {slot: runs[src] for slot, src in zip(slots, dealt)}

    def _send(self, request: LlmRequest, run_index: int | None) -> tuple[str, int]:
        key = fingerprint(request)
        table = self._runs.get(run_index, {}) if run_index is not None else {}
        if key in table:
            return table[key], 1
        if key in self.script:
            return self.script[key], 1
        if self.default is not None:
            return self.default, 1
        raise MalformedResponse(f"no scripted response for prompt {key}")

    @classmethod
    def from_file(cls, path: str | Path, *, seed: int | None = None, recorder: Recorder | None = None) -> ScriptedBackend:
        """Load a script file: ``{"default": str|null, "responses": {fp: text}, "runs": {"<i>": {fp: text}}}``."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            data.get("responses", {}),
            data.get("default"),
            runs=data.get("runs", {}),
            seed=seed,
            recorder=recorder,
        )


def scripted_backend(script: Mapping[str, str], default: str | None = None, **kwargs: Any) -> ScriptedBackend:
    return ScriptedBackend(script, default, **kwargs)


class ReplayBackend(Backend):
    """Plays back a recorded exchange log.

    Exchanges are grouped by run index and replayed in recorded order within
    each run. A request whose prompt fingerprint differs from the recorded
    one, or that runs past the end of the log, raises ``ReplayDivergence``
    with its 0-based position.
    """

    kind = "replay"

    def __init__(self, exchanges: Iterable[LlmExchange], *, recorder: Recorder | None = None) -> None:
        super().__init__(recorder)
        grouped: dict[int | None, list[LlmExchange]] = defaultdict(list)
        for exchange in exchanges:
            grouped[exchange.run_index].append(exchange)
        self._logs = {k: sorted(v, key=lambda e: e.sequence) for k, v in grouped.items()}
        self._cursor: dict[int | None, int] = defaultdict(int)
        self._lock = threading.Lock()

    def _send(self, request: LlmRequest, run_index: int | None) -> tuple[str, int]:
        log = self._logs.get(run_index)
        if log is None and run_index is not None:
            log = self._logs.get(None)
            run_index = None
        log = log or []
        with self._lock:
            position = self._cursor[run_index]
            self._cursor[run_index] += 1
        if position >= len(log):
            raise ReplayDivergence(position, "log exhausted")
        recorded = log[position]
        if fingerprint(recorded.request) != fingerprint(request):
            raise ReplayDivergence(position, "prompt fingerprint mismatch")
        return recorded.response_text, recorded.attempt_count

    @classmethod
    def from_file(cls, path: str | Path, *, recorder: Recorder | None = None) -> ReplayBackend:
        exchanges = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    exchanges.append(LlmExchange.from_dict(json.loads(line)))
        return cls(exchanges, recorder=recorder)


def record_replay(log_path: str | Path, **kwargs: Any) -> ReplayBackend:
    return ReplayBackend.from_file(log_path, **kwargs)


class TokenBucket:
    """Requests-per-minute limiter shared by every worker using a backend."""

    def __init__(self, per_minute: float, *, clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep) -> None:
        if per_minute <= 0:
            raise ValueError("rate must be positive")
        self.capacity = max(1.0, per_minute / 60.0)
        self.rate = per_minute / 60.0
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._stamp = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._stamp) * self.rate)
                self._stamp = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


@dataclass
class RetryPolicy:
    max_retries: int = 3
    base_delay: float = 1.0
    rng: random.Random = field(default_factory=random.Random)
    sleep: Callable[[float], None] = time.sleep

    def delay(self, retry: int) -> float:
        # full jitter
        return self.rng.uniform(0.0, self.base_delay * (2**retry))


class LiveBackend(Backend):
    kind = "live"

    def __init__(
        self,
        api_key: str,
        base_url: str = DEFAULT_API_BASE,
        *,
        retry: RetryPolicy | None = None,
        requests_per_minute: float | None = 500.0,
        timeout: float = 60.0,
        recorder: Recorder | None = None,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        super().__init__(recorder)
        if not api_key:
            raise ConfigError(f"live backend needs an API key (set {API_KEY_ENV})")
        self.url = base_url.rstrip("/") + CHAT_PATH
        self.retry = retry or RetryPolicy()
        self.limiter = TokenBucket(requests_per_minute) if requests_per_minute else None
        self._client = httpx.Client(
            timeout=timeout,
            headers={"Authorization": f"Bearer {api_key}"},
            transport=transport,
        )

    @classmethod
    def from_env(cls, **kwargs: Any) -> LiveBackend:
        key = os.environ.get(API_KEY_ENV)
        if not key:
            raise ConfigError(f"{API_KEY_ENV} is not set")
        return cls(key, os.environ.get(API_BASE_ENV) or DEFAULT_API_BASE, **kwargs)

    def close(self) -> None:
        self._client.close()

    def _send(self, request: LlmRequest, run_index: int | None) -> tuple[str, int]:
        body = request.wire_body()
        attempt = 0
        while True:
            attempt += 1
            if self.limiter:
                self.limiter.acquire()
            try:
                return self._post_once(body), attempt
            except (TransportError, RateLimited) as exc:
                if attempt > self.retry.max_retries:
                    raise
                pause = self.retry.delay(attempt - 1)
                logger.warning("attempt %d failed (%s); retrying in %.2fs", attempt, exc, pause)
                self.retry.sleep(pause)

    def _post_once(self, body: dict[str, Any]) -> str:
        try:
            resp = self._client.post(self.url, json=body)
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429:
            raise RateLimited(f"HTTP 429 from {self.url}")
        if resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code} from {self.url}")
        if resp.status_code >= 400:
            raise RequestRejected(f"HTTP {resp.status_code} from {self.url}: {resp.text[:200]}")
        return parse_completion(resp.content)


def parse_completion(raw: bytes | str) -> str:
    """Extract the single assistant message from a chat-completion body."""
    try:
        payload = json.loads(raw)
        message = payload["choices"][0]["message"]
        content = message["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"no assistant message in response: {exc!r}") from exc
    if message.get("role", "assistant") != "assistant" or not isinstance(content, str) or not content.strip():
        raise MalformedResponse("response carries no assistant text")
    return content
