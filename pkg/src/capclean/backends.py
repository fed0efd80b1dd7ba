"""Clients for the two external capabilities the pipeline needs.

Vision-capable chat completion (judging and visual regeneration) and plain
text translation (retranslation). Every backend role speaks one of two wire
protocols: an OpenAI-compatible ``/chat/completions`` endpoint with images as
base64 data URLs, or a ``/translate`` endpoint taking FLORES language codes
and a text batch. Deterministic in-process doubles of both exist for tests
and mock runs.

A shared ConcurrencyCap bounds in-flight external calls across every role;
callers wrap their clients in GatedChatBackend / GatedTranslator so the cap
is enforced in one place.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from collections import Counter
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping, Protocol, Sequence

import requests

from .imaging import ImagePayload

logger = logging.getLogger(__name__)

STAGE_JUDGE = "judge"
STAGE_CORRECT = "correct"

DEFAULT_TIMEOUT = 60.0


class BackendError(Exception):
    """Base class for backend failures."""


class TransportError(BackendError):
    """Network-level failure: connection refused, reset, timeout."""


class RateLimitedError(BackendError):
    """HTTP 429; safe to retry after a delay."""


class ServerError(BackendError):
    """HTTP 5xx or a protocol-violating response body; retryable."""


class AuthError(BackendError):
    """HTTP 401/403 or missing credentials; never retried."""


class UnsupportedModality(BackendError):
    """An image was sent to a backend that cannot accept one."""


class LengthMismatchError(BackendError):
    """Translate returned a different number of outputs than inputs; fatal."""


class ScriptError(BackendError):
    """A scripted backend has no reply for the requested key."""


@dataclass(frozen=True)
class RequestTag:
    """Routing/trace metadata: which example, language and stage a call serves."""

    image_id: str
    language: str
    stage: str

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.image_id, self.language, self.stage)


@dataclass(frozen=True)
class ChatRequest:
    system_text: str
    user_text: str
    model_id: str
    image: ImagePayload | None = None
    response_format: str = "text"  # "text" | "json_object"
    temperature: float = 0.0
    tag: RequestTag | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: dict | None = None


class ChatBackend(Protocol):
    def chat_complete(self, req: ChatRequest) -> ChatResponse: ...


class Translator(Protocol):
    def translate(self, src_code: str, tgt_code: str, texts: Sequence[str]) -> list[str]: ...


def default_retryable(exc: BaseException) -> bool:
    return isinstance(exc, (TransportError, RateLimitedError, ServerError))


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 4
    base_delay: float = 1.0
    multiplier: float = 2.0
    retryable: Callable[[BaseException], bool] = default_retryable

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.base_delay < 0 or self.multiplier < 1.0:
            raise ValueError("delays must be nonnegative and nondecreasing")

    def delay_for(self, attempt: int) -> float:
        return self.base_delay * self.multiplier ** (attempt - 1)


def with_retries(call, policy: RetryPolicy, sleep=time.sleep):
    """Invoke ``call`` up to max_attempts times with exponential backoff.

    Only errors the policy classes as retryable are retried; the final error
    is re-raised with an ``attempts`` attribute set.
    """
    for attempt in range(1, policy.max_attempts + 1):
        try:
            return call()
        except Exception as exc:
            if not policy.retryable(exc) or attempt == policy.max_attempts:
                exc.attempts = attempt  # type: ignore[attr-defined]
                raise
            sleep(policy.delay_for(attempt))
    raise AssertionError("unreachable")


class ConcurrencyCap:
    """Permit pool bounding in-flight external calls across all backends."""

    def __init__(self, max_in_flight: int = 4):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.max_in_flight = max_in_flight
        self._sem = threading.BoundedSemaphore(max_in_flight)

    @contextmanager
    def acquire_slot(self) -> Iterator[None]:
        self._sem.acquire()
        try:
            yield
        finally:
            self._sem.release()


class GatedChatBackend:
    def __init__(self, inner: ChatBackend, cap: ConcurrencyCap):
        self._inner = inner
        self._cap = cap

    def chat_complete(self, req: ChatRequest) -> ChatResponse:
        with self._cap.acquire_slot():
            return self._inner.chat_complete(req)


class GatedTranslator:
    def __init__(self, inner: Translator, cap: ConcurrencyCap):
        self._inner = inner
        self._cap = cap

    def translate(self, src_code: str, tgt_code: str, texts: Sequence[str]) -> list[str]:
        with self._cap.acquire_slot():
            return self._inner.translate(src_code, tgt_code, texts)


def _classify_status(status: int, body: str) -> BackendError:
    snippet = body[:300]
    if status in (401, 403):
        return AuthError(f"HTTP {status}: {snippet}")
    if status == 429:
        return RateLimitedError(f"HTTP 429: {snippet}")
    if status >= 500:
        return ServerError(f"HTTP {status}: {snippet}")
    return BackendError(f"HTTP {status}: {snippet}")


class LiveChatBackend:
    """OpenAI-compatible chat-completions client.

    The API key is read from ``api_key_env`` at call time and sent as a
    bearer token. Transport, 429 and 5xx errors are retried per the policy;
    auth errors are not.
    """

    def __init__(
        self,
        base_url: str,
        api_key_env: str,
        *,
        timeout: float = DEFAULT_TIMEOUT,
        retry_policy: RetryPolicy | None = None,
        vision_capable: bool = True,
        session: requests.Session | None = None,
        sleep=time.sleep,
        env: Mapping[str, str] | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.retry_policy = retry_policy or RetryPolicy()
        self.vision_capable = vision_capable
        self._session = session or requests.Session()
        self._sleep = sleep
        self._env = env

    def _api_key(self) -> str:
        env = self._env if self._env is not None else os.environ
        key = env.get(self.api_key_env, "").strip()
        if not key:
            raise AuthError(f"environment variable {self.api_key_env} is not set")
        return key

    def _build_body(self, req: ChatRequest) -> dict:
        if req.image is not None:
            user_content: object = [
                {"type": "text", "text": req.user_text},
                {
                    "type": "image_url",
                    "image_url": {
                        "url": f"data:{req.image.media_type};base64,{req.image.data}"
                    },
                },
            ]
        else:
            user_content = req.user_text
        body = {
            "model": req.model_id,
            "messages": [
                {"role": "system", "content": req.system_text},
                {"role": "user", "content": user_content},
            ],
            "temperature": req.temperature,
        }
        if req.response_format == "json_object":
            body["response_format"] = {"type": "json_object"}
        return body

    def chat_complete(self, req: ChatRequest) -> ChatResponse:
        if req.image is not None and not self.vision_capable:
            raise UnsupportedModality(
                f"backend at {self.base_url} is configured text-only"
            )
        body = self._build_body(req)
        headers = {"Authorization": f"Bearer {self._api_key()}"}

        def attempt() -> ChatResponse:
            try:
                resp = self._session.post(
                    f"{self.base_url}/chat/completions",
                    json=body,
                    headers=headers,
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                raise TransportError(str(exc)) from exc
            if resp.status_code != 200:
                raise _classify_status(resp.status_code, resp.text)
            try:
                data = resp.json()
                text = data["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ServerError(f"malformed chat response: {exc}") from exc
            return ChatResponse(text=text or "", usage=data.get("usage"))

        return with_retries(attempt, self.retry_policy, sleep=self._sleep)


class InFlightMeter:
    """Thread-safe gauge of concurrent calls; shared across mock backends."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.current = 0
        self.peak = 0
        self.total = 0

    @contextmanager
    def track(self) -> Iterator[None]:
        with self._lock:
            self.current += 1
            self.total += 1
            self.peak = max(self.peak, self.current)
        try:
            yield
        finally:
            with self._lock:
                self.current -= 1


ScriptKey = tuple[str, str, str]


class ScriptedChatBackend:
    """Deterministic chat double keyed by (image_id, language, stage).

    Replies may be a single string (repeated on every call) or a list
    (consumed in call order, last entry repeating). Counts calls per key and
    can simulate latency through an injectable delay function.
    """

    def __init__(
        self,
        replies: Mapping[ScriptKey, str | list[str]],
        *,
        default_reply: str | None = None,
        meter: InFlightMeter | None = None,
        delay: Callable[[], float] | None = None,
        sleep=time.sleep,
    ):
        self._replies = dict(replies)
        self._default = default_reply
        self.meter = meter or InFlightMeter()
        self._delay = delay
        self._sleep = sleep
        self._lock = threading.Lock()
        self.calls: Counter[ScriptKey] = Counter()

    def chat_complete(self, req: ChatRequest) -> ChatResponse:
        if req.tag is None:
            raise ScriptError("scripted backend needs a tagged request")
        key = req.tag.key
        with self._lock:
            self.calls[key] += 1
            nth = self.calls[key]
        with self.meter.track():
            if self._delay is not None:
                self._sleep(self._delay())
            reply = self._replies.get(key, self._default)
            if reply is None:
                raise ScriptError(f"no scripted reply for {key}")
            if isinstance(reply, list):
                reply = reply[min(nth - 1, len(reply) - 1)]
            return ChatResponse(text=reply)

    def call_count(self, *, stage: str | None = None) -> int:
        with self._lock:
            if stage is None:
                return sum(self.calls.values())
            return sum(n for key, n in self.calls.items() if key[2] == stage)


def load_script(path: str | Path) -> dict[ScriptKey, str | list[str]]:
    """Load a JSON Lines mock script.

    Each line is an object with image_id, language, stage and reply; a reply
    given as an object is serialized back to JSON text. Repeated keys build
    an ordered reply list.
    """
    replies: dict[ScriptKey, str | list[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
                key = (str(entry["image_id"]), str(entry["language"]), str(entry["stage"]))
                reply = entry["reply"]
            except (ValueError, KeyError, TypeError) as exc:
                raise ScriptError(f"{path}:{line_no}: bad script entry: {exc}") from exc
            if not isinstance(reply, str):
                reply = json.dumps(reply, ensure_ascii=False)
            existing = replies.get(key)
            if existing is None:
                replies[key] = reply
            elif isinstance(existing, list):
                existing.append(reply)
            else:
                replies[key] = [existing, reply]
    return replies


class DictionaryTranslator:
    """Deterministic translate double backed by a phrase dictionary.

    Unknown phrases fall back to ``{tgt_code}:{text}`` so runs stay total and
    reproducible; pass fallback=False to fail loudly instead.
    """

    def __init__(
        self,
        entries: Mapping[str, Mapping[str, str]] | None = None,
        *,
        fallback: bool = True,
        meter: InFlightMeter | None = None,
        delay: Callable[[], float] | None = None,
        sleep=time.sleep,
    ):
        self._entries = {k: dict(v) for k, v in (entries or {}).items()}
        self._fallback = fallback
        self.meter = meter or InFlightMeter()
        self._delay = delay
        self._sleep = sleep
        self._lock = threading.Lock()
        self.batches: list[tuple[str, str, int]] = []

    def translate(self, src_code: str, tgt_code: str, texts: Sequence[str]) -> list[str]:
        with self._lock:
            self.batches.append((src_code, tgt_code, len(texts)))
        with self.meter.track():
            if self._delay is not None:
                self._sleep(self._delay())
            out = []
            for text in texts:
                hit = self._entries.get(text, {}).get(tgt_code)
                if hit is None:
                    if not self._fallback:
                        raise ScriptError(f"no dictionary entry for {text!r}/{tgt_code}")
                    hit = f"{tgt_code}:{text}"
                out.append(hit)
            return out


class HttpTranslator:
    """Client for the ``/translate`` JSON protocol.

    POST {base_url}/translate with src_lang, tgt_lang and texts; the response
    carries a translations list of the same length and order. A length
    mismatch is a protocol violation and is never retried.
    """

    def __init__(
        self,
        base_url: str,
        *,
        timeout: float = DEFAULT_TIMEOUT,
        retry_policy: RetryPolicy | None = None,
        session: requests.Session | None = None,
        sleep=time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retry_policy = retry_policy or RetryPolicy()
        self._session = session or requests.Session()
        self._sleep = sleep

    def translate(self, src_code: str, tgt_code: str, texts: Sequence[str]) -> list[str]:
        body = {"src_lang": src_code, "tgt_lang": tgt_code, "texts": list(texts)}

        def attempt() -> list[str]:
            try:
                resp = self._session.post(
                    f"{self.base_url}/translate", json=body, timeout=self.timeout
                )
            except requests.RequestException as exc:
                raise TransportError(str(exc)) from exc
            if resp.status_code != 200:
                raise _classify_status(resp.status_code, resp.text)
            try:
                translations = resp.json()["translations"]
            except (ValueError, KeyError, TypeError) as exc:
                raise ServerError(f"malformed translate response: {exc}") from exc
            if not isinstance(translations, list) or len(translations) != len(texts):
                raise LengthMismatchError(
                    f"sent {len(texts)} texts, got "
                    f"{len(translations) if isinstance(translations, list) else '?'}"
                )
            return [str(t) for t in translations]

        return with_retries(attempt, self.retry_policy, sleep=self._sleep)

    def check_health(self) -> dict:
        try:
            resp = self._session.get(f"{self.base_url}/health", timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code != 200:
            raise _classify_status(resp.status_code, resp.text)
        try:
            return resp.json()
        except ValueError as exc:
            raise ServerError(f"malformed health response: {exc}") from exc

    def wait_ready(self, timeout: float = 30.0, interval: float = 0.5, sleep=time.sleep) -> dict:
        deadline = time.monotonic() + timeout
        while True:
            try:
                health = self.check_health()
                if health.get("status") == "ok":
                    return health
            except (TransportError, ServerError, RateLimitedError):
                pass
            if time.monotonic() >= deadline:
                raise TransportError(
                    f"translation service at {self.base_url} not ready after {timeout}s"
                )
            sleep(interval)


class BatchingTranslator:
    """Groups concurrent single-text translate calls into batches.

    Callers enqueue texts and block on their slot. A batch flushes as soon as
    a language buffer reaches batch_size; a waiter whose linger deadline
    passes flushes whatever has accumulated, so nothing stalls when traffic
    stops short of a full batch. Results map back by index, and a failed
    underlying call fails every member of its batch.
    """

    def __init__(self, inner: Translator, batch_size: int = 16, linger: float = 0.05):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self._inner = inner
        self.batch_size = batch_size
        self.linger = linger
        self._lock = threading.Lock()
        self._buffers: dict[tuple[str, str], list[tuple[str, Future]]] = {}

    def translate(self, src_code: str, tgt_code: str, texts: Sequence[str]) -> list[str]:
        lane = (src_code, tgt_code)
        futures: list[Future] = []
        for text in texts:
            fut: Future = Future()
            batch = None
            with self._lock:
                buf = self._buffers.setdefault(lane, [])
                buf.append((text, fut))
                if len(buf) >= self.batch_size:
                    batch = self._buffers.pop(lane)
            if batch:
                self._flush(lane, batch)
            futures.append(fut)
        return [self._await(lane, fut) for fut in futures]

    def _await(self, lane: tuple[str, str], fut: Future) -> str:
        while True:
            try:
                return fut.result(timeout=self.linger)
            except FutureTimeout:
                batch = None
                with self._lock:
                    buf = self._buffers.get(lane)
                    if buf and any(f is fut for _, f in buf):
                        batch = self._buffers.pop(lane)
                if batch:
                    self._flush(lane, batch)

    def _flush(self, lane: tuple[str, str], batch: list[tuple[str, Future]]) -> None:
        texts = [text for text, _ in batch]
        try:
            outputs = self._inner.translate(lane[0], lane[1], texts)
            if len(outputs) != len(batch):
                raise LengthMismatchError(
                    f"sent {len(batch)} texts, got {len(outputs)}"
                )
        except Exception as exc:
            for _, fut in batch:
                fut.set_exception(exc)
            return
        for (_, fut), out in zip(batch, outputs):
            fut.set_result(out)
