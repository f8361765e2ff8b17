"""Multi-backend chat completion with caching, retries, and a mock transport.

Responses are cached on disk keyed by a content hash of everything that
determines the completion, so re-runs are free and byte-stable.  Endpoints
whose URL starts with ``mock:`` read canned responses from a JSON fixture
file keyed by that same request hash, which is how tests and dry runs
exercise the full pipeline without network access.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import httpx

from .store import content_hash

logger = logging.getLogger(__name__)

DEFAULT_RETRIES = 5
DEFAULT_BACKOFF_SECONDS = 1.0
EVAL_TEMPERATURE = 0.0
AUGMENT_TEMPERATURE = 0.7
EVAL_SEED = 0
DEFAULT_MAX_OUTPUT_TOKENS = 1024

MOCK_SCHEME = "mock:"
MOCK_ANY_KEY = "*"


class GatewayError(Exception):
    pass


class AuthError(GatewayError):
    pass


class TimeoutExhausted(GatewayError):
    pass


class MalformedResponse(GatewayError):
    pass


class TransientBackendError(GatewayError):
    """Retryable failure: network trouble, timeouts, HTTP 429/5xx."""


@dataclass(frozen=True)
class BackendSpec:
    id: str
    endpoint: str
    model_name: str
    auth_env_var: str = ""
    max_in_flight: int = 4
    timeout: float = 30.0

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")

    @property
    def is_mock(self) -> bool:
        return self.endpoint.startswith(MOCK_SCHEME)


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    temperature: float = EVAL_TEMPERATURE
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    backend_id: str
    latency: float
    cached: bool


@dataclass(frozen=True)
class FanOutResult:
    backend_id: str
    response: ChatResponse | None = None
    error: str | None = None


def request_cache_key(request: ChatRequest, backend: BackendSpec) -> str:
    """Content hash over every field that can change the completion."""
    return content_hash(
        {
            "backend_id": backend.id,
            "model_name": backend.model_name,
            "system": request.system,
            "user": request.user,
            "temperature": request.temperature,
            "max_output_tokens": request.max_output_tokens,
            "seed": request.seed,
        }
    )


def load_backends(path) -> list[BackendSpec]:
    """Backend config: a JSON list of BackendSpec objects."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list) or not raw:
        raise ValueError(f"{path}: expected a non-empty JSON list of backends")
    specs = []
    for entry in raw:
        specs.append(
            BackendSpec(
                id=entry["id"],
                endpoint=entry["endpoint"],
                model_name=entry["model_name"],
                auth_env_var=entry.get("auth_env_var", ""),
                max_in_flight=entry.get("max_in_flight", 4),
                timeout=entry.get("timeout", 30.0),
            )
        )
    return specs


Transport = Callable[[ChatRequest, BackendSpec], str]


class LlmGateway:
    """Issues chat completions with per-backend concurrency limits.

    ``cache_dir=None`` disables the on-disk cache.  ``transport`` may be
    injected for tests; by default mock endpoints read their fixture file
    and anything else goes over HTTP.
    """

    def __init__(
        self,
        cache_dir: str | Path | None = None,
        retries: int = DEFAULT_RETRIES,
        backoff_seconds: float = DEFAULT_BACKOFF_SECONDS,
        transport: Transport | None = None,
    ):
        if retries < 1:
            raise ValueError("retries must be at least 1")
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.retries = retries
        self.backoff_seconds = backoff_seconds
        self._transport = transport or self._dispatch
        self._limits: dict[str, threading.Semaphore] = {}
        self._limits_guard = threading.Lock()
        self._mock_fail_counts: dict[tuple[str, str], int] = {}
        self._mock_guard = threading.Lock()

    # -- public API ---------------------------------------------------

    def complete(self, request: ChatRequest, backend: BackendSpec) -> ChatResponse:
        key = request_cache_key(request, backend)
        cached = self._cache_get(key)
        if cached is not None:
            return ChatResponse(cached["text"], backend.id, 0.0, True)
        if backend.auth_env_var and not backend.is_mock and not os.environ.get(backend.auth_env_var):
            raise AuthError(
                f"backend {backend.id!r}: credential env var {backend.auth_env_var!r} is not set"
            )
        started = time.monotonic()
        text = self._complete_with_retries(request, backend, key)
        latency = time.monotonic() - started
        self._cache_put(key, {"text": text, "backend_id": backend.id, "model_name": backend.model_name})
        return ChatResponse(text, backend.id, latency, False)

    def fan_out(self, request: ChatRequest, backends: Sequence[BackendSpec]) -> list[FanOutResult]:
        """One completion per backend; failures recorded, never raised."""
        if not backends:
            raise ValueError("fan_out requires at least one backend")
        results: list[FanOutResult | None] = [None] * len(backends)

        def run(index: int, backend: BackendSpec) -> None:
            try:
                results[index] = FanOutResult(backend.id, response=self.complete(request, backend))
            except GatewayError as exc:
                results[index] = FanOutResult(backend.id, error=str(exc))

        threads = [
            threading.Thread(target=run, args=(i, backend)) for i, backend in enumerate(backends)
        ]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        return [r for r in results if r is not None]

    def complete_batch(
        self, requests: Sequence[ChatRequest], backend: BackendSpec
    ) -> list[ChatResponse | GatewayError]:
        """Complete many requests against one backend, bounded by its limit."""
        results: list[ChatResponse | GatewayError | None] = [None] * len(requests)

        def run(index: int, request: ChatRequest) -> None:
            try:
                results[index] = self.complete(request, backend)
            except GatewayError as exc:
                results[index] = exc

        threads = [
            threading.Thread(target=run, args=(i, request)) for i, request in enumerate(requests)
        ]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        return [r for r in results if r is not None]

    # -- internals ----------------------------------------------------

    def _limit(self, backend: BackendSpec) -> threading.Semaphore:
        with self._limits_guard:
            if backend.id not in self._limits:
                self._limits[backend.id] = threading.Semaphore(backend.max_in_flight)
            return self._limits[backend.id]

    def _complete_with_retries(self, request: ChatRequest, backend: BackendSpec, key: str) -> str:
        last_error: TransientBackendError | None = None
        for attempt in range(self.retries):
            try:
                with self._limit(backend):
                    return self._transport(request, backend)
            except TransientBackendError as exc:
                last_error = exc
                if attempt + 1 < self.retries:
                    delay = self.backoff_seconds * (2**attempt)
                    logger.warning(
                        "backend %s attempt %d/%d failed (%s); retrying in %.1fs",
                        backend.id,
                        attempt + 1,
                        self.retries,
                        exc,
                        delay,
                    )
                    if delay > 0:
                        time.sleep(delay)
        raise TimeoutExhausted(
            f"backend {backend.id!r}: {self.retries} attempts failed for request {key[:12]}… "
            f"(last error: {last_error})"
        )

    def _cache_path(self, key: str) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / f"{key}.json"

    def _cache_get(self, key: str) -> dict | None:
        path = self._cache_path(key)
        if path is None or not path.exists():
            return None
        try:
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        except (OSError, json.JSONDecodeError):
            return None

    def _cache_put(self, key: str, record: dict) -> None:
        path = self._cache_path(key)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".tmp.{os.getpid()}.{threading.get_ident()}")
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(record, fh, ensure_ascii=False, sort_keys=True)
        os.replace(tmp, path)

    def _dispatch(self, request: ChatRequest, backend: BackendSpec) -> str:
        if backend.is_mock:
            return self._mock_complete(request, backend)
        return self._http_complete(request, backend)

    def _mock_complete(self, request: ChatRequest, backend: BackendSpec) -> str:
        fixture_path = backend.endpoint[len(MOCK_SCHEME) :]
        try:
            with open(fixture_path, encoding="utf-8") as fh:
                fixture = json.load(fh)
        except OSError as exc:
            raise MalformedResponse(f"mock fixture {fixture_path!r} unreadable: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise MalformedResponse(f"mock fixture {fixture_path!r} is not valid JSON") from exc
        key = request_cache_key(request, backend)
        entry = fixture.get(key, fixture.get(MOCK_ANY_KEY))
        if entry is None:
            raise MalformedResponse(
                f"mock fixture {fixture_path!r} has no entry for request {key[:12]}…"
            )
        if isinstance(entry, str):
            return entry
        fail_times = int(entry.get("fail_times", 0))
        if fail_times:
            state_key = (fixture_path, key)
            with self._mock_guard:
                failed = self._mock_fail_counts.get(state_key, 0)
                if failed < fail_times:
                    self._mock_fail_counts[state_key] = failed + 1
                    raise TransientBackendError(
                        f"mock backend scripted failure {failed + 1}/{fail_times}"
                    )
        if "text" not in entry:
            raise MalformedResponse(f"mock fixture entry for {key[:12]}… has no text")
        return entry["text"]

    def _http_complete(self, request: ChatRequest, backend: BackendSpec) -> str:
        headers = {"Content-Type": "application/json"}
        if backend.auth_env_var:
            headers["Authorization"] = f"Bearer {os.environ[backend.auth_env_var]}"
        payload: dict = {
            "model": backend.model_name,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        try:
            response = httpx.post(
                backend.endpoint, json=payload, headers=headers, timeout=backend.timeout
            )
        except httpx.TimeoutException as exc:
            raise TransientBackendError(f"timeout after {backend.timeout}s") from exc
        except httpx.HTTPError as exc:
            raise TransientBackendError(f"network error: {exc}") from exc
        if response.status_code in (401, 403):
            raise AuthError(f"backend {backend.id!r}: HTTP {response.status_code}")
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientBackendError(f"HTTP {response.status_code}")
        if response.status_code != 200:
            raise MalformedResponse(f"HTTP {response.status_code}: {response.text[:200]}")
        try:
            body = response.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected response shape: {exc}") from exc
        if not isinstance(text, str):
            raise MalformedResponse("response content is not a string")
        return text
