"""OpenAI-compatible chat-completion client with a content-addressed on-disk cache."""

from __future__ import annotations

import json
import os
import threading
import time
from pathlib import Path

import httpx

from .base import (
    FINISH_END,
    FINISH_LENGTH,
    FINISH_STOP,
    BackendDescriptor,
    CompletionRequest,
    CompletionResult,
    MalformedResponseError,
    TransportFailure,
    canonical_request_key,
)
from ..tokens import count_tokens

_FINISH_MAP = {"stop": FINISH_STOP, "length": FINISH_LENGTH}


class CompletionCache:
    """One JSON file per canonical request hash, written atomically."""

    def __init__(self, directory: Path) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> CompletionResult | None:
        path = self._path(key)
        if not path.exists():
            return None
        record = json.loads(path.read_text(encoding="utf-8"))
        resp = record["response"]
        return CompletionResult(resp["text"], resp["completion_tokens"], resp["finish_reason"])

    def put(self, key: str, request: CompletionRequest, result: CompletionResult) -> None:
        record = {
            "request": {
                "messages": [list(m) for m in request.prompt_messages],
                "temperature": request.temperature,
                "max_new_tokens": request.max_new_tokens,
                "stop_sequences": list(request.stop_sequences),
                "seed": request.seed,
            },
            "response": {
                "text": result.text,
                "completion_tokens": result.completion_tokens,
                "finish_reason": result.finish_reason,
            },
        }
        with self._lock:
            tmp = self._path(key).with_suffix(".tmp")
            tmp.write_text(json.dumps(record, ensure_ascii=False), encoding="utf-8")
            tmp.replace(self._path(key))


class RemoteEngine:
    """POSTs to base_url + path with the usual chat-completion body shape.

    Transport failures (and 429/5xx statuses) are retried up to max_retries
    with exponential backoff; malformed payloads are surfaced immediately.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        path: str = "/chat/completions",
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        cache: CompletionCache | None = None,
        client: httpx.Client | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.path = path
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff = backoff
        self.cache = cache
        self._client = client or httpx.Client(timeout=timeout)
        self._lock = threading.Lock()
        self.calls = 0
        self.wire_calls = 0

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _body(self, request: CompletionRequest) -> dict:
        body: dict = {
            "model": self.model,
            "messages": [{"role": role, "content": text} for role, text in request.prompt_messages],
            "temperature": request.temperature,
            "max_tokens": request.max_new_tokens,
        }
        if request.stop_sequences:
            body["stop"] = list(request.stop_sequences)
        if request.seed is not None:
            body["seed"] = request.seed
        return body

    def _parse(self, payload: dict) -> CompletionResult:
        try:
            choice = payload["choices"][0]
            text = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"unusable completion payload: {exc}") from exc
        if not isinstance(text, str):
            raise MalformedResponseError("completion content is not a string")
        usage = payload.get("usage") or {}
        tokens = usage.get("completion_tokens")
        if not isinstance(tokens, int) or tokens < 0:
            tokens = count_tokens(text)
        reason = _FINISH_MAP.get(choice.get("finish_reason"), FINISH_END)
        return CompletionResult(text, tokens, reason)

    def _request_once(self, request: CompletionRequest) -> CompletionResult:
        try:
            response = self._client.post(
                self.base_url + self.path, json=self._body(request), headers=self._headers()
            )
        except httpx.HTTPError as exc:
            raise TransportFailure(str(exc)) from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransportFailure(f"retryable status {response.status_code}")
        if response.status_code != 200:
            raise MalformedResponseError(f"status {response.status_code}: {response.text[:200]}")
        try:
            payload = response.json()
        except ValueError as exc:
            raise MalformedResponseError("response body is not JSON") from exc
        return self._parse(payload)

    def generate(self, request: CompletionRequest) -> CompletionResult:
        with self._lock:
            self.calls += 1
        key = canonical_request_key(self.model, request)
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                return cached
        last: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                with self._lock:
                    self.wire_calls += 1
                result = self._request_once(request)
                break
            except TransportFailure as exc:
                last = exc
                if attempt == self.max_retries:
                    raise
                time.sleep(self.backoff * (2**attempt))
        else:  # pragma: no cover - loop always breaks or raises
            raise TransportFailure(str(last))
        if self.cache is not None:
            self.cache.put(key, request, result)
        return result


def make_remote_backend(
    base_url: str,
    model: str,
    identity: str | None = None,
    concurrency_limit: int = 4,
    cache_dir: Path | None = None,
    **engine_kwargs,
) -> BackendDescriptor:
    cache = CompletionCache(cache_dir) if cache_dir is not None else None
    engine = RemoteEngine(base_url, model, cache=cache, **engine_kwargs)
    return BackendDescriptor("remote", identity or model, concurrency_limit, engine)
