"""Remote model transport (completion, scoring, embedding) and the scripted mock."""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import httpx

from .config import CompletionParams, EndpointConfig, PipelineConfig, RemoteConfig
from .errors import ConfigError, MockExhausted, ModelTimeout, ParseError, RemoteError

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


@dataclass
class CallRecord:
    kind: str
    latency: float
    attempts: int
    ok: bool
    status: int | None = None


class ModelClient:
    """Common surface of every backend. Subclasses implement ``_complete`` etc."""

    def __init__(self):
        self.calls: list[CallRecord] = []
        self._log_lock = threading.Lock()

    def _record(self, rec: CallRecord) -> None:
        with self._log_lock:
            self.calls.append(rec)
        logger.debug("%s call: %.3fs, %d attempt(s), ok=%s", rec.kind, rec.latency, rec.attempts, rec.ok)

    def _timed(self, kind: str, fn: Callable[[], tuple[Any, int]]):
        t0 = time.perf_counter()
        try:
            value, attempts = fn()
        except RemoteError as exc:
            self._record(CallRecord(kind, time.perf_counter() - t0, getattr(exc, "attempts", 1), False, exc.status))
            raise
        except Exception as exc:
            self._record(CallRecord(kind, time.perf_counter() - t0, getattr(exc, "attempts", 1), False))
            raise
        self._record(CallRecord(kind, time.perf_counter() - t0, attempts, True))
        return value

    def complete(self, prompt: str, params: CompletionParams | None = None) -> str:
        params = params or CompletionParams()
        return str(self._timed("complete", lambda: self._complete(prompt, params))).strip()

    def score(self, prompt: str) -> float:
        value = float(self._timed("score", lambda: self._score(prompt)))
        if not math.isfinite(value):
            raise RemoteError(None, f"non-finite score {value}")
        return value

    def embed(self, text: str) -> list[float]:
        return [float(x) for x in self._timed("embed", lambda: self._embed(text))]

    @property
    def retries(self) -> int:
        """Total retries (attempts beyond the first) across all calls so far."""
        return sum(r.attempts - 1 for r in self.calls)

    def _complete(self, prompt, params):
        raise NotImplementedError

    def _score(self, prompt):
        raise NotImplementedError

    def _embed(self, text):
        raise NotImplementedError


class MockModelClient(ModelClient):
    """Replays scripted responses in order, whatever the call kind."""

    def __init__(self, responses: Sequence[Any], name: str = "mock"):
        super().__init__()
        self.name = name
        self._responses = list(responses)
        self._pos = 0
        self._lock = threading.Lock()
        self.prompts: list[str] = []

    @classmethod
    def from_script(cls, path: str | Path) -> "MockModelClient":
        responses = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    responses.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ParseError(str(path), lineno, f"bad mock script line: {exc}") from exc
        return cls(responses, name=str(path))

    def _next(self, prompt: str):
        with self._lock:
            if self._pos >= len(self._responses):
                raise MockExhausted(f"mock script {self.name} exhausted after {self._pos} responses")
            value = self._responses[self._pos]
            self._pos += 1
            self.prompts.append(prompt)
        return value, 1

    @property
    def remaining(self) -> int:
        return len(self._responses) - self._pos

    def _complete(self, prompt, params):
        return self._next(prompt)

    def _score(self, prompt):
        return self._next(prompt)

    def _embed(self, text):
        return self._next(text)


class RateLimiter:
    """Caps requests in flight and, optionally, requests per rolling minute."""

    def __init__(self, max_in_flight: int, per_minute: int | None = None,
                 clock: Callable[[], float] = time.monotonic, sleep: Callable[[float], None] = time.sleep):
        self._sem = threading.BoundedSemaphore(max_in_flight)
        self.per_minute = per_minute
        self._window: deque[float] = deque()
        self._lock = threading.Lock()
        self._clock = clock
        self._sleep = sleep
        self.in_flight = 0
        self.peak_in_flight = 0

    def _wait_for_budget(self):
        if self.per_minute is None:
            return
        while True:
            with self._lock:
                now = self._clock()
                while self._window and now - self._window[0] >= 60.0:
                    self._window.popleft()
                if len(self._window) < self.per_minute:
                    self._window.append(now)
                    return
                wait = 60.0 - (now - self._window[0])
            self._sleep(max(wait, 0.01))

    def __enter__(self):
        self._wait_for_budget()
        self._sem.acquire()
        with self._lock:
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
        return self

    def __exit__(self, *exc):
        with self._lock:
            self.in_flight -= 1
        self._sem.release()
        return False


class Transport:
    """JSON-over-HTTP POST with bearer auth, retries and rate limiting, shared by all roles."""

    def __init__(self, cfg: RemoteConfig, token: str | None = None,
                 sleep: Callable[[float], None] = time.sleep, http: httpx.Client | None = None):
        if token is None:
            token = os.environ.get(cfg.token_env)
            if not token:
                raise ConfigError(f"remote model access needs a token in ${cfg.token_env}")
        self.cfg = cfg
        self._headers = {"Authorization": f"Bearer {token}"}
        self._sleep = sleep
        self._http = http or httpx.Client(timeout=cfg.timeout)
        self.limiter = RateLimiter(cfg.max_in_flight, cfg.requests_per_minute, sleep=sleep)

    def post(self, url: str, body: dict) -> tuple[Any, int]:
        last: Exception | None = None
        for attempt in range(1, self.cfg.retries + 1):
            try:
                with self.limiter:
                    resp = self._http.post(url, json=body, headers=self._headers, timeout=self.cfg.timeout)
            except httpx.TimeoutException as exc:
                last = ModelTimeout(f"request to {url} timed out after {self.cfg.timeout}s")
                last.__cause__ = exc
            except httpx.TransportError as exc:
                last = RemoteError(None, f"{url}: {exc}")
            else:
                if 200 <= resp.status_code < 300:
                    try:
                        return resp.json(), attempt
                    except ValueError as exc:
                        err = RemoteError(resp.status_code, f"{url}: response is not JSON")
                        err.attempts = attempt
                        raise err from exc
                last = RemoteError(resp.status_code, f"{url}")
                if resp.status_code not in RETRYABLE_STATUS:
                    break
            if attempt < self.cfg.retries:
                self._sleep(self.cfg.backoff * 2 ** (attempt - 1))
        last.attempts = attempt  # type: ignore[union-attr]
        raise last  # type: ignore[misc]

    def close(self):
        self._http.close()


def extract_path(doc: Any, path: str) -> Any:
    """Follow a dotted path such as ``choices.0.text``; integer parts index lists."""
    node = doc
    for part in path.split(".") if path else []:
        try:
            node = node[int(part)] if isinstance(node, list) else node[part]
        except (KeyError, IndexError, ValueError, TypeError) as exc:
            raise RemoteError(None, f"response has no field at {path!r}") from exc
    return node


class RemoteModelClient(ModelClient):
    def __init__(self, transport: Transport, completion: EndpointConfig | None = None,
                 score: EndpointConfig | None = None, embed: EndpointConfig | None = None):
        super().__init__()
        self.transport = transport
        self.endpoints = {"complete": completion, "score": score, "embed": embed}

    def _call(self, kind: str, body: dict):
        ep = self.endpoints[kind]
        if ep is None:
            raise ConfigError(f"no endpoint configured for {kind}")
        doc, attempts = self.transport.post(ep.url, {**ep.extra_body, **body})
        return extract_path(doc, ep.response_path), attempts

    def _complete(self, prompt, params):
        return self._call("complete", {"prompt": prompt, **params.model_dump()})

    def _score(self, prompt):
        return self._call("score", {"prompt": prompt})

    def _embed(self, text):
        return self._call("embed", {"text": text})


_ROLE_KIND = {
    "simulator": "completion",
    "rewriter": "completion",
    "summarizer": "completion",
    "selector": "completion",
    "scorer": "score",
    "embedder": "embed",
}


class ClientFactory:
    """Builds one client per model role; remote roles share a single transport."""

    def __init__(self, cfg: PipelineConfig, token: str | None = None, sleep: Callable[[float], None] = time.sleep):
        self.cfg = cfg
        self._token = token
        self._sleep = sleep
        self._transport: Transport | None = None
        self._clients: dict[str, ModelClient] = {}

    def has(self, role: str) -> bool:
        return role in self.cfg.mock_scripts or self._endpoint(role) is not None

    def _endpoint(self, role: str) -> EndpointConfig | None:
        eps = self.cfg.remote.endpoints
        return eps.get(role) or eps.get(_ROLE_KIND[role])

    def get(self, role: str) -> ModelClient:
        if role not in _ROLE_KIND:
            raise ConfigError(f"unknown model role {role!r}")
        if role in self._clients:
            return self._clients[role]
        if role in self.cfg.mock_scripts:
            client: ModelClient = MockModelClient.from_script(self.cfg.mock_scripts[role])
        else:
            ep = self._endpoint(role)
            if ep is None:
                raise ConfigError(f"no mock script or remote endpoint configured for role {role!r}")
            if self._transport is None:
                self._transport = Transport(self.cfg.remote, self._token, sleep=self._sleep)
            kind = _ROLE_KIND[role]
            client = RemoteModelClient(
                self._transport,
                completion=ep if kind == "completion" else None,
                score=ep if kind == "score" else None,
                embed=ep if kind == "embed" else None,
            )
        self._clients[role] = client
        return client
