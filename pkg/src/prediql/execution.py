"""Send queries to the target and classify what came back."""

from __future__ import annotations

import json
import threading
import time
from typing import Callable, Mapping

import httpx

from prediql.gql import try_parse
from prediql.traces import EXCERPT_CAP, Outcome, truncate_excerpt

__all__ = ["Outcome", "TokenBucket", "Executor", "classify", "execute", "CLASSIFICATIONS"]

DEFAULT_TIMEOUT = 15.0
DEFAULT_RATE_LIMIT = 5.0

# "rejected" marks a candidate refused by local validation; it never hits the wire
CLASSIFICATIONS = ("success", "graphql_error", "http_error", "transport_error", "timeout", "rejected")


class TokenBucket:
    """Token bucket with burst 1: at most ``rate`` sends per second, evenly spaced."""

    def __init__(
        self,
        rate: float,
        burst: int = 1,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = float(rate)
        self.burst = burst
        self.clock = clock
        self.sleep = sleep
        self.tokens = float(burst)
        self.last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            now = self.clock()
            self.tokens = min(self.burst, self.tokens + (now - self.last) * self.rate)
            self.last = now
            if self.tokens < 1.0:
                wait = (1.0 - self.tokens) / self.rate
                self.sleep(wait)
                self.last = self.clock()
                self.tokens = 1.0
            self.tokens -= 1.0


def classify(outcome: Outcome) -> str:
    """Derive the classification from the raw outcome fields."""
    if outcome.classification in ("transport_error", "timeout", "rejected"):
        return outcome.classification
    if outcome.http_status != 200:
        return "http_error"
    if outcome.graphql_errors or not outcome.data_present:
        return "graphql_error"
    return "success"


def _target_key(query_text: str, target: str | None) -> str | None:
    if target is None:
        return None
    ast = try_parse(query_text)
    if ast is None:
        return target
    for f in ast.selections:
        if f.name == target:
            return f.response_key
    return target


def _error_messages(errors) -> tuple[str, ...]:
    out = []
    for e in errors if isinstance(errors, list) else [errors]:
        if isinstance(e, dict):
            out.append(str(e.get("message") or json.dumps(e)))
        else:
            out.append(str(e))
    return tuple(m for m in out if m) or ("unspecified GraphQL error",)


class Executor:
    """Owns the HTTP client and rate limiter for one campaign."""

    def __init__(
        self,
        endpoint: str,
        headers: Mapping[str, str] | None = None,
        timeout: float = DEFAULT_TIMEOUT,
        rate_limit: float | None = DEFAULT_RATE_LIMIT,
        client: httpx.Client | None = None,
        excerpt_cap: int = EXCERPT_CAP,
    ):
        self.endpoint = endpoint
        self.headers = {"Content-Type": "application/json", **dict(headers or {})}
        self.timeout = timeout
        self.limiter = TokenBucket(rate_limit) if rate_limit else None
        self._owns_client = client is None
        self.client = client or httpx.Client()
        self.excerpt_cap = excerpt_cap
        self.sent = 0

    def close(self) -> None:
        if self._owns_client:
            self.client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def execute(self, query_text: str, target_field: str | None = None) -> tuple[Outcome, str]:
        """POST one query. Returns the outcome and the full response body text.

        Transport failures and timeouts are folded into the outcome so the
        campaign loop keeps going.
        """
        if self.limiter is not None:
            self.limiter.acquire()
        self.sent += 1
        started = time.perf_counter()
        try:
            resp = self.client.post(
                self.endpoint, json={"query": query_text}, headers=self.headers, timeout=self.timeout
            )
        except httpx.TimeoutException as exc:
            ms = (time.perf_counter() - started) * 1000
            return Outcome(0, (f"timeout: {exc}",), False, ms, "", "timeout"), ""
        except httpx.HTTPError as exc:
            ms = (time.perf_counter() - started) * 1000
            return Outcome(0, (f"transport error: {exc}",), False, ms, "", "transport_error"), ""
        ms = (time.perf_counter() - started) * 1000
        body = resp.text
        errors: tuple[str, ...] = ()
        data_present = False
        try:
            doc = resp.json()
        except ValueError:
            doc = None
        if isinstance(doc, dict):
            if doc.get("errors"):
                errors = _error_messages(doc["errors"])
            data = doc.get("data")
            if isinstance(data, dict):
                key = _target_key(query_text, target_field)
                if key is None:
                    data_present = any(v is not None for v in data.values())
                else:
                    data_present = data.get(key) is not None
        elif resp.status_code == 200:
            errors = ("response body is not a JSON object",)
        outcome = Outcome(resp.status_code, errors, data_present, ms, truncate_excerpt(body, self.excerpt_cap))
        return Outcome(**{**outcome.__dict__, "classification": classify(outcome)}), body


def execute(
    endpoint: str,
    query_text: str,
    auth: Mapping[str, str] | None = None,
    timeout: float = DEFAULT_TIMEOUT,
    rate_limit: float | None = None,
    client: httpx.Client | None = None,
    target_field: str | None = None,
) -> Outcome:
    with Executor(endpoint, auth, timeout, rate_limit, client) as ex:
        return ex.execute(query_text, target_field)[0]
