"""Append-only episode log with exact cosine retrieval.

Every generation/execution episode becomes a :class:`Trace`. Traces are kept
in memory and mirrored to a newline-delimited JSON file so a store can be
reopened later. Retrieval is a full scan (no approximate index).
"""

from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

EMBED_DIM = 256
EXCERPT_CAP = 2048
# similarities are compared at this resolution so equal scores tie exactly
SCORE_DECIMALS = 9

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


class StorageError(RuntimeError):
    pass


def _bucket(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % EMBED_DIM


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def embed(text: str) -> np.ndarray:
    """Hashed bag-of-tokens, L2-normalized; empty input maps to the zero vector."""
    vec = np.zeros(EMBED_DIM, dtype=np.float64)
    for tok in tokenize(text):
        vec[_bucket(tok)] += 1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def truncate_excerpt(text: str, cap: int = EXCERPT_CAP) -> str:
    marker = "...[truncated]"
    if len(text) <= cap:
        return text
    return text[: cap - len(marker)] + marker


@dataclass(frozen=True)
class Outcome:
    http_status: int
    graphql_errors: tuple[str, ...] = ()
    data_present: bool = False
    latency_ms: float = 0.0
    truncated_body: str = ""
    classification: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["graphql_errors"] = list(self.graphql_errors)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Outcome":
        return cls(
            http_status=d["http_status"],
            graphql_errors=tuple(d.get("graphql_errors") or ()),
            data_present=bool(d.get("data_present")),
            latency_ms=float(d.get("latency_ms", 0.0)),
            truncated_body=d.get("truncated_body", ""),
            classification=d.get("classification", ""),
        )


@dataclass(frozen=True)
class Trace:
    id: int
    node: tuple[str, str]
    arm_id: str
    query_text: str
    outcome: Outcome
    response_excerpt: str
    error_messages: tuple[str, ...]
    embedding: tuple[float, ...]
    timestamp: float = 0.0

    @property
    def succeeded(self) -> bool:
        return self.outcome.classification == "success"

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "node": list(self.node),
                "arm_id": self.arm_id,
                "query_text": self.query_text,
                "outcome": self.outcome.to_dict(),
                "response_excerpt": self.response_excerpt,
                "error_messages": list(self.error_messages),
                "embedding": list(self.embedding),
                "timestamp": self.timestamp,
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "Trace":
        d = json.loads(line)
        return cls(
            id=d["id"],
            node=tuple(d["node"]),
            arm_id=d["arm_id"],
            query_text=d["query_text"],
            outcome=Outcome.from_dict(d["outcome"]),
            response_excerpt=d["response_excerpt"],
            error_messages=tuple(d["error_messages"]),
            embedding=tuple(d["embedding"]),
            timestamp=d.get("timestamp", 0.0),
        )


@dataclass(frozen=True)
class ErrorPair:
    query_text: str
    error_message: str
    node: tuple[str, str]


def trace_text(query_text: str, error_messages: Iterable[str]) -> str:
    """The text that gets embedded: the query plus its first error, if any."""
    first = next(iter(error_messages), None)
    return f"{query_text}\n{first}" if first else query_text


class TraceStore:
    """Single-writer trace log.

    ``path=None`` keeps everything in memory. With a path, each trace is
    appended as one JSON line and flushed; opening an existing file replays it
    unless ``fresh=True``, which starts a new log at that path.
    """

    def __init__(
        self,
        path: str | Path | None = None,
        embedder: Callable[[str], np.ndarray] = embed,
        fresh: bool = False,
        clock: Callable[[], float] = time.time,
    ):
        self.path = Path(path) if path is not None else None
        self.embedder = embedder
        self.clock = clock
        self._traces: list[Trace] = []
        self._matrix: np.ndarray | None = None
        self._fh = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if self.path.exists() and not fresh:
                with self.path.open(encoding="utf-8") as fh:
                    self._traces = [Trace.from_json(line) for line in fh if line.strip()]
            try:
                self._fh = self.path.open("w" if fresh else "a", encoding="utf-8")
            except OSError as exc:
                raise StorageError(f"cannot open trace log {self.path}: {exc}") from exc
        self.closed = False

    def __len__(self) -> int:
        return len(self._traces)

    def __iter__(self):
        return iter(list(self._traces))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def traces(self) -> list[Trace]:
        return list(self._traces)

    def get(self, trace_id: int) -> Trace:
        for t in self._traces:
            if t.id == trace_id:
                return t
        raise KeyError(trace_id)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
        self.closed = True

    def record(
        self,
        node: tuple[str, str],
        arm_id: str,
        query_text: str,
        outcome: Outcome,
        response_excerpt: str = "",
        error_messages: Iterable[str] = (),
    ) -> int:
        if self.closed:
            raise StorageError("trace store is closed")
        errors = tuple(error_messages)
        vec = np.asarray(self.embedder(trace_text(query_text, errors)), dtype=np.float64)
        trace = Trace(
            id=(self._traces[-1].id + 1) if self._traces else 1,
            node=tuple(node),
            arm_id=arm_id,
            query_text=query_text,
            outcome=outcome,
            response_excerpt=truncate_excerpt(response_excerpt),
            error_messages=errors,
            embedding=tuple(float(x) for x in vec),
            timestamp=self.clock(),
        )
        if self._fh is not None:
            try:
                self._fh.write(trace.to_json() + "\n")
                self._fh.flush()
            except OSError as exc:
                raise StorageError(f"failed to append trace: {exc}") from exc
        self._traces.append(trace)
        self._matrix = None
        return trace.id

    def _embeddings(self) -> np.ndarray:
        if self._matrix is None or self._matrix.shape[0] != len(self._traces):
            if self._traces:
                self._matrix = np.array([t.embedding for t in self._traces], dtype=np.float64)
            else:
                self._matrix = np.zeros((0, EMBED_DIM))
        return self._matrix

    def retrieve_similar(self, probe_text: str, k: int, where: Callable[[Trace], bool] | None = None) -> list[Trace]:
        """Top-k traces by cosine similarity to the probe, newest first on ties."""
        if k < 0:
            raise ValueError("k must be >= 0")
        if k == 0 or not self._traces:
            return []
        probe = np.asarray(self.embedder(probe_text), dtype=np.float64)
        mat = self._embeddings()
        norms = np.linalg.norm(mat, axis=1) * np.linalg.norm(probe)
        with np.errstate(invalid="ignore", divide="ignore"):
            scores = np.where(norms > 0, mat @ probe / np.where(norms > 0, norms, 1.0), 0.0)
        scores = np.round(scores, SCORE_DECIMALS)
        ids = np.array([t.id for t in self._traces])
        order = np.lexsort((-ids, -scores))
        out = []
        for i in order:
            t = self._traces[i]
            if where is None or where(t):
                out.append(t)
                if len(out) == k:
                    break
        return out

    def recent_errors(self, node: tuple[str, str], n: int) -> list[ErrorPair]:
        if n < 0:
            raise ValueError("n must be >= 0")
        out: list[ErrorPair] = []
        seen: set[tuple[str, str]] = set()
        node = tuple(node)
        for t in reversed(self._traces):
            if len(out) >= n:
                break
            if t.node != node or not t.error_messages:
                continue
            for msg in t.error_messages:
                key = (t.query_text, msg)
                if msg and key not in seen:
                    seen.add(key)
                    out.append(ErrorPair(t.query_text, msg, node))
        return out[:n]


def record_trace(store: TraceStore, **fields: Any) -> int:
    return store.record(**fields)


def retrieve_similar(store: TraceStore, probe_text: str, k: int) -> list[Trace]:
    return store.retrieve_similar(probe_text, k)


def recent_errors(store: TraceStore, node: tuple[str, str], n: int) -> list[ErrorPair]:
    return store.recent_errors(node, n)
