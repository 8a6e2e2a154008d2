"""Completion backends and query extraction.

Two providers share one ``complete(prompt) -> str`` surface:

* :class:`OfflineTemplateProvider` reads the rendered prompt (schema,
  examples, prior errors, directives) and deterministically writes a query
  for the target operation. No network, no model.
* :class:`HttpChatProvider` talks to any OpenAI-compatible
  ``/v1/chat/completions`` endpoint.
"""

from __future__ import annotations

import hashlib
import logging
import os
import random
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import httpx
import yaml

from prediql import prompts
from prediql.gql import Argument, Field, QueryAST, Value, iter_fields, print_query, try_parse
from prediql.schema import NodeKey, SchemaIR, TypeRef

log = logging.getLogger(__name__)

ANALYSIS_HEADER = "### VULNERABILITY ANALYSIS"
HANDICAP_ARG = "legacyFilter"

DEFAULT_LITERALS = {"Int": "1", "Float": "1.0", "String": "test", "Boolean": "true", "ID": "1"}

REAL_POOLS = {
    "ID": ["1", "2", "3", "4", "5"],
    "Int": ["1", "5", "10", "42", "100"],
    "Float": ["2.5", "10.0", "25.75"],
    "Boolean": ["true", "false"],
    "String": ["Alice", "wallet", "Bob", "O'Brien", "summer sale", "Carol"],
}


class ProviderError(RuntimeError):
    pass


class ProviderAuthError(ProviderError):
    pass


class ProviderRateLimitError(ProviderError):
    pass


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float = 0.7
    max_tokens: int = 1024
    model_name: str = ""

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must lie in [0, 2]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


class Provider(Protocol):
    kind: str

    def complete(self, request: CompletionRequest | str) -> str: ...


def complete(provider: Provider, request: CompletionRequest | str) -> str:
    return provider.complete(request)


# ---------------------------------------------------------------------------
# query extraction
# ---------------------------------------------------------------------------

_FENCE = re.compile(r"```[ \t]*([A-Za-z0-9_+-]*)[ \t]*\r?\n(.*?)```", re.DOTALL)
_QUERY_TAGS = ("", "graphql", "gql")


def extract_queries(completion: str) -> list[str]:
    """Bodies of fenced blocks (untagged or graphql-tagged), in order, deduplicated.

    Without any fence the whole text is returned only if it parses.
    """
    fences = list(_FENCE.finditer(completion or ""))
    if fences:
        bodies = [m.group(2).strip() for m in fences if m.group(1).lower() in _QUERY_TAGS]
    else:
        text = (completion or "").strip()
        bodies = [text] if text and try_parse(text) is not None else []
    out: list[str] = []
    for b in bodies:
        if b and b not in out:
            out.append(b)
    return out


# ---------------------------------------------------------------------------
# offline generator
# ---------------------------------------------------------------------------


@dataclass
class _Evidence:
    """What the generator could learn from one prompt."""

    target: NodeKey | None = None
    arg_mode: str = "known"
    depth: int = 1
    signature: dict | None = None
    types: dict[str, dict] = field(default_factory=dict)
    scalars: set[str] = field(default_factory=lambda: set(prompts.BUILTIN_SCALARS))
    known: dict[str, Value] = field(default_factory=dict)
    root_args: dict[str, tuple[Argument, ...]] = field(default_factory=dict)
    forbidden_args: set[str] = field(default_factory=set)
    forbidden_fields: set[str] = field(default_factory=set)
    required_args: dict[str, str] = field(default_factory=dict)
    root_is_leaf: bool = False
    root_needs_selection: bool = False
    errors_text: str = ""


_UNKNOWN_ARG = re.compile(r'Unknown argument "([^"]+)" on field "[^"]*?\.?([^".]+)"')
_REQUIRED_ARG = re.compile(r'Field "([^"]+)" argument "([^"]+)" of type "([^"]+)" is required')
_NO_SUBFIELDS = re.compile(r'Field "([^"]+)" must not have a selection')
_NEEDS_SUBFIELDS = re.compile(r'Field "([^"]+)" of type "[^"]+" must have a selection')
_UNKNOWN_FIELD = re.compile(r'Cannot query field "([^"]+)" on type "([^"]+)"')


def _parse_directives(text: str, ev: _Evidence) -> None:
    for line in text.splitlines():
        key, _, rest = line.partition(":")
        rest = rest.strip()
        if key == "target":
            parts = rest.split()
            if len(parts) == 2 and parts[0] in ("query", "mutation"):
                ev.target = (parts[0], parts[1])
        elif key == "arg_mode":
            ev.arg_mode = rest.split()[0] if rest else "known"
        elif key == "depth":
            try:
                ev.depth = max(1, int(rest.split()[0]))
            except (ValueError, IndexError):
                pass


def _parse_schema(text: str, ev: _Evidence) -> None:
    if not text or text == prompts.OMITTED:
        return
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError:
        return
    if not isinstance(doc, dict) or not isinstance(doc.get("operation"), dict):
        return
    ev.signature = doc["operation"]
    ev.scalars |= set(doc.get("scalars") or ())
    for key, entries in doc.items():
        if key.startswith("level_") and isinstance(entries, dict):
            ev.types.update(entries)


def _bullet_items(text: str) -> list[str]:
    if not text or text == prompts.NONE:
        return []
    return [line[2:] for line in text.splitlines() if line.startswith("- ")]


def _parse_examples(text: str, ev: _Evidence) -> None:
    for item in _bullet_items(text):
        query, sep, result = item.rpartition(" => ")
        if not sep or not result.startswith("success"):
            continue
        ast = try_parse(query)
        if ast is None:
            continue
        for root in ast.selections:
            literal_args = tuple(a for a in root.arguments if a.value.kind not in ("variable", "null"))
            ev.root_args.setdefault(root.name, literal_args)
        for f in iter_fields(ast.selections):
            for a in f.arguments:
                if a.value.kind not in ("variable", "null"):
                    ev.known.setdefault(a.name, a.value)


def _parse_errors(text: str, ev: _Evidence) -> None:
    ev.errors_text = text
    target = ev.target[1] if ev.target else None
    for item in _bullet_items(text):
        _, _, message = item.partition(" -> ")
        for m in _UNKNOWN_ARG.finditer(message):
            ev.forbidden_args.add(m.group(1))
        for m in _REQUIRED_ARG.finditer(message):
            if m.group(1) == target:
                ev.required_args.setdefault(m.group(2), m.group(3))
        for m in _NO_SUBFIELDS.finditer(message):
            if m.group(1) == target:
                ev.root_is_leaf = True
        for m in _NEEDS_SUBFIELDS.finditer(message):
            if m.group(1) == target:
                ev.root_needs_selection = True
        for m in _UNKNOWN_FIELD.finditer(message):
            ev.forbidden_fields.add(m.group(1))


def read_prompt(prompt: str) -> _Evidence:
    sections = prompts.split_sections(prompt)
    ev = _Evidence()
    _parse_directives(sections.get(prompts.SECTION_DIRECTIVES, ""), ev)
    _parse_schema(sections.get(prompts.SECTION_SCHEMA, ""), ev)
    _parse_examples(sections.get(prompts.SECTION_EXAMPLES, ""), ev)
    _parse_errors(sections.get(prompts.SECTION_ERRORS, ""), ev)
    return ev


class _Synth:
    """Builds one operation from evidence; shared by prompt-driven and prompt-free paths."""

    def __init__(self, ev: _Evidence, rng: random.Random):
        self.ev = ev
        self.rng = rng

    def is_leaf(self, name: str) -> bool:
        entry = self.ev.types.get(name)
        return name in self.ev.scalars or (entry is not None and entry.get("kind") == "ENUM")

    def literal(self, type_ref: TypeRef, arg_name: str, depth: int = 0) -> Value:
        if self.ev.arg_mode != "real" and arg_name in self.ev.known:
            return self.ev.known[arg_name]
        if type_ref.is_list:
            inner = TypeRef(type_ref.name)
            return Value("list", (self.literal(inner, "", depth),))
        name = type_ref.name
        entry = self.ev.types.get(name) or {}
        if entry.get("kind") == "ENUM":
            values = entry.get("values") or []
            if not values:
                return Value("null")
            return Value("enum", self.rng.choice(values) if self.ev.arg_mode == "real" else values[0])
        if entry.get("kind") == "INPUT_OBJECT" and depth < 4:
            pairs = []
            for f in entry.get("fields") or []:
                ft = TypeRef.parse(f["type"])
                if ft.non_null:
                    pairs.append((f["name"], self.literal(ft, f["name"], depth + 1)))
            return Value("object", tuple(pairs))
        if self.ev.arg_mode == "real" and name in REAL_POOLS:
            lexeme = self.rng.choice(REAL_POOLS[name])
        else:
            lexeme = DEFAULT_LITERALS.get(name, "test")
        if name in ("Int", "Float"):
            return Value("int" if name == "Int" else "float", lexeme)
        if name == "Boolean":
            return Value("boolean", lexeme == "true")
        return Value("string", lexeme)

    def arguments(self, arg_defs: list[dict]) -> tuple[Argument, ...]:
        out = []
        for a in arg_defs:
            if a["name"] in self.ev.forbidden_args:
                continue
            t = TypeRef.parse(a["type"])
            required = t.non_null and a.get("default") is None
            if required:
                out.append(Argument(a["name"], self.literal(t, a["name"])))
            elif self.ev.arg_mode == "nulls":
                out.append(Argument(a["name"], Value("null")))
        return tuple(out)

    def selections(self, type_name: str, remaining: int) -> tuple[Field, ...]:
        entry = self.ev.types.get(type_name)
        if not entry or entry.get("kind") not in ("OBJECT", "INTERFACE"):
            return (Field("__typename"),)
        out = []
        for f in entry.get("fields") or []:
            if f["name"] in self.ev.forbidden_fields:
                continue
            if any(TypeRef.parse(a["type"]).non_null and a.get("default") is None for a in f.get("args") or []):
                continue
            child = TypeRef.parse(f["type"]).name
            if self.is_leaf(child):
                out.append(Field(f["name"]))
            elif remaining > 1 and child in self.ev.types and self.ev.types[child].get("kind") in ("OBJECT", "INTERFACE"):
                out.append(Field(f["name"], selections=self.selections(child, remaining - 1)))
        return tuple(out) or (Field("__typename"),)

    def build(self) -> QueryAST | None:
        ev = self.ev
        if ev.target is None:
            return None
        kind, name = ev.target
        if ev.signature is not None:
            args = self.arguments(ev.signature.get("args") or [])
            ret = TypeRef.parse(ev.signature["type"]).name
            sel = () if self.is_leaf(ret) else self.selections(ret, ev.depth)
        else:
            # no schema: fall back to a flat shape, patched by examples and errors
            reused = ev.root_args.get(name, ()) if ev.arg_mode == "known" else ()
            reused = tuple(a for a in reused if a.name not in ev.forbidden_args)
            given = {a.name for a in reused}
            arg_defs = [{"name": n, "type": t} for n, t in ev.required_args.items() if n not in given]
            args = reused + self.arguments(arg_defs)
            sel = () if ev.root_is_leaf and not ev.root_needs_selection else (Field("__typename"),)
        return QueryAST(kind, (Field(name, arguments=args, selections=sel),))


def _prompt_seed(seed: int, prompt: str) -> int:
    digest = hashlib.sha256(f"{seed}\x00{prompt}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class OfflineTemplateProvider:
    """Deterministic stand-in for a model.

    With ``handicap=True`` it adds one argument the schema does not define to
    every query, until a prior-error line for the target reports that
    argument as unknown. This makes self-correction observable offline.
    """

    seed: int = 0
    handicap: bool = False
    kind: str = "offline_template"

    def complete(self, request: CompletionRequest | str) -> str:
        prompt = request.prompt if isinstance(request, CompletionRequest) else request
        if prompt.startswith(ANALYSIS_HEADER):
            return "[]"
        ev = read_prompt(prompt)
        ast = _Synth(ev, random.Random(_prompt_seed(self.seed, prompt))).build()
        if ast is None:
            return "No target operation was specified."
        if self.handicap and f'Unknown argument "{HANDICAP_ARG}"' not in ev.errors_text:
            root = ast.selections[0]
            root = Field(root.name, root.alias, root.arguments + (Argument(HANDICAP_ARG, Value("string", "x")),), root.selections)
            ast = QueryAST(ast.operation, (root,) + ast.selections[1:], ast.name, ast.variables)
        return f"```graphql\n{print_query(ast)}\n```\n"


def template_query(ir: SchemaIR, node: NodeKey, depth: int, arg_mode: str = "known", seed: int = 0) -> str:
    """Prompt-free generation straight from the IR (all type levels visible)."""
    op = ir.operation(tuple(node))
    if op is None:
        raise KeyError(f"node {node} is not in the schema")
    parts = prompts.schema_fragment_parts(ir, op.node, levels=max(depth, 1) + 8)
    ev = _Evidence(target=op.node, arg_mode=arg_mode, depth=depth)
    _parse_schema("\n".join(parts), ev)
    ast = _Synth(ev, random.Random(seed)).build()
    return print_query(ast)


# ---------------------------------------------------------------------------
# HTTP chat-completions provider
# ---------------------------------------------------------------------------


def _redact(headers: dict[str, str]) -> dict[str, str]:
    return {k: ("Bearer ***" if k.lower() == "authorization" else v) for k, v in headers.items()}


@dataclass
class HttpChatProvider:
    base_url: str
    model: str
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.7
    max_tokens: int = 1024
    timeout: float = 60.0
    max_attempts: int = 5
    backoff_base: float = 1.0
    backoff_factor: float = 2.0
    verbose: bool = False
    client: httpx.Client | None = None
    sleep: Callable[[float], None] = time.sleep
    kind: str = "http_chat"

    @property
    def url(self) -> str:
        base = self.base_url.rstrip("/")
        if base.endswith("/chat/completions"):
            return base
        if base.endswith("/v1"):
            return base + "/chat/completions"
        return base + "/v1/chat/completions"

    def complete(self, request: CompletionRequest | str) -> str:
        if isinstance(request, str):
            request = CompletionRequest(request, self.temperature, self.max_tokens, self.model)
        key = os.environ.get(self.api_key_env, "")
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {
            "model": request.model_name or self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        client = self.client or httpx.Client()
        try:
            return self._send(client, headers, body)
        finally:
            if self.client is None:
                client.close()

    def _send(self, client: httpx.Client, headers: dict, body: dict) -> str:
        last: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self.sleep(self.backoff_base * self.backoff_factor ** (attempt - 1))
            if self.verbose:
                log.info("chat request %s headers=%s body=%s", self.url, _redact(headers), body)
            try:
                resp = client.post(self.url, json=body, headers=headers, timeout=self.timeout)
            except httpx.HTTPError as exc:
                last = ProviderError(f"chat completion transport failure: {exc}")
                continue
            if self.verbose:
                log.info("chat response %s %s", resp.status_code, resp.text[:2000])
            if resp.status_code in (401, 403):
                raise ProviderAuthError(f"completion endpoint rejected credentials (HTTP {resp.status_code})")
            if resp.status_code == 429:
                last = ProviderRateLimitError("completion endpoint rate limit (HTTP 429)")
                continue
            if resp.status_code >= 500:
                last = ProviderError(f"completion endpoint error (HTTP {resp.status_code})")
                continue
            if resp.status_code >= 400:
                raise ProviderError(f"completion request rejected (HTTP {resp.status_code}): {resp.text[:500]}")
            try:
                return resp.json()["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ProviderError(f"malformed completion response: {exc}") from exc
        raise last or ProviderError("completion failed")


def make_provider(kind: str, **params) -> Provider:
    if kind in ("offline", "offline_template"):
        return OfflineTemplateProvider(seed=params.get("seed", 0), handicap=params.get("handicap", False))
    if kind in ("http", "http_chat"):
        allowed = {k: v for k, v in params.items() if k in HttpChatProvider.__dataclass_fields__ and k not in ("kind",)}
        return HttpChatProvider(**allowed)
    raise ValueError(f"unknown provider kind {kind!r}")
