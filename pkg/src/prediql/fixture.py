"""A small, deliberately vulnerable GraphQL endpoint for offline testing.

Schema (constant)::

    type Query {
      users: [User!]!
      user(id: ID!): User
      wallet(id: ID!): Wallet
      search(term: String!): [SearchResult!]!
    }
    type Mutation {
      createUser(name: String!): User!
      transfer(from: ID!, to: ID!, amount: Float!): Wallet
    }
    type User { id: ID!  name: String!  wallet: Wallet }
    type Wallet { id: ID!  balance: Float!  owner: User! }
    type SearchResult { id: ID!  title: String!  score: Float! }

Seeded weaknesses:

1. introspection is enabled;
2. ``search`` leaks a raw ``SQLITE_ERROR`` when the term contains a quote;
3. ``wallet(id)`` returns any wallet; ids "1".."5" belong to other principals;
4. no depth limit, so User -> wallet -> owner -> ... nests without bound.

The app is a WSGI callable. It can be mounted in-process through
``httpx.WSGITransport`` or served on a socket with :func:`start_fixture`.
"""

from __future__ import annotations

import json
import socketserver
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable
from wsgiref.simple_server import WSGIRequestHandler, WSGIServer, make_server

import httpx

from prediql.gql import Field, GraphQLSyntaxError, QueryAST, parse_query, validate_against_schema, value_to_python
from prediql.schema import SchemaIR, TypeRef, build_schema_ir

FOREIGN_IDS = frozenset({"1", "2", "3", "4", "5"})
INPROCESS_URL = "http://fixture.local/graphql"

# (field, type, args)
_QUERY = [
    ("users", "[User!]!", []),
    ("user", "User", [("id", "ID!")]),
    ("wallet", "Wallet", [("id", "ID!")]),
    ("search", "[SearchResult!]!", [("term", "String!")]),
]
_MUTATION = [
    ("createUser", "User!", [("name", "String!")]),
    ("transfer", "Wallet", [("from", "ID!"), ("to", "ID!"), ("amount", "Float!")]),
]
_OBJECTS = {
    "User": [("id", "ID!", []), ("name", "String!", []), ("wallet", "Wallet", [])],
    "Wallet": [("id", "ID!", []), ("balance", "Float!", []), ("owner", "User!", [])],
    "SearchResult": [("id", "ID!", []), ("title", "String!", []), ("score", "Float!", [])],
}
_SCALARS = ["ID", "String", "Float", "Boolean"]
_META = ["__Schema", "__Type", "__Field", "__InputValue", "__EnumValue", "__Directive"]
_META_ENUMS = {
    "__TypeKind": ["SCALAR", "OBJECT", "INTERFACE", "UNION", "ENUM", "INPUT_OBJECT", "LIST", "NON_NULL"],
}

_SEED_USERS = [("1", "Alice"), ("2", "Bob"), ("3", "Carol"), ("4", "Dave"), ("5", "Erin")]


def _type_ref_json(text: str) -> dict:
    ref = TypeRef.parse(text)
    node: dict = {"kind": "SCALAR" if ref.name in _SCALARS else "OBJECT", "name": ref.name, "ofType": None}
    for w in reversed(ref.wrappers):
        node = {"kind": w, "name": None, "ofType": node}
    return node


def _fields_json(fields) -> list[dict]:
    return [
        {
            "name": name,
            "description": None,
            "args": [
                {"name": a, "description": None, "type": _type_ref_json(t), "defaultValue": None} for a, t in args
            ],
            "type": _type_ref_json(type_text),
            "isDeprecated": False,
            "deprecationReason": None,
        }
        for name, type_text, args in fields
    ]


def _object_json(name: str, fields) -> dict:
    return {
        "kind": "OBJECT",
        "name": name,
        "description": None,
        "fields": _fields_json(fields),
        "inputFields": None,
        "interfaces": [],
        "enumValues": None,
        "possibleTypes": None,
    }


def introspection_document() -> dict:
    """The fixture's answer to a full introspection query (``data`` payload)."""
    types = [
        _object_json("Query", [(n, t, a) for n, t, a in _QUERY]),
        _object_json("Mutation", [(n, t, a) for n, t, a in _MUTATION]),
    ]
    types += [_object_json(n, f) for n, f in _OBJECTS.items()]
    types += [
        {"kind": "SCALAR", "name": s, "description": None, "fields": None, "inputFields": None,
         "interfaces": None, "enumValues": None, "possibleTypes": None}
        for s in _SCALARS
    ]
    types += [_object_json(m, []) for m in _META]
    types += [
        {"kind": "ENUM", "name": n, "description": None, "fields": None, "inputFields": None, "interfaces": None,
         "enumValues": [{"name": v, "description": None, "isDeprecated": False, "deprecationReason": None} for v in vals],
         "possibleTypes": None}
        for n, vals in _META_ENUMS.items()
    ]
    return {
        "__schema": {
            "queryType": {"name": "Query"},
            "mutationType": {"name": "Mutation"},
            "subscriptionType": None,
            "types": types,
            "directives": [],
        }
    }


FIXTURE_IR: SchemaIR = build_schema_ir(introspection_document())


class ResolverError(Exception):
    pass


@dataclass
class FixtureConfig:
    port: int | None = None  # None: in-process only
    host: str = "127.0.0.1"
    latency_injection_ms: float | None = None


class _Store:
    def __init__(self):
        self.lock = threading.Lock()
        self.reset()

    def reset(self) -> None:
        self.users = {uid: {"id": uid, "name": name, "wallet_id": uid} for uid, name in _SEED_USERS}
        self.wallets = {uid: {"id": uid, "balance": 100.0 * int(uid), "owner_id": uid} for uid, _ in _SEED_USERS}
        self.next_id = len(_SEED_USERS) + 1


def _coerce(value: Any, type_text: str, arg: str) -> Any:
    ref = TypeRef.parse(type_text)
    if value is None:
        if ref.non_null:
            raise ResolverError(f'Argument "{arg}" of non-null type "{type_text}" must not be null.')
        return None
    name = ref.name
    if name == "ID" and isinstance(value, (str, int)) and not isinstance(value, bool):
        return str(value)
    if name == "String" and isinstance(value, str):
        return value
    if name == "Float" and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if name == "Int" and isinstance(value, int) and not isinstance(value, bool):
        return value
    if name == "Boolean" and isinstance(value, bool):
        return value
    raise ResolverError(f'Argument "{arg}" has invalid value {json.dumps(value)}; expected type "{type_text}".')


def _project(value: Any, selections: tuple[Field, ...]) -> Any:
    """Select fields out of plain dict/list data (used for introspection)."""
    if value is None or not selections:
        return value
    if isinstance(value, list):
        return [_project(v, selections) for v in value]
    if isinstance(value, dict):
        return {f.response_key: _project(value.get(f.name), f.selections) for f in selections}
    return value


class FixtureApp:
    """WSGI application serving the fixture schema."""

    def __init__(self, config: FixtureConfig | None = None):
        self.config = config or FixtureConfig()
        self.store = _Store()
        self.request_count = 0
        self._intro = introspection_document()

    def reset(self) -> None:
        with self.store.lock:
            self.store.reset()

    # -- WSGI -------------------------------------------------------------

    def __call__(self, environ, start_response):
        self.request_count += 1
        if self.config.latency_injection_ms:
            time.sleep(self.config.latency_injection_ms / 1000.0)
        if environ.get("REQUEST_METHOD") != "POST":
            return self._respond(start_response, 405, {"errors": [{"message": "Only POST is supported."}]})
        try:
            size = int(environ.get("CONTENT_LENGTH") or 0)
        except ValueError:
            size = 0
        raw = environ["wsgi.input"].read(size) if size else b""
        try:
            body = json.loads(raw.decode("utf-8") or "null")
        except (UnicodeDecodeError, json.JSONDecodeError):
            return self._respond(start_response, 400, {"errors": [{"message": "Request body is not valid JSON."}]})
        if not isinstance(body, dict) or not isinstance(body.get("query"), str):
            return self._respond(start_response, 400, {"errors": [{"message": "Must provide query string."}]})
        status, payload = self.execute(body["query"], body.get("variables") or {})
        return self._respond(start_response, status, payload)

    @staticmethod
    def _respond(start_response, status: int, payload: dict):
        data = json.dumps(payload).encode("utf-8")
        reason = {200: "OK", 400: "Bad Request", 405: "Method Not Allowed"}.get(status, "OK")
        start_response(f"{status} {reason}", [("Content-Type", "application/json"), ("Content-Length", str(len(data)))])
        return [data]

    # -- GraphQL execution -------------------------------------------------

    def execute(self, query: str, variables: dict | None = None) -> tuple[int, dict]:
        try:
            ast = parse_query(query)
        except GraphQLSyntaxError as exc:
            return 200, {"errors": [{"message": str(exc), "locations": [{"line": exc.line, "column": exc.column}]}]}
        report = validate_against_schema(ast, FIXTURE_IR, depth_limit=10**9)
        if not report.valid:
            return 200, {"errors": [{"message": v.message, "path": v.path} for v in report.violations]}
        errors: list[dict] = []
        data: dict[str, Any] = {}
        for f in ast.selections:
            try:
                data[f.response_key] = self._root(ast, f, variables or {})
            except ResolverError as exc:
                data[f.response_key] = None
                errors.append({"message": str(exc), "path": [f.response_key]})
        payload: dict = {"data": data}
        if errors:
            payload["errors"] = errors
        return 200, payload

    def _args(self, f: Field, arg_types: list[tuple[str, str]], variables: dict) -> dict:
        given = {a.name: value_to_python(a.value, variables) for a in f.arguments}
        return {name: _coerce(given.get(name), t, name) for name, t in arg_types}

    def _root(self, ast: QueryAST, f: Field, variables: dict) -> Any:
        if f.name == "__typename":
            return "Query" if ast.operation == "query" else "Mutation"
        if f.name == "__schema":
            return _project(self._intro["__schema"], f.selections)
        if f.name == "__type":
            name = value_to_python(f.arguments[0].value, variables) if f.arguments else None
            match = next((t for t in self._intro["__schema"]["types"] if t["name"] == name), None)
            return _project(match, f.selections)
        table = dict((n, a) for n, _, a in (_QUERY if ast.operation == "query" else _MUTATION))
        args = self._args(f, table[f.name], variables)
        op = FIXTURE_IR.operation((ast.operation, f.name))
        value = getattr(self, f"_resolve_{f.name}")(**{("from_" if k == "from" else k): v for k, v in args.items()})
        return self._complete(op.return_type.name, value, f.selections)

    def _complete(self, type_name: str, value: Any, selections: tuple[Field, ...]) -> Any:
        if value is None or not selections:
            return value
        if isinstance(value, list):
            return [self._complete(type_name, v, selections) for v in value]
        obj = FIXTURE_IR.objects[type_name]
        out = {}
        for f in selections:
            if f.name == "__typename":
                out[f.response_key] = type_name
                continue
            fdef = obj.field(f.name)
            child = self._field(type_name, value, f.name)
            out[f.response_key] = self._complete(fdef.type.name, child, f.selections)
        return out

    def _field(self, type_name: str, obj: dict, name: str) -> Any:
        s = self.store
        if type_name == "User" and name == "wallet":
            return s.wallets.get(obj["wallet_id"])
        if type_name == "Wallet" and name == "owner":
            return s.users.get(obj["owner_id"])
        return obj.get(name)

    # -- resolvers -----------------------------------------------------------

    def _resolve_users(self):
        with self.store.lock:
            return [self.store.users[k] for k in sorted(self.store.users, key=int)]

    def _resolve_user(self, id):
        with self.store.lock:
            return self.store.users.get(id)

    def _resolve_wallet(self, id):
        # no ownership check: any caller may read any wallet
        with self.store.lock:
            return self.store.wallets.get(id)

    def _resolve_search(self, term):
        if "'" in term:
            tail = term.split("'", 1)[1] or "'"
            raise ResolverError(f'SQLITE_ERROR: near "{tail}": syntax error')
        needle = term.lower()
        with self.store.lock:
            hits = [u for u in self.store.users.values() if needle in u["name"].lower()]
        return [{"id": f"u{u['id']}", "title": u["name"], "score": 1.0} for u in hits]

    def _resolve_createUser(self, name):
        if not name.strip():
            raise ResolverError("Name must not be empty.")
        with self.store.lock:
            uid = str(self.store.next_id)
            self.store.next_id += 1
            self.store.users[uid] = {"id": uid, "name": name, "wallet_id": uid}
            self.store.wallets[uid] = {"id": uid, "balance": 0.0, "owner_id": uid}
            return self.store.users[uid]

    def _resolve_transfer(self, from_, to, amount):
        with self.store.lock:
            src, dst = self.store.wallets.get(from_), self.store.wallets.get(to)
            if src is None or dst is None:
                raise ResolverError("Wallet not found.")
            if amount <= 0:
                raise ResolverError("Amount must be positive.")
            if src["balance"] < amount:
                raise ResolverError("Insufficient funds.")
            src["balance"] -= amount
            dst["balance"] += amount
            return src


class _ThreadingWSGIServer(socketserver.ThreadingMixIn, WSGIServer):
    daemon_threads = True


class _QuietHandler(WSGIRequestHandler):
    def log_message(self, *args):
        pass


class FixtureError(RuntimeError):
    pass


@dataclass
class FixtureHandle:
    app: FixtureApp
    url: str
    server: Any = None
    thread: threading.Thread | None = None

    def client(self, **kwargs) -> httpx.Client:
        """An HTTP client wired to this fixture (in-process when not on a socket)."""
        if self.server is None:
            return httpx.Client(transport=httpx.WSGITransport(app=self.app), **kwargs)
        return httpx.Client(**kwargs)

    def stop(self) -> None:
        if self.server is not None:
            self.server.shutdown()
            self.server.server_close()
            self.server = None
        if self.thread is not None:
            self.thread.join(timeout=5)
            self.thread = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def start_fixture(config: FixtureConfig | None = None) -> FixtureHandle:
    config = config or FixtureConfig()
    app = FixtureApp(config)
    if config.port is None:
        return FixtureHandle(app, INPROCESS_URL)
    try:
        server = make_server(config.host, config.port, app, server_class=_ThreadingWSGIServer, handler_class=_QuietHandler)
    except OSError as exc:
        raise FixtureError(f"cannot bind fixture to {config.host}:{config.port}: {exc}") from exc
    port = server.server_address[1]
    thread = threading.Thread(target=server.serve_forever, name="prediql-fixture", daemon=True)
    thread.start()
    return FixtureHandle(app, f"http://{config.host}:{port}/graphql", server, thread)


def serve_forever(port: int, host: str = "127.0.0.1", on_ready: Callable[[str], None] | None = None) -> None:
    handle = start_fixture(FixtureConfig(port=port, host=host))
    if on_ready:
        on_ready(handle.url)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        handle.stop()
