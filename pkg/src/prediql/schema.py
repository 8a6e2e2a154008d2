"""Introspection and the normalized schema representation.

The target API is probed once with a full-depth introspection query; the
response is walked from the root operation types outward, following every
argument, field and return type link until all reachable types are known.
The result is a :class:`SchemaIR`, which can be written to and read back from
three YAML documents (queries, mutations, types).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import httpx
import yaml

MAX_WRAPPER_DEPTH = 8

NodeKey = tuple[str, str]  # (kind, name), kind in {"query", "mutation"}


class SchemaError(Exception):
    """Base class for introspection and schema-model failures."""


class IntrospectionTransportError(SchemaError):
    """The endpoint could not be reached."""


class EndpointError(SchemaError):
    def __init__(self, status: int, body: str = ""):
        super().__init__(f"endpoint returned HTTP {status}")
        self.status = status
        self.body = body


class IntrospectionDisabledError(SchemaError):
    """The endpoint answered but did not return a ``__schema`` document.

    This is itself a security-relevant observation (introspection is off), so
    callers usually report it rather than treat it as a crash.
    """


class MalformedSchemaError(SchemaError):
    pass


def _of_type_chain(levels: int) -> str:
    if levels == 0:
        return "kind name"
    return f"kind name ofType {{ {_of_type_chain(levels - 1)} }}"


_TYPE_REF = _of_type_chain(MAX_WRAPPER_DEPTH)

# Fragment-free on purpose: the built-in GraphQL grammar has no fragments.
INTROSPECTION_QUERY = (
    "query IntrospectionQuery { __schema { "
    "queryType { name } mutationType { name } subscriptionType { name } "
    "types { kind name description "
    "fields(includeDeprecated: true) { name description "
    f"args {{ name description type {{ {_TYPE_REF} }} defaultValue }} "
    f"type {{ {_TYPE_REF} }} isDeprecated deprecationReason }} "
    f"inputFields {{ name description type {{ {_TYPE_REF} }} defaultValue }} "
    f"interfaces {{ {_TYPE_REF} }} "
    "enumValues(includeDeprecated: true) { name description isDeprecated deprecationReason } "
    f"possibleTypes {{ {_TYPE_REF} }} }} "
    "directives { name description locations "
    f"args {{ name description type {{ {_TYPE_REF} }} defaultValue }} }} }} }}"
)


@dataclass(frozen=True)
class TypeRef:
    """A named type with list / non-null wrappers, outermost wrapper first."""

    name: str
    wrappers: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.wrappers) > MAX_WRAPPER_DEPTH:
            raise MalformedSchemaError(
                f"type wrapper nesting {len(self.wrappers)} exceeds {MAX_WRAPPER_DEPTH}"
            )
        for w in self.wrappers:
            if w not in ("LIST", "NON_NULL"):
                raise MalformedSchemaError(f"unknown type wrapper {w!r}")

    @property
    def non_null(self) -> bool:
        return bool(self.wrappers) and self.wrappers[0] == "NON_NULL"

    @property
    def is_list(self) -> bool:
        return "LIST" in self.wrappers

    def unwrap_non_null(self) -> "TypeRef":
        return TypeRef(self.name, self.wrappers[1:]) if self.non_null else self

    def __str__(self) -> str:
        text = self.name
        for w in reversed(self.wrappers):
            text = f"{text}!" if w == "NON_NULL" else f"[{text}]"
        return text

    @classmethod
    def parse(cls, text: str) -> "TypeRef":
        """Parse SDL notation such as ``[User!]!``."""
        text = text.strip()
        wrappers: list[str] = []
        while True:
            if text.endswith("!"):
                wrappers.append("NON_NULL")
                text = text[:-1].rstrip()
            elif text.startswith("[") and text.endswith("]"):
                wrappers.append("LIST")
                text = text[1:-1].strip()
            else:
                break
        if not text or not (text[0].isalpha() or text[0] == "_") or not text.replace("_", "a").isalnum():
            raise MalformedSchemaError(f"cannot parse type reference {text!r}")
        return cls(text, tuple(wrappers))

    @classmethod
    def from_introspection(cls, node: Mapping[str, Any] | None) -> "TypeRef":
        wrappers: list[str] = []
        while node is not None and node.get("kind") in ("LIST", "NON_NULL"):
            wrappers.append(node["kind"])
            if len(wrappers) > MAX_WRAPPER_DEPTH:
                raise MalformedSchemaError(
                    f"type wrapper nesting exceeds {MAX_WRAPPER_DEPTH}"
                )
            node = node.get("ofType")
        if node is None or not node.get("name"):
            raise MalformedSchemaError("type reference without a named type")
        return cls(node["name"], tuple(wrappers))


@dataclass(frozen=True)
class ArgDef:
    name: str
    type: TypeRef
    default: str | None = None

    @property
    def nullable(self) -> bool:
        return not self.type.non_null

    @property
    def required(self) -> bool:
        return self.type.non_null and self.default is None


@dataclass(frozen=True)
class FieldDef:
    name: str
    type: TypeRef
    args: tuple[ArgDef, ...] = ()


@dataclass(frozen=True)
class OperationDef:
    name: str
    kind: str  # "query" | "mutation"
    return_type: TypeRef
    args: tuple[ArgDef, ...] = ()

    @property
    def node(self) -> NodeKey:
        return (self.kind, self.name)

    def arg(self, name: str) -> ArgDef | None:
        return next((a for a in self.args if a.name == name), None)


@dataclass(frozen=True)
class ObjectDef:
    name: str
    fields: tuple[FieldDef, ...] = ()
    kind: str = "OBJECT"  # OBJECT | INPUT_OBJECT | INTERFACE | UNION

    def field(self, name: str) -> FieldDef | None:
        return next((f for f in self.fields if f.name == name), None)


@dataclass(frozen=True)
class SchemaIR:
    """Operations plus every type reachable from them.

    Instances are treated as immutable and may be shared between readers.
    """

    queries: tuple[OperationDef, ...] = ()
    mutations: tuple[OperationDef, ...] = ()
    objects: Mapping[str, ObjectDef] = field(default_factory=dict)
    scalars: frozenset[str] = frozenset()
    enums: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def operations(self) -> tuple[OperationDef, ...]:
        return self.queries + self.mutations

    def operation(self, node: NodeKey) -> OperationDef | None:
        kind, name = node
        pool = self.queries if kind == "query" else self.mutations if kind == "mutation" else ()
        return next((op for op in pool if op.name == name), None)

    def is_leaf(self, type_name: str) -> bool:
        return type_name in self.scalars or type_name in self.enums

    def knows(self, type_name: str) -> bool:
        return type_name in self.objects or self.is_leaf(type_name)


# ---------------------------------------------------------------------------
# introspection over HTTP
# ---------------------------------------------------------------------------


def run_introspection(
    endpoint: str,
    auth: Mapping[str, str] | None = None,
    timeout: float = 15.0,
    client: httpx.Client | None = None,
) -> dict:
    """POST the canonical introspection query and return the decoded body."""
    headers = {"Content-Type": "application/json", **dict(auth or {})}
    payload = {"query": INTROSPECTION_QUERY}
    owns_client = client is None
    client = client or httpx.Client()
    try:
        resp = client.post(endpoint, json=payload, headers=headers, timeout=timeout)
    except httpx.HTTPError as exc:
        raise IntrospectionTransportError(f"introspection request failed: {exc}") from exc
    finally:
        if owns_client:
            client.close()
    if resp.status_code >= 400:
        raise EndpointError(resp.status_code, resp.text[:2048])
    try:
        doc = resp.json()
    except (json.JSONDecodeError, ValueError) as exc:
        raise IntrospectionDisabledError("introspection response is not JSON") from exc
    data = doc.get("data") if isinstance(doc, dict) else None
    if not isinstance(data, dict) or not isinstance(data.get("__schema"), dict):
        raise IntrospectionDisabledError("response has no __schema document")
    return doc


# ---------------------------------------------------------------------------
# IR construction
# ---------------------------------------------------------------------------


def _schema_section(raw: Mapping[str, Any]) -> Mapping[str, Any]:
    if "data" in raw and isinstance(raw["data"], Mapping):
        raw = raw["data"]
    schema = raw.get("__schema")
    if not isinstance(schema, Mapping):
        raise MalformedSchemaError("document has no __schema section")
    return schema


def _args(items: Iterable[Mapping[str, Any]] | None, where: str) -> tuple[ArgDef, ...]:
    out: list[ArgDef] = []
    seen: set[str] = set()
    for a in items or ():
        if a["name"] in seen:
            raise MalformedSchemaError(f"duplicate argument {a['name']!r} on {where}")
        seen.add(a["name"])
        out.append(ArgDef(a["name"], TypeRef.from_introspection(a.get("type")), a.get("defaultValue")))
    return tuple(out)


def build_schema_ir(raw: Mapping[str, Any]) -> SchemaIR:
    """Normalize an introspection document into a :class:`SchemaIR`.

    Only types reachable from the root operations are kept; meta types
    (``__``-prefixed) are dropped. A reference to a type the document does
    not define raises :class:`MalformedSchemaError`.
    """
    schema = _schema_section(raw)
    types = {t["name"]: t for t in schema.get("types") or () if t.get("name")}
    query_root = (schema.get("queryType") or {}).get("name")
    if not query_root:
        raise MalformedSchemaError("schema has no queryType")
    mutation_root = (schema.get("mutationType") or {}).get("name")

    def lookup(name: str, referrer: str) -> Mapping[str, Any]:
        if name not in types:
            raise MalformedSchemaError(f"{referrer} references undefined type {name!r}")
        return types[name]

    def root_ops(root: str | None, kind: str) -> tuple[OperationDef, ...]:
        if not root:
            return ()
        t = lookup(root, f"{kind} root")
        ops: dict[str, OperationDef] = {}
        for f in t.get("fields") or ():
            if f["name"].startswith("__"):
                continue
            if f["name"] in ops:
                raise MalformedSchemaError(f"duplicate {kind} operation {f['name']!r}")
            where = f"{root}.{f['name']}"
            ops[f["name"]] = OperationDef(
                f["name"], kind, TypeRef.from_introspection(f.get("type")), _args(f.get("args"), where)
            )
        return tuple(ops[n] for n in sorted(ops))

    queries = root_ops(query_root, "query")
    mutations = root_ops(mutation_root, "mutation")

    objects: dict[str, ObjectDef] = {}
    scalars: set[str] = set()
    enums: dict[str, tuple[str, ...]] = {}
    visited: set[str] = set()
    pending: deque[tuple[str, str]] = deque()
    for op in queries + mutations:
        pending.append((op.return_type.name, f"operation {op.name}"))
        pending.extend((a.type.name, f"argument {op.name}.{a.name}") for a in op.args)

    while pending:
        name, referrer = pending.popleft()
        if name in visited or name.startswith("__"):
            continue
        visited.add(name)
        t = lookup(name, referrer)
        kind = t.get("kind")
        if kind == "SCALAR":
            scalars.add(name)
        elif kind == "ENUM":
            enums[name] = tuple(v["name"] for v in t.get("enumValues") or ())
        elif kind in ("OBJECT", "INTERFACE", "INPUT_OBJECT", "UNION"):
            raw_fields = t.get("inputFields") if kind == "INPUT_OBJECT" else t.get("fields")
            fields: list[FieldDef] = []
            seen: set[str] = set()
            for f in raw_fields or ():
                if f["name"] in seen:
                    raise MalformedSchemaError(f"duplicate field {f['name']!r} on {name}")
                seen.add(f["name"])
                fdef = FieldDef(f["name"], TypeRef.from_introspection(f.get("type")), _args(f.get("args"), f"{name}.{f['name']}"))
                fields.append(fdef)
                pending.append((fdef.type.name, f"field {name}.{fdef.name}"))
                pending.extend((a.type.name, f"argument {name}.{fdef.name}.{a.name}") for a in fdef.args)
            for p in t.get("possibleTypes") or ():
                pending.append((TypeRef.from_introspection(p).name, f"possible type of {name}"))
            objects[name] = ObjectDef(name, tuple(fields), kind)
        else:
            raise MalformedSchemaError(f"type {name!r} has unsupported kind {kind!r}")

    return SchemaIR(
        queries=queries,
        mutations=mutations,
        objects={n: objects[n] for n in sorted(objects)},
        scalars=frozenset(scalars),
        enums={n: enums[n] for n in sorted(enums)},
    )


def enumerate_nodes(ir: SchemaIR) -> list[NodeKey]:
    """Root operations are the coverage unit; queries first, each sorted by name."""
    return [op.node for op in ir.queries] + [op.node for op in ir.mutations]


# ---------------------------------------------------------------------------
# YAML round trip
# ---------------------------------------------------------------------------


def _args_to_yaml(args: Iterable[ArgDef]) -> list[dict]:
    return [{"name": a.name, "type": str(a.type), "default": a.default} for a in args]


def _args_from_yaml(items: Iterable[Mapping[str, Any]] | None) -> tuple[ArgDef, ...]:
    return tuple(ArgDef(a["name"], TypeRef.parse(a["type"]), a.get("default")) for a in items or ())


def _ops_to_yaml(ops: Iterable[OperationDef]) -> list[dict]:
    return [
        {"name": op.name, "type": str(op.return_type), "args": _args_to_yaml(op.args)}
        for op in sorted(ops, key=lambda o: o.name)
    ]


def _dump(obj: Any) -> str:
    return yaml.safe_dump(obj, sort_keys=True, default_flow_style=False, allow_unicode=True)


def serialize_schema_yaml(ir: SchemaIR) -> dict[str, str]:
    """Render the IR as three YAML documents keyed ``queries``, ``mutations``, ``types``."""
    types_doc = {
        "objects": [
            {
                "name": o.name,
                "kind": o.kind,
                "fields": [
                    {"name": f.name, "type": str(f.type), "args": _args_to_yaml(f.args)} for f in o.fields
                ],
            }
            for o in sorted(ir.objects.values(), key=lambda o: o.name)
        ],
        "scalars": sorted(ir.scalars),
        "enums": [{"name": n, "values": list(ir.enums[n])} for n in sorted(ir.enums)],
    }
    return {
        "queries": _dump(_ops_to_yaml(ir.queries)),
        "mutations": _dump(_ops_to_yaml(ir.mutations)),
        "types": _dump(types_doc),
    }


def parse_schema_yaml(queries: str, mutations: str, types: str) -> SchemaIR:
    """Inverse of :func:`serialize_schema_yaml`; accepts its output as keyword arguments."""

    def ops(doc: str, kind: str) -> tuple[OperationDef, ...]:
        items = yaml.safe_load(doc) or []
        return tuple(
            sorted(
                (OperationDef(i["name"], kind, TypeRef.parse(i["type"]), _args_from_yaml(i.get("args"))) for i in items),
                key=lambda o: o.name,
            )
        )

    t = yaml.safe_load(types) or {}
    objects = {}
    for o in t.get("objects") or []:
        fields = tuple(
            FieldDef(f["name"], TypeRef.parse(f["type"]), _args_from_yaml(f.get("args"))) for f in o.get("fields") or []
        )
        objects[o["name"]] = ObjectDef(o["name"], fields, o.get("kind", "OBJECT"))
    return SchemaIR(
        queries=ops(queries, "query"),
        mutations=ops(mutations, "mutation"),
        objects={n: objects[n] for n in sorted(objects)},
        scalars=frozenset(t.get("scalars") or ()),
        enums={e["name"]: tuple(e.get("values") or ()) for e in sorted(t.get("enums") or [], key=lambda e: e["name"])},
    )


def write_schema_yaml(ir: SchemaIR, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for key, text in serialize_schema_yaml(ir).items():
        paths[key] = out / f"{key}.yaml"
        paths[key].write_text(text, encoding="utf-8")
    return paths


def read_schema_yaml(in_dir: str | Path) -> SchemaIR:
    d = Path(in_dir)
    return parse_schema_yaml(*((d / f"{k}.yaml").read_text(encoding="utf-8") for k in ("queries", "mutations", "types")))


def check_references(ir: SchemaIR) -> list[str]:
    """Names referenced somewhere in the IR that resolve to nothing."""
    missing = []
    for op in ir.operations():
        for ref in [op.return_type] + [a.type for a in op.args]:
            if not ir.knows(ref.name):
                missing.append(ref.name)
    for obj in ir.objects.values():
        for f in obj.fields:
            for ref in [f.type] + [a.type for a in f.args]:
                if not ir.knows(ref.name):
                    missing.append(ref.name)
    return sorted(set(missing))
