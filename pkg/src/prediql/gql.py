"""Parse, print and schema-check GraphQL executable documents.

Grammar subset: a single query or mutation operation with optional name,
variable definitions, aliases and arguments. Fragments and directives are
rejected with a syntax error.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping

from prediql.schema import SchemaIR, TypeRef

LEAF_KINDS = ("int", "float", "string", "boolean", "enum", "null", "variable")
VALUE_KINDS = LEAF_KINDS + ("list", "object")
META_ROOT_FIELDS = ("__schema", "__type")


class GraphQLSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"Syntax Error: {message} ({line}:{column})")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Value:
    """A type-tagged argument literal.

    ``int``/``float`` keep their source lexeme, ``list`` holds a tuple of
    values, ``object`` a tuple of ``(name, Value)`` pairs in source order.
    """

    kind: str
    value: Any = None


@dataclass(frozen=True)
class Argument:
    name: str
    value: Value


@dataclass(frozen=True)
class Field:
    name: str
    alias: str | None = None
    arguments: tuple[Argument, ...] = ()
    selections: tuple["Field", ...] = ()

    @property
    def response_key(self) -> str:
        return self.alias or self.name

    def argument(self, name: str) -> Argument | None:
        return next((a for a in self.arguments if a.name == name), None)


@dataclass(frozen=True)
class VariableDef:
    name: str
    type: TypeRef
    default: Value | None = None


@dataclass(frozen=True)
class QueryAST:
    operation: str
    selections: tuple[Field, ...]
    name: str | None = None
    variables: tuple[VariableDef, ...] = ()


@dataclass(frozen=True)
class Violation:
    code: str
    path: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()
    measured_depth: int = 0

    @property
    def valid(self) -> bool:
        return not self.violations

    def messages(self) -> list[str]:
        return [v.message for v in self.violations]


# ---------------------------------------------------------------------------
# lexer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[\s,\ufeff]+|\#[^\n\r]*)
  | (?P<spread>\.\.\.)
  | (?P<punct>[!$()\[\]{}:=@|&])
  | (?P<number>-?(?:0|[1-9][0-9]*)(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?)
  | (?P<block>\"\"\")
  | (?P<string>")
  | (?P<name>[_A-Za-z][_0-9A-Za-z]*)
    """,
    re.VERBOSE,
)

_ESCAPES = {'"': '"', "\\": "\\", "/": "/", "b": "\b", "f": "\f", "n": "\n", "r": "\r", "t": "\t"}


@dataclass(frozen=True)
class _Token:
    kind: str  # punct | name | int | float | string | eof
    value: str
    pos: int


class _Lexer:
    def __init__(self, text: str):
        self.text = text
        self.tokens = list(self._scan())

    def location(self, pos: int) -> tuple[int, int]:
        line = self.text.count("\n", 0, pos) + 1
        col = pos - (self.text.rfind("\n", 0, pos) + 1) + 1
        return line, col

    def error(self, message: str, pos: int) -> GraphQLSyntaxError:
        return GraphQLSyntaxError(message, *self.location(pos))

    def _scan(self) -> Iterator[_Token]:
        text, pos = self.text, 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if not m:
                raise self.error(f"unexpected character {text[pos]!r}", pos)
            kind = m.lastgroup
            if kind == "ws":
                pos = m.end()
            elif kind == "spread":
                raise self.error("fragments are not supported", pos)
            elif kind == "punct":
                yield _Token("punct", m.group(), pos)
                pos = m.end()
            elif kind == "number":
                lexeme = m.group()
                if m.end() < len(text) and (text[m.end()] == "." or text[m.end()].isalpha() or text[m.end()] == "_"):
                    raise self.error(f"invalid number near {lexeme!r}", pos)
                is_float = any(c in lexeme for c in ".eE")
                yield _Token("float" if is_float else "int", lexeme, pos)
                pos = m.end()
            elif kind == "block":
                end = text.find('"""', m.end())
                if end < 0:
                    raise self.error("unterminated block string", pos)
                yield _Token("string", text[m.end():end].replace('\\"""', '"""'), pos)
                pos = end + 3
            elif kind == "string":
                value, end = self._string(pos)
                yield _Token("string", value, pos)
                pos = end
            else:
                yield _Token("name", m.group(), pos)
                pos = m.end()
        yield _Token("eof", "", len(text))

    def _string(self, start: int) -> tuple[str, int]:
        text, pos, out = self.text, start + 1, []
        while True:
            if pos >= len(text) or text[pos] in "\n\r":
                raise self.error("unterminated string", start)
            ch = text[pos]
            if ch == '"':
                return "".join(out), pos + 1
            if ch == "\\":
                esc = text[pos + 1: pos + 2]
                if esc in _ESCAPES:
                    out.append(_ESCAPES[esc])
                    pos += 2
                elif esc == "u" and re.fullmatch(r"[0-9A-Fa-f]{4}", text[pos + 2: pos + 6]):
                    code = int(text[pos + 2: pos + 6], 16)
                    pos += 6
                    if 0xD800 <= code < 0xDC00 and text[pos: pos + 2] == "\\u":
                        low = int(text[pos + 2: pos + 6], 16)
                        code = 0x10000 + ((code - 0xD800) << 10) + (low - 0xDC00)
                        pos += 6
                    out.append(chr(code))
                else:
                    raise self.error(f"invalid escape sequence \\{esc}", pos)
            else:
                out.append(ch)
                pos += 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.lexer = _Lexer(text)
        self.tokens = self.lexer.tokens
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def error(self, message: str) -> GraphQLSyntaxError:
        return self.lexer.error(message, self.tok.pos)

    def peek(self, kind: str, value: str | None = None) -> bool:
        t = self.tok
        return t.kind == kind and (value is None or t.value == value)

    def expect(self, kind: str, value: str | None = None) -> _Token:
        if not self.peek(kind, value):
            want = repr(value) if value else kind
            got = "end of input" if self.tok.kind == "eof" else repr(self.tok.value)
            raise self.error(f"expected {want}, found {got}")
        t = self.tok
        self.i += 1
        return t

    def accept(self, kind: str, value: str | None = None) -> bool:
        if self.peek(kind, value):
            self.i += 1
            return True
        return False

    def document(self) -> QueryAST:
        op = self.operation()
        if not self.peek("eof"):
            raise self.error("only a single operation per document is supported")
        return op

    def operation(self) -> QueryAST:
        if self.peek("punct", "{"):
            return QueryAST("query", self.selection_set())
        t = self.expect("name")
        if t.value == "fragment":
            self.i -= 1
            raise self.error("fragments are not supported")
        if t.value not in ("query", "mutation"):
            self.i -= 1
            raise self.error(f"unsupported operation type {t.value!r}")
        name = self.expect("name").value if self.peek("name") else None
        variables = self.variable_defs() if self.peek("punct", "(") else ()
        self.no_directives()
        return QueryAST(t.value, self.selection_set(), name, variables)

    def no_directives(self) -> None:
        if self.peek("punct", "@"):
            raise self.error("directives are not supported")

    def variable_defs(self) -> tuple[VariableDef, ...]:
        self.expect("punct", "(")
        defs = []
        while not self.accept("punct", ")"):
            self.expect("punct", "$")
            name = self.expect("name").value
            self.expect("punct", ":")
            type_ref = self.type_ref()
            default = self.value(const=True) if self.accept("punct", "=") else None
            defs.append(VariableDef(name, type_ref, default))
        if not defs:
            raise self.error("empty variable definition list")
        return tuple(defs)

    def type_ref(self) -> TypeRef:
        depth = 0
        while self.accept("punct", "["):
            depth += 1
        name = self.expect("name").value
        inner: list[str] = []
        if self.accept("punct", "!"):
            inner.append("NON_NULL")
        for _ in range(depth):
            self.expect("punct", "]")
            inner.append("LIST")
            if self.accept("punct", "!"):
                inner.append("NON_NULL")
        wrappers = list(reversed(inner))
        try:
            return TypeRef(name, tuple(wrappers))
        except Exception as exc:
            raise self.error(str(exc)) from None

    def selection_set(self) -> tuple[Field, ...]:
        self.expect("punct", "{")
        fields = []
        while not self.accept("punct", "}"):
            if self.peek("eof"):
                raise self.error("expected '}', found end of input")
            fields.append(self.field())
        if not fields:
            raise self.error("selection set must not be empty")
        return tuple(fields)

    def field(self) -> Field:
        name = self.expect("name").value
        alias = None
        if self.accept("punct", ":"):
            alias, name = name, self.expect("name").value
        args = self.arguments() if self.peek("punct", "(") else ()
        self.no_directives()
        selections = self.selection_set() if self.peek("punct", "{") else ()
        return Field(name, alias, args, selections)

    def arguments(self) -> tuple[Argument, ...]:
        self.expect("punct", "(")
        args = []
        while not self.accept("punct", ")"):
            name = self.expect("name").value
            self.expect("punct", ":")
            args.append(Argument(name, self.value()))
        if not args:
            raise self.error("empty argument list")
        return tuple(args)

    def value(self, const: bool = False) -> Value:
        t = self.tok
        if t.kind == "punct" and t.value == "$":
            if const:
                raise self.error("variables are not allowed here")
            self.i += 1
            return Value("variable", self.expect("name").value)
        if t.kind in ("int", "float", "string"):
            self.i += 1
            return Value(t.kind, t.value)
        if t.kind == "name":
            self.i += 1
            if t.value in ("true", "false"):
                return Value("boolean", t.value == "true")
            if t.value == "null":
                return Value("null", None)
            return Value("enum", t.value)
        if self.accept("punct", "["):
            items = []
            while not self.accept("punct", "]"):
                if self.peek("eof"):
                    raise self.error("expected ']', found end of input")
                items.append(self.value(const))
            return Value("list", tuple(items))
        if self.accept("punct", "{"):
            pairs = []
            while not self.accept("punct", "}"):
                name = self.expect("name").value
                self.expect("punct", ":")
                pairs.append((name, self.value(const)))
            return Value("object", tuple(pairs))
        got = "end of input" if t.kind == "eof" else repr(t.value)
        raise self.error(f"expected a value, found {got}")


def parse_query(text: str) -> QueryAST:
    if not text or not text.strip():
        raise GraphQLSyntaxError("empty document", 1, 1)
    return _Parser(text).document()


def try_parse(text: str) -> QueryAST | None:
    try:
        return parse_query(text)
    except GraphQLSyntaxError:
        return None


# ---------------------------------------------------------------------------
# printer
# ---------------------------------------------------------------------------


def print_value(v: Value) -> str:
    k = v.kind
    if k in ("int", "float", "enum"):
        return str(v.value)
    if k == "string":
        return json.dumps(v.value, ensure_ascii=False)
    if k == "boolean":
        return "true" if v.value else "false"
    if k == "null":
        return "null"
    if k == "variable":
        return f"${v.value}"
    if k == "list":
        return "[" + ", ".join(print_value(i) for i in v.value) + "]"
    if k == "object":
        return "{" + ", ".join(f"{n}: {print_value(i)}" for n, i in v.value) + "}"
    raise ValueError(f"unknown value kind {k!r}")


def _print_field(f: Field) -> str:
    out = f"{f.alias}: {f.name}" if f.alias else f.name
    if f.arguments:
        out += "(" + ", ".join(f"{a.name}: {print_value(a.value)}" for a in f.arguments) + ")"
    if f.selections:
        out += " " + _print_selections(f.selections)
    return out


def _print_selections(fields: tuple[Field, ...]) -> str:
    return "{ " + " ".join(_print_field(f) for f in fields) + " }"


def print_query(ast: QueryAST) -> str:
    head = ast.operation
    if ast.name:
        head += f" {ast.name}"
    if ast.variables:
        parts = []
        for v in ast.variables:
            p = f"${v.name}: {v.type}"
            if v.default is not None:
                p += f" = {print_value(v.default)}"
            parts.append(p)
        head += "(" + ", ".join(parts) + ")"
    return f"{head} {_print_selections(ast.selections)}"


# ---------------------------------------------------------------------------
# analysis helpers
# ---------------------------------------------------------------------------


def measure_depth(selections: tuple[Field, ...]) -> int:
    """Maximum field nesting; root fields are depth 1."""
    if not selections:
        return 0
    return 1 + max(measure_depth(f.selections) for f in selections)


def value_to_python(v: Value, variables: Mapping[str, Any] | None = None) -> Any:
    k = v.kind
    if k == "int":
        return int(v.value)
    if k == "float":
        return float(v.value)
    if k in ("string", "enum", "boolean"):
        return v.value
    if k == "null":
        return None
    if k == "variable":
        return (variables or {}).get(v.value)
    if k == "list":
        return [value_to_python(i, variables) for i in v.value]
    if k == "object":
        return {n: value_to_python(i, variables) for n, i in v.value}
    raise ValueError(f"unknown value kind {k!r}")


def iter_fields(selections: tuple[Field, ...]) -> Iterator[Field]:
    for f in selections:
        yield f
        yield from iter_fields(f.selections)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass
class _Checker:
    ir: SchemaIR
    defined_vars: set[str]
    violations: list[Violation] = field(default_factory=list)

    def add(self, code: str, path: str, message: str) -> None:
        self.violations.append(Violation(code, path, message))

    def check_args(self, f: Field, arg_defs, owner: str, path: str) -> None:
        known = {a.name: a for a in arg_defs}
        for a in f.arguments:
            if a.name not in known:
                self.add("unknown-argument", path, f'Unknown argument "{a.name}" on field "{owner}.{f.name}".')
            self.check_vars(a.value, path)
        given = {a.name: a for a in f.arguments}
        for d in arg_defs:
            if d.required and (d.name not in given or given[d.name].value.kind == "null"):
                self.add(
                    "missing-required-argument",
                    path,
                    f'Field "{f.name}" argument "{d.name}" of type "{d.type}" is required, but it was not provided.',
                )

    def check_vars(self, v: Value, path: str) -> None:
        if v.kind == "variable" and v.value not in self.defined_vars:
            self.add("undefined-variable", path, f'Variable "${v.value}" is not defined.')
        elif v.kind == "list":
            for i in v.value:
                self.check_vars(i, path)
        elif v.kind == "object":
            for _, i in v.value:
                self.check_vars(i, path)

    def check_output(self, f: Field, type_ref: TypeRef, path: str) -> None:
        name = type_ref.name
        if self.ir.is_leaf(name):
            if f.selections:
                self.add(
                    "scalar-with-subselection",
                    path,
                    f'Field "{f.name}" must not have a selection since type "{type_ref}" has no subfields.',
                )
        elif name in self.ir.objects:
            if not f.selections:
                self.add(
                    "object-without-subselection",
                    path,
                    f'Field "{f.name}" of type "{type_ref}" must have a selection of subfields.',
                )
            else:
                self.check_selections(name, f.selections, path)

    def check_selections(self, type_name: str, selections: tuple[Field, ...], path: str) -> None:
        obj = self.ir.objects[type_name]
        for f in selections:
            p = f"{path}.{f.response_key}"
            if f.name == "__typename":
                self.check_typename(f, p)
                continue
            fdef = obj.field(f.name)
            if fdef is None:
                self.add("unknown-field", p, f'Cannot query field "{f.name}" on type "{type_name}".')
                continue
            self.check_args(f, fdef.args, type_name, p)
            self.check_output(f, fdef.type, p)

    def check_typename(self, f: Field, path: str) -> None:
        if f.arguments:
            self.add("unknown-argument", path, f'Unknown argument "{f.arguments[0].name}" on field "__typename".')
        if f.selections:
            self.add("scalar-with-subselection", path, 'Field "__typename" must not have a selection since type "String!" has no subfields.')


def validate_against_schema(ast: QueryAST, ir: SchemaIR, depth_limit: int) -> ValidationReport:
    """Check a document against the schema; problems are reported, never raised."""
    if depth_limit < 1:
        raise ValueError("depth_limit must be >= 1")
    checker = _Checker(ir, {v.name for v in ast.variables})
    root_label = "Query" if ast.operation == "query" else "Mutation"
    for f in ast.selections:
        path = f.response_key
        if f.name == "__typename":
            checker.check_typename(f, path)
            continue
        if ast.operation == "query" and f.name in META_ROOT_FIELDS:
            continue
        op = ir.operation((ast.operation, f.name))
        if op is None:
            checker.add("unknown-field", path, f'Cannot query field "{f.name}" on type "{root_label}".')
            continue
        checker.check_args(f, op.args, root_label, path)
        checker.check_output(f, op.return_type, path)
    depth = measure_depth(ast.selections)
    if depth > depth_limit:
        checker.add("depth-exceeded", "", f"Query depth {depth} exceeds limit {depth_limit}.")
    return ValidationReport(tuple(checker.violations), depth)
