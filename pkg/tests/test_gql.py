from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prediql.bandit import DEFAULT_ARMS
from prediql.gql import (
    Argument,
    Field,
    GraphQLSyntaxError,
    QueryAST,
    Value,
    VariableDef,
    measure_depth,
    parse_query,
    print_query,
    try_parse,
    validate_against_schema,
    value_to_python,
)
from prediql.provider import template_query
from prediql.schema import TypeRef, build_schema_ir, enumerate_nodes
from schema_builders import raw_documents

CORPUS = Path(__file__).parent / "data" / "query_corpus.graphql"


def load_corpus() -> list[str]:
    return CORPUS.read_text(encoding="utf-8").split("# ---\n")


# -- parse ------------------------------------------------------------------


def test_minimal_document():
    ast = parse_query("query { users { id } }")
    assert ast == QueryAST("query", (Field("users", selections=(Field("id"),)),))


def test_string_argument():
    ast = parse_query('mutation { createUser(name:"a"){ id } }')
    assert ast.operation == "mutation"
    assert ast.selections[0].arguments == (Argument("name", Value("string", "a")),)


def test_unclosed_brace_reports_position():
    with pytest.raises(GraphQLSyntaxError) as err:
        parse_query("query { users { id }")
    assert err.value.line == 1
    assert "Syntax Error" in str(err.value)


@pytest.mark.parametrize(
    "text",
    [
        "",
        "   ",
        "query { }",
        "query { users(id: ) { id } }",
        "query { ...F }",
        "fragment F on User { id }",
        "query { users @skip(if: true) { id } }",
        "subscription { users { id } }",
        "query { a } query { b }",
        'query { search(term: "unterminated) { id } }',
        "query { users(ids: [1, 2) { id } }",
        "query { users(x: 01) { id } }",
    ],
)
def test_rejected_documents(text):
    with pytest.raises(GraphQLSyntaxError):
        parse_query(text)
    assert try_parse(text) is None


def test_multiline_error_location():
    with pytest.raises(GraphQLSyntaxError) as err:
        parse_query("query {\n  users {\n    id(\n  }\n}")
    assert err.value.line >= 3


def test_literal_kinds():
    ast = parse_query('query { f(a: 1, b: -2.5e3, c: "s", d: true, e: RED, g: null, h: [1], i: {k: $v}) { id } }')
    kinds = [a.value.kind for a in ast.selections[0].arguments]
    assert kinds == ["int", "float", "string", "boolean", "enum", "null", "list", "object"]
    assert value_to_python(ast.selections[0].argument("i").value, {"v": 3}) == {"k": 3}
    assert value_to_python(ast.selections[0].argument("b").value) == -2500.0


def test_variables_and_aliases():
    ast = parse_query('query Q($id: ID! = "1", $xs: [Int!]) { me: user(id: $id) { id } }')
    assert ast.name == "Q"
    assert ast.variables[0] == VariableDef("id", TypeRef("ID", ("NON_NULL",)), Value("string", "1"))
    assert ast.variables[1].type == TypeRef("Int", ("LIST", "NON_NULL"))
    assert ast.selections[0].response_key == "me"
    assert ast.selections[0].argument("id").value == Value("variable", "id")


# -- print ------------------------------------------------------------------


def test_canonical_form():
    assert print_query(parse_query("query{users{id}}")) == "query { users { id } }"
    assert print_query(parse_query("{users{id}}")) == "query { users { id } }"


def test_print_is_deterministic():
    ast = parse_query('query { a: user(id: "1") { wallet { balance } } }')
    assert print_query(ast) == print_query(ast)


def test_nested_two_argument_round_trip():
    ast = parse_query('query { user(id: "1", depth: 3) { wallet(kind: SAVINGS) { owner { name } } } }')
    assert parse_query(print_query(ast)) == ast


def test_string_escapes_survive():
    ast = parse_query(r'query { search(term: "a\"b\\c\ndé") { id } }')
    assert ast.selections[0].argument("term").value.value == 'a"b\\c\ndé'
    assert parse_query(print_query(ast)) == ast


@pytest.mark.parametrize("doc", load_corpus(), ids=lambda d: " ".join(d.split())[:40])
def test_corpus_round_trip(doc):
    first = parse_query(doc)
    printed = print_query(first)
    assert parse_query(printed) == first
    assert print_query(parse_query(printed)) == printed


def test_corpus_shape():
    docs = load_corpus()
    assert len(docs) == 50
    depths = {measure_depth(parse_query(d).selections) for d in docs}
    assert depths == {1, 2, 3, 4, 5}
    asts = [parse_query(d) for d in docs]
    assert any(a.variables for a in asts)
    assert any(f.alias for a in asts for f in a.selections)
    assert any(f.arguments for a in asts for f in a.selections)


# -- generated ASTs ----------------------------------------------------------

names = st.from_regex(r"[_A-Za-z][_0-9A-Za-z]{0,5}", fullmatch=True)
enum_names = names.filter(lambda n: n not in ("true", "false", "null"))
int_lexemes = st.integers(-(10**12), 10**12).map(str)
float_lexemes = st.builds(
    lambda i, f, e: f"{i}.{f}{e}", st.integers(-999, 999), st.integers(0, 999), st.sampled_from(["", "e5", "E-2"])
)
leaf_values = st.one_of(
    int_lexemes.map(lambda s: Value("int", s)),
    float_lexemes.map(lambda s: Value("float", s)),
    st.text(max_size=12).map(lambda s: Value("string", s)),
    st.booleans().map(lambda b: Value("boolean", b)),
    enum_names.map(lambda n: Value("enum", n)),
    st.just(Value("null")),
    names.map(lambda n: Value("variable", n)),
)
values = st.recursive(
    leaf_values,
    lambda inner: st.one_of(
        st.lists(inner, max_size=3).map(lambda xs: Value("list", tuple(xs))),
        st.lists(st.tuples(names, inner), max_size=3).map(lambda ps: Value("object", tuple(ps))),
    ),
    max_leaves=6,
)


def arguments():
    return st.lists(st.tuples(names, values), max_size=3, unique_by=lambda p: p[0]).map(
        lambda ps: tuple(Argument(n, v) for n, v in ps)
    )


fields = st.recursive(
    st.builds(Field, names, st.none() | names, arguments(), st.just(())),
    lambda inner: st.builds(Field, names, st.none() | names, arguments(), st.lists(inner, min_size=1, max_size=3).map(tuple)),
    max_leaves=8,
)
asts = st.builds(
    QueryAST,
    st.sampled_from(["query", "mutation"]),
    st.lists(fields, min_size=1, max_size=3).map(tuple),
    st.none() | names,
)


@settings(max_examples=300, deadline=None)
@given(asts)
def test_print_parse_identity(ast):
    assert parse_query(print_query(ast)) == ast


@given(asts)
def test_depth_is_positive(ast):
    depth = measure_depth(ast.selections)
    assert depth >= 1
    flat = QueryAST(ast.operation, tuple(Field(f.name) for f in ast.selections))
    assert measure_depth(flat.selections) == 1


# -- validation --------------------------------------------------------------


def test_depth_exceeded(fixture_ir):
    report = validate_against_schema(parse_query("query { users { wallet { id } } }"), fixture_ir, 1)
    assert not report.valid
    assert report.measured_depth == 3
    assert [v.code for v in report.violations] == ["depth-exceeded"]


def test_unknown_field(fixture_ir):
    report = validate_against_schema(parse_query("query { users { id email } }"), fixture_ir, 3)
    assert [v.code for v in report.violations] == ["unknown-field"]
    assert report.messages() == ['Cannot query field "email" on type "User".']


def test_valid_fixture_query(fixture_ir):
    report = validate_against_schema(parse_query('query { user(id: "1") { id wallet { balance } } }'), fixture_ir, 3)
    assert report.valid and report.violations == ()
    assert report.measured_depth == 3
    report = validate_against_schema(parse_query("query { users { id wallet { id } } }"), fixture_ir, 3)
    assert report.valid


@pytest.mark.parametrize(
    "text,code",
    [
        ('query { user(id: "1", legacyFilter: "x") { id } }', "unknown-argument"),
        ("query { user { id } }", "missing-required-argument"),
        ("query { user(id: null) { id } }", "missing-required-argument"),
        ('query { user(id: "1") { name { x } } }', "scalar-with-subselection"),
        ('query { user(id: "1") { wallet } }', "object-without-subselection"),
        ("query { users }", "object-without-subselection"),
        ("query { user(id: $missing) { id } }", "undefined-variable"),
        ("mutation { users { id } }", "unknown-field"),
    ],
)
def test_violation_codes(fixture_ir, text, code):
    report = validate_against_schema(parse_query(text), fixture_ir, 5)
    assert code in {v.code for v in report.violations}
    assert not report.valid


def test_meta_fields_allowed(fixture_ir):
    assert validate_against_schema(parse_query("query { __typename users { __typename } }"), fixture_ir, 2).valid
    assert validate_against_schema(parse_query("query { __schema { types { name } } }"), fixture_ir, 5).valid


def test_depth_limit_must_be_positive(fixture_ir):
    with pytest.raises(ValueError):
        validate_against_schema(parse_query("query { users { id } }"), fixture_ir, 0)


def test_valid_iff_no_violations(fixture_ir):
    for doc in load_corpus():
        report = validate_against_schema(parse_query(doc), fixture_ir, 3)
        assert report.valid == (len(report.violations) == 0)


@pytest.mark.parametrize("arm", DEFAULT_ARMS, ids=lambda a: a.id)
def test_template_queries_validate_on_fixture(fixture_ir, arm):
    for node in enumerate_nodes(fixture_ir):
        text = template_query(fixture_ir, node, arm.depth, arm.arg_mode)
        report = validate_against_schema(parse_query(text), fixture_ir, arm.depth_limit)
        assert report.valid, (node, text, report.messages())


@settings(max_examples=60, deadline=None)
@given(raw_documents(), st.sampled_from([1, 2, 3]), st.sampled_from(["known", "real", "nulls"]))
def test_template_queries_validate_on_generated_schemas(raw, depth, mode):
    ir = build_schema_ir(raw)
    for node in enumerate_nodes(ir):
        text = template_query(ir, node, depth, mode)
        report = validate_against_schema(parse_query(text), ir, depth + 1)
        assert report.valid, (node, text, report.messages())
