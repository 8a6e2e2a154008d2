import json
import logging

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prediql.bandit import DEFAULT_ARMS
from prediql.gql import parse_query, validate_against_schema
from prediql.prompts import assemble_prompt, render
from prediql.provider import (
    ANALYSIS_HEADER,
    HANDICAP_ARG,
    CompletionRequest,
    HttpChatProvider,
    OfflineTemplateProvider,
    ProviderAuthError,
    ProviderError,
    ProviderRateLimitError,
    complete,
    extract_queries,
    make_provider,
)
from prediql.schema import build_schema_ir, enumerate_nodes
from prediql.traces import ErrorPair, Outcome, TraceStore
from schema_builders import named, non_null, raw_arg, raw_field, raw_schema, raw_type

ARMS = {a.id: a for a in DEFAULT_ARMS}


def offline_query(provider, arm, ir, node, retrieved=(), errors=()):
    out = complete(provider, render(assemble_prompt(arm, ir, node, list(retrieved), list(errors))))
    queries = extract_queries(out)
    assert len(queries) == 1
    return queries[0]


# -- request ----------------------------------------------------------------


@pytest.mark.parametrize("kwargs", [{"temperature": -0.1}, {"temperature": 2.5}, {"max_tokens": 0}])
def test_request_invariants(kwargs):
    with pytest.raises(ValueError):
        CompletionRequest("p", **kwargs)


# -- extract_queries ----------------------------------------------------------


def test_single_fence():
    assert extract_queries("Here:\n```graphql\nquery { users { id } }\n```\nDone.") == ["query { users { id } }"]


def test_prose_without_query():
    assert extract_queries("I cannot help with that.") == []


def test_duplicate_fences():
    text = "```graphql\nquery { a }\n```\nand\n```\nquery { a }\n```"
    assert extract_queries(text) == ["query { a }"]


def test_bare_query_and_other_languages():
    assert extract_queries("query { users { id } }") == ["query { users { id } }"]
    assert extract_queries("```python\nprint(1)\n```") == []
    assert extract_queries("```gql\n{ a }\n```\n```graphql\n{ b }\n```") == ["{ a }", "{ b }"]


@given(st.lists(st.sampled_from(["query { users { id } }", "mutation { createUser(name: \"x\") { id } }", "{ a { b } }"]), min_size=1, max_size=4), st.text(alphabet="abc .\n", max_size=30))
def test_tagged_fences_always_parse(bodies, prose):
    text = prose + "".join(f"\n```graphql\n{b}\n```\n{prose}" for b in bodies)
    out = extract_queries(text)
    assert out == list(dict.fromkeys(bodies))
    for q in out:
        parse_query(q)


# -- offline provider ---------------------------------------------------------


def test_offline_users_depth_one(fixture_ir):
    provider = OfflineTemplateProvider(seed=0)
    text = complete(provider, render(assemble_prompt(ARMS["schema_min_known"], fixture_ir, ("query", "users"))))
    assert text.startswith("```graphql\n")
    ast = parse_query(extract_queries(text)[0])
    assert ast.operation == "query" and [f.name for f in ast.selections] == ["users"]
    assert {f.name for f in ast.selections[0].selections} == {"id", "name"}


def test_offline_is_deterministic(fixture_ir):
    prompt = render(assemble_prompt(ARMS["schema_deep_real"], fixture_ir, ("query", "wallet")))
    assert complete(OfflineTemplateProvider(3), prompt) == complete(OfflineTemplateProvider(3), prompt)


@pytest.mark.parametrize("arm", [a for a in DEFAULT_ARMS if a.include_schema], ids=lambda a: a.id)
def test_offline_output_validates(fixture_ir, arm):
    provider = OfflineTemplateProvider(seed=1)
    for node in enumerate_nodes(fixture_ir):
        query = offline_query(provider, arm, fixture_ir, node)
        report = validate_against_schema(parse_query(query), fixture_ir, arm.depth_limit)
        assert report.valid, (node, query, report.messages())


def test_noschema_falls_back_to_typename(fixture_ir):
    query = offline_query(OfflineTemplateProvider(), ARMS["noschema_min_real"], fixture_ir, ("query", "users"))
    assert query == "query { users { __typename } }"


def test_noschema_learns_required_argument(fixture_ir):
    err = ErrorPair("query { user { __typename } }",
                    'Field "user" argument "id" of type "ID!" is required, but it was not provided.', ("query", "user"))
    query = offline_query(OfflineTemplateProvider(), ARMS["noschema_min_known"], fixture_ir, ("query", "user"), errors=[err])
    assert validate_against_schema(parse_query(query), fixture_ir, 2).valid


def test_known_mode_reuses_successful_values(fixture_ir):
    store = TraceStore()
    store.record(("query", "user"), "a", 'query { user(id: "4") { id } }', Outcome(200, (), True, 1, "", "success"), "{}")
    query = offline_query(OfflineTemplateProvider(), ARMS["schema_min_known"], fixture_ir, ("query", "wallet"), store.traces)
    assert 'wallet(id: "4")' in query


def test_nulls_mode_nulls_optional_arguments():
    ir = build_schema_ir(raw_schema([
        raw_type("Query", fields=[raw_field("items", named("String"), [
            raw_arg("limit", named("Int")), raw_arg("kind", non_null(named("String")))])]),
        raw_type("String", "SCALAR"), raw_type("Int", "SCALAR"),
    ]))
    query = offline_query(OfflineTemplateProvider(), ARMS["schema_min_nulls"], ir, ("query", "items"))
    assert "limit: null" in query and 'kind: "' in query


def test_handicap_until_corrected(fixture_ir):
    provider = OfflineTemplateProvider(handicap=True)
    node = ("query", "users")
    first = offline_query(provider, ARMS["schema_min_known"], fixture_ir, node)
    assert HANDICAP_ARG in first
    report = validate_against_schema(parse_query(first), fixture_ir, 2)
    err = ErrorPair(first, report.messages()[0], node)
    fixed = offline_query(provider, ARMS["schema_min_known"], fixture_ir, node, errors=[err])
    assert HANDICAP_ARG not in fixed


def test_analysis_prompt_answered_with_empty_array():
    assert complete(OfflineTemplateProvider(), ANALYSIS_HEADER + "\n...") == "[]"


def test_make_provider():
    assert isinstance(make_provider("offline", seed=2), OfflineTemplateProvider)
    assert isinstance(make_provider("http", base_url="http://x", model="m", seed=1), HttpChatProvider)
    with pytest.raises(ValueError):
        make_provider("carrier-pigeon")


# -- http provider ------------------------------------------------------------


def chat_provider(handler, sleeps, **kwargs):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return HttpChatProvider("http://llm.test", "m", client=client, sleep=sleeps.append, **kwargs)


def chat_reply(text):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


def test_http_success(monkeypatch):
    monkeypatch.setenv("OPENAI_API_KEY", "sk-test")
    seen = []

    def handler(request):
        seen.append(request)
        return chat_reply("```graphql\nquery { a }\n```")

    provider = chat_provider(handler, [])
    assert provider.complete(CompletionRequest("hello", 0.2, 50)) == "```graphql\nquery { a }\n```"
    req = seen[0]
    assert req.url.path == "/v1/chat/completions"
    assert req.headers["authorization"] == "Bearer sk-test"
    body = json.loads(req.read())
    assert body["messages"] == [{"role": "user", "content": "hello"}]
    assert body["temperature"] == 0.2 and body["max_tokens"] == 50 and body["model"] == "m"


def test_http_auth_failure_is_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401, json={"error": "bad key"})

    sleeps = []
    with pytest.raises(ProviderAuthError):
        chat_provider(handler, sleeps).complete("p")
    assert len(calls) == 1 and sleeps == []


def test_http_rate_limit_backoff():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(429)

    sleeps = []
    with pytest.raises(ProviderRateLimitError):
        chat_provider(handler, sleeps).complete("p")
    assert len(calls) == 5
    assert sleeps == [1.0, 2.0, 4.0, 8.0]


def test_http_recovers_after_server_error():
    replies = iter([httpx.Response(503), chat_reply("ok")])
    sleeps = []
    assert chat_provider(lambda r: next(replies), sleeps).complete("p") == "ok"
    assert sleeps == [1.0]


def test_http_transport_error_retried():
    def handler(request):
        raise httpx.ConnectError("down", request=request)

    sleeps = []
    with pytest.raises(ProviderError):
        chat_provider(handler, sleeps, max_attempts=3).complete("p")
    assert sleeps == [1.0, 2.0]


def test_http_malformed_reply():
    with pytest.raises(ProviderError):
        chat_provider(lambda r: httpx.Response(200, json={"nope": 1}), []).complete("p")


def test_http_logging_redacts_key(monkeypatch, caplog):
    monkeypatch.setenv("OPENAI_API_KEY", "sk-secret-value")
    provider = chat_provider(lambda r: chat_reply("x"), [], verbose=True)
    with caplog.at_level(logging.INFO):
        provider.complete("p")
    assert caplog.records
    assert "sk-secret-value" not in caplog.text


@pytest.mark.parametrize("base", ["http://h", "http://h/", "http://h/v1", "http://h/v1/chat/completions"])
def test_http_url_normalization(base):
    assert HttpChatProvider(base, "m").url == "http://h/v1/chat/completions"
