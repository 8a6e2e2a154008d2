import json

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from prediql.bandit import reward_signal
from prediql.execution import CLASSIFICATIONS, Executor, TokenBucket, classify, execute
from prediql.traces import EXCERPT_CAP, Outcome


class FakeClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now

    def sleep(self, seconds):
        self.now += seconds


def test_fixture_success(fixture_handle, fixture_client):
    out = execute(fixture_handle.url, "query { users { id } }", client=fixture_client, target_field="users")
    assert out.classification == "success" and out.http_status == 200
    assert out.data_present and out.graphql_errors == ()


def test_fixture_unknown_field(fixture_handle, fixture_client):
    out = execute(fixture_handle.url, "query { users { email } }", client=fixture_client, target_field="users")
    assert out.classification == "graphql_error" and out.http_status == 200
    assert out.graphql_errors


def test_null_target_is_not_success(fixture_handle, fixture_client):
    out = execute(fixture_handle.url, 'query { user(id: "99") { id } }', client=fixture_client, target_field="user")
    assert out.http_status == 200 and not out.graphql_errors
    assert out.classification == "graphql_error"


def test_alias_target(fixture_handle, fixture_client):
    out = execute(fixture_handle.url, "query { everyone: users { id } }", client=fixture_client, target_field="users")
    assert out.classification == "success"


def test_unreachable_endpoint():
    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    client = httpx.Client(transport=httpx.MockTransport(handler))
    assert execute("http://nowhere/graphql", "query { a }", client=client).classification == "transport_error"


def test_timeout_classified():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    client = httpx.Client(transport=httpx.MockTransport(handler))
    assert execute("http://slow/graphql", "query { a }", client=client).classification == "timeout"


def test_http_error_and_body_cap():
    client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(429, text="z" * 9000)))
    with Executor("http://t/graphql", client=client, rate_limit=None) as ex:
        out, body = ex.execute("query { a }")
    assert out.classification == "http_error"
    assert len(out.truncated_body) <= EXCERPT_CAP and len(body) == 9000


def test_headers_and_wire_format():
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.read())
        seen["headers"] = request.headers
        return httpx.Response(200, json={"data": {"a": 1}})

    client = httpx.Client(transport=httpx.MockTransport(handler))
    with Executor("http://t/graphql", {"Authorization": "Bearer t"}, client=client, rate_limit=None) as ex:
        ex.execute("query { a }")
    assert seen["body"] == {"query": "query { a }"}
    assert seen["headers"]["authorization"] == "Bearer t"
    assert seen["headers"]["content-type"] == "application/json"


@pytest.mark.parametrize(
    "outcome,expected",
    [
        (Outcome(200, (), True), "success"),
        (Outcome(200, ("Cannot query field",), False), "graphql_error"),
        (Outcome(200, (), False), "graphql_error"),
        (Outcome(429, (), False), "http_error"),
        (Outcome(0, ("x",), False, classification="timeout"), "timeout"),
        (Outcome(0, ("x",), False, classification="transport_error"), "transport_error"),
    ],
)
def test_classify(outcome, expected):
    assert classify(outcome) == expected


@given(
    st.sampled_from([200, 201, 400, 404, 429, 500]),
    st.lists(st.text(min_size=1, max_size=5), max_size=2).map(tuple),
    st.booleans(),
    st.booleans(),
)
def test_success_iff_clean_data(status, errors, data, delta):
    outcome = Outcome(status, errors, data)
    label = classify(outcome)
    assert label in CLASSIFICATIONS
    assert (label == "success") == (status == 200 and not errors and data)
    if label != "success":
        assert reward_signal(outcome, delta) == 0 or (status == 200 and not errors)


@given(st.floats(0.5, 50), st.lists(st.floats(0, 0.5), min_size=1, max_size=200))
def test_token_bucket_window(rate, gaps):
    clock = FakeClock()
    bucket = TokenBucket(rate, clock=clock, sleep=clock.sleep)
    sends = []
    for gap in gaps:
        clock.now += gap
        bucket.acquire()
        sends.append(clock.now)
    for i, start in enumerate(sends):
        in_window = sum(1 for t in sends[i:] if t < start + 1.0)
        assert in_window <= rate + 1


def test_token_bucket_rejects_bad_rate():
    with pytest.raises(ValueError):
        TokenBucket(0)


def test_executor_counts_sends(fixture_handle, fixture_client):
    with Executor(fixture_handle.url, client=fixture_client, rate_limit=None) as ex:
        for _ in range(3):
            ex.execute("query { users { id } }", "users")
        assert ex.sent == 3
