import json
from concurrent.futures import ThreadPoolExecutor

import httpx
import pytest

from timepref.client import (
    AuthError,
    BudgetExceeded,
    ChatClient,
    CompletionRequest,
    HttpTransport,
    MockTransport,
    ProtocolError,
    RateLimited,
    Timeout,
    TransportError,
    TransportPolicy,
    TransportTimeout,
    completion_json,
)
from timepref.design import select_languages
from timepref.prompting import ChatMessage, build_preamble

MSGS = (ChatMessage("user", "hello"),)


def make_client(transport, **policy):
    sleeps = []
    client = ChatClient(transport, TransportPolicy(**policy), sleep=sleeps.append)
    return client, sleeps


def test_mock_echo():
    client, _ = make_client(MockTransport("(1)"))
    resp = client.complete(CompletionRequest("m", MSGS))
    assert resp.content == "(1)"
    assert resp.finish_reason == "stop"
    assert client.usage.requests == 1


def test_retry_then_success():
    transport = MockTransport("(2)", failures=[TransportError(429), TransportError(503)])
    client, sleeps = make_client(transport, retry_max=3, backoff_base=0.5)
    assert client.complete(CompletionRequest("m", MSGS)).content == "(2)"
    assert len(transport.calls) == 3
    assert sleeps == [0.5, 1.0]


def test_retries_exhausted():
    transport = MockTransport("(2)", failures=[TransportError(429)] * 10)
    client, sleeps = make_client(transport, retry_max=2)
    with pytest.raises(RateLimited):
        client.complete(CompletionRequest("m", MSGS))
    assert len(transport.calls) == 3
    assert len(sleeps) == 2


def test_timeouts_exhausted():
    transport = MockTransport("(2)", failures=[TransportTimeout("slow")] * 5)
    client, _ = make_client(transport, retry_max=1)
    with pytest.raises(Timeout):
        client.complete(CompletionRequest("m", MSGS))
    assert len(transport.calls) == 2


def test_auth_error_not_retried():
    transport = MockTransport("(2)", failures=[TransportError(401)])
    client, _ = make_client(transport, retry_max=5)
    with pytest.raises(AuthError):
        client.complete(CompletionRequest("m", MSGS))
    assert len(transport.calls) == 1


def test_malformed_response():
    client, _ = make_client(lambda body, timeout: {"choices": []})
    with pytest.raises(ProtocolError):
        client.complete(CompletionRequest("m", MSGS))
    client, _ = make_client(MockTransport(failures=[TransportError(400)]))
    with pytest.raises(ProtocolError):
        client.complete(CompletionRequest("m", MSGS))


def test_request_validation_and_defaults():
    req = CompletionRequest("gpt", MSGS)
    assert req.temperature == 1.0
    with pytest.raises(ValueError):
        CompletionRequest("gpt", ())
    with pytest.raises(ValueError):
        CompletionRequest("gpt", MSGS, temperature=2.5)
    with pytest.raises(ValueError):
        TransportPolicy(max_in_flight=0)


def test_serialization_is_stable():
    a = CompletionRequest("gpt", tuple(build_preamble("standard")), 1.0, 50)
    b = CompletionRequest("gpt", list(build_preamble("standard")), 1.0, 50)
    assert a.serialize() == b.serialize()
    payload = json.loads(a.serialize())
    assert payload["model"] == "gpt" and payload["temperature"] == 1.0 and payload["max_tokens"] == 50
    assert payload["messages"][1] == {"role": "assistant", "content": build_preamble("standard")[1].content}


def test_budget_aborts():
    transport = MockTransport("one two three")
    client = ChatClient(transport, budget_tokens=5)
    client.complete(CompletionRequest("m", (ChatMessage("user", "a b c"),)))
    assert client.usage.total_tokens == 6
    with pytest.raises(BudgetExceeded):
        client.complete(CompletionRequest("m", MSGS))


def test_bounded_in_flight():
    transport = MockTransport("(1)", delay=0.02)
    client = ChatClient(transport, TransportPolicy(max_in_flight=3))
    with ThreadPoolExecutor(max_workers=12) as pool:
        list(pool.map(lambda _: client.complete(CompletionRequest("m", MSGS)), range(36)))
    assert len(transport.calls) == 36
    assert 1 <= transport.max_seen_in_flight <= 3


def test_scripted_pattern_replies():
    transport = MockTransport([(r"1000", "(1)"), (r".*", "(2)")])
    client = ChatClient(transport)
    assert client.chat("m", [ChatMessage("user", "1000 now")]) == "(1)"
    assert client.chat("m", [ChatMessage("user", "later")]) == "(2)"


def test_translate():
    de = select_languages(["de"])[0]
    transport = MockTransport(lambda p: {"Hello": "Hallo"}[p["messages"][-1]["content"].split("\n\n", 1)[1]])
    client = ChatClient(transport)
    assert client.translate("", de, "m") == ""
    assert transport.calls == []
    assert client.translate("Hello", de, "m") == "Hallo"
    assert len(transport.calls[0]["messages"]) == 1
    en = select_languages(["en"])[0]
    echo = ChatClient(MockTransport(lambda p: "Hello there"))
    assert echo.translate("Hello there", en, "m") == "Hello there"


def test_http_transport_wire_format():
    seen = {}

    def handler(request: httpx.Request):
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        if seen["body"]["messages"][0]["content"] == "fail":
            return httpx.Response(503, text="busy")
        return httpx.Response(200, json=completion_json("(2)", 10, 1))

    transport = HttpTransport("https://example.invalid/v1/chat/completions", "sk-test", httpx.Client(transport=httpx.MockTransport(handler)))
    client, sleeps = make_client(transport, retry_max=1)
    assert client.complete(CompletionRequest("gpt-x", MSGS)).content == "(2)"
    assert seen["auth"] == "Bearer sk-test"
    assert seen["body"] == {"model": "gpt-x", "messages": [{"role": "user", "content": "hello"}], "temperature": 1.0}
    assert client.usage.input_tokens == 10
    with pytest.raises(RateLimited):
        client.complete(CompletionRequest("gpt-x", (ChatMessage("user", "fail"),)))


def test_credential_from_env(monkeypatch):
    monkeypatch.delenv("TIMEPREF_TEST_KEY", raising=False)
    with pytest.raises(AuthError):
        HttpTransport.from_env(key_env="TIMEPREF_TEST_KEY")
    monkeypatch.setenv("TIMEPREF_TEST_KEY", "abc")
    assert HttpTransport.from_env(key_env="TIMEPREF_TEST_KEY").endpoint.startswith("https://")
