from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from callscope.backends.base import BackendUnavailable
from callscope.backends.llm import ChatCompletionsBackend, ChatEndpointConfig
from callscope.context import INSTRUCTION_TEMPLATES, InferenceRequest
from callscope.model import Speaker

VALID_BODY = (
    '{"emotion":"neutral","sentiment":"none","intent":"cooperate",'
    '"call_stage":"verification","slots":{}}'
)


def make_request(text="vâng, đúng rồi") -> InferenceRequest:
    return InferenceRequest(
        instruction=INSTRUCTION_TEMPLATES["v1"],
        instruction_version="v1",
        context_turns=((Speaker.AGENT, "có phải anh/chị An đang nghe máy không ạ?"),),
        target_turn=(Speaker.CUSTOMER, text),
    )


class ScriptedServer:
    """Tiny chat-completions stand-in with a scripted status sequence."""

    def __init__(self, script):
        self.script = list(script)  # [(status, content_or_None), ...] last repeats
        self.requests = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length)) if length else {}
                outer.requests.append(
                    {
                        "path": self.path,
                        "auth": self.headers.get("Authorization"),
                        "payload": payload,
                    }
                )
                status, content = (
                    outer.script.pop(0) if len(outer.script) > 1 else outer.script[0]
                )
                body = b"{}"
                if status == 200:
                    body = json.dumps(
                        {"choices": [{"message": {"content": content}}]}
                    ).encode()
                elif content is not None:
                    body = json.dumps(content).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def base_url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1"

    def stop(self):
        self.server.shutdown()
        self.server.server_close()


def make_backend(server, **overrides) -> ChatCompletionsBackend:
    config = ChatEndpointConfig(
        backend_id="llm-test",
        base_url=server.base_url,
        model="credit-model-7b",
        api_key="secret-token",
        max_retries=overrides.pop("max_retries", 3),
        timeout_ms=5000,
        **overrides,
    )
    return ChatCompletionsBackend(config, sleep=lambda s: None)


class TestTransport:
    def test_fixed_valid_body_passes_through(self):
        server = ScriptedServer([(200, VALID_BODY)])
        try:
            backend = make_backend(server)
            raw = backend.complete(make_request())
            assert raw.text == VALID_BODY
            assert raw.retries == 0
            assert raw.backend == "llm-test"
        finally:
            server.stop()

    def test_429_twice_then_200_records_two_retries(self):
        server = ScriptedServer([(429, None), (429, None), (200, VALID_BODY)])
        try:
            backend = make_backend(server)
            raw = backend.complete(make_request())
            assert raw.text == VALID_BODY
            assert raw.retries == 2
            assert len(server.requests) == 3
        finally:
            server.stop()

    def test_retries_exhausted_raises(self):
        server = ScriptedServer([(503, None)])
        try:
            backend = make_backend(server, max_retries=2)
            with pytest.raises(BackendUnavailable, match="retries exhausted"):
                backend.complete(make_request())
            assert len(server.requests) == 3  # initial + 2 retries
        finally:
            server.stop()

    def test_auth_failure_not_retried(self):
        server = ScriptedServer([(401, None)])
        try:
            backend = make_backend(server)
            with pytest.raises(BackendUnavailable, match="authentication"):
                backend.complete(make_request())
            assert len(server.requests) == 1
        finally:
            server.stop()

    def test_malformed_envelope(self):
        server = ScriptedServer([(200, None)])
        try:
            # 200 whose body lacks choices
            server.script = [(204, None)]
            backend = make_backend(server)
            with pytest.raises(BackendUnavailable, match="unexpected HTTP 204"):
                backend.complete(make_request())
        finally:
            server.stop()


class TestWireFormat:
    def test_payload_shape_and_auth_header(self):
        server = ScriptedServer([(200, VALID_BODY)])
        try:
            backend = make_backend(server)
            backend.complete(make_request("dạ, được ạ"))
            sent = server.requests[0]
            assert sent["path"].endswith("/chat/completions")
            assert sent["auth"] == "Bearer secret-token"
            payload = sent["payload"]
            assert payload["model"] == "credit-model-7b"
            assert payload["temperature"] == 0.0
            assert payload["response_format"] == {"type": "json_object"}
            roles = [m["role"] for m in payload["messages"]]
            assert roles == ["system", "user"]
            assert "dạ, được ạ" in payload["messages"][1]["content"]
        finally:
            server.stop()

    def test_structured_response_directive_optional(self):
        server = ScriptedServer([(200, VALID_BODY)])
        try:
            backend = make_backend(server, structured_response=False)
            backend.complete(make_request())
            assert "response_format" not in server.requests[0]["payload"]
        finally:
            server.stop()

    def test_api_key_env_override(self, monkeypatch):
        monkeypatch.setenv("CALLSCOPE_TEST_KEY", "from-env")
        server = ScriptedServer([(200, VALID_BODY)])
        try:
            config = ChatEndpointConfig(
                backend_id="llm-test",
                base_url=server.base_url,
                model="m",
                api_key="fallback",
                api_key_env="CALLSCOPE_TEST_KEY",
            )
            backend = ChatCompletionsBackend(config, sleep=lambda s: None)
            backend.complete(make_request())
            assert server.requests[0]["auth"] == "Bearer from-env"
        finally:
            server.stop()

    def test_identical_requests_identical_fingerprint(self):
        server = ScriptedServer([(200, VALID_BODY)])
        try:
            backend = make_backend(server)
            a = backend.complete(make_request())
            b = backend.complete(make_request())
            assert a.request_fingerprint == b.request_fingerprint
        finally:
            server.stop()


class TestAnnotateIntegration:
    def test_annotate_parses_served_body(self):
        server = ScriptedServer([(200, VALID_BODY)])
        try:
            backend = make_backend(server)
            outcome = backend.annotate(make_request())
            assert outcome.ok
            assert outcome.annotation.intent == "cooperate"
            assert outcome.parse.repairs_applied == ()
        finally:
            server.stop()

    def test_parse_failure_is_not_retried(self):
        server = ScriptedServer([(200, "definitely not json")])
        try:
            backend = make_backend(server)
            outcome = backend.annotate(make_request())
            assert not outcome.ok
            assert len(server.requests) == 1  # one transport call, no re-roll
        finally:
            server.stop()
