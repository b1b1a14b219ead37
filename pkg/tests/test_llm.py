import ast
import difflib
import io
import json
import threading
import tokenize
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from trajforge import prompts
from trajforge.evolution import crossover_request, init_request, mutation_request
from trajforge.llm import (
    AuthError,
    ChatRequest,
    EmptyResponse,
    MockProvider,
    NoCodeBlock,
    OpenAIChatProvider,
    RateLimited,
    ScriptExhausted,
    Transport,
    extract_code,
    perturb_numeric_literals,
)
from trajforge.runtime import Candidate


class FakeEndpoint:
    """Chat-completions server replaying a queue of (status, body) replies."""

    def __init__(self):
        self.replies = []
        self.requests = []
        endpoint = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = self.rfile.read(int(self.headers["Content-Length"]))
                endpoint.requests.append((self.path, dict(self.headers), json.loads(body)))
                status, payload = endpoint.replies.pop(0) if endpoint.replies else (500, "")
                data = payload if isinstance(payload, bytes) else (json.dumps(payload) if not isinstance(payload, str) else payload).encode()
                self.send_response(status)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}/v1"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


def ok_body(text, prompt_tokens=7, completion_tokens=3):
    return {
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }


@pytest.fixture
def endpoint():
    ep = FakeEndpoint()
    yield ep
    ep.close()


def provider(ep, **kw):
    kw.setdefault("sleep", lambda s: None)
    return OpenAIChatProvider(ep.url, "test-model", api_key="sk-test", **kw)


REQ = ChatRequest([("system", "sys"), ("user", "hello")], seed=11)


class TestHttpProvider:
    def test_success(self, endpoint):
        endpoint.replies.append((200, ok_body("```python\nx = 1\n```")))
        resp = provider(endpoint).complete(REQ)
        assert resp.text == "```python\nx = 1\n```"
        assert (resp.prompt_tokens, resp.completion_tokens) == (7, 3)
        path, headers, body = endpoint.requests[0]
        assert path == "/v1/chat/completions"
        assert headers["Authorization"] == "Bearer sk-test"
        assert body["model"] == "test-model" and body["temperature"] == 1.0
        assert body["messages"] == [{"role": "system", "content": "sys"}, {"role": "user", "content": "hello"}]
        assert "seed" not in body

    def test_seed_forwarded_when_enabled(self, endpoint):
        endpoint.replies.append((200, ok_body("x")))
        provider(endpoint, send_seed=True).complete(REQ)
        assert endpoint.requests[0][2]["seed"] == 11

    def test_rate_limited_after_retries(self, endpoint):
        endpoint.replies += [(429, "slow down")] * 3
        waits = []
        with pytest.raises(RateLimited):
            provider(endpoint, sleep=waits.append, backoff=0.5).complete(REQ)
        assert len(endpoint.requests) == 3 and waits == [0.5, 1.0]

    def test_retry_then_success(self, endpoint):
        endpoint.replies += [(503, ""), (200, ok_body("fine"))]
        assert provider(endpoint).complete(REQ).text == "fine"

    def test_server_errors_exhaust(self, endpoint):
        endpoint.replies += [(500, "")] * 3
        with pytest.raises(Transport):
            provider(endpoint).complete(REQ)

    def test_auth_not_retried(self, endpoint):
        endpoint.replies += [(401, "no"), (200, ok_body("x"))]
        with pytest.raises(AuthError):
            provider(endpoint).complete(REQ)
        assert len(endpoint.requests) == 1

    def test_empty_body(self, endpoint):
        endpoint.replies.append((200, b""))
        with pytest.raises(EmptyResponse):
            provider(endpoint).complete(REQ)

    def test_missing_content(self, endpoint):
        endpoint.replies.append((200, {"choices": []}))
        with pytest.raises(EmptyResponse):
            provider(endpoint).complete(REQ)

    def test_connection_refused(self):
        p = OpenAIChatProvider("http://127.0.0.1:9", "m", sleep=lambda s: None, timeout=2)
        with pytest.raises(Transport):
            p.complete(REQ)


class TestExtract:
    def test_single(self):
        assert extract_code("here\n```python\nX\n```\nbye") == "X"

    def test_first_of_two(self):
        assert extract_code("```python\nA\n```\n```python\nB\n```") == "A"

    def test_bare_fence(self):
        assert extract_code("```\ny = 2\n```") == "y = 2"

    def test_none(self):
        with pytest.raises(NoCodeBlock):
            extract_code("no code here")


class TestMock:
    def test_script(self):
        m = MockProvider(script=["A", "B"])
        assert [m.complete(REQ).text for _ in range(2)] == ["A", "B"]
        with pytest.raises(ScriptExhausted):
            m.complete(REQ)

    def test_latency_recorded(self):
        assert MockProvider(script=["A"]).complete(REQ).latency >= 0.0

    def test_same_seed_same_replies(self):
        reqs = [init_request(seed=s) for s in range(5)]
        a = [MockProvider(seed=3).complete(r).text for r in reqs]
        b = [MockProvider(seed=3).complete(r).text for r in reversed(reqs)][::-1]
        assert a == b

    def test_mutator_only_changes_numbers(self):
        elite = Candidate("e", prompts.seed_function())
        reply = MockProvider(seed=1).complete(mutation_request(elite, "", seed=9))
        code = extract_code(reply.text)
        ast.parse(code)
        assert code != prompts.seed_function().rstrip()
        diff = [d for d in difflib.ndiff(prompts.seed_function().rstrip().splitlines(), code.splitlines()) if d[:1] in "+-"]
        assert diff
        old_toks = [t for t in tokenize.generate_tokens(io.StringIO(prompts.seed_function()).readline)]
        new_toks = [t for t in tokenize.generate_tokens(io.StringIO(code + "\n").readline)]
        changed = [(a.string, b.string) for a, b in zip(old_toks, new_toks) if a.string != b.string]
        assert changed and all(a.type == tokenize.NUMBER for a in old_toks if a.string in dict(changed))

    def test_crossover_builds_on_better_parent(self):
        worse = Candidate("w", "def predict_trajectory(t):\n    return t * 2.0\n")
        better = Candidate("b", "def predict_trajectory(t):\n    return t * 0.5 + 3.0\n")
        code = extract_code(MockProvider(seed=0).complete(crossover_request(worse, better, None, seed=1)).text)
        assert "t *" in code and "+" in code

    def test_reflector_returns_hints(self):
        from trajforge.evolution import long_reflection_request

        a, b = Candidate("a", "x = 1\n"), Candidate("b", "x = 2\n")
        text = MockProvider(seed=0).complete(long_reflection_request(a, b, seed=2)).text
        assert text and "```" not in text

    def test_needs_script_or_seed(self):
        with pytest.raises(ValueError):
            MockProvider()


def test_perturb_keeps_structure():
    src = "a = 2 * x + 1  # 3.5\nb = 0.25\nc = range(20)\n"
    out = perturb_numeric_literals(src, np.random.default_rng(0))
    lines = out.splitlines()
    assert lines[0].endswith("+ 1  # 3.5") and not lines[0].startswith("a = 2 *")
    assert lines[1] != "b = 0.25" and lines[2] == "c = range(20)"
    ast.parse(out)
