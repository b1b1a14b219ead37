"""Chat-completion providers: an HTTP client for OpenAI-compatible endpoints
and a deterministic offline mock."""
from __future__ import annotations

import io
import re
import threading
import time
import tokenize
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import requests

from . import prompts
from .errors import TrajforgeError


class GatewayError(TrajforgeError):
    pass


class AuthError(GatewayError):
    pass


class RateLimited(GatewayError):
    pass


class Transport(GatewayError):
    pass


class EmptyResponse(GatewayError):
    pass


class NoCodeBlock(GatewayError, ValueError):
    pass


class ScriptExhausted(GatewayError):
    pass


@dataclass
class ChatRequest:
    messages: list[tuple[str, str]]
    model: str = ""
    temperature: float = 1.0
    seed: int | None = None
    kind: str = ""  # operator label carried into the run log

    def to_record(self) -> dict:
        return {
            "kind": self.kind,
            "model": self.model,
            "temperature": self.temperature,
            "seed": self.seed,
            "messages": [{"role": r, "content": t} for r, t in self.messages],
        }


@dataclass
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency: float = 0.0

    def to_record(self) -> dict:
        return {
            "text": self.text,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }


_FENCE = re.compile(r"```[^\n`]*\n(.*?)```", re.S)


def extract_code(text: str) -> str:
    """Return the contents of the first fenced code block."""
    m = _FENCE.search(text)
    if m is None:
        raise NoCodeBlock("response contains no fenced code block")
    return m.group(1).rstrip("\n")


class OpenAIChatProvider:
    """Client for ``POST {base_url}/chat/completions``.

    Transient failures (429, 5xx, connection errors) are retried with
    exponential backoff; authentication failures are not.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 120.0,
        max_attempts: int = 3,
        backoff: float = 1.0,
        max_in_flight: int = 2,
        send_seed: bool = False,
        sleep: Callable[[float], None] = time.sleep,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_attempts = max(1, max_attempts)
        self.backoff = backoff
        self.send_seed = send_seed
        self._sleep = sleep
        self._session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def _payload(self, request: ChatRequest) -> dict:
        payload = {
            "model": request.model or self.model,
            "temperature": request.temperature,
            "messages": [{"role": r, "content": t} for r, t in request.messages],
        }
        if self.send_seed and request.seed is not None:
            payload["seed"] = int(request.seed)
        return payload

    def complete(self, request: ChatRequest) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.base_url}/chat/completions"
        last_error: GatewayError | None = None
        with self._slots:
            for attempt in range(self.max_attempts):
                if attempt:
                    self._sleep(self.backoff * 2 ** (attempt - 1))
                start = time.monotonic()
                try:
                    resp = self._session.post(url, json=self._payload(request), headers=headers, timeout=self.timeout)
                except requests.RequestException as exc:
                    last_error = Transport(str(exc))
                    continue
                latency = time.monotonic() - start
                if resp.status_code in (401, 403):
                    raise AuthError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                if resp.status_code == 429:
                    last_error = RateLimited(f"HTTP 429 after {attempt + 1} attempt(s)")
                    continue
                if resp.status_code >= 500:
                    last_error = Transport(f"HTTP {resp.status_code}")
                    continue
                if resp.status_code != 200:
                    raise Transport(f"HTTP {resp.status_code}: {resp.text[:200]}")
                return self._parse(resp, latency)
        assert last_error is not None
        raise last_error

    @staticmethod
    def _parse(resp, latency: float) -> ChatResponse:
        if not resp.content or not resp.content.strip():
            raise EmptyResponse("empty response body")
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise EmptyResponse("response carries no message content") from None
        if not text:
            raise EmptyResponse("empty message content")
        usage = data.get("usage") or {}
        return ChatResponse(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", 0) or 0),
            completion_tokens=int(usage.get("completion_tokens", 0) or 0),
            latency=latency,
        )


# -- offline mock -----------------------------------------------------------------

def _is_float_literal(tok: str) -> bool:
    low = tok.lower()
    if low.startswith(("0x", "0o", "0b")) or low.endswith("j"):
        return False
    return "." in low or "e" in low


def _format_literal(value: float) -> str:
    text = f"{value:.4g}"
    if not any(ch in text for ch in ".e"):
        text += ".0"
    return text


def perturb_numeric_literals(source: str, rng: np.random.Generator, low: float = 0.5, high: float = 1.5) -> str:
    """Scale tunable numeric literals by ``U[low, high]``.

    Tunable means a float literal, or an integer literal that is an operand of
    ``*``. Everything else in the text, comments included, is left untouched.
    """
    tokens = list(tokenize.generate_tokens(io.StringIO(source).readline))
    significant = [t for t in tokens if t.type not in (tokenize.NL, tokenize.NEWLINE, tokenize.COMMENT, tokenize.INDENT, tokenize.DEDENT)]
    targets = []
    for i, tok in enumerate(significant):
        if tok.type != tokenize.NUMBER:
            continue
        if _is_float_literal(tok.string):
            targets.append(tok)
            continue
        prev_op = significant[i - 1].string if i > 0 else ""
        next_op = significant[i + 1].string if i + 1 < len(significant) else ""
        if "*" in (prev_op, next_op):
            targets.append(tok)

    lines = source.splitlines(keepends=True)
    # edit right-to-left so earlier column offsets stay valid
    for tok in sorted(targets, key=lambda t: t.start, reverse=True):
        (row, col), (_, end_col) = tok.start, tok.end
        value = float(tok.string) * rng.uniform(low, high)
        line = lines[row - 1]
        lines[row - 1] = line[:col] + _format_literal(value) + line[end_col:]
    return "".join(lines)


_TEMPLATE_BANK = (
    '''import numpy as np


def predict_trajectory(trajectory):
    """Constant velocity with heading and speed noise; sample 0 is noise-free."""
    num_agents = trajectory.shape[0]
    velocity = trajectory[:, -1, :] - trajectory[:, -2, :]
    steps = np.arange(1, 13)[None, :, None]
    all_trajectories = []
    for i in range(20):
        gate = 1.0 if i > 0 else 0.0
        angle = np.random.normal(0.0, 0.3, size=num_agents) * gate
        scale = 1.0 + np.random.normal(0.0, 0.1, size=num_agents) * gate
        c, s = np.cos(angle), np.sin(angle)
        v = np.stack([c * velocity[:, 0] - s * velocity[:, 1], s * velocity[:, 0] + c * velocity[:, 1]], axis=1)
        v = v * scale[:, None]
        all_trajectories.append(trajectory[:, -1:, :] + v[:, None, :] * steps)
    return np.stack(all_trajectories, axis=0)
''',
    '''import numpy as np


def predict_trajectory(trajectory):
    """Decay-weighted average velocity with per-sample speed spread."""
    num_agents, history_len = trajectory.shape[0], trajectory.shape[1]
    diffs = trajectory[:, 1:, :] - trajectory[:, :-1, :]
    weights = np.exp(-0.5 * np.arange(history_len - 1))[::-1]
    avg_velocity = (diffs * weights[None, :, None]).sum(axis=1) / weights.sum()
    last_velocity = diffs[:, -1, :]
    velocity = 0.7 * last_velocity + 0.3 * avg_velocity
    steps = np.arange(1, 13)[None, :, None]
    all_trajectories = []
    for i in range(20):
        spread = 0.05 * i
        scale = 1.0 + np.random.uniform(-spread, spread, size=(num_agents, 1))
        angle = np.random.normal(0.0, 0.02 * i, size=num_agents)
        c, s = np.cos(angle), np.sin(angle)
        v = np.stack([c * velocity[:, 0] - s * velocity[:, 1], s * velocity[:, 0] + c * velocity[:, 1]], axis=1)
        all_trajectories.append(trajectory[:, -1:, :] + (v * scale)[:, None, :] * steps)
    return np.stack(all_trajectories, axis=0)
''',
    '''import numpy as np


def predict_trajectory(trajectory):
    """Damped constant velocity plus a Gaussian random walk."""
    num_agents = trajectory.shape[0]
    velocity = trajectory[:, -1, :] - trajectory[:, -2, :]
    all_trajectories = []
    for i in range(20):
        damping = 0.02 * (i % 4)
        noise = np.random.normal(0.0, 0.04, size=(num_agents, 12, 2)) * (i > 0)
        pos = trajectory[:, -1, :].copy()
        v = velocity.copy()
        preds = []
        for t in range(12):
            v = v * (1.0 - damping)
            pos = pos + v + noise[:, t, :]
            preds.append(pos.copy())
        all_trajectories.append(np.stack(preds, axis=1))
    return np.stack(all_trajectories, axis=0)
''',
)

_HINTS = (
    "Keep one noise-free constant-velocity sample; spread the other samples over heading rather than speed.",
    "Average velocity over the last few frames to suppress jitter before extrapolating.",
    "Scale sampling noise with agent speed so slow agents are not over-dispersed.",
    "Indices with few wins are wasted; reassign them to the strategies that win most often.",
    "Damp velocity slightly for long horizons; pedestrians decelerate more often than they accelerate.",
    "Small heading perturbations capture gentle turns better than large positional noise.",
)


def _section(text: str, start_marker: str, end_marker: str) -> str | None:
    i = text.find(start_marker)
    if i < 0:
        return None
    i += len(start_marker)
    j = text.find(end_marker, i)
    return text[i:] if j < 0 else text[i:j]


def _strip_signature(block: str) -> str:
    # blocks are "<signature line>\n<code>"; drop the signature line
    first, _, rest = block.partition("\n")
    return rest if first.startswith("def " + prompts.FUNCTION_NAME + "_v") else block


class MockProvider:
    """Deterministic offline provider.

    With ``script`` the replies are returned in request order. Otherwise replies
    are synthesised from ``seed`` and the request's own ``seed`` field, so the
    reply does not depend on call order or thread scheduling.
    """

    def __init__(self, script: Sequence[str] | None = None, seed: int | None = None):
        if script is None and seed is None:
            raise ValueError("MockProvider needs a script or a seed")
        self.script = list(script) if script is not None else None
        self.seed = seed
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        start = time.monotonic()
        with self._lock:
            index = self.calls
            self.calls += 1
        if self.script is not None:
            if index >= len(self.script):
                raise ScriptExhausted(f"script has {len(self.script)} replies; request #{index + 1}")
            text = self.script[index]
        else:
            key = request.seed if request.seed is not None else index
            rng = np.random.default_rng([int(self.seed) & 0xFFFFFFFF, int(key) & 0xFFFFFFFF])
            text = self._synthesise(request, rng)
        return ChatResponse(text=text, prompt_tokens=sum(len(t.split()) for _, t in request.messages),
                            completion_tokens=len(text.split()), latency=time.monotonic() - start)

    def _synthesise(self, request: ChatRequest, rng: np.random.Generator) -> str:
        system = next((t for r, t in request.messages if r == "system"), "")
        user = "\n".join(t for r, t in request.messages if r == "user")
        if "give hints" in system:
            n = 1 if "less than 20 words" in user else 3
            picks = rng.choice(len(_HINTS), size=n, replace=False)
            return " ".join(_HINTS[i] for i in picks)

        base = None
        if "[Code Results Analysis]" in user:
            base = _section(user, "[Code]\n", "\n\n[Code Results Analysis]")
        elif "[Better code]" in user:
            base = _section(user, "[Better code]\n", "\n\n[Reflection]")
        if base is not None:
            code = _strip_signature(base)
        else:
            code = _TEMPLATE_BANK[int(rng.integers(len(_TEMPLATE_BANK)))]
        code = perturb_numeric_literals(code, rng)
        return f"```python\n{code.rstrip()}\n```"
