"""The single boundary to language models.

Three providers share one contract (relevance scoring + group summarization):

- MockLexicalProvider: deterministic token-overlap stand-in; every test and
  every evaluation run uses it, no network involved.
- HttpChatProvider: JSON-over-HTTP chat completions against a configured
  endpoint, temperature pinned to 0, bounded retries and in-flight requests.
- FallbackProvider: tries a remote provider, falls back to another (normally
  the mock) on timeout or transport failure, and reports which one answered.

Prompt templates are versioned text fixtures under semnav/prompts/ so they
can be swapped without code changes.
"""

import os
import re
import threading
import time
from dataclasses import dataclass
from importlib import resources

import httpx


class ProviderTimeout(RuntimeError):
    pass


class TransportError(RuntimeError):
    pass


class UnparseableResponse(ValueError):
    pass


class HttpStatusError(RuntimeError):
    def __init__(self, code: int, body: str = ""):
        super().__init__(f"endpoint returned status {code}")
        self.code = code
        self.body = body


def load_prompt(name: str) -> str:
    ref = resources.files("semnav").joinpath("prompts", f"{name}.txt")
    return ref.read_text(encoding="utf-8")


_NUMBER = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")


def extract_score(text: str) -> float:
    """First number in the response, clamped to [0, 1]. Strict: no number
    is an UnparseableResponse, never a silent zero."""
    m = _NUMBER.search(text)
    if not m:
        raise UnparseableResponse(f"no number in response: {text!r}")
    return min(1.0, max(0.0, float(m.group(0))))


class MockLexicalProvider:
    """Jaccard token overlap for relevance; top-2 token join for summaries.

    Tokens are lowercase alphanumeric runs, so punctuation around a word
    never changes a score. Summaries pick the two most frequent tokens
    across member labels, ties broken by first occurrence.
    """

    name = "mock-lexical"

    @staticmethod
    def _tokens(text: str):
        return re.findall(r"[a-z0-9]+", text.lower())

    def relevance(self, query: str, description: str) -> float:
        if not query or not description:
            raise ValueError("relevance requires non-empty texts")
        a = set(self._tokens(query))
        b = set(self._tokens(description))
        if not a or not b:
            return 0.0
        return len(a & b) / len(a | b)

    def summarize(self, labels) -> str:
        if not labels:
            raise ValueError("summarize requires at least one label")
        counts = {}
        order = {}
        for label in labels:
            for tok in self._tokens(label):
                counts[tok] = counts.get(tok, 0) + 1
                order.setdefault(tok, len(order))
        ranked = sorted(counts, key=lambda tok: (-counts[tok], order[tok]))
        return " ".join(ranked[:2])

    def relevance_traced(self, query: str, description: str):
        return self.relevance(query, description), self.name


@dataclass(frozen=True)
class ChatRequest:
    model: str
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 32


@dataclass(frozen=True)
class ChatResponse:
    text: str
    latency_ms: float


class HttpChatProvider:
    """Chat-completion transport with retries and an in-flight cap.

    The endpoint accepts POST {model, prompt, temperature, max_tokens} and
    answers {"text": ...}. One attempt plus `retry_budget` retries; each
    attempt is bounded by `timeout_s`.
    """

    def __init__(self, endpoint: str, model: str, timeout_s: float = 2.0,
                 retry_budget: int = 1, max_inflight: int = 4):
        self.endpoint = endpoint
        self.model = model
        self.timeout_s = timeout_s
        self.retry_budget = retry_budget
        self.name = f"http:{model}"
        self._gate = threading.Semaphore(max_inflight)
        self._client = httpx.Client(timeout=timeout_s)
        self._rel_template = load_prompt("relevance_v1")
        self._sum_template = load_prompt("summarize_v1")

    def complete(self, request: ChatRequest) -> ChatResponse:
        attempts = 1 + self.retry_budget
        last_exc = None
        for _ in range(attempts):
            start = time.monotonic()
            try:
                with self._gate:
                    resp = self._client.post(
                        self.endpoint,
                        json={
                            "model": request.model,
                            "prompt": request.prompt,
                            "temperature": request.temperature,
                            "max_tokens": request.max_tokens,
                        },
                    )
            except httpx.TimeoutException as e:
                last_exc = ProviderTimeout(f"no response within {self.timeout_s}s")
                last_exc.__cause__ = e
                continue
            except httpx.HTTPError as e:
                last_exc = TransportError(str(e))
                last_exc.__cause__ = e
                continue
            if resp.status_code != 200:
                last_exc = HttpStatusError(resp.status_code, resp.text)
                continue
            latency_ms = (time.monotonic() - start) * 1000.0
            try:
                text = resp.json()["text"]
            except (KeyError, ValueError) as e:
                raise UnparseableResponse(f"bad response body: {resp.text!r}") from e
            return ChatResponse(text=text, latency_ms=latency_ms)
        raise last_exc

    def relevance(self, query: str, description: str) -> float:
        if not query or not description:
            raise ValueError("relevance requires non-empty texts")
        prompt = self._rel_template.format(query=query, description=description)
        resp = self.complete(ChatRequest(self.model, prompt, max_tokens=16))
        return extract_score(resp.text)

    def summarize(self, labels) -> str:
        if not labels:
            raise ValueError("summarize requires at least one label")
        prompt = self._sum_template.format(labels="; ".join(labels))
        resp = self.complete(ChatRequest(self.model, prompt, max_tokens=24))
        text = resp.text.strip()
        if not text:
            raise UnparseableResponse("empty summary")
        return text

    def relevance_traced(self, query: str, description: str):
        return self.relevance(query, description), self.name

    def close(self):
        self._client.close()


class FallbackProvider:
    """Route to `primary`, recover via `fallback` on provider failures."""

    _RECOVERABLE = (ProviderTimeout, TransportError, HttpStatusError, UnparseableResponse)

    def __init__(self, primary, fallback):
        self.primary = primary
        self.fallback = fallback
        self.name = f"{primary.name}+{fallback.name}"

    def relevance(self, query: str, description: str) -> float:
        return self.relevance_traced(query, description)[0]

    def relevance_traced(self, query: str, description: str):
        try:
            return self.primary.relevance(query, description), self.primary.name
        except self._RECOVERABLE:
            return self.fallback.relevance(query, description), self.fallback.name

    def summarize(self, labels) -> str:
        try:
            return self.primary.summarize(labels)
        except self._RECOVERABLE:
            return self.fallback.summarize(labels)


def provider_from_config(cfg: dict = None):
    """Build the configured provider.

    Config keys (all optional): endpoint, model, timeout_s, retry_budget,
    max_inflight, fallback_to_mock. Environment overrides: SEMNAV_LLM_ENDPOINT,
    SEMNAV_LLM_MODEL, SEMNAV_LLM_TIMEOUT_S, SEMNAV_LLM_RETRIES,
    SEMNAV_LLM_MAX_INFLIGHT, SEMNAV_LLM_FALLBACK (0 disables fallback).
    With no endpoint configured the deterministic mock is returned.
    """
    cfg = dict(cfg or {})
    env = os.environ
    endpoint = env.get("SEMNAV_LLM_ENDPOINT", cfg.get("endpoint"))
    if not endpoint:
        return MockLexicalProvider()
    remote = HttpChatProvider(
        endpoint=endpoint,
        model=env.get("SEMNAV_LLM_MODEL", cfg.get("model", "local")),
        timeout_s=float(env.get("SEMNAV_LLM_TIMEOUT_S", cfg.get("timeout_s", 2.0))),
        retry_budget=int(env.get("SEMNAV_LLM_RETRIES", cfg.get("retry_budget", 1))),
        max_inflight=int(env.get("SEMNAV_LLM_MAX_INFLIGHT", cfg.get("max_inflight", 4))),
    )
    fallback = env.get("SEMNAV_LLM_FALLBACK", cfg.get("fallback_to_mock", "1"))
    if str(fallback) not in ("0", "false", "False"):
        return FallbackProvider(remote, MockLexicalProvider())
    return remote
