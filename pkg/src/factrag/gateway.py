"""LLM provider gateway: chat, embeddings, retries, and usage metering.

All network I/O in the engine goes through this module. Providers speak the
OpenAI-compatible chat-completions and embeddings wire protocol; a
deterministic mock provider backs the test suite and offline runs.
"""

from __future__ import annotations

import hashlib
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from factrag.textutil import approx_tokens

MOCK_EMBED_DIM = 64


class ProviderError(Exception):
    """Provider call failed permanently (after retries where applicable)."""


class ReportError(ValueError):
    """Metrics requested with a zero denominator."""


@dataclass
class PriceTable:
    """Dollars per 1k tokens."""

    input_per_1k: float = 0.0
    output_per_1k: float = 0.0
    embed_per_1k: float = 0.0


@dataclass
class ProviderConfig:
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "FACTRAG_API_KEY"
    chat_model: str = "gpt-4o-mini"
    embed_model: str = "text-embedding-3-small"
    max_retries: int = 3
    timeout: float = 60.0
    max_concurrency: int = 16
    embed_batch_size: int = 128
    prices: PriceTable = field(default_factory=PriceTable)


@dataclass
class UsageRecord:
    kind: str  # "chat" | "embed"
    prompt_tokens: int
    completion_tokens: int
    wall_time: float
    cost: float
    phase: str = "generation"  # "construction" | "generation"
    query_id: str | None = None


class Meter:
    """Thread-safe accumulator of usage records."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.records: list[UsageRecord] = []

    def add(self, record: UsageRecord) -> None:
        with self._lock:
            self.records.append(record)

    def by_phase(self, phase: str) -> list[UsageRecord]:
        with self._lock:
            return [r for r in self.records if r.phase == phase]


def report_metrics(
    records: list[UsageRecord],
    corpus_tokens: int | None = None,
    query_count: int | None = None,
) -> dict:
    """Cost/time summary: construction time and cost per 1k corpus tokens,
    generation time per query and cost per 1k queries."""
    construction = [r for r in records if r.phase == "construction"]
    generation = [r for r in records if r.phase == "generation"]
    out: dict = {}
    if construction:
        if not corpus_tokens or corpus_tokens <= 0:
            raise ReportError("corpus_tokens must be > 0 for construction metrics")
        kilo = corpus_tokens / 1000.0
        out["TP1kT"] = sum(r.wall_time for r in construction) / kilo
        out["CP1kT"] = sum(r.cost for r in construction) / kilo
    if generation:
        if not query_count or query_count <= 0:
            raise ReportError("query_count must be > 0 for generation metrics")
        out["TPQ"] = sum(r.wall_time for r in generation) / query_count
        out["CP1kQ"] = sum(r.cost for r in generation) * 1000.0 / query_count
    return out


def _chat_cost(prices: PriceTable, prompt_tokens: int, completion_tokens: int) -> float:
    return (
        prompt_tokens / 1000.0 * prices.input_per_1k
        + completion_tokens / 1000.0 * prices.output_per_1k
    )


class OpenAIGateway:
    """HTTP client for OpenAI-compatible chat and embedding endpoints.

    Transient failures (429, 5xx, timeouts) retry with exponential backoff;
    other HTTP errors fail immediately.
    """

    RETRYABLE = {429, 500, 502, 503, 504}

    def __init__(self, config: ProviderConfig, api_key: str, meter: Meter | None = None):
        import httpx

        self.config = config
        self.meter = meter or Meter()
        self._semaphore = threading.Semaphore(config.max_concurrency)
        self._client = httpx.Client(
            base_url=config.base_url,
            headers={"Authorization": f"Bearer {api_key}"},
            timeout=config.timeout,
        )

    def _post(self, path: str, payload: dict) -> dict:
        import httpx

        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            try:
                with self._semaphore:
                    response = self._client.post(path, json=payload)
            except httpx.TransportError as exc:
                last_error = exc
            else:
                if response.status_code == 200:
                    return response.json()
                last_error = ProviderError(
                    f"{path} returned HTTP {response.status_code}: {response.text[:200]}"
                )
                if response.status_code not in self.RETRYABLE:
                    raise last_error
            if attempt < self.config.max_retries:
                time.sleep(min(2.0**attempt, 30.0))
        raise ProviderError(f"exhausted retries for {path}: {last_error}")

    def chat(
        self,
        messages: list[dict],
        phase: str = "generation",
        query_id: str | None = None,
        **params,
    ) -> tuple[str, UsageRecord]:
        start = time.monotonic()
        data = self._post(
            "/chat/completions",
            {"model": self.config.chat_model, "messages": messages, **params},
        )
        wall = time.monotonic() - start
        text = data["choices"][0]["message"]["content"]
        usage = data.get("usage", {})
        prompt_tokens = usage.get("prompt_tokens", 0)
        completion_tokens = usage.get("completion_tokens", 0)
        record = UsageRecord(
            kind="chat",
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            wall_time=wall,
            cost=_chat_cost(self.config.prices, prompt_tokens, completion_tokens),
            phase=phase,
            query_id=query_id,
        )
        self.meter.add(record)
        return text, record

    def embed(
        self, texts: list[str], phase: str = "generation", query_id: str | None = None
    ) -> tuple[list[np.ndarray], UsageRecord]:
        if any(not t for t in texts):
            raise ValueError("cannot embed empty text")
        vectors: list[np.ndarray] = []
        total_tokens = 0
        start = time.monotonic()
        for i in range(0, len(texts), self.config.embed_batch_size):
            batch = texts[i : i + self.config.embed_batch_size]
            data = self._post(
                "/embeddings", {"model": self.config.embed_model, "input": batch}
            )
            for item in sorted(data["data"], key=lambda d: d["index"]):
                vectors.append(np.asarray(item["embedding"], dtype=np.float64))
            total_tokens += data.get("usage", {}).get("prompt_tokens", 0)
        wall = time.monotonic() - start
        record = UsageRecord(
            kind="embed",
            prompt_tokens=total_tokens,
            completion_tokens=0,
            wall_time=wall,
            cost=total_tokens / 1000.0 * self.config.prices.embed_per_1k,
            phase=phase,
            query_id=query_id,
        )
        self.meter.add(record)
        return vectors, record


def mock_embedding(text: str, dim: int = MOCK_EMBED_DIM, model_tag: str = "mock") -> np.ndarray:
    """Seeded-hash pseudo-random unit vector: identical text gives an
    identical vector; distinct texts are near-orthogonal in expectation."""
    digest = hashlib.sha256(f"{model_tag}\x00{text}".encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "big")
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


class MockGateway:
    """Deterministic offline provider for tests and reproducible runs.

    Chat responses come from a script: an ordered list of (needle, response)
    pairs matched as substrings against the rendered prompt; the first match
    wins, else a default response is returned. Embeddings are seeded-hash
    unit vectors. Wall time is fixed at zero so runs are byte-reproducible.
    """

    def __init__(
        self,
        script: list[tuple[str, str]] | None = None,
        default_response: str = "<answer>No scripted response.</answer>",
        dim: int = MOCK_EMBED_DIM,
        prices: PriceTable | None = None,
        embed_batch_size: int = 128,
    ):
        self.script = list(script or [])
        self.default_response = default_response
        self.dim = dim
        self.prices = prices or PriceTable()
        self.embed_batch_size = embed_batch_size
        self.meter = Meter()
        self.chat_calls = 0
        self.embed_calls = 0
        self.config = ProviderConfig(
            chat_model="mock-chat", embed_model=f"mock-embed-{dim}", prices=self.prices
        )

    def _lookup(self, prompt: str) -> str:
        for needle, response in self.script:
            if needle in prompt:
                return response
        return self.default_response

    def chat(
        self,
        messages: list[dict],
        phase: str = "generation",
        query_id: str | None = None,
        **params,
    ) -> tuple[str, UsageRecord]:
        self.chat_calls += 1
        prompt = "\n".join(m["content"] for m in messages)
        text = self._lookup(prompt)
        prompt_tokens = approx_tokens(prompt)
        completion_tokens = approx_tokens(text)
        record = UsageRecord(
            kind="chat",
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            wall_time=0.0,
            cost=_chat_cost(self.prices, prompt_tokens, completion_tokens),
            phase=phase,
            query_id=query_id,
        )
        self.meter.add(record)
        return text, record

    def embed(
        self, texts: list[str], phase: str = "generation", query_id: str | None = None
    ) -> tuple[list[np.ndarray], UsageRecord]:
        if any(not t for t in texts):
            raise ValueError("cannot embed empty text")
        # one "provider call" per batch, for call-count assertions
        for _ in range(0, max(len(texts), 1), self.embed_batch_size):
            if texts:
                self.embed_calls += 1
        vectors = [mock_embedding(t, self.dim, self.config.embed_model) for t in texts]
        tokens = sum(approx_tokens(t) for t in texts)
        record = UsageRecord(
            kind="embed",
            prompt_tokens=tokens,
            completion_tokens=0,
            wall_time=0.0,
            cost=tokens / 1000.0 * self.prices.embed_per_1k,
            phase=phase,
            query_id=query_id,
        )
        self.meter.add(record)
        return vectors, record
