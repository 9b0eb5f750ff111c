import json

import httpx
import numpy as np
import pytest

from factrag.gateway import (
    MockGateway,
    OpenAIGateway,
    PriceTable,
    ProviderConfig,
    ProviderError,
    ReportError,
    UsageRecord,
    mock_embedding,
    report_metrics,
)


class TestMockProvider:
    def test_scripted_response(self):
        gw = MockGateway(script=[("magic words", "scripted reply")])
        text, usage = gw.chat([{"role": "user", "content": "say the magic words"}])
        assert text == "scripted reply"
        assert usage.prompt_tokens > 0
        assert usage.completion_tokens > 0

    def test_default_response(self):
        gw = MockGateway()
        text, _ = gw.chat([{"role": "user", "content": "anything"}])
        assert text == gw.default_response

    def test_chat_determinism(self):
        gw1 = MockGateway(script=[("q", "r")])
        gw2 = MockGateway(script=[("q", "r")])
        a = gw1.chat([{"role": "user", "content": "a q here"}])
        b = gw2.chat([{"role": "user", "content": "a q here"}])
        assert a[0] == b[0]
        assert a[1] == b[1]

    def test_embedding_determinism_and_shape(self):
        vec1 = mock_embedding("same text")
        vec2 = mock_embedding("same text")
        other = mock_embedding("different text")
        assert np.array_equal(vec1, vec2)
        assert vec1.shape == (64,)
        assert np.linalg.norm(vec1) == pytest.approx(1.0)
        assert not np.array_equal(vec1, other)

    def test_batching_call_count(self):
        gw = MockGateway(embed_batch_size=32)
        gw.embed([f"t{i}" for i in range(100)])
        assert gw.embed_calls == 4  # ceil(100/32)

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError):
            MockGateway().embed(["ok", ""])


def make_openai_gateway(handler, max_retries=3):
    config = ProviderConfig(
        base_url="https://fake.test/v1",
        max_retries=max_retries,
        prices=PriceTable(input_per_1k=0.00015, output_per_1k=0.0006),
    )
    gw = OpenAIGateway(config, api_key="test-key")
    gw._client = httpx.Client(
        base_url=config.base_url, transport=httpx.MockTransport(handler)
    )
    return gw


def chat_payload(content="hello", prompt_tokens=10, completion_tokens=4):
    return {
        "choices": [{"message": {"content": content}}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    }


class TestOpenAIGateway:
    def test_transient_429_then_success(self, monkeypatch):
        monkeypatch.setattr("time.sleep", lambda s: None)
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            if calls["n"] == 1:
                return httpx.Response(429, json={"error": "rate limit"})
            return httpx.Response(200, json=chat_payload())

        gw = make_openai_gateway(handler)
        text, usage = gw.chat([{"role": "user", "content": "hi"}])
        assert text == "hello"
        assert calls["n"] == 2
        assert usage.cost == pytest.approx(10 / 1000 * 0.00015 + 4 / 1000 * 0.0006)

    def test_permanent_401_no_retry(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            return httpx.Response(401, json={"error": "unauthorized"})

        gw = make_openai_gateway(handler)
        with pytest.raises(ProviderError):
            gw.chat([{"role": "user", "content": "hi"}])
        assert calls["n"] == 1

    def test_exhausted_retries(self, monkeypatch):
        monkeypatch.setattr("time.sleep", lambda s: None)
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            return httpx.Response(503, json={})

        gw = make_openai_gateway(handler, max_retries=2)
        with pytest.raises(ProviderError):
            gw.chat([{"role": "user", "content": "hi"}])
        assert calls["n"] == 3

    def test_embed_order_and_batching(self):
        def handler(request):
            body = json.loads(request.content)
            data = [
                {"index": i, "embedding": [float(len(t))] * 3}
                for i, t in enumerate(body["input"])
            ]
            return httpx.Response(
                200, json={"data": list(reversed(data)), "usage": {"prompt_tokens": 5}}
            )

        gw = make_openai_gateway(handler)
        gw.config.embed_batch_size = 2
        vectors, usage = gw.embed(["a", "bb", "ccc"])
        assert [v[0] for v in vectors] == [1.0, 2.0, 3.0]
        assert usage.prompt_tokens == 10  # two batches x 5


def record(phase, wall, cost, kind="chat"):
    return UsageRecord(
        kind=kind, prompt_tokens=0, completion_tokens=0, wall_time=wall, cost=cost, phase=phase
    )


class TestMetrics:
    def test_construction_arithmetic(self):
        records = [record("construction", 4.0, 0.01), record("construction", 6.0, 0.02)]
        metrics = report_metrics(records, corpus_tokens=5000)
        assert metrics["TP1kT"] == pytest.approx(2.0)
        assert metrics["CP1kT"] == pytest.approx(0.03 / 5.0)

    def test_generation_arithmetic(self):
        records = [record("generation", 0.5, 0.002), record("generation", 0.7, 0.004)]
        metrics = report_metrics(records, query_count=2)
        assert metrics["TPQ"] == pytest.approx(0.6)
        assert metrics["CP1kQ"] == pytest.approx(0.006 * 1000 / 2)

    def test_zero_queries_absent_not_zero(self):
        metrics = report_metrics([record("construction", 1.0, 0.0)], corpus_tokens=1000)
        assert "TPQ" not in metrics
        assert "CP1kQ" not in metrics

    def test_zero_denominator_errors(self):
        with pytest.raises(ReportError):
            report_metrics([record("construction", 1.0, 0.0)], corpus_tokens=0)
        with pytest.raises(ReportError):
            report_metrics([record("generation", 1.0, 0.0)], query_count=0)

    def test_price_table_hand_arithmetic(self):
        # gpt-4o-mini style pricing: $0.15 in / $0.60 out per 1M tokens
        prices = PriceTable(input_per_1k=0.00015, output_per_1k=0.0006)
        gw = MockGateway(script=[("x", "y z w")], prices=prices)
        _, usage = gw.chat([{"role": "user", "content": "x " * 2000}])
        assert usage.prompt_tokens == 2000
        assert usage.cost == pytest.approx(2000 / 1000 * 0.00015 + usage.completion_tokens / 1000 * 0.0006)

    def test_sum_of_costs_equals_report_total(self):
        records = [record("generation", 0.1, 0.001), record("generation", 0.2, 0.003)]
        metrics = report_metrics(records, query_count=1)
        assert metrics["CP1kQ"] == pytest.approx(sum(r.cost for r in records) * 1000)
