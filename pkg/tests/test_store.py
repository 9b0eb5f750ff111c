import numpy as np
import pytest

from conftest import make_fact, random_hypergraph
from factrag.gateway import MockGateway
from factrag.model import entity_id
from factrag.store import EmbeddingCache, GraphStore, StoreLoadError
from factrag.extraction import merge_into_delta


def delta_of(*facts):
    return merge_into_delta(list(facts))


class TestApplyDelta:
    def test_apply_to_empty(self, tmp_path):
        store = GraphStore(tmp_path)
        delta = delta_of(make_fact("d", ["a", "b"]))
        report = store.apply_delta(delta)
        assert report.added_entities == 2
        assert report.added_hyperedges == 1
        assert store.graph.structurally_equal(delta)

    def test_idempotent(self, tmp_path):
        store = GraphStore(tmp_path)
        delta = delta_of(make_fact("d", ["a", "b"]))
        store.apply_delta(delta)
        second = store.apply_delta(delta)
        assert second.added == 0
        assert second.merged_entities == 2

    def test_order_independent(self, tmp_path):
        a = delta_of(make_fact("first", ["x", "shared"]))
        b = delta_of(make_fact("second", ["y", "shared"]))
        s1 = GraphStore(tmp_path / "ab")
        s1.apply_delta(a)
        s1.apply_delta(b)
        s2 = GraphStore(tmp_path / "ba")
        s2.apply_delta(b)
        s2.apply_delta(a)
        assert s1.graph.structurally_equal(s2.graph)
        assert s1.graph.entities == s2.graph.entities

    def test_manifest_counts(self, tmp_path):
        store = GraphStore(tmp_path)
        store.apply_delta(delta_of(make_fact("d", ["a", "b", "c"])))
        manifest = store.manifest()
        assert manifest.counts == {"entities": 3, "hyperedges": 1, "incidences": 3}


class TestReload:
    def test_snapshot_and_reload(self, tmp_path):
        import random

        store = GraphStore(tmp_path)
        rng = random.Random(11)
        for _ in range(5):
            store.apply_delta(delta_of(*random_hypergraph(rng, max_edges=8)))
        reloaded = store.snapshot_and_reload()
        assert reloaded.structurally_equal(store.graph)

    def test_reload_empty(self, tmp_path):
        store = GraphStore(tmp_path)
        assert store.snapshot_and_reload().incidence_count == 0

    def test_kill_and_reload(self, tmp_path):
        store = GraphStore(tmp_path)
        delta = delta_of(make_fact("persisted", ["a", "b"]))
        store.apply_delta(delta)
        fresh = GraphStore(tmp_path)
        assert fresh.graph.structurally_equal(delta)

    def test_truncated_incidence(self, tmp_path):
        store = GraphStore(tmp_path)
        store.apply_delta(delta_of(make_fact("d", ["a", "b"])))
        path = tmp_path / "incidence.jsonl"
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(StoreLoadError):
            GraphStore(tmp_path)

    def test_manifest_mismatch(self, tmp_path):
        store = GraphStore(tmp_path)
        store.apply_delta(delta_of(make_fact("d", ["a", "b"])))
        manifest = tmp_path / "manifest.json"
        manifest.write_text(
            manifest.read_text().replace('"entities": 2', '"entities": 7')
        )
        with pytest.raises(StoreLoadError):
            GraphStore(tmp_path)

    def test_dangling_incidence_entity(self, tmp_path):
        store = GraphStore(tmp_path)
        store.apply_delta(delta_of(make_fact("d", ["a", "b"])))
        entities = tmp_path / "entities.jsonl"
        lines = entities.read_text().splitlines()
        keep = [l for l in lines if entity_id("a") not in l]
        entities.write_text("\n".join(keep) + "\n")
        with pytest.raises(StoreLoadError):
            GraphStore(tmp_path)


class CountingEmbedder:
    """Embed provider stub logging every batch it is asked for."""

    def __init__(self, dim=8):
        self.dim = dim
        self.calls: list[list[str]] = []
        self.config = type("C", (), {"embed_model": "stub"})()

    def embed(self, texts, phase="construction", query_id=None):
        self.calls.append(list(texts))
        vecs = [np.full(self.dim, 1.0 + len(t)) for t in texts]
        return vecs, None


class TestEmbeddingCache:
    def test_second_call_hits_cache(self, tmp_path):
        provider = CountingEmbedder()
        cache = EmbeddingCache(tmp_path, model_tag="stub")
        cache.get_or_embed(["one", "two"], provider)
        assert len(provider.calls) == 1
        cache.get_or_embed(["one", "two"], provider)
        assert len(provider.calls) == 1

    def test_mixed_hit_miss(self, tmp_path):
        provider = CountingEmbedder()
        cache = EmbeddingCache(tmp_path, model_tag="stub")
        cache.get_or_embed(["one"], provider)
        cache.get_or_embed(["one", "two", "three"], provider)
        assert provider.calls[-1] == ["two", "three"]

    def test_empty_list(self, tmp_path):
        cache = EmbeddingCache(tmp_path, model_tag="stub")
        assert cache.get_or_embed([], CountingEmbedder()) == []

    def test_persistence(self, tmp_path):
        provider = CountingEmbedder()
        cache = EmbeddingCache(tmp_path, model_tag="stub")
        [vec] = cache.get_or_embed(["persist me"], provider)
        fresh = EmbeddingCache(tmp_path, model_tag="stub")
        [again] = fresh.get_or_embed(["persist me"], provider)
        assert np.allclose(vec, again, atol=1e-9)
        assert len(provider.calls) == 1

    def test_model_tag_keys_differ(self, tmp_path):
        a = EmbeddingCache(tmp_path / "a", model_tag="m1")
        b = EmbeddingCache(tmp_path / "b", model_tag="m2")
        assert a.key("text") != b.key("text")

    def test_dim_consistency(self, tmp_path):
        cache = EmbeddingCache(tmp_path, model_tag="stub")
        cache.get_or_embed(["x"], CountingEmbedder(dim=8))
        with pytest.raises(ValueError):
            cache.get_or_embed(["y"], CountingEmbedder(dim=16))

    def test_mock_gateway_order_preserved(self, tmp_path):
        gateway = MockGateway()
        cache = EmbeddingCache(tmp_path, model_tag=gateway.config.embed_model)
        texts = ["b text", "a text", "c text"]
        vecs = cache.get_or_embed(texts, gateway)
        direct, _ = gateway.embed(texts)
        for got, want in zip(vecs, direct):
            assert np.allclose(got, want, atol=1e-9)
