"""Durable persistence: append-only JSON-lines logs for the bipartite graph,
chunk records, a manifest with verified counts, and the embedding cache.

Single-writer discipline: all mutation goes through apply_delta, which
appends records and atomically replaces the manifest. Readers work on the
in-memory snapshot. Records are last-wins by id, so re-applying a delta is
harmless and compaction is a rewrite of current state.
"""

from __future__ import annotations

import datetime as _dt
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from factrag.extraction import Chunk
from factrag.model import BipartiteGraph, Entity, Hyperedge, IntegrityError
from factrag.textutil import content_hash

STORE_VERSION = 1

_ENTITIES = "entities.jsonl"
_HYPEREDGES = "hyperedges.jsonl"
_INCIDENCE = "incidence.jsonl"
_CHUNKS = "chunks.jsonl"
_MANIFEST = "manifest.json"
_EMBED_DIR = "embeddings"


class StoreLoadError(Exception):
    """Corrupted or inconsistent store files detected at load time."""


@dataclass
class MergeReport:
    added_entities: int = 0
    merged_entities: int = 0
    added_hyperedges: int = 0
    merged_hyperedges: int = 0
    added_incidences: int = 0

    @property
    def added(self) -> int:
        return self.added_entities + self.added_hyperedges


@dataclass
class StoreManifest:
    version: int
    counts: dict
    embedding_model_tag: str
    created: str
    updated: str


def _read_jsonl(path: Path) -> list[dict]:
    """Strict JSON-lines reader; any malformed or truncated line is an
    error naming the file and byte offset, never a silently partial load."""
    records: list[dict] = []
    if not path.exists():
        return records
    offset = 0
    with path.open("rb") as fh:
        for line in fh:
            if not line.endswith(b"\n"):
                raise StoreLoadError(f"{path}: truncated record at byte {offset}")
            stripped = line.strip()
            if stripped:
                try:
                    records.append(json.loads(stripped))
                except json.JSONDecodeError as exc:
                    raise StoreLoadError(f"{path}: bad JSON at byte {offset}: {exc}") from exc
            offset += len(line)
    return records


def _append_jsonl(path: Path, records: list[dict]) -> None:
    with path.open("a", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def _atomic_write_json(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    os.replace(tmp, path)


class GraphStore:
    """Graph, chunk, and manifest persistence rooted at one directory."""

    def __init__(self, directory: Path | str, embedding_model_tag: str = ""):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.embedding_model_tag = embedding_model_tag
        self.graph = BipartiteGraph()
        self.chunks: dict[str, Chunk] = {}
        self._created: str | None = None
        self._load()

    # -- loading -----------------------------------------------------------

    def _path(self, name: str) -> Path:
        return self.directory / name

    def _load(self) -> None:
        graph = BipartiteGraph()
        for record in _read_jsonl(self._path(_ENTITIES)):
            graph.entities[record["id"]] = Entity(
                id=record["id"],
                name=record["name"],
                etype=record.get("etype", ""),
                explanation=record.get("explanation", ""),
                score=record["score"],
                source_chunks=set(record.get("source_chunks", [])),
            )
            graph._incident.setdefault(record["id"], set())
        edges: dict[str, Hyperedge] = {}
        for record in _read_jsonl(self._path(_HYPEREDGES)):
            edges[record["id"]] = Hyperedge(
                id=record["id"],
                description=record["description"],
                score=record["score"],
                members=[],
                source_chunks=set(record.get("source_chunks", [])),
            )
        members: dict[str, list[str]] = {}
        for record in _read_jsonl(self._path(_INCIDENCE)):
            members[record["hyperedge"]] = list(record["members"])
        for eid, edge in edges.items():
            if eid not in members:
                raise StoreLoadError(f"hyperedge {eid} has no incidence record")
            edge.members = members[eid]
            for v in edge.members:
                if v not in graph.entities:
                    raise StoreLoadError(
                        f"incidence for {eid} names missing entity {v}"
                    )
                graph._incident[v].add(eid)
            graph.hyperedges[eid] = edge
        for eid in members:
            if eid not in edges:
                raise StoreLoadError(f"incidence names missing hyperedge {eid}")
        try:
            graph.validate()
        except IntegrityError as exc:
            raise StoreLoadError(str(exc)) from exc

        chunks: dict[str, Chunk] = {}
        for record in _read_jsonl(self._path(_CHUNKS)):
            chunks[record["id"]] = Chunk(
                id=record["id"],
                doc_id=record["doc_id"],
                text=record["text"],
                token_count=record["token_count"],
                offset=tuple(record["offset"]),
            )

        manifest_path = self._path(_MANIFEST)
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            counts = manifest.get("counts", {})
            live = {
                "entities": len(graph.entities),
                "hyperedges": len(graph.hyperedges),
                "incidences": graph.incidence_count,
            }
            if counts != live:
                raise StoreLoadError(
                    f"manifest counts {counts} disagree with live scan {live}"
                )
            self._created = manifest.get("created")
            if not self.embedding_model_tag:
                self.embedding_model_tag = manifest.get("embedding_model_tag", "")

        self.graph = graph
        self.chunks = chunks

    # -- mutation ----------------------------------------------------------

    def apply_delta(self, delta: BipartiteGraph) -> MergeReport:
        """Merge a validated delta into the store, appending records and
        refreshing the manifest. Rolls the log files back on failure."""
        delta.validate()
        with self._lock:
            sizes = {
                name: (self._path(name).stat().st_size if self._path(name).exists() else 0)
                for name in (_ENTITIES, _HYPEREDGES, _INCIDENCE)
            }
            try:
                report = MergeReport()
                incidence_before = self.graph.incidence_count
                for ent in delta.entities.values():
                    if ent.id in self.graph.entities:
                        report.merged_entities += 1
                    else:
                        report.added_entities += 1
                    self.graph.add_entity(ent)
                for edge in delta.hyperedges.values():
                    if edge.id in self.graph.hyperedges:
                        report.merged_hyperedges += 1
                    else:
                        report.added_hyperedges += 1
                    self.graph.add_hyperedge(edge, on_conflict="prefer_higher_score")
                report.added_incidences = self.graph.incidence_count - incidence_before

                _append_jsonl(
                    self._path(_ENTITIES),
                    [
                        self._entity_record(self.graph.entities[eid])
                        for eid in delta.entities
                    ],
                )
                _append_jsonl(
                    self._path(_HYPEREDGES),
                    [
                        self._hyperedge_record(self.graph.hyperedges[eid])
                        for eid in delta.hyperedges
                    ],
                )
                _append_jsonl(
                    self._path(_INCIDENCE),
                    [
                        {"hyperedge": eid, "members": self.graph.hyperedges[eid].members}
                        for eid in delta.hyperedges
                    ],
                )
                self._write_manifest()
                return report
            except Exception:
                for name, size in sizes.items():
                    path = self._path(name)
                    if path.exists():
                        with path.open("rb+") as fh:
                            fh.truncate(size)
                self._load()
                raise

    def record_chunks(self, chunks: list[Chunk]) -> None:
        """Mark chunks as processed (resume skip set) and retrievable."""
        with self._lock:
            new = [c for c in chunks if c.id not in self.chunks]
            _append_jsonl(
                self._path(_CHUNKS),
                [
                    {
                        "id": c.id,
                        "doc_id": c.doc_id,
                        "text": c.text,
                        "token_count": c.token_count,
                        "offset": list(c.offset),
                    }
                    for c in new
                ],
            )
            for c in new:
                self.chunks[c.id] = c

    @staticmethod
    def _entity_record(ent: Entity) -> dict:
        return {
            "id": ent.id,
            "name": ent.name,
            "etype": ent.etype,
            "explanation": ent.explanation,
            "score": ent.score,
            "source_chunks": sorted(ent.source_chunks),
        }

    @staticmethod
    def _hyperedge_record(edge: Hyperedge) -> dict:
        return {
            "id": edge.id,
            "description": edge.description,
            "score": edge.score,
            "source_chunks": sorted(edge.source_chunks),
        }

    def _write_manifest(self) -> None:
        now = _dt.datetime.now(_dt.timezone.utc).isoformat()
        if self._created is None:
            self._created = now
        _atomic_write_json(
            self._path(_MANIFEST),
            {
                "version": STORE_VERSION,
                "counts": {
                    "entities": len(self.graph.entities),
                    "hyperedges": len(self.graph.hyperedges),
                    "incidences": self.graph.incidence_count,
                },
                "embedding_model_tag": self.embedding_model_tag,
                "created": self._created,
                "updated": now,
            },
        )

    def manifest(self) -> StoreManifest | None:
        path = self._path(_MANIFEST)
        if not path.exists():
            return None
        data = json.loads(path.read_text(encoding="utf-8"))
        return StoreManifest(
            version=data["version"],
            counts=data["counts"],
            embedding_model_tag=data.get("embedding_model_tag", ""),
            created=data.get("created", ""),
            updated=data.get("updated", ""),
        )

    def snapshot_and_reload(self) -> BipartiteGraph:
        """Re-read everything from disk and verify it matches memory."""
        reloaded = GraphStore(self.directory, self.embedding_model_tag)
        if not reloaded.graph.structurally_equal(self.graph):
            raise StoreLoadError("reloaded graph differs from in-memory graph")
        self.graph = reloaded.graph
        self.chunks = reloaded.chunks
        return self.graph


class EmbeddingCache:
    """Content-addressed persistent embedding cache.

    Keys combine the embedding model tag and the text hash, so switching
    models never serves stale vectors. Vectors persist as JSON-lines shards
    (16 shards by leading key nibble)."""

    def __init__(self, directory: Path | str, model_tag: str):
        self.directory = Path(directory) / _EMBED_DIR
        self.directory.mkdir(parents=True, exist_ok=True)
        self.model_tag = model_tag
        self.dim: int | None = None
        self._lock = threading.Lock()
        self._cache: dict[str, np.ndarray] = {}
        for shard in sorted(self.directory.glob("shard-*.jsonl")):
            for record in _read_jsonl(shard):
                vec = np.asarray(record["vector"], dtype=np.float64)
                if record["dim"] != vec.shape[0]:
                    raise StoreLoadError(f"{shard}: dim mismatch for key {record['key']}")
                if self.dim is None:
                    self.dim = record["dim"]
                elif record["dim"] != self.dim:
                    raise StoreLoadError(
                        f"{shard}: mixed dims {record['dim']} vs {self.dim}"
                    )
                self._cache[record["key"]] = vec

    def key(self, text: str) -> str:
        return content_hash(f"{self.model_tag}\x00{text}")

    def get_or_embed(
        self, texts: list[str], gateway, phase: str = "construction"
    ) -> list[np.ndarray]:
        """Serve cache hits without provider calls; embed and persist misses,
        returning vectors in input order."""
        if not texts:
            return []
        keys = [self.key(t) for t in texts]
        with self._lock:
            missing: dict[str, str] = {}
            for key, text in zip(keys, texts):
                if key not in self._cache and key not in missing:
                    missing[key] = text
            if missing:
                miss_keys = list(missing)
                vectors, _ = gateway.embed([missing[k] for k in miss_keys], phase=phase)
                new_records = []
                for key, vec in zip(miss_keys, vectors):
                    if self.dim is None:
                        self.dim = int(vec.shape[0])
                    elif vec.shape[0] != self.dim:
                        raise ValueError(
                            f"provider returned dim {vec.shape[0]}, cache dim {self.dim}"
                        )
                    self._cache[key] = vec
                    new_records.append((key, vec))
                by_shard: dict[str, list[dict]] = {}
                for key, vec in new_records:
                    by_shard.setdefault(key[0], []).append(
                        {"key": key, "dim": int(vec.shape[0]), "vector": vec.tolist()}
                    )
                for nibble, records in by_shard.items():
                    _append_jsonl(self.directory / f"shard-{nibble}.jsonl", records)
            return [self._cache[k] for k in keys]
