"""End-to-end orchestration: corpus build (chunk, extract, validate, merge,
embed) and query answering (entity extraction, dual retrieval, expansion,
fusion, generation)."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from factrag.config import EngineConfig, resolve_api_key
from factrag.extraction import (
    Chunk,
    Diagnostic,
    ExtractionParseError,
    PromptTemplates,
    build_extraction_prompt,
    chunk_document,
    merge_into_delta,
    parse_extraction_output,
    validate_extraction,
)
from factrag.fusion import (
    BundleChunk,
    GenerationResult,
    RetrievalBundle,
    build_generation_prompt,
    expand_from_entities,
    expand_from_hyperedges,
    fuse,
    parse_generation,
    render_fact,
)
from factrag.gateway import MockGateway, OpenAIGateway, PriceTable, report_metrics
from factrag.model import NaryFact
from factrag.retrieval import QueryEntities, Retriever, extract_query_entities
from factrag.store import EmbeddingCache, GraphStore
from factrag.textutil import approx_tokens, content_hash
from factrag.vindex import RankedHit, VectorCollection

logger = logging.getLogger(__name__)


@dataclass
class BuildReport:
    documents: int = 0
    chunks_total: int = 0
    chunks_processed: int = 0
    chunks_skipped: int = 0
    chunks_failed: int = 0
    facts: int = 0
    corpus_tokens: int = 0
    entities: int = 0
    hyperedges: int = 0
    incidences: int = 0
    diagnostics: list[str] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)


@dataclass
class QueryOutcome:
    question: str
    query_entities: QueryEntities | None
    entity_hits: list[RankedHit]
    hyperedge_hits: list[RankedHit]
    chunk_hits: list[RankedHit]
    bundle: RetrievalBundle
    prompt: str
    result: GenerationResult
    usage: dict

    def retrieved_texts(self) -> list[str]:
        texts = [render_fact(a) for a in self.bundle.facts]
        texts.extend(c.text for c in self.bundle.chunks)
        return texts


def load_corpus(path: Path | str) -> list[tuple[str, str]]:
    """Corpus input: a directory of UTF-8 .txt files or a JSON-lines file
    with {doc_id, text} records."""
    path = Path(path)
    documents: list[tuple[str, str]] = []
    if path.is_dir():
        for file in sorted(path.glob("*.txt")):
            documents.append((file.stem, file.read_text(encoding="utf-8")))
    elif path.is_file():
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    record = json.loads(line)
                    documents.append((str(record["doc_id"]), record["text"]))
    else:
        raise FileNotFoundError(f"corpus path {path} does not exist")
    return documents


def make_gateway(config: EngineConfig):
    if config.provider_kind == "mock":
        script: list[tuple[str, str]] = []
        if config.mock_script:
            data = json.loads(Path(config.mock_script).read_text(encoding="utf-8"))
            script = [(item["match"], item["response"]) for item in data]
        return MockGateway(script=script, prices=config.provider.prices)
    return OpenAIGateway(config.provider, api_key=resolve_api_key(config))


class Engine:
    """A store-backed retrieval-augmented generation engine."""

    def __init__(self, config: EngineConfig, gateway=None):
        self.config = config
        self.gateway = gateway if gateway is not None else make_gateway(config)
        self.templates = PromptTemplates(config.templates_dir or None)
        model_tag = self.gateway.config.embed_model
        self.store = GraphStore(config.store_dir, embedding_model_tag=model_tag)
        self.cache = EmbeddingCache(config.store_dir, model_tag=model_tag)
        self._retriever: Retriever | None = None

    # -- construction ------------------------------------------------------

    def _extract_chunk(self, chunk: Chunk) -> tuple[list[NaryFact], list[Diagnostic]]:
        prompt = build_extraction_prompt(chunk, self.templates)
        last_error: Exception | None = None
        for _ in range(self.config.extraction.max_attempts):
            text, _ = self.gateway.chat(
                [{"role": "user", "content": prompt}], phase="construction"
            )
            try:
                raw = parse_extraction_output(text)
            except ExtractionParseError as exc:
                last_error = exc
                continue
            return validate_extraction(raw, chunk, strict=self.config.extraction.strict)
        raise ExtractionParseError(
            f"chunk {chunk.id}: unparsable extraction output after retries: {last_error}"
        )

    def build(self, corpus_path: Path | str) -> BuildReport:
        report = BuildReport()
        documents = load_corpus(corpus_path)
        report.documents = len(documents)
        pending: list[Chunk] = []
        for doc_id, text in documents:
            report.corpus_tokens += approx_tokens(text)
            for chunk in chunk_document(
                doc_id,
                text,
                self.config.extraction.max_chunk_tokens,
                self.config.extraction.overlap_tokens,
            ):
                report.chunks_total += 1
                if chunk.id in self.store.chunks:
                    report.chunks_skipped += 1
                else:
                    pending.append(chunk)

        def work(chunk: Chunk):
            try:
                return chunk, self._extract_chunk(chunk), None
            except Exception as exc:
                return chunk, None, exc

        workers = max(1, self.config.extraction.workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(work, pending))

        # merge application is serialized; node-level result is order-independent
        for chunk, extracted, error in outcomes:
            if error is not None:
                report.chunks_failed += 1
                report.diagnostics.append(f"chunk {chunk.id} failed: {error}")
                logger.warning("skipping failed chunk %s: %s", chunk.id, error)
                continue
            facts, diagnostics = extracted
            report.diagnostics.extend(f"{chunk.id}: {d.message}" for d in diagnostics)
            delta = merge_into_delta(facts)
            self.store.apply_delta(delta)
            self.store.record_chunks([chunk])
            report.chunks_processed += 1
            report.facts += len(facts)

        self._embed_store()
        graph = self.store.graph
        report.entities = len(graph.entities)
        report.hyperedges = len(graph.hyperedges)
        report.incidences = graph.incidence_count
        if report.corpus_tokens > 0:
            report.metrics = report_metrics(
                self.gateway.meter.by_phase("construction"),
                corpus_tokens=report.corpus_tokens,
            )
        self._retriever = None
        return report

    def _embed_store(self) -> None:
        graph = self.store.graph
        texts = [e.name for e in graph.entities.values()]
        texts.extend(e.description for e in graph.hyperedges.values())
        texts.extend(c.text for c in self.store.chunks.values())
        if texts:
            self.cache.get_or_embed(texts, self.gateway, phase="construction")

    # -- querying ----------------------------------------------------------

    def embed_one(self, text: str, phase: str = "generation") -> np.ndarray:
        return self.cache.get_or_embed([text], self.gateway, phase=phase)[0]

    def retriever(self) -> Retriever:
        if self._retriever is None:
            graph = self.store.graph
            entity_items = []
            if graph.entities:
                vecs = self.cache.get_or_embed(
                    [e.name for e in graph.entities.values()], self.gateway
                )
                entity_items = [
                    (e.id, vec, e.score)
                    for e, vec in zip(graph.entities.values(), vecs)
                ]
            hyperedge_items = []
            if graph.hyperedges:
                vecs = self.cache.get_or_embed(
                    [e.description for e in graph.hyperedges.values()], self.gateway
                )
                hyperedge_items = [
                    (e.id, vec, e.score)
                    for e, vec in zip(graph.hyperedges.values(), vecs)
                ]
            chunk_items = []
            if self.store.chunks:
                vecs = self.cache.get_or_embed(
                    [c.text for c in self.store.chunks.values()], self.gateway
                )
                chunk_items = [
                    (c.id, vec, 1.0) for c, vec in zip(self.store.chunks.values(), vecs)
                ]
            self._retriever = Retriever(
                VectorCollection("entity", entity_items),
                VectorCollection("hyperedge", hyperedge_items),
                VectorCollection("chunk", chunk_items),
                embed_fn=self.embed_one,
            )
        return self._retriever

    def answer(self, question: str, query_id: str | None = None) -> QueryOutcome:
        if not question:
            raise ValueError("question is empty")
        if query_id is None:
            query_id = "q-" + content_hash(question)
        cfg = self.config.retrieval
        retriever = self.retriever()

        query_entities: QueryEntities | None = None
        entity_hits: list[RankedHit] = []
        if cfg.k_entities > 0 and len(retriever.entity_collection) > 0:
            query_entities = extract_query_entities(
                question,
                self.gateway,
                self.templates,
                max_attempts=self.config.extraction.max_attempts,
                query_id=query_id,
            )
            entity_hits = retriever.retrieve_entities(query_entities, cfg)
        hyperedge_hits = retriever.retrieve_hyperedges(question, cfg)
        chunk_hits = retriever.retrieve_chunks(question, cfg)

        graph = self.store.graph
        bundle = fuse(
            expand_from_entities(entity_hits, graph),
            expand_from_hyperedges(hyperedge_hits, graph),
            [
                BundleChunk(
                    chunk_id=h.id,
                    text=self.store.chunks[h.id].text,
                    similarity=h.similarity,
                )
                for h in chunk_hits
            ],
            budget_tokens=self.config.generation.knowledge_budget_tokens,
        )
        prompt = build_generation_prompt(bundle, question, self.templates)
        text, record = self.gateway.chat(
            [{"role": "user", "content": prompt}],
            phase="generation",
            query_id=query_id,
            temperature=self.config.generation.temperature,
            max_tokens=self.config.generation.max_output_tokens,
        )
        result = parse_generation(
            text,
            prompt_tokens=record.prompt_tokens,
            completion_tokens=record.completion_tokens,
        )
        usage_records = [
            r for r in self.gateway.meter.records if r.query_id == query_id
        ]
        usage = {
            "prompt_tokens": sum(r.prompt_tokens for r in usage_records),
            "completion_tokens": sum(r.completion_tokens for r in usage_records),
            "wall_time": sum(r.wall_time for r in usage_records),
            "cost": sum(r.cost for r in usage_records),
        }
        return QueryOutcome(
            question=question,
            query_entities=query_entities,
            entity_hits=entity_hits,
            hyperedge_hits=hyperedge_hits,
            chunk_hits=chunk_hits,
            bundle=bundle,
            prompt=prompt,
            result=result,
            usage=usage,
        )

    # -- statistics --------------------------------------------------------

    def stats(self) -> dict:
        graph = self.store.graph
        histogram: dict[int, int] = {}
        for edge in graph.hyperedges.values():
            arity = len(edge.members)
            histogram[arity] = histogram.get(arity, 0) + 1
        return {
            "entities": len(graph.entities),
            "hyperedges": len(graph.hyperedges),
            "incidences": graph.incidence_count,
            "chunks": len(self.store.chunks),
            "arity_histogram": dict(sorted(histogram.items())),
            "knowledge_tokens": sum(
                approx_tokens(c.text) for c in self.store.chunks.values()
            ),
        }

    def to_dot(self) -> str:
        """Graph-description output for external rendering."""
        lines = ["graph knowledge {"]
        for ent in self.store.graph.entities.values():
            lines.append(f'  "{ent.id}" [label="{ent.name}", shape=ellipse];')
        for edge in self.store.graph.hyperedges.values():
            lines.append(f'  "{edge.id}" [label="{edge.score:g}", shape=box];')
            for member in edge.members:
                lines.append(f'  "{edge.id}" -- "{member}";')
        lines.append("}")
        return "\n".join(lines)
