"""Query-side retrieval: question entity extraction, then score-weighted
entity / hyperedge retrieval and unweighted chunk retrieval."""

from __future__ import annotations

from dataclasses import dataclass, field

from factrag.extraction import (
    Diagnostic,
    ExtractionParseError,
    PromptTemplates,
    extract_json_block,
)
from factrag.vindex import RankedHit, VectorCollection, top_k_weighted


@dataclass
class RetrievalConfig:
    """Top-k limits and thresholds for entity, hyperedge, and chunk search."""

    k_entities: int = 60
    tau_entities: float = 50.0
    k_hyperedges: int = 60
    tau_hyperedges: float = 5.0
    k_chunks: int = 5
    tau_chunks: float = 0.5


@dataclass
class QueryEntities:
    query: str
    entities: list[str]
    diagnostics: list[Diagnostic] = field(default_factory=list)


def extract_query_entities(
    question: str,
    gateway,
    templates: PromptTemplates,
    max_attempts: int = 3,
    query_id: str | None = None,
) -> QueryEntities:
    """Ask the chat model for the question's entities as a JSON list.

    Unparsable responses are retried; after exhausting attempts the whole
    question becomes a single pseudo-entity so retrieval can still proceed."""
    if not question:
        raise ValueError("question is empty")
    prompt = templates.query_entities(question)
    diagnostics: list[Diagnostic] = []
    for attempt in range(max_attempts):
        text, _ = gateway.chat(
            [{"role": "user", "content": prompt}], query_id=query_id
        )
        try:
            data = extract_json_block(text)
        except ExtractionParseError:
            diagnostics.append(
                Diagnostic("warning", f"attempt {attempt + 1}: unparsable entity list")
            )
            continue
        if isinstance(data, dict):
            data = data.get("entities", [])
        if isinstance(data, list):
            seen: set[str] = set()
            entities: list[str] = []
            for item in data:
                name = str(item).strip()
                if name and name not in seen:
                    seen.add(name)
                    entities.append(name)
            if entities:
                return QueryEntities(query=question, entities=entities, diagnostics=diagnostics)
        diagnostics.append(
            Diagnostic("warning", f"attempt {attempt + 1}: empty or non-list entity payload")
        )
    diagnostics.append(
        Diagnostic("warning", "entity extraction failed; using whole query as pseudo-entity")
    )
    return QueryEntities(query=question, entities=[question], diagnostics=diagnostics)


class Retriever:
    """Retrieval over prebuilt entity / hyperedge / chunk vector snapshots."""

    def __init__(
        self,
        entity_collection: VectorCollection,
        hyperedge_collection: VectorCollection,
        chunk_collection: VectorCollection,
        embed_fn,
    ):
        self.entity_collection = entity_collection
        self.hyperedge_collection = hyperedge_collection
        self.chunk_collection = chunk_collection
        self._embed = embed_fn

    def retrieve_entities(
        self, query_entities: QueryEntities, cfg: RetrievalConfig
    ) -> list[RankedHit]:
        """Embed the deduplicated entity names as one comma-joined string and
        rank entities by cosine x confidence score."""
        if len(self.entity_collection) == 0 or cfg.k_entities == 0:
            return []
        query_text = ", ".join(query_entities.entities)
        vec = self._embed(query_text)
        return top_k_weighted(vec, self.entity_collection, cfg.k_entities, cfg.tau_entities)

    def retrieve_hyperedges(self, question: str, cfg: RetrievalConfig) -> list[RankedHit]:
        """Rank hyperedges by question-to-description cosine x confidence."""
        if len(self.hyperedge_collection) == 0 or cfg.k_hyperedges == 0:
            return []
        vec = self._embed(question)
        return top_k_weighted(
            vec, self.hyperedge_collection, cfg.k_hyperedges, cfg.tau_hyperedges
        )

    def retrieve_chunks(self, question: str, cfg: RetrievalConfig) -> list[RankedHit]:
        """Plain unweighted cosine top-k over chunk vectors."""
        if len(self.chunk_collection) == 0 or cfg.k_chunks == 0:
            return []
        vec = self._embed(question)
        return top_k_weighted(vec, self.chunk_collection, cfg.k_chunks, cfg.tau_chunks)
