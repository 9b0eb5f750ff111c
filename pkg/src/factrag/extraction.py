"""Document-to-facts pipeline: chunking, extraction prompts, output parsing,
validation, and merging extracted facts into a graph delta."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from factrag.model import (
    ENTITY_SCORE_MAX,
    HYPEREDGE_SCORE_MAX,
    MIN_SCORE,
    BipartiteGraph,
    Entity,
    Hyperedge,
    NaryFact,
)
from factrag.textutil import content_hash, normalize_name, token_spans

DEFAULT_TEMPLATE_DIR = Path(__file__).parent / "templates"

_TEMPLATE_PLACEHOLDERS = {
    "extraction.txt": "{document}",
    "query_entities.txt": "{question}",
    "generation.txt": "{knowledge}",
    "judge.txt": "{answer}",
}


class ConfigError(Exception):
    """Bad configuration detected at load time."""


class ExtractionParseError(Exception):
    """No parsable structured block in an extraction response."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


@dataclass
class Chunk:
    id: str
    doc_id: str
    text: str
    token_count: int
    offset: tuple[int, int]


@dataclass
class RawEntity:
    name: str
    etype: str
    explanation: str
    score: float


@dataclass
class RawFragment:
    description: str
    score: float
    entities: list[RawEntity]


@dataclass
class RawExtraction:
    fragments: list[RawFragment]


@dataclass
class Diagnostic:
    level: str  # "warning" | "error"
    message: str


class PromptTemplates:
    """Prompt templates loaded from a directory; placeholders are verified
    at load time so a broken template fails fast, not mid-build."""

    def __init__(self, directory: Path | str | None = None):
        self.directory = Path(directory) if directory else DEFAULT_TEMPLATE_DIR
        self._templates: dict[str, str] = {}
        for name, placeholder in _TEMPLATE_PLACEHOLDERS.items():
            path = self.directory / name
            if not path.exists():
                raise ConfigError(f"missing prompt template {path}")
            text = path.read_text(encoding="utf-8")
            if placeholder not in text:
                raise ConfigError(
                    f"template {name} lacks required placeholder {placeholder}"
                )
            self._templates[name] = text

    def extraction(self, document: str) -> str:
        return self._render("extraction.txt", document=document)

    def query_entities(self, question: str) -> str:
        return self._render("query_entities.txt", question=question)

    def generation(self, knowledge: str, question: str) -> str:
        return self._render("generation.txt", knowledge=knowledge, question=question)

    def judge(self, question: str, answer: str) -> str:
        return self._render("judge.txt", question=question, answer=answer)

    def _render(self, name: str, **slots: str) -> str:
        return self._templates[name].format(**slots)


def chunk_document(
    doc_id: str,
    text: str,
    max_tokens: int = 1200,
    overlap_tokens: int = 100,
) -> list[Chunk]:
    """Greedy fixed-size token windows with overlap.

    Chunk boundaries are character offsets of token starts, so concatenating
    each chunk truncated at the next chunk's start offset reconstructs the
    document exactly.
    """
    if max_tokens <= overlap_tokens or overlap_tokens < 0:
        raise ValueError("require max_tokens > overlap_tokens >= 0")
    spans = token_spans(text)
    if not spans:
        return []
    step = max_tokens - overlap_tokens
    chunks: list[Chunk] = []
    start_idx = 0
    while True:
        end_idx = min(start_idx + max_tokens, len(spans))
        char_start = 0 if start_idx == 0 else spans[start_idx][0]
        char_end = len(text) if end_idx == len(spans) else spans[end_idx - 1][1]
        chunk_text = text[char_start:char_end]
        chunks.append(
            Chunk(
                id="chk-" + content_hash(f"{doc_id}\x00{char_start}\x00{chunk_text}"),
                doc_id=doc_id,
                text=chunk_text,
                token_count=end_idx - start_idx,
                offset=(char_start, char_end),
            )
        )
        if end_idx == len(spans):
            break
        start_idx += step
    return chunks


def build_extraction_prompt(chunk: Chunk, templates: PromptTemplates) -> str:
    if not chunk.text:
        raise ValueError("chunk text is empty")
    return templates.extraction(chunk.text)


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def extract_json_block(raw: str):
    """Pull a JSON value out of a model response, tolerating surrounding
    prose and code fences."""
    candidates = [raw.strip()]
    candidates.extend(m.strip() for m in _FENCE_RE.findall(raw))
    for opener, closer in (("{", "}"), ("[", "]")):
        start, end = raw.find(opener), raw.rfind(closer)
        if 0 <= start < end:
            candidates.append(raw[start : end + 1])
    for candidate in candidates:
        if not candidate:
            continue
        try:
            return json.loads(candidate)
        except json.JSONDecodeError:
            continue
    raise ExtractionParseError("no parsable JSON block in response", raw=raw)


def parse_extraction_output(raw: str) -> RawExtraction:
    """Parse an extraction response into fragments, in document order.

    Malformed individual fragments are skipped (semantic validation happens
    later); a response with no parsable block at all raises."""
    data = extract_json_block(raw)
    if isinstance(data, list):
        data = {"fragments": data}
    if not isinstance(data, dict) or not isinstance(data.get("fragments"), list):
        raise ExtractionParseError("response JSON lacks a fragments list", raw=raw)
    fragments: list[RawFragment] = []
    for item in data["fragments"]:
        if not isinstance(item, dict):
            continue
        try:
            entities = [
                RawEntity(
                    name=str(e.get("name", "")),
                    etype=str(e.get("type", e.get("etype", ""))),
                    explanation=str(e.get("explanation", "")),
                    score=float(e.get("score", 0.0)),
                )
                for e in item.get("entities", [])
                if isinstance(e, dict)
            ]
            fragments.append(
                RawFragment(
                    description=str(item.get("description", "")),
                    score=float(item.get("score", 0.0)),
                    entities=entities,
                )
            )
        except (TypeError, ValueError):
            continue
    return RawExtraction(fragments=fragments)


def _bounded(
    value: float, upper: float, label: str, strict: bool, diagnostics: list[Diagnostic]
) -> float | None:
    """Enforce value in (0, upper]: clamp with a warning in lenient mode,
    reject in strict mode. Returns None when rejected."""
    if 0 < value <= upper:
        return value
    if strict:
        diagnostics.append(
            Diagnostic("error", f"{label} score {value} outside (0, {upper}]; rejected")
        )
        return None
    clamped = MIN_SCORE if value <= 0 else upper
    diagnostics.append(
        Diagnostic(
            "warning", f"{label} score {value} outside (0, {upper}]; clamped to {clamped}"
        )
    )
    return clamped


def validate_extraction(
    raw: RawExtraction, chunk: Chunk, strict: bool = False
) -> tuple[list[NaryFact], list[Diagnostic]]:
    """Turn parsed fragments into validated n-ary facts.

    Enforces score ranges and the >= 2 entity minimum. In strict mode an
    entity name must appear verbatim (case-insensitive) in the fragment
    description; in lenient mode a mismatch only warns."""
    facts: list[NaryFact] = []
    diagnostics: list[Diagnostic] = []
    for idx, frag in enumerate(raw.fragments):
        label = f"fragment {idx}"
        description = frag.description.strip()
        if not description:
            diagnostics.append(Diagnostic("error", f"{label}: empty description; dropped"))
            continue
        frag_score = _bounded(frag.score, HYPEREDGE_SCORE_MAX, label, strict, diagnostics)
        if frag_score is None:
            continue
        entities: list[Entity] = []
        seen_ids: set[str] = set()
        for raw_ent in frag.entities:
            name = normalize_name(raw_ent.name)
            if not name:
                diagnostics.append(
                    Diagnostic("warning", f"{label}: entity with empty name skipped")
                )
                continue
            if name.casefold() not in description.casefold():
                if strict:
                    diagnostics.append(
                        Diagnostic(
                            "error",
                            f"{label}: entity '{name}' not in description; dropped",
                        )
                    )
                    continue
                diagnostics.append(
                    Diagnostic(
                        "warning", f"{label}: entity '{name}' not in description"
                    )
                )
            ent_score = _bounded(
                raw_ent.score, ENTITY_SCORE_MAX, f"{label} entity '{name}'", strict, diagnostics
            )
            if ent_score is None:
                continue
            entity = Entity.create(
                name=name,
                etype=raw_ent.etype,
                explanation=raw_ent.explanation,
                score=ent_score,
                source_chunks={chunk.id},
            )
            if entity.id in seen_ids:
                diagnostics.append(
                    Diagnostic("warning", f"{label}: duplicate entity '{name}' deduplicated")
                )
                continue
            seen_ids.add(entity.id)
            entities.append(entity)
        if len(entities) < 2:
            diagnostics.append(
                Diagnostic("error", f"{label}: fewer than 2 valid entities; dropped")
            )
            continue
        edge = Hyperedge.create(
            description=description,
            members=[e.id for e in entities],
            score=frag_score,
            source_chunks={chunk.id},
        )
        facts.append(NaryFact(hyperedge=edge, entities=entities))
    return facts, diagnostics


def merge_into_delta(facts: list[NaryFact]) -> BipartiteGraph:
    """Collapse validated facts into a graph delta.

    Entities with the same normalized name share a node (max score, merged
    explanations, unioned source chunks); hyperedges with the same
    description collapse keeping the maximum score. Idempotent and
    order-independent at the node level."""
    delta = BipartiteGraph()
    for fact in facts:
        fact.validate()
        for ent in fact.entities:
            delta.add_entity(ent)
        delta.add_hyperedge(fact.hyperedge, on_conflict="prefer_higher_score")
    delta.validate()
    return delta
