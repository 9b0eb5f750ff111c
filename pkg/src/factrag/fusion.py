"""Bidirectional expansion of retrieval hits into complete n-ary facts,
knowledge fusion under a token budget, generation prompt assembly, and
answer parsing."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from factrag.extraction import Diagnostic, PromptTemplates
from factrag.model import BipartiteGraph, NaryFact
from factrag.textutil import approx_tokens
from factrag.vindex import RankedHit

EMPTY_KNOWLEDGE = "No external knowledge retrieved."


@dataclass
class AdmittedFact:
    """A fact plus the best retrieval hit that admitted it."""

    fact: NaryFact
    score: float
    via: set[str] = field(default_factory=set)  # {"entities", "hyperedges"}


@dataclass
class BundleChunk:
    chunk_id: str
    text: str
    similarity: float


@dataclass
class RetrievalBundle:
    facts: list[AdmittedFact]
    chunks: list[BundleChunk]


@dataclass
class GenerationResult:
    answer: str
    reasoning: str
    prompt_tokens: int
    completion_tokens: int
    raw: str
    diagnostics: list[Diagnostic] = field(default_factory=list)


def expand_from_entities(
    hits: list[RankedHit], graph: BipartiteGraph
) -> dict[str, AdmittedFact]:
    """All facts incident to retrieved entities, keyed by hyperedge id; each
    fact inherits the best admitting entity hit's combined score."""
    admitted: dict[str, AdmittedFact] = {}
    for hit in hits:
        for eid in graph.incident_hyperedges(hit.id):
            existing = admitted.get(eid)
            if existing is None:
                admitted[eid] = AdmittedFact(
                    fact=graph.fact(eid), score=hit.combined, via={"entities"}
                )
            else:
                existing.score = max(existing.score, hit.combined)
    return admitted


def expand_from_hyperedges(
    hits: list[RankedHit], graph: BipartiteGraph
) -> dict[str, AdmittedFact]:
    """Materialize each retrieved hyperedge with its full member entity set."""
    admitted: dict[str, AdmittedFact] = {}
    for hit in hits:
        existing = admitted.get(hit.id)
        if existing is None:
            admitted[hit.id] = AdmittedFact(
                fact=graph.fact(hit.id), score=hit.combined, via={"hyperedges"}
            )
        else:
            existing.score = max(existing.score, hit.combined)
    return admitted


def render_fact(admitted: AdmittedFact) -> str:
    fact = admitted.fact
    entities = ", ".join(
        f"{e.name}({e.etype}): {e.explanation}" if e.explanation else f"{e.name}({e.etype})"
        for e in fact.entities
    )
    return (
        f"FACT (score {fact.hyperedge.score:g}): {fact.hyperedge.description}"
        f" | ENTITIES: {entities}"
    )


def fuse(
    from_entities: dict[str, AdmittedFact],
    from_hyperedges: dict[str, AdmittedFact],
    chunks: list[BundleChunk],
    budget_tokens: int = 6000,
) -> RetrievalBundle:
    """Deduplicate both expansions into one ranked fact list and truncate to
    the token budget: lowest-ranked facts drop first, then lowest-similarity
    chunks; never truncates mid-fact."""
    merged: dict[str, AdmittedFact] = {}
    for source in (from_entities, from_hyperedges):
        for eid, admitted in source.items():
            existing = merged.get(eid)
            if existing is None:
                merged[eid] = AdmittedFact(
                    fact=admitted.fact, score=admitted.score, via=set(admitted.via)
                )
            else:
                existing.score = max(existing.score, admitted.score)
                existing.via |= admitted.via
    ranked = sorted(merged.values(), key=lambda a: (-a.score, a.fact.hyperedge.id))

    # Highest-ranked prefix fitting the budget, so raising the budget only
    # ever extends what is kept.
    kept_facts: list[AdmittedFact] = []
    used = 0
    for admitted in ranked:
        cost = approx_tokens(render_fact(admitted))
        if used + cost > budget_tokens:
            break
        used += cost
        kept_facts.append(admitted)

    kept_chunks: list[BundleChunk] = []
    for chunk in sorted(chunks, key=lambda c: (-c.similarity, c.chunk_id)):
        cost = approx_tokens(chunk.text)
        if used + cost > budget_tokens:
            break
        used += cost
        kept_chunks.append(chunk)

    return RetrievalBundle(facts=kept_facts, chunks=kept_chunks)


def render_knowledge(bundle: RetrievalBundle) -> str:
    if not bundle.facts and not bundle.chunks:
        return EMPTY_KNOWLEDGE
    lines: list[str] = []
    for admitted in bundle.facts:
        lines.append(render_fact(admitted))
    if bundle.chunks:
        lines.append("")
        lines.append("Passages:")
        for chunk in bundle.chunks:
            lines.append(f"PASSAGE (similarity {chunk.similarity:.3f}): {chunk.text}")
    return "\n".join(lines)


def build_generation_prompt(
    bundle: RetrievalBundle, question: str, templates: PromptTemplates
) -> str:
    return templates.generation(render_knowledge(bundle), question)


_THINK_RE = re.compile(r"<think>(.*?)</think>", re.DOTALL)
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)


def parse_generation(raw: str, prompt_tokens: int = 0, completion_tokens: int = 0) -> GenerationResult:
    """Extract think/answer block contents; unstructured output becomes the
    answer with a diagnostic."""
    if not raw or not raw.strip():
        raise ValueError("empty model output")
    think = _THINK_RE.search(raw)
    answer = _ANSWER_RE.search(raw)
    diagnostics: list[Diagnostic] = []
    if answer is None:
        diagnostics.append(
            Diagnostic("warning", "no <answer> block; using full output as answer")
        )
        answer_text = raw.strip()
    else:
        answer_text = answer.group(1).strip()
    return GenerationResult(
        answer=answer_text,
        reasoning=think.group(1).strip() if think else "",
        prompt_tokens=prompt_tokens,
        completion_tokens=completion_tokens,
        raw=raw,
        diagnostics=diagnostics,
    )
