"""Hypergraph data model and its lossless bipartite encoding.

Entities and hyperedges are both nodes of the bipartite graph; an incidence
pair (hyperedge, entity) records membership. The encoding is a bijection:
the original hypergraph is recovered by reading each hyperedge node's
neighbourhood. Query helpers (incident hyperedges, co-occurrence, common
hyperedges of an entity set) operate directly on the incidence structure.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from factrag.textutil import content_hash, normalize_name

ENTITY_SCORE_MAX = 100.0
HYPEREDGE_SCORE_MAX = 10.0
MIN_SCORE = 1e-6

# Id prefixes keep the entity and hyperedge namespaces disjoint so the
# bipartite node set is a true disjoint union.
_ENTITY_PREFIX = "ent-"
_HYPEREDGE_PREFIX = "rel-"


class IntegrityError(Exception):
    """Structural corruption: conflicting or dangling references."""


class NotFoundError(KeyError):
    """An id was queried that does not exist in the graph."""


def entity_id(name: str) -> str:
    """Deterministic id from the case-folded normalized entity name."""
    return _ENTITY_PREFIX + content_hash(normalize_name(name).casefold())


def hyperedge_id(description: str) -> str:
    return _HYPEREDGE_PREFIX + content_hash(description)


@dataclass
class Entity:
    id: str
    name: str
    etype: str
    explanation: str
    score: float
    source_chunks: set[str] = field(default_factory=set)

    @classmethod
    def create(
        cls,
        name: str,
        etype: str = "",
        explanation: str = "",
        score: float = ENTITY_SCORE_MAX,
        source_chunks: set[str] | None = None,
    ) -> "Entity":
        norm = normalize_name(name)
        if not norm:
            raise ValueError("entity name is empty after normalization")
        ent = cls(
            id=entity_id(norm),
            name=norm,
            etype=etype,
            explanation=explanation,
            score=score,
            source_chunks=set(source_chunks or ()),
        )
        ent.validate()
        return ent

    def validate(self) -> None:
        if not (0 < self.score <= ENTITY_SCORE_MAX):
            raise ValueError(f"entity score {self.score} outside (0, {ENTITY_SCORE_MAX}]")
        if not self.name:
            raise ValueError("entity name is empty")


@dataclass
class Hyperedge:
    id: str
    description: str
    score: float
    members: list[str]
    source_chunks: set[str] = field(default_factory=set)

    @classmethod
    def create(
        cls,
        description: str,
        members: list[str],
        score: float = HYPEREDGE_SCORE_MAX,
        source_chunks: set[str] | None = None,
    ) -> "Hyperedge":
        edge = cls(
            id=hyperedge_id(description),
            description=description,
            score=score,
            members=list(members),
            source_chunks=set(source_chunks or ()),
        )
        edge.validate()
        return edge

    def validate(self) -> None:
        if not (0 < self.score <= HYPEREDGE_SCORE_MAX):
            raise ValueError(f"hyperedge score {self.score} outside (0, {HYPEREDGE_SCORE_MAX}]")
        if len(self.members) < 2:
            raise ValueError("hyperedge connects fewer than 2 entities")
        if len(set(self.members)) != len(self.members):
            raise ValueError("hyperedge member list contains duplicates")


@dataclass
class NaryFact:
    hyperedge: Hyperedge
    entities: list[Entity]

    def validate(self) -> None:
        self.hyperedge.validate()
        for ent in self.entities:
            ent.validate()
        if [e.id for e in self.entities] != self.hyperedge.members:
            raise ValueError("fact entities do not match hyperedge member list")


def merge_entities(a: Entity, b: Entity) -> Entity:
    """Order-independent combiner: max score, sorted distinct explanations,
    union of source chunks; type label follows the highest-scoring mention."""
    if a.id != b.id:
        raise IntegrityError(f"cannot merge distinct entities {a.id} and {b.id}")
    high, low = (a, b) if a.score >= b.score else (b, a)
    explanations = sorted({e for e in (a.explanation, b.explanation) if e})
    return replace(
        high,
        etype=high.etype or low.etype,
        explanation="; ".join(explanations),
        score=max(a.score, b.score),
        source_chunks=a.source_chunks | b.source_chunks,
    )


def merge_hyperedges(a: Hyperedge, b: Hyperedge) -> Hyperedge:
    """Keep the highest-scoring mention's member list; union source chunks."""
    if a.id != b.id:
        raise IntegrityError(f"cannot merge distinct hyperedges {a.id} and {b.id}")
    high = a if a.score >= b.score else b
    return replace(
        high,
        score=max(a.score, b.score),
        source_chunks=a.source_chunks | b.source_chunks,
    )


class BipartiteGraph:
    """Incidence-structured bipartite view of a knowledge hypergraph.

    Immutable-after-build by convention: mutation happens only through the
    store's serialized merge path; readers may share a snapshot freely.
    """

    def __init__(self) -> None:
        self.entities: dict[str, Entity] = {}
        self.hyperedges: dict[str, Hyperedge] = {}
        self._incident: dict[str, set[str]] = {}

    # -- construction ------------------------------------------------------

    def add_entity(self, entity: Entity) -> None:
        existing = self.entities.get(entity.id)
        if existing is None:
            self.entities[entity.id] = entity
            self._incident.setdefault(entity.id, set())
        else:
            self.entities[entity.id] = merge_entities(existing, entity)

    def add_hyperedge(self, edge: Hyperedge, on_conflict: str = "error") -> None:
        """Insert or merge a hyperedge node.

        A re-added id with a different member set is an integrity error by
        default; with on_conflict="prefer_higher_score" the higher-scoring
        mention's member list wins (the merge path's policy)."""
        existing = self.hyperedges.get(edge.id)
        if existing is not None:
            if set(existing.members) != set(edge.members):
                if on_conflict != "prefer_higher_score":
                    raise IntegrityError(
                        f"hyperedge {edge.id} re-added with conflicting member list"
                    )
                merged = merge_hyperedges(existing, edge)
                for member in merged.members:
                    if member not in self.entities:
                        raise IntegrityError(
                            f"hyperedge {edge.id} references missing entity {member}"
                        )
                for member in existing.members:
                    self._incident[member].discard(edge.id)
                for member in merged.members:
                    self._incident[member].add(edge.id)
                self.hyperedges[edge.id] = merged
                return
            self.hyperedges[edge.id] = merge_hyperedges(existing, edge)
        else:
            for member in edge.members:
                if member not in self.entities:
                    raise IntegrityError(
                        f"hyperedge {edge.id} references missing entity {member}"
                    )
            self.hyperedges[edge.id] = edge
            for member in edge.members:
                self._incident[member].add(edge.id)

    # -- queries -----------------------------------------------------------

    def _require_entity(self, v: str) -> None:
        if v not in self.entities:
            raise NotFoundError(v)

    def incident_hyperedges(self, v: str) -> set[str]:
        """All hyperedges containing entity v."""
        self._require_entity(v)
        return set(self._incident[v])

    def co_occurs(self, u: str, v: str) -> bool:
        """True iff some hyperedge contains both entities."""
        self._require_entity(u)
        self._require_entity(v)
        return bool(self._incident[u] & self._incident[v])

    def hyperedges_containing_all(self, entity_ids: set[str]) -> set[str]:
        """Hyperedges containing every entity of the given non-empty set."""
        if not entity_ids:
            raise ValueError("entity set must be non-empty")
        sets = []
        for v in entity_ids:
            self._require_entity(v)
            sets.append(self._incident[v])
        result = set(sets[0])
        for s in sets[1:]:
            result &= s
        return result

    def members(self, hyperedge_id_: str) -> list[str]:
        if hyperedge_id_ not in self.hyperedges:
            raise NotFoundError(hyperedge_id_)
        return list(self.hyperedges[hyperedge_id_].members)

    def fact(self, hyperedge_id_: str) -> NaryFact:
        """Materialize the full n-ary fact behind a hyperedge node."""
        edge = self.hyperedges.get(hyperedge_id_)
        if edge is None:
            raise NotFoundError(hyperedge_id_)
        entities = []
        for member in edge.members:
            ent = self.entities.get(member)
            if ent is None:
                raise IntegrityError(f"hyperedge {edge.id} has dangling member {member}")
            entities.append(ent)
        return NaryFact(hyperedge=edge, entities=entities)

    @property
    def incidence_count(self) -> int:
        return sum(len(e.members) for e in self.hyperedges.values())

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        """Full-scan structural check of incidence symmetry and references."""
        for edge in self.hyperedges.values():
            edge.validate()
            for member in edge.members:
                if member not in self.entities:
                    raise IntegrityError(
                        f"hyperedge {edge.id} references missing entity {member}"
                    )
                if edge.id not in self._incident.get(member, ()):
                    raise IntegrityError(
                        f"incidence missing for ({edge.id}, {member})"
                    )
        for v, edges in self._incident.items():
            if v not in self.entities:
                raise IntegrityError(f"incidence references missing entity {v}")
            for e in edges:
                if e not in self.hyperedges:
                    raise IntegrityError(f"incidence references missing hyperedge {e}")
                if v not in self.hyperedges[e].members:
                    raise IntegrityError(f"asymmetric incidence ({e}, {v})")

    def structurally_equal(self, other: "BipartiteGraph") -> bool:
        """Id-level equality; member lists compare as sets."""
        if set(self.entities) != set(other.entities):
            return False
        if set(self.hyperedges) != set(other.hyperedges):
            return False
        for eid, edge in self.hyperedges.items():
            if set(edge.members) != set(other.hyperedges[eid].members):
                return False
        return True


def to_bipartite(facts: list[NaryFact] | set[NaryFact]) -> BipartiteGraph:
    """Encode a hypergraph (set of n-ary facts) as a bipartite graph.

    Facts sharing an entity id share the entity node. Re-encountering a
    hyperedge id with a different member set is an integrity error.
    """
    graph = BipartiteGraph()
    for fact in facts:
        fact.validate()
        for ent in fact.entities:
            graph.add_entity(ent)
        graph.add_hyperedge(fact.hyperedge)
    return graph


def from_bipartite(graph: BipartiteGraph) -> list[NaryFact]:
    """Decode back to the n-ary fact set; inverse of to_bipartite."""
    return [graph.fact(eid) for eid in graph.hyperedges]


def binary_projection(
    facts: list[NaryFact] | set[NaryFact],
) -> set[frozenset[str]]:
    """Lossy pairwise projection: every pair of entities co-occurring in a
    fact becomes one undirected edge. Distinct hypergraphs can collide."""
    pairs: set[frozenset[str]] = set()
    for fact in facts:
        ids = fact.hyperedge.members
        for i, u in enumerate(ids):
            for w in ids[i + 1 :]:
                if u != w:
                    pairs.add(frozenset((u, w)))
    return pairs
