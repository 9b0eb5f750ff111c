"""factrag: retrieval-augmented generation over n-ary relational facts.

Knowledge is modelled as a hypergraph whose hyperedges are natural-language
fact descriptions connecting two or more entities. The hypergraph is stored
losslessly as a bipartite incidence graph, retrieved via score-weighted
cosine search over entity and hyperedge embeddings, expanded bidirectionally
into complete facts, and fused with chunk retrieval before generation.
"""

from factrag.model import (
    BipartiteGraph,
    Entity,
    Hyperedge,
    IntegrityError,
    NaryFact,
    NotFoundError,
    binary_projection,
    from_bipartite,
    to_bipartite,
)

__version__ = "0.1.0"

__all__ = [
    "BipartiteGraph",
    "Entity",
    "Hyperedge",
    "NaryFact",
    "IntegrityError",
    "NotFoundError",
    "to_bipartite",
    "from_bipartite",
    "binary_projection",
]
