from __future__ import annotations

import random
from pathlib import Path

import pytest
import yaml

from factrag.model import Entity, Hyperedge, NaryFact

FIXTURES = Path(__file__).parent / "fixtures"

MEDICAL_DESCRIPTION = (
    "Male hypertensive patient with serum creatinine 115–133 μmol/L "
    "is diagnosed with mild serum creatinine elevation."
)
MEDICAL_ENTITY_NAMES = [
    "Hypertensive patient",
    "Male",
    "Serum creatinine 115–133 μmol/L",
    "Mild serum creatinine elevation",
]


def make_fact(description: str, names: list[str], score: float = 9.0) -> NaryFact:
    entities = [Entity.create(name=n, etype="t", score=80.0) for n in names]
    edge = Hyperedge.create(
        description=description, members=[e.id for e in entities], score=score
    )
    return NaryFact(hyperedge=edge, entities=entities)


@pytest.fixture
def medical_fact() -> NaryFact:
    return make_fact(MEDICAL_DESCRIPTION, MEDICAL_ENTITY_NAMES, score=9.5)


def random_hypergraph(rng: random.Random, max_edges: int = 50) -> list[NaryFact]:
    """Random hypergraph with up to max_edges hyperedges of arity 2-8."""
    n_entities = rng.randint(8, 40)
    names = [f"entity {i}" for i in range(n_entities)]
    entities = {
        name: Entity.create(name=name, etype="x", score=rng.uniform(1, 100))
        for name in names
    }
    facts: list[NaryFact] = []
    used: set[str] = set()
    for j in range(rng.randint(1, max_edges)):
        arity = rng.randint(2, min(8, n_entities))
        chosen = rng.sample(names, arity)
        description = f"fact {j} over " + ", ".join(chosen)
        if description in used:
            continue
        used.add(description)
        members = [entities[name] for name in chosen]
        edge = Hyperedge.create(
            description=description,
            members=[e.id for e in members],
            score=rng.uniform(0.1, 10.0),
        )
        facts.append(NaryFact(hyperedge=edge, entities=members))
    return facts


def write_mock_config(
    tmp_path: Path,
    store_dir: Path | None = None,
    k_entities: int = 60,
    k_hyperedges: int = 5,
    k_chunks: int = 5,
    tau: float = -1000.0,
) -> Path:
    """Config pointing at the fixture mock script, with thresholds opened up
    so hash-mock similarities (near zero) still rank."""
    config = {
        "store_dir": str(store_dir or tmp_path / "store"),
        "provider_kind": "mock",
        "mock_script": str(FIXTURES / "mock_script.json"),
        "retrieval": {
            "k_entities": k_entities,
            "tau_entities": tau,
            "k_hyperedges": k_hyperedges,
            "tau_hyperedges": tau,
            "k_chunks": k_chunks,
            "tau_chunks": tau,
        },
    }
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(config), encoding="utf-8")
    return path
