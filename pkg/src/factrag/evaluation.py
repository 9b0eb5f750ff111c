"""Evaluation harness: word-level F1, retrieval similarity, and LLM-judged
generation quality over seven dimensions, plus dataset loading and the
aggregate report."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from factrag.extraction import (
    Diagnostic,
    ExtractionParseError,
    PromptTemplates,
    extract_json_block,
)
from factrag.vindex import cosine

JUDGE_DIMENSIONS = (
    "Correctness",
    "Relevance",
    "Factuality",
    "Comprehensiveness",
    "Knowledgeability",
    "Logical Coherence",
    "Diversity",
)

_WORD_RE = re.compile(r"[a-z0-9]+")


class EvalError(Exception):
    pass


@dataclass
class EvalItem:
    question: str
    gold_answer: str
    gold_knowledge: list[str] = field(default_factory=list)
    source_type: str = "binary"  # "binary" | "nary"
    hops: int = 1

    def __post_init__(self) -> None:
        if not self.question or not self.gold_answer:
            raise ValueError("question and gold_answer must be non-empty")


def load_dataset(path: Path | str) -> list[EvalItem]:
    items: list[EvalItem] = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            items.append(
                EvalItem(
                    question=record["question"],
                    gold_answer=record["gold_answer"],
                    gold_knowledge=list(record.get("gold_knowledge", [])),
                    source_type=record.get("source_type", "binary"),
                    hops=int(record.get("hops", 1)),
                )
            )
    return items


def answer_words(text: str, multiset: bool = False):
    """Lowercase, strip punctuation, split on whitespace."""
    words = _WORD_RE.findall(text.lower())
    if multiset:
        from collections import Counter

        return Counter(words)
    return set(words)


def f1(pred: str, gold: str, multiset: bool = False) -> float:
    """Word-level F1 over word sets (or multisets with multiset=True)."""
    pred_words = answer_words(pred, multiset)
    gold_words = answer_words(gold, multiset)
    if not pred_words or not gold_words:
        return 0.0
    overlap = pred_words & gold_words
    count = sum(overlap.values()) if multiset else len(overlap)
    total_pred = sum(pred_words.values()) if multiset else len(pred_words)
    total_gold = sum(gold_words.values()) if multiset else len(gold_words)
    precision = count / total_pred
    recall = count / total_gold
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def retrieval_similarity(retrieved: list[str], gold: list[str], embed_fn) -> float:
    """Cosine between embeddings of the newline-joined retrieved and gold
    knowledge strings; empty retrieval scores 0.0 by convention."""
    if not retrieved:
        return 0.0
    if not gold:
        return 0.0
    return cosine(embed_fn("\n".join(retrieved)), embed_fn("\n".join(gold)))


def parse_judge_scores(raw: str) -> dict[str, float]:
    data = extract_json_block(raw)
    if not isinstance(data, dict):
        raise ExtractionParseError("judge response is not a JSON object", raw=raw)
    scores: dict[str, float] = {}
    lowered = {str(k).lower(): v for k, v in data.items()}
    for dim in JUDGE_DIMENSIONS:
        value = lowered.get(dim.lower())
        if value is None:
            raise ExtractionParseError(f"judge response missing dimension {dim}", raw=raw)
        score = float(value)
        if not 0 <= score <= 10:
            raise ExtractionParseError(f"dimension {dim} score {score} outside [0,10]", raw=raw)
        scores[dim] = score
    return scores


def g_e_from_scores(scores: dict[str, float], f1_value: float) -> float:
    """Mean of the seven-dimension average scaled to [0,100] and F1 x 100."""
    dim_avg = sum(scores[d] for d in JUDGE_DIMENSIONS) / len(JUDGE_DIMENSIONS)
    return (dim_avg * 10.0 + f1_value * 100.0) / 2.0


def g_e(
    question: str,
    answer: str,
    f1_value: float,
    gateway,
    templates: PromptTemplates,
    max_attempts: int = 3,
    query_id: str | None = None,
) -> tuple[float | None, list[Diagnostic]]:
    """Judge the answer on seven dimensions and combine with F1.

    Returns (score, diagnostics); score is None when the judge output stays
    unparsable after retries (the item is excluded from aggregates)."""
    prompt = templates.judge(question, answer)
    diagnostics: list[Diagnostic] = []
    for attempt in range(max_attempts):
        text, _ = gateway.chat([{"role": "user", "content": prompt}], query_id=query_id)
        try:
            scores = parse_judge_scores(text)
        except (ExtractionParseError, ValueError) as exc:
            diagnostics.append(Diagnostic("warning", f"judge attempt {attempt + 1}: {exc}"))
            continue
        return g_e_from_scores(scores, f1_value), diagnostics
    diagnostics.append(Diagnostic("error", "judge output unparsable; item unevaluated"))
    return None, diagnostics


@dataclass
class ItemResult:
    question: str
    source_type: str
    answer: str
    f1: float
    r_s: float
    g_e: float | None
    error: str | None = None


@dataclass
class EvalReport:
    items: list[ItemResult]
    aggregates: dict[str, dict[str, float | None]]

    def to_json(self) -> str:
        return json.dumps(
            {
                "items": [
                    {
                        "question": it.question,
                        "source_type": it.source_type,
                        "answer": it.answer,
                        "f1": it.f1,
                        "r_s": it.r_s,
                        "g_e": it.g_e,
                        "error": it.error,
                    }
                    for it in self.items
                ],
                "aggregates": self.aggregates,
            },
            indent=2,
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        data = json.loads(text)
        return cls(
            items=[ItemResult(**item) for item in data["items"]],
            aggregates=data["aggregates"],
        )

    def table(self) -> str:
        header = f"{'Group':<10} {'N':>4} {'F1':>8} {'R-S':>8} {'G-E':>8}"
        lines = [header, "-" * len(header)]
        for group in ("binary", "nary", "overall"):
            agg = self.aggregates.get(group)
            if agg is None:
                continue

            def fmt(value: float | None) -> str:
                return f"{value:8.2f}" if value is not None else f"{'-':>8}"

            lines.append(
                f"{group:<10} {int(agg['count']):>4} {fmt(agg['f1'])} "
                f"{fmt(agg['r_s'])} {fmt(agg['g_e'])}"
            )
        return "\n".join(lines)


def _aggregate(items: list[ItemResult]) -> dict[str, float | None]:
    scored = [it for it in items if it.error is None]
    ge_scored = [it for it in scored if it.g_e is not None]
    return {
        "count": float(len(items)),
        "f1": sum(it.f1 for it in scored) / len(scored) if scored else None,
        "r_s": sum(it.r_s for it in scored) / len(scored) if scored else None,
        "g_e": sum(it.g_e for it in ge_scored) / len(ge_scored) if ge_scored else None,
    }


def build_report(items: list[ItemResult]) -> EvalReport:
    if not items:
        raise EvalError("empty dataset: nothing to report")
    aggregates = {"overall": _aggregate(items)}
    for group in ("binary", "nary"):
        grouped = [it for it in items if it.source_type == group]
        if grouped:
            aggregates[group] = _aggregate(grouped)
    return EvalReport(items=items, aggregates=aggregates)


def run_eval(dataset: list[EvalItem], engine, limit: int | None = None) -> EvalReport:
    """Answer each item through the engine and score it; item-level failures
    are recorded and the run continues."""
    if not dataset:
        raise EvalError("empty dataset")
    if limit is not None:
        dataset = dataset[:limit]
    results: list[ItemResult] = []
    for idx, item in enumerate(dataset):
        query_id = f"eval-{idx}"
        try:
            outcome = engine.answer(item.question, query_id=query_id)
            item_f1 = f1(outcome.result.answer, item.gold_answer, multiset=engine.config.eval_multiset_f1)
            retrieved = [render for render in outcome.retrieved_texts()]
            r_s = retrieval_similarity(retrieved, item.gold_knowledge, engine.embed_one)
            ge_value, _ = g_e(
                item.question,
                outcome.result.answer,
                item_f1,
                engine.gateway,
                engine.templates,
                query_id=query_id,
            )
            results.append(
                ItemResult(
                    question=item.question,
                    source_type=item.source_type,
                    answer=outcome.result.answer,
                    f1=item_f1,
                    r_s=r_s,
                    g_e=ge_value,
                )
            )
        except Exception as exc:  # keep the run going on item failures
            results.append(
                ItemResult(
                    question=item.question,
                    source_type=item.source_type,
                    answer="",
                    f1=0.0,
                    r_s=0.0,
                    g_e=None,
                    error=str(exc),
                )
            )
    return build_report(results)
