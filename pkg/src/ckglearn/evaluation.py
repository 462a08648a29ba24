"""Downstream scoring of trained representations.

Three protocols, all similarity-based and zero-shot:
  - multiple-choice QA: pick the choice most similar to the query;
  - KG-completion ranking: rank every entity text as a candidate answer for
    each test triple, in both directions, scored by MRR and Hits@10;
  - retrieval: nearest-alternative lookup over a persisted embedding index.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .encoders import TextEncoder, encoder_fingerprint, atomic_save, CheckpointError
from .losses import SimilarityKind, similarity_matrix
from .templates import TemplateRegistry
from .triples import Graph, Triple, join_segments

INDEX_FORMAT_VERSION = 1

COPA_CONNECTORS = {
    "cause": "The cause for it was that",
    "effect": "As a result",
}


class EvaluationError(ValueError):
    """Raised for unusable evaluation inputs."""


@dataclass(frozen=True)
class EvalConfig:
    """Similarity switch plus encoding limits shared by the scoring paths."""

    similarity: SimilarityKind = "cosine"
    max_len: int = 32
    batch_size: int = 64


@dataclass(frozen=True)
class QAItem:
    """One multiple-choice question: query text, m choices, gold answer index."""

    query: str
    choices: tuple[str, ...]
    gold_index: int

    def __post_init__(self) -> None:
        if len(self.choices) < 2:
            raise EvaluationError("a question needs at least 2 choices")
        if not 0 <= self.gold_index < len(self.choices):
            raise EvaluationError(
                f"gold_index {self.gold_index} out of range for {len(self.choices)} choices"
            )


def render_copa(
    premise: str,
    question_type: str,
    choices: list[str],
    gold_index: int = 0,
) -> QAItem:
    """Append the cause/effect connector to the premise; choices pass through."""
    try:
        connector = COPA_CONNECTORS[question_type]
    except KeyError:
        raise EvaluationError(
            f"unknown question type {question_type!r}; expected one of {sorted(COPA_CONNECTORS)}"
        ) from None
    return QAItem(query=f"{premise} {connector}", choices=tuple(choices), gold_index=gold_index)


def read_qa_jsonl(path: str | Path) -> list[QAItem]:
    """Read QA items: records carry either a ready query or (premise, question_type)."""
    items = []
    with Path(path).open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if "query" in record:
                    items.append(
                        QAItem(
                            query=record["query"],
                            choices=tuple(record["choices"]),
                            gold_index=record["gold_index"],
                        )
                    )
                else:
                    items.append(
                        render_copa(
                            record["premise"],
                            record["question_type"],
                            record["choices"],
                            record["gold_index"],
                        )
                    )
            except (json.JSONDecodeError, KeyError, EvaluationError) as exc:
                raise EvaluationError(f"{path}, line {line_no}: {exc}") from exc
    return items


def _scores(
    query_vec: torch.Tensor, candidate_matrix: torch.Tensor, kind: SimilarityKind
) -> np.ndarray:
    sims = similarity_matrix(query_vec.unsqueeze(0), candidate_matrix, kind)
    return sims.squeeze(0).detach().cpu().numpy().astype(np.float64)


def predict_choice(item: QAItem, encoder: TextEncoder, cfg: EvalConfig) -> int:
    """Index of the choice most similar to the query; ties break to the lowest index."""
    if not item.choices:
        raise EvaluationError("empty choice list")
    encoder.eval()
    embeddings = encoder.encode_batch(
        [item.query, *item.choices], max_len=cfg.max_len, batch_size=cfg.batch_size
    )
    scores = _scores(embeddings[0], embeddings[1:], cfg.similarity)
    return int(np.argmax(scores))


def evaluate_qa(items: list[QAItem], encoder: TextEncoder, cfg: EvalConfig) -> dict:
    """Accuracy over a QA item list plus per-item predictions."""
    if not items:
        raise EvaluationError("no QA items to evaluate")
    predictions = [predict_choice(item, encoder, cfg) for item in items]
    correct = sum(p == item.gold_index for p, item in zip(predictions, items))
    return {
        "accuracy": correct / len(items),
        "n_items": len(items),
        "predictions": predictions,
    }


# ---------------------------------------------------------------------------
# KG-completion ranking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RankingQuery:
    """One directional completion query: premise text, gold answer, candidate pool."""

    premise: str
    gold: str
    candidates: tuple[str, ...]
    direction: str = "forward"
    filter_set: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.gold not in self.candidates:
            raise EvaluationError(f"gold {self.gold!r} missing from candidates")


@dataclass
class RankingResult:
    """Per-query gold ranks plus MRR / Hits@K aggregates (fractions in [0, 1])."""

    ranks: list[int] = field(default_factory=list)
    per_query: list[dict] = field(default_factory=list)

    @property
    def n_queries(self) -> int:
        return len(self.ranks)

    @property
    def mrr(self) -> float:
        if not self.ranks:
            raise EvaluationError("no queries ranked")
        # fsum: summation-order independent, so recomputations agree exactly
        return math.fsum(1.0 / r for r in self.ranks) / len(self.ranks)

    def hits_at(self, k: int = 10) -> float:
        if not self.ranks:
            raise EvaluationError("no queries ranked")
        return sum(r <= k for r in self.ranks) / len(self.ranks)

    def to_report(self) -> dict:
        """Headline metrics as percentages, the conventional reporting scale."""
        return {
            "mrr": 100.0 * self.mrr,
            "hits_at_10": 100.0 * self.hits_at(10),
            "n_queries": self.n_queries,
        }


def rank_from_scores(
    scores: np.ndarray, gold_pos: int, excluded: np.ndarray | None = None
) -> int:
    """1-based rank of the gold candidate, pessimistic on ties.

    ``excluded`` marks candidates removed before ranking (filtered known-true
    answers); the gold itself is never excluded.
    """
    scores = np.asarray(scores, dtype=np.float64)
    allowed = np.ones(len(scores), dtype=bool)
    if excluded is not None:
        allowed &= ~excluded
    allowed[gold_pos] = False  # compare gold against the others only
    return 1 + int(np.sum(scores[allowed] >= scores[gold_pos]))


def rank_gold(
    query: RankingQuery,
    encoder: TextEncoder,
    cfg: EvalConfig,
    filtered: bool = True,
    candidate_embeddings: torch.Tensor | None = None,
) -> int:
    """Rank the gold answer among the query's candidates.

    Candidates are scored by similarity to the premise and sorted in
    descending order; with ``filtered`` the other known-true answers are
    removed first.  Pass precomputed ``candidate_embeddings`` (rows aligned
    with query.candidates) to avoid re-encoding a shared pool.
    """
    encoder.eval()
    premise_vec = encoder.encode_batch(
        [query.premise], max_len=cfg.max_len, batch_size=cfg.batch_size
    )[0]
    if candidate_embeddings is None:
        candidate_embeddings = encoder.encode_batch(
            list(query.candidates), max_len=cfg.max_len, batch_size=cfg.batch_size
        )
    if candidate_embeddings.shape[0] != len(query.candidates):
        raise EvaluationError("candidate embedding rows do not match the candidate list")
    scores = _scores(premise_vec, candidate_embeddings, cfg.similarity)
    excluded = None
    if filtered and query.filter_set:
        removable = query.filter_set - {query.gold}
        excluded = np.array([c in removable for c in query.candidates], dtype=bool)
    return rank_from_scores(scores, query.candidates.index(query.gold), excluded)


def queries_for_triple(
    triple: Triple, registry: TemplateRegistry, pool: tuple[str, ...],
    known_tails: dict, known_heads: dict,
) -> tuple[RankingQuery, RankingQuery]:
    """The two directional queries for one test triple (tail search, head search)."""
    relation = registry.resolve(triple.relation)
    head, tail = triple.head.text, triple.tail.text
    forward = RankingQuery(
        premise=registry.render(join_segments(head, relation.forward_template)),
        gold=registry.render(tail),
        candidates=pool,
        direction="forward",
        filter_set=frozenset(known_tails.get((head, triple.relation), ())),
    )
    reverse = RankingQuery(
        premise=registry.render(
            join_segments(relation.reverse_prefix, tail, relation.reverse_suffix)
        ),
        gold=registry.render(head),
        candidates=pool,
        direction="reverse",
        filter_set=frozenset(known_heads.get((tail, triple.relation), ())),
    )
    return forward, reverse


def ckgc_evaluate(
    test_triples: list[Triple],
    graph: Graph,
    encoder: TextEncoder,
    cfg: EvalConfig,
    filtered: bool = True,
) -> RankingResult:
    """Two-direction completion ranking over the graph's full entity pool.

    ``graph`` supplies the template registry, the candidate pool (every
    entity text across splits), and the known-true triples used for
    filtering.  Each test triple contributes one tail-search and one
    head-search query.
    """
    if not test_triples:
        raise EvaluationError("no test triples")
    registry = graph.registry
    if registry is None:
        raise EvaluationError("graph has no template registry")

    pool = tuple(dict.fromkeys(registry.render(t) for t in graph.entity_texts()))
    known_tails: dict = {}
    known_heads: dict = {}
    for t in graph.triples:
        known_tails.setdefault((t.head.text, t.relation), set()).add(registry.render(t.tail.text))
        known_heads.setdefault((t.tail.text, t.relation), set()).add(registry.render(t.head.text))

    encoder.eval()
    pool_embeddings = encoder.encode_batch(list(pool), max_len=cfg.max_len, batch_size=cfg.batch_size)

    result = RankingResult()
    for triple in test_triples:
        for query in queries_for_triple(triple, registry, pool, known_tails, known_heads):
            rank = rank_gold(
                query, encoder, cfg, filtered=filtered, candidate_embeddings=pool_embeddings
            )
            result.ranks.append(rank)
            result.per_query.append(
                {
                    "direction": query.direction,
                    "premise": query.premise,
                    "gold": query.gold,
                    "rank": rank,
                }
            )
    return result


# ---------------------------------------------------------------------------
# Nearest-alternative retrieval
# ---------------------------------------------------------------------------


@dataclass
class RetrievalIndex:
    """Embedding rows for a deduplicated list of alternative texts."""

    texts: list[str]
    embeddings: torch.Tensor
    fingerprint: str

    def __len__(self) -> int:
        return len(self.texts)


def build_index(alternatives: list[str], encoder: TextEncoder, cfg: EvalConfig) -> RetrievalIndex:
    """Encode every distinct alternative text into an index."""
    texts = list(dict.fromkeys(alternatives))
    if not texts:
        raise EvaluationError("cannot build an index over an empty alternative list")
    encoder.eval()
    embeddings = encoder.encode_batch(texts, max_len=cfg.max_len, batch_size=cfg.batch_size)
    return RetrievalIndex(
        texts=texts, embeddings=embeddings, fingerprint=encoder_fingerprint(encoder)
    )


def save_index(index: RetrievalIndex, path: str | Path) -> None:
    atomic_save(
        {
            "format_version": INDEX_FORMAT_VERSION,
            "texts": index.texts,
            "embeddings": index.embeddings,
            "fingerprint": index.fingerprint,
        },
        path,
    )


def load_index(path: str | Path, encoder: TextEncoder | None = None) -> RetrievalIndex:
    """Reload an index snapshot; verifies the encoder fingerprint when given."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"index not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != INDEX_FORMAT_VERSION:
        raise CheckpointError(f"unsupported index format version {payload.get('format_version')!r}")
    index = RetrievalIndex(
        texts=payload["texts"],
        embeddings=payload["embeddings"],
        fingerprint=payload["fingerprint"],
    )
    if encoder is not None and encoder_fingerprint(encoder) != index.fingerprint:
        raise CheckpointError(
            "index fingerprint does not match the loaded encoder; rebuild the index"
        )
    return index


def top_k(
    query: str,
    index: RetrievalIndex,
    K: int,
    encoder: TextEncoder,
    cfg: EvalConfig,
) -> list[tuple[str, float]]:
    """K most similar alternatives, scores descending; ties keep insertion order."""
    if K < 1:
        raise EvaluationError(f"K must be >= 1, got {K}")
    encoder.eval()
    query_vec = encoder.encode_batch([query], max_len=cfg.max_len, batch_size=cfg.batch_size)[0]
    scores = _scores(query_vec, index.embeddings, cfg.similarity)
    order = np.argsort(-scores, kind="stable")[: min(K, len(index))]
    return [(index.texts[i], float(scores[i])) for i in order]
