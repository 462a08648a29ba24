"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines.  Criterion 10 is conditional on the released full-scale splits being
available (CKGLEARN_DATA_DIR); it is skipped otherwise, as its statement
allows.
"""
import json
import math
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
import torch

from ckglearn import synth
from ckglearn.cli import main as cli_main
from ckglearn.encoders import load_checkpoint
from ckglearn.evaluation import (
    COPA_CONNECTORS,
    EvalConfig,
    QAItem,
    RankingQuery,
    RankingResult,
    ckgc_evaluate,
    evaluate_qa,
    predict_choice,
    rank_from_scores,
    rank_gold,
    render_copa,
)
from ckglearn.losses import LossConfig, info_nce, multi_alternative_loss, select_hard_positive
from ckglearn.templates import builtin_registry
from ckglearn.training import TrainConfig, train
from ckglearn.triples import Entity, Triple, convert_graph, group_by_premise, triple_to_pairs

from conftest import SYNTH_TRAIN_KWARGS
from test_losses import central_difference_gradients, cosine_sims, np_cosine


@contextmanager
def criterion(number: int, description: str):
    try:
        yield
    except BaseException:
        print(f"[criterion {number:02d}] FAIL  {description}")
        raise
    print(f"[criterion {number:02d}] PASS  {description}")


def test_criterion_1_loss_equivalence():
    with criterion(1, "multi_alternative_loss(k=1) equals info_nce within 1e-9 on 100 random instances"):
        rng = np.random.default_rng(101)
        cfg = LossConfig(tau=0.07, k=1)
        started = time.monotonic()
        for _ in range(100):
            S = torch.tensor(rng.normal(size=(8, 16)))
            G = torch.tensor(rng.normal(size=(8, 16)))
            gap = abs(float(multi_alternative_loss(S, G.unsqueeze(1), cfg)) - float(info_nce(S, G, cfg)))
            assert gap < 1e-9
        assert time.monotonic() - started < 5.0


def test_criterion_2_gradient_correctness():
    with criterion(2, "autograd matches central differences (step 1e-4, rel err < 1e-4)"):
        rng = np.random.default_rng(202)
        started = time.monotonic()

        def rel_error(a: torch.Tensor, n: torch.Tensor) -> float:
            return float((a - n).norm()) / max(float(a.norm()), float(n.norm()), 1e-12)

        ks = [1, 2, 4]
        for instance in range(20):
            k = ks[instance % len(ks)]
            cfg = LossConfig(tau=0.07, k=k)
            S = torch.tensor(rng.normal(size=(4, 3)), requires_grad=True)
            G = torch.tensor(rng.normal(size=(4, k, 3)), requires_grad=True)

            gS, gG = torch.autograd.grad(multi_alternative_loss(S, G, cfg), [S, G])
            with torch.no_grad():
                nS, nG = central_difference_gradients(lambda: multi_alternative_loss(S, G, cfg), [S.data, G.data])
            assert rel_error(gS, nS) < 1e-4
            assert rel_error(gG, nG) < 1e-4

            flat = G[:, 0, :].detach().clone().requires_grad_(True)
            gS2, gF = torch.autograd.grad(info_nce(S, flat, cfg), [S, flat])
            with torch.no_grad():
                nS2, nF = central_difference_gradients(
                    lambda: info_nce(S, flat, cfg), [S.data, flat.data]
                )
            assert rel_error(gS2, nS2) < 1e-4
            assert rel_error(gF, nF) < 1e-4
        assert time.monotonic() - started < 30.0


def test_criterion_3_hard_positive_oracle():
    with criterion(3, "select_hard_positive equals exhaustive argmin on 1000 instances"):
        rng = np.random.default_rng(303)
        cfg = LossConfig()
        agreements = 0
        for _ in range(1000):
            k = int(rng.integers(1, 6))
            s = torch.tensor(rng.normal(size=8))
            G = torch.tensor(rng.normal(size=(k, 8)))
            sims = [np_cosine(s.numpy(), g) for g in G.numpy()]
            index, _ = select_hard_positive(s, G, cfg)
            agreements += index == int(np.argmin(sims))
        assert agreements == 1000


def test_criterion_4_uniform_loss_closed_form():
    with criterion(4, "equal similarities: info_nce = log N, multi-alternative = log(1+(N-1)k), within 1e-6"):
        for n in (2, 8, 196):
            for k in (1, 2, 4):
                S = torch.ones(n, 5, dtype=torch.float64)
                G = torch.ones(n, k, 5, dtype=torch.float64)
                cfg = LossConfig(tau=0.07, k=k)
                assert float(info_nce(S, G[:, 0, :], cfg)) == pytest.approx(math.log(n), abs=1e-6)
                assert float(multi_alternative_loss(S, G, cfg)) == pytest.approx(
                    math.log(1 + (n - 1) * k), abs=1e-6
                )


def test_criterion_5_ranking_metric_oracle():
    with criterion(5, "rank_gold + MRR/Hits@10 match brute-force sort-and-count oracle"):
        rng = np.random.default_rng(505)
        ranks, oracle_ranks = [], []
        for _ in range(1000):
            scores = rng.normal(size=40)
            gold = int(rng.integers(40))
            ranks.append(rank_from_scores(scores, gold))
            # brute force: sort candidates by score descending, gold after ties
            order = sorted(range(40), key=lambda i: (-scores[i], 1 if i == gold else 0, i))
            oracle_ranks.append(order.index(gold) + 1)
        assert ranks == oracle_ranks
        result = RankingResult(ranks=ranks)
        assert result.mrr == math.fsum(1.0 / r for r in oracle_ranks) / len(oracle_ranks)
        assert result.hits_at(10) == sum(r <= 10 for r in oracle_ranks) / len(oracle_ranks)


def test_criterion_6_conversion_fixtures(synth_data):
    with criterion(6, "2 pairs per triple; exact conversion strings; exact COPA connectors"):
        for graph in synth_data.graphs.values():
            assert len(convert_graph(graph)) == 2 * len(graph.triples)

        registry = builtin_registry("atomic")
        registry.substitute_persons = False
        triple = Triple(
            Entity("PersonX repels PersonY's attack"), "xWant", Entity("to protect others")
        )
        forward, reverse = triple_to_pairs(triple, registry)
        assert forward.premise == "PersonX repels PersonY's attack as a result, PersonX wants"
        assert forward.alternative == "to protect others"
        assert reverse.premise == "PersonX wants to protect others because PersonX"
        assert reverse.alternative == "repels PersonY's attack"

        assert COPA_CONNECTORS["effect"] == "As a result"
        assert COPA_CONNECTORS["cause"] == "The cause for it was that"
        effect = render_copa("The man lost his balance.", "effect", ["a", "b"])
        assert effect.query == "The man lost his balance. As a result"
        cause = render_copa("It rained.", "cause", ["a", "b"])
        assert cause.query == "It rained. The cause for it was that"


def test_criterion_7_synthetic_end_to_end(synth_data, synth_groups, tmp_path):
    with criterion(7, "tiny encoder beats random ranking 5x MRR / 3x Hits@10, bitwise reproducible"):
        started = time.monotonic()
        train_groups, valid_groups = synth_groups
        cfg = TrainConfig(**SYNTH_TRAIN_KWARGS)
        assert cfg.max_epochs <= 10

        first = train(cfg, train_groups, valid_groups, run_dir=tmp_path / "a")
        second = train(cfg, train_groups, valid_groups, run_dir=tmp_path / "b")
        rows = lambda r: [
            (m["epoch"], m["step"], m["train_loss"], m["valid_loss"]) for m in r.metrics
        ]
        assert rows(first) == rows(second)  # bitwise-identical metrics

        encoder, _ = load_checkpoint(first.best_checkpoint)
        graph = synth_data.combined_graph()
        eval_cfg = EvalConfig(max_len=cfg.max_len)
        result = ckgc_evaluate(synth_data.test.triples, graph, encoder, eval_cfg)

        pool_size = len({graph.registry.render(t) for t in graph.entity_texts()})
        random_mrr = math.fsum(1.0 / r for r in range(1, pool_size + 1)) / pool_size
        random_hits = 10.0 / pool_size
        assert pool_size >= 190
        assert result.mrr >= 5 * random_mrr
        assert result.hits_at(10) >= 3 * random_hits

        encoder2, _ = load_checkpoint(second.best_checkpoint)
        result2 = ckgc_evaluate(synth_data.test.triples, graph, encoder2, eval_cfg)
        assert result.ranks == result2.ranks
        assert result.mrr == result2.mrr
        assert time.monotonic() - started < 120.0


def test_criterion_8_cqa_fixture(trained_encoder, fresh_encoder, qa_items, eval_config):
    with criterion(8, "trained accuracy >= 0.9 on 50 items; untrained within 0.15 of chance"):
        assert len(qa_items) == 50
        trained = evaluate_qa(qa_items, trained_encoder, eval_config)
        assert trained["accuracy"] >= 0.9
        untrained = evaluate_qa(qa_items, fresh_encoder, eval_config)
        chance = 1.0 / len(qa_items[0].choices)
        assert abs(untrained["accuracy"] - chance) <= 0.15


class _VectorEncoder:
    """Test double: returns preset embeddings for known texts."""

    def __init__(self, table: dict):
        self.table = dict(table)

    def eval(self):
        return self

    def encode_batch(self, texts, max_len=None, batch_size=None):
        return torch.stack([self.table[t] for t in texts])


def test_criterion_9_scale_invariance():
    with criterion(9, "positive rescaling changes no choice, hard-positive index, or rank"):
        rng = np.random.default_rng(909)
        cfg = EvalConfig(similarity="cosine")
        loss_cfg = LossConfig(kind="cosine")
        for _ in range(100):
            dim = 8
            names = [f"t{i}" for i in range(12)]
            vectors = {n: torch.tensor(rng.normal(size=dim)) for n in names}
            query, choices = names[0], names[1:6]
            candidates = tuple(names[6:]) + (names[5],)

            scaled = {n: v.clone() for n, v in vectors.items()}
            scaled[names[int(rng.integers(12))]] *= float(rng.uniform(0.1, 10.0))

            item = QAItem(query=query, choices=tuple(choices), gold_index=0)
            base_choice = predict_choice(item, _VectorEncoder(vectors), cfg)
            scaled_choice = predict_choice(item, _VectorEncoder(scaled), cfg)
            assert base_choice == scaled_choice

            ranking = RankingQuery(premise=query, gold=names[5], candidates=candidates)
            base_rank = rank_gold(ranking, _VectorEncoder(vectors), cfg)
            scaled_rank = rank_gold(ranking, _VectorEncoder(scaled), cfg)
            assert base_rank == scaled_rank

            s = vectors[query]
            G = torch.stack([vectors[c] for c in choices])
            G_scaled = torch.stack([scaled[c] for c in choices])
            base_idx, _ = select_hard_positive(s, G, loss_cfg)
            scaled_idx, _ = select_hard_positive(scaled[query], G_scaled, loss_cfg)
            assert base_idx == scaled_idx


def _released_split_dir() -> Path | None:
    root = os.environ.get("CKGLEARN_DATA_DIR")
    if root is None:
        return None
    root = Path(root)
    names = ("cn82k", "atomic")
    if all((root / name / "train.tsv").exists() for name in names):
        return root
    return None


def test_criterion_10_data_stat_reference(tmp_path, capsys):
    data_dir = _released_split_dir()
    if data_dir is None:
        print("[criterion 10] SKIP  released CN-82K/ATOMIC splits not present")
        pytest.skip(
            "released CN-82K/ATOMIC splits not present (set CKGLEARN_DATA_DIR); "
            "criterion recorded as skipped"
        )
    with criterion(10, "full-scale pair counts exact; average degree within 0.05"):
        expectations = {
            "cn82k": ("conceptnet", 163_840, 1.87),
            "atomic": ("atomic", 1_221_072, 2.52),
        }
        for name, (registry, expected_pairs, expected_degree) in expectations.items():
            out = tmp_path / f"{name}.jsonl"
            assert (
                cli_main(
                    ["convert", str(data_dir / name / "train.tsv"), "--registry", registry,
                     "--out", str(out)]
                )
                == 0
            )
            capsys.readouterr()
            assert cli_main(["stats", str(out)]) == 0
            report = json.loads(capsys.readouterr().out)
            assert report["pairs"] == expected_pairs
            assert report["avg_degree"] == pytest.approx(expected_degree, abs=0.05)
