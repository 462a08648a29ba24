"""Synthetic CKG with planted premise/alternative structure.

Entities come in clusters keyed by a pair of head-side words (w_i, w_j): the
cluster head's text uses the w words and its tails use the paired
alternative-side words (v_i, v_j), where w_i <-> v_i is a fixed global
bijection.  The association is therefore invisible at the surface (no shared
tokens) but learnable, and it composes: held-out clusters use unseen word
pairs whose members each occur in training clusters.  Valid/test cluster
entities never appear in training, giving an inductive split over a shared
vocabulary.
"""
from __future__ import annotations

import argparse
import json
import random
import string
from dataclasses import dataclass, field
from pathlib import Path

from .encoders import hash_word
from .evaluation import QAItem
from .templates import Relation, TemplateRegistry
from .triples import Entity, Graph, Triple, convert_graph, group_by_premise


@dataclass
class SynthSpec:
    """Size knobs for the generated graph; defaults give ~200 entities."""

    n_words: int = 16
    n_fillers: int = 6
    tails_per_cluster: int = 2
    n_valid_clusters: int = 6
    n_test_clusters: int = 12
    vocab_size: int = 256  # hash range the words must not collide in
    seed: int = 7


@dataclass
class SynthData:
    registry: TemplateRegistry
    train: Graph
    valid: Graph
    test: Graph

    @property
    def graphs(self) -> dict[str, Graph]:
        return {"train": self.train, "valid": self.valid, "test": self.test}

    def combined_graph(self) -> Graph:
        """All splits merged: the candidate pool and filter source for ranking."""
        merged = Graph(registry=self.registry, split="all")
        for graph in (self.train, self.valid, self.test):
            for triple in graph.triples:
                merged.add_triple(triple)
        return merged


def _make_words(rng: random.Random, count: int, vocab_size: int, taken: set[int]) -> list[str]:
    """Random lowercase words whose hashed ids collide with nothing generated so far."""
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < count:
        word = "".join(rng.choice(string.ascii_lowercase) for _ in range(rng.randint(3, 6)))
        bucket = hash_word(word, vocab_size)
        if word in seen or bucket in taken:
            continue
        seen.add(word)
        taken.add(bucket)
        words.append(word)
    return words


def _cluster_pairs(spec: SynthSpec) -> dict[str, list[tuple[int, int]]]:
    """Deterministic word-index pairs per split.

    Training covers ring offsets 1-3 (every word appears in six training
    clusters); validation and test take disjoint slices of offsets 4 and 5,
    so their pairs are unseen while their words are all trained.
    """
    m = spec.n_words
    train = [(i, (i + off) % m) for off in (1, 2, 3) for i in range(m)]
    offset4 = [(i, (i + 4) % m) for i in range(m)]
    offset5 = [(i, (i + 5) % m) for i in range(m)]
    if spec.n_valid_clusters > m or spec.n_test_clusters > m:
        raise ValueError("valid/test cluster counts cannot exceed n_words")
    valid = offset4[: spec.n_valid_clusters]
    test = offset5[: spec.n_test_clusters]
    return {"train": train, "valid": valid, "test": test}


def generate(spec: SynthSpec | None = None) -> SynthData:
    """Build the three splits plus their template registry."""
    spec = spec or SynthSpec()
    rng = random.Random(spec.seed)
    taken: set[int] = set()
    head_words = _make_words(rng, spec.n_words, spec.vocab_size, taken)
    tail_words = _make_words(rng, spec.n_words, spec.vocab_size, taken)
    fillers = _make_words(rng, spec.n_fillers, spec.vocab_size, taken)
    template_words = _make_words(rng, 8, spec.vocab_size, taken)

    registry = TemplateRegistry(name="synth")
    registry.add(
        Relation(
            name="rel0",
            forward_template=f"{template_words[0]} {template_words[1]}",
            reverse_prefix=template_words[2],
            reverse_suffix=template_words[3],
        )
    )
    registry.add(Relation(name="rel1", forward_template=template_words[4], reverse_prefix=template_words[5]))
    registry.add(Relation(name="rel2", forward_template=template_words[6], reverse_prefix=template_words[7]))
    relation_names = list(registry.relations)

    graphs = {split: Graph(registry=registry, split=split) for split in ("train", "valid", "test")}
    for split, pairs in _cluster_pairs(spec).items():
        for i, j in pairs:
            # fillers only on the head side: tail texts carry nothing but the
            # mapped word pair, so no surface shortcut links heads to tails
            head = Entity(f"{head_words[i]} {head_words[j]} {fillers[(i * 3 + j) % spec.n_fillers]}")
            relation = relation_names[(i + j) % len(relation_names)]
            for t in range(spec.tails_per_cluster):
                order = (tail_words[i], tail_words[j]) if t % 2 == 0 else (tail_words[j], tail_words[i])
                tail = Entity(" ".join(order))
                graphs[split].add_triple(Triple(head=head, relation=relation, tail=tail))

    return SynthData(registry=registry, train=graphs["train"], valid=graphs["valid"], test=graphs["test"])


def make_qa_items(
    data: SynthData,
    n_items: int = 50,
    n_choices: int = 4,
    seed: int = 13,
) -> list[QAItem]:
    """Multiple-choice items over trained pairs.

    The query is a converted training premise, the gold choice one of its own
    alternatives, and the distractors are alternatives of premises from
    clusters sharing no word index with it.
    """
    rng = random.Random(seed)
    # forward groups only: their alternatives are tail texts, so no choice
    # shares surface tokens with any query premise
    forward_pairs = [p for p in convert_graph(data.train) if p.direction == "forward"]
    forward_groups = group_by_premise(forward_pairs)

    def signature(group) -> set[str]:
        return {w for a in group.alternatives for w in a.split()}

    items: list[QAItem] = []
    attempts = 0
    while len(items) < n_items and attempts < n_items * 50:
        attempts += 1
        group = rng.choice(forward_groups)
        gold = rng.choice(group.alternatives)
        own = signature(group)
        distractor_pool = [
            alt
            for other in forward_groups
            if other is not group and not (signature(other) & own)
            for alt in other.alternatives
        ]
        if len(distractor_pool) < n_choices - 1:
            continue
        distractors = rng.sample(distractor_pool, n_choices - 1)
        gold_index = rng.randrange(n_choices)
        choices = distractors[:gold_index] + [gold] + distractors[gold_index:]
        items.append(QAItem(query=group.premise, choices=tuple(choices), gold_index=gold_index))
    if len(items) < n_items:
        raise RuntimeError("could not assemble enough QA items; enlarge the graph")
    return items


def write_corpus(data: SynthData, out_dir: str | Path, qa_items: list[QAItem] | None = None) -> dict:
    """Write TSV splits, the registry file, and optionally a QA fixture."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split, graph in data.graphs.items():
        path = out_dir / f"{split}.tsv"
        with path.open("w", encoding="utf-8") as handle:
            for triple in graph.triples:
                handle.write(f"{triple.relation}\t{triple.head.text}\t{triple.tail.text}\n")
        paths[split] = str(path)
    registry_path = out_dir / "synth.cfg"
    registry_path.write_text(data.registry.to_text(), encoding="utf-8")
    paths["registry"] = str(registry_path)
    if qa_items is not None:
        qa_path = out_dir / "qa.jsonl"
        with qa_path.open("w", encoding="utf-8") as handle:
            for item in qa_items:
                handle.write(
                    json.dumps(
                        {"query": item.query, "choices": list(item.choices), "gold_index": item.gold_index}
                    )
                    + "\n"
                )
        paths["qa"] = str(qa_path)
    return paths


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Generate the synthetic CKG corpus.")
    parser.add_argument("out_dir", help="directory for train/valid/test.tsv, synth.cfg, qa.jsonl")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--qa-items", type=int, default=50)
    args = parser.parse_args(argv)
    data = generate(SynthSpec(seed=args.seed))
    qa = make_qa_items(data, n_items=args.qa_items, seed=args.seed + 1)
    paths = write_corpus(data, args.out_dir, qa)
    entities = len(data.combined_graph().entities)
    print(json.dumps({"entities": entities, **paths}, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
