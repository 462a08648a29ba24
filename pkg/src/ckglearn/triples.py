"""Knowledge triples and their conversion to premise/alternative sequence pairs.

Every triple (head, relation, tail) yields exactly two pairs: a forward pair
whose premise is the head text followed by the relation's forward template,
and a reverse pair whose premise wraps the tail text in the reverse template.
The alternative of each pair is the opposite node's text.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Literal

from .templates import TemplateRegistry

Direction = Literal["forward", "reverse"]

SPLITS = ("train", "valid", "test")


class RowError(ValueError):
    """A single invalid row in a triple file."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no
        self.message = message


class TripleFileError(ValueError):
    """One or more invalid rows in a triple file."""

    def __init__(self, path: str | Path, rows: list[RowError]):
        preview = "; ".join(str(r) for r in rows[:5])
        more = f" (+{len(rows) - 5} more)" if len(rows) > 5 else ""
        super().__init__(f"{path}: {preview}{more}")
        self.path = str(path)
        self.rows = rows


@dataclass(frozen=True)
class Entity:
    """A KG node with a free-form text description."""

    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("entity text must be non-empty")


@dataclass(frozen=True)
class Triple:
    """One (head, relation, tail) edge; relation is a name into a registry."""

    head: Entity
    relation: str
    tail: Entity


@dataclass
class Graph:
    """A loaded KG split: deduplicated entities, the template registry, and triples."""

    entities: dict[str, Entity] = field(default_factory=dict)
    registry: TemplateRegistry | None = None
    triples: list[Triple] = field(default_factory=list)
    split: str = "train"

    def add_triple(self, triple: Triple) -> None:
        self.entities.setdefault(triple.head.text, triple.head)
        self.entities.setdefault(triple.tail.text, triple.tail)
        self.triples.append(triple)

    def entity_texts(self) -> list[str]:
        return list(self.entities)

    def __len__(self) -> int:
        return len(self.triples)


@dataclass(frozen=True)
class SequencePair:
    """One premise/alternative text pair derived from a triple."""

    premise: str
    alternative: str
    direction: Direction
    source_triple_id: int

    def to_json(self) -> dict:
        return {
            "premise": self.premise,
            "alternative": self.alternative,
            "direction": self.direction,
            "source_triple_id": self.source_triple_id,
        }

    @classmethod
    def from_json(cls, record: dict) -> "SequencePair":
        return cls(
            premise=record["premise"],
            alternative=record["alternative"],
            direction=record["direction"],
            source_triple_id=record["source_triple_id"],
        )


@dataclass
class PremiseGroup:
    """One premise with every alternative connected to it (deduplicated, ordered)."""

    premise: str
    alternatives: list[str]


def parse_triple_row(line: str, line_no: int, registry: TemplateRegistry) -> Triple:
    """Parse one tab-separated ``relation<TAB>head<TAB>tail`` row."""
    fields = line.rstrip("\n").split("\t")
    if len(fields) != 3:
        raise RowError(line_no, f"expected 3 tab-separated fields, got {len(fields)}")
    relation, head, tail = (f.strip() for f in fields)
    if relation not in registry:
        raise RowError(line_no, f"unknown relation {relation!r}")
    if not head:
        raise RowError(line_no, "empty head text")
    if not tail:
        raise RowError(line_no, "empty tail text")
    return Triple(head=Entity(head), relation=relation, tail=Entity(tail))


def load_triples(
    path: str | Path,
    registry: TemplateRegistry,
    split: str = "train",
    collect_errors: list[RowError] | None = None,
) -> Graph:
    """Load a 3-column TSV of triples into a Graph.

    Row order is preserved and entities are deduplicated by exact text.
    Invalid rows raise TripleFileError unless ``collect_errors`` is given,
    in which case they are appended there and the valid rows kept.
    """
    path = Path(path)
    graph = Graph(registry=registry, split=split)
    errors: list[RowError] = []
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                graph.add_triple(parse_triple_row(line, line_no, registry))
            except RowError as exc:
                errors.append(exc)
    if errors:
        if collect_errors is None:
            raise TripleFileError(path, errors)
        collect_errors.extend(errors)
    return graph


def join_segments(*segments: str) -> str:
    """Join non-empty template segments with single spaces."""
    return " ".join(s for s in segments if s)


def strip_suffix_overlap(head: str, reverse_suffix: str) -> str:
    """Drop the head's leading word when the reverse suffix already ends with it.

    Two-segment reverse templates end in the actor placeholder that social-KG
    head events start with ("... because PersonX" + "PersonX repels ..."), so
    the reverse alternative continues the premise without repeating the word.
    Single-segment templates (empty suffix) leave the head untouched.
    """
    if not reverse_suffix:
        return head
    last_word = reverse_suffix.split()[-1]
    remainder = head[len(last_word) + 1 :]
    if head.startswith(last_word + " ") and remainder.strip():
        return remainder
    return head


def triple_to_pairs(
    triple: Triple,
    registry: TemplateRegistry,
    triple_id: int = 0,
) -> tuple[SequencePair, SequencePair]:
    """Convert one triple into its forward and reverse sequence pairs.

    Registry-level person substitution applies after assembly.
    """
    relation = registry.resolve(triple.relation)
    head, tail = triple.head.text, triple.tail.text
    forward = SequencePair(
        premise=registry.render(join_segments(head, relation.forward_template)),
        alternative=registry.render(tail),
        direction="forward",
        source_triple_id=triple_id,
    )
    reverse = SequencePair(
        premise=registry.render(
            join_segments(relation.reverse_prefix, tail, relation.reverse_suffix)
        ),
        alternative=registry.render(strip_suffix_overlap(head, relation.reverse_suffix)),
        direction="reverse",
        source_triple_id=triple_id,
    )
    return forward, reverse


def convert_graph(graph: Graph) -> list[SequencePair]:
    """Convert every triple in the graph; exactly two pairs per triple, in row order."""
    if graph.registry is None:
        raise ValueError("graph has no template registry")
    pairs: list[SequencePair] = []
    for triple_id, triple in enumerate(graph.triples):
        pairs.extend(triple_to_pairs(triple, graph.registry, triple_id))
    return pairs


def group_by_premise(pairs: Iterable[SequencePair | tuple[str, str]]) -> list[PremiseGroup]:
    """Group pairs by exact premise string, deduplicating alternatives.

    Accepts SequencePairs or bare (premise, alternative) tuples.  Groups keep
    first-appearance order, and each group's alternatives keep insertion order.
    """
    groups: dict[str, dict[str, None]] = {}
    for pair in pairs:
        if isinstance(pair, SequencePair):
            premise, alternative = pair.premise, pair.alternative
        else:
            premise, alternative = pair
        groups.setdefault(premise, {}).setdefault(alternative, None)
    return [PremiseGroup(premise, list(alts)) for premise, alts in groups.items()]


def write_pairs_jsonl(pairs: Iterable[SequencePair], path: str | Path) -> int:
    """Write pairs as JSON-lines; returns the number of records written."""
    count = 0
    with Path(path).open("w", encoding="utf-8") as handle:
        for pair in pairs:
            handle.write(json.dumps(pair.to_json(), ensure_ascii=False) + "\n")
            count += 1
    return count


def read_pairs_jsonl(path: str | Path) -> Iterator[SequencePair]:
    """Stream pairs back from a JSON-lines file."""
    with Path(path).open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                yield SequencePair.from_json(json.loads(line))
            except (json.JSONDecodeError, KeyError) as exc:
                raise RowError(line_no, f"bad pair record: {exc}") from exc
