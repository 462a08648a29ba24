"""Batch assembly: sample k candidate alternatives per premise group.

Each epoch contributes at most one example per premise group, so a batch
never contains two examples with the same premise (a premise's own
alternative must not appear as its negative).
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterator

from .triples import PremiseGroup


class SamplingConfigError(ValueError):
    """Raised for unusable sampling configuration (k or batch size too small)."""


@dataclass(frozen=True)
class TrainExample:
    """One premise plus exactly k candidate alternatives drawn from its group."""

    premise: str
    candidates: tuple[str, ...]


@dataclass(frozen=True)
class Batch:
    """A fixed-size batch of examples with pairwise-distinct premises."""

    examples: tuple[TrainExample, ...]

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def premises(self) -> list[str]:
        return [e.premise for e in self.examples]

    @property
    def candidates(self) -> list[list[str]]:
        return [list(e.candidates) for e in self.examples]


def sample_candidates(group: PremiseGroup, k: int, rng: random.Random) -> TrainExample:
    """Draw k candidates from a group's alternatives.

    With at least k alternatives this is uniform sampling without
    replacement; otherwise all alternatives are kept and the remainder is
    filled by uniform resampling with replacement (duplicated positives are
    harmless under min-similarity selection).
    """
    if k < 1:
        raise SamplingConfigError(f"k must be >= 1, got {k}")
    alternatives = group.alternatives
    if not alternatives:
        raise ValueError(f"premise group {group.premise!r} has no alternatives")
    if len(alternatives) >= k:
        candidates = rng.sample(alternatives, k)
    else:
        candidates = list(alternatives)
        candidates.extend(rng.choice(alternatives) for _ in range(k - len(alternatives)))
    return TrainExample(premise=group.premise, candidates=tuple(candidates))


def make_batches(
    groups: list[PremiseGroup],
    batch_size: int,
    k: int,
    rng: random.Random,
) -> Iterator[Batch]:
    """One epoch of batches: shuffle groups, then emit full batches of examples.

    The final short batch is dropped to keep the in-batch negative count
    constant.  (seed, groups, batch_size, k) fully determine the stream.
    """
    if batch_size < 2:
        raise SamplingConfigError(f"batch_size must be >= 2, got {batch_size}")
    order = list(range(len(groups)))
    rng.shuffle(order)
    for start in range(0, len(order) - batch_size + 1, batch_size):
        window = order[start : start + batch_size]
        yield Batch(tuple(sample_candidates(groups[i], k, rng) for i in window))
