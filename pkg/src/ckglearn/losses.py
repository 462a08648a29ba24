"""Contrastive losses over premise/alternative embeddings.

The batch loss treats row i of the alternative matrix as the positive for
row i of the premise matrix and every other row as a negative.  The
multi-alternative variant gives each premise k candidate alternatives,
selects the one least similar to the premise as its (hard) positive, and
uses all candidates of the other samples as negatives.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import torch

SimilarityKind = Literal["cosine", "dot"]

SIMILARITY_KINDS = ("cosine", "dot")


@dataclass(frozen=True)
class LossConfig:
    """Temperature, candidate count, and similarity switch for a training run."""

    tau: float = 0.07
    k: int = 1
    kind: SimilarityKind = "cosine"

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.kind not in SIMILARITY_KINDS:
            raise ValueError(f"similarity must be one of {SIMILARITY_KINDS}, got {self.kind!r}")


def _as_2d(t: torch.Tensor, name: str) -> torch.Tensor:
    if t.dim() != 2:
        raise ValueError(f"{name} must be 2-D (rows x dim), got shape {tuple(t.shape)}")
    return t


def _check_nonzero_rows(t: torch.Tensor, name: str) -> None:
    norms = t.norm(dim=-1)
    if bool((norms == 0).any()):
        raise ValueError(f"cosine similarity undefined for zero vector in {name}")


def _normalize(t: torch.Tensor, name: str) -> torch.Tensor:
    _check_nonzero_rows(t, name)
    return t / t.norm(dim=-1, keepdim=True)


def similarity(s: torch.Tensor, g: torch.Tensor, kind: SimilarityKind = "cosine") -> float:
    """Similarity between two vectors: cosine in [-1, 1] or unbounded dot product."""
    s = torch.as_tensor(s, dtype=torch.float64).flatten()
    g = torch.as_tensor(g, dtype=torch.float64).flatten()
    if s.shape != g.shape:
        raise ValueError(f"dimension mismatch: {tuple(s.shape)} vs {tuple(g.shape)}")
    if kind == "cosine":
        _check_nonzero_rows(s, "s")
        _check_nonzero_rows(g, "g")
        return float(torch.dot(s, g) / (s.norm() * g.norm()))
    if kind == "dot":
        return float(torch.dot(s, g))
    raise ValueError(f"unknown similarity kind {kind!r}")


def similarity_matrix(S: torch.Tensor, G: torch.Tensor, kind: SimilarityKind) -> torch.Tensor:
    """All-pairs similarities between rows of S (N x d) and rows of G (M x d)."""
    S = _as_2d(S, "S")
    G = _as_2d(G, "G")
    if S.shape[1] != G.shape[1]:
        raise ValueError(f"dimension mismatch: {S.shape[1]} vs {G.shape[1]}")
    if kind == "cosine":
        S = _normalize(S, "S")
        G = _normalize(G, "G")
    elif kind != "dot":
        raise ValueError(f"unknown similarity kind {kind!r}")
    return S @ G.T


def info_nce(S: torch.Tensor, G: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """In-batch contrastive loss: row i of G is the positive for row i of S.

    Returns the mean over i of -log softmax_i(sim(s_i, g_j) / tau); the
    positive term is included in its own denominator.
    """
    S = _as_2d(S, "S")
    G = _as_2d(G, "G")
    if S.shape[0] != G.shape[0]:
        raise ValueError(f"batch size mismatch: {S.shape[0]} vs {G.shape[0]}")
    if S.shape[0] < 2:
        raise ValueError("contrastive loss needs a batch of at least 2 (no negatives otherwise)")
    logits = similarity_matrix(S, G, cfg.kind) / cfg.tau
    return -torch.log_softmax(logits, dim=1).diagonal().mean()


def select_hard_positive(
    s: torch.Tensor,
    G_pos: torch.Tensor,
    cfg: LossConfig,
) -> tuple[int, torch.Tensor]:
    """Pick the candidate alternative least similar to the premise embedding.

    Returns (index, candidate row); ties break toward the lowest index.
    """
    s = torch.as_tensor(s).flatten()
    G_pos = _as_2d(torch.as_tensor(G_pos), "G_pos")
    sims = similarity_matrix(s.unsqueeze(0), G_pos, cfg.kind).squeeze(0)
    index = int(sims.min(dim=0).indices)  # torch.min returns the first minimal index
    return index, G_pos[index]


def multi_alternative_loss(S: torch.Tensor, G_multi: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Multi-alternative contrastive loss.

    S is N x d; G_multi is N x k x d holding each sample's k candidate
    alternatives.  For each i the hard positive is the own candidate with
    minimum similarity to s_i (selection treated as a constant; gradient
    flows through the selected candidate only).  Negatives are all k
    candidates of every other sample j != i; a sample's own non-selected
    candidates are excluded.
    """
    S = _as_2d(S, "S")
    if G_multi.dim() != 3:
        raise ValueError(f"G_multi must be N x k x d, got shape {tuple(G_multi.shape)}")
    N, k, d = G_multi.shape
    if S.shape[0] != N:
        raise ValueError(f"batch size mismatch: {S.shape[0]} vs {N}")
    if S.shape[1] != d:
        raise ValueError(f"dimension mismatch: {S.shape[1]} vs {d}")
    if N < 2:
        raise ValueError("contrastive loss needs a batch of at least 2 (no negatives otherwise)")

    if cfg.kind == "cosine":
        S_n = _normalize(S, "S")
        G_n = _normalize(G_multi, "G_multi")
    else:
        S_n, G_n = S, G_multi
    # logits[i, j, o] = sim(s_i, g_{j,o}) / tau
    logits = torch.einsum("id,jod->ijo", S_n, G_n) / cfg.tau

    own = logits[torch.arange(N), torch.arange(N), :]  # (N, k)
    pos = own.min(dim=1).values  # first minimal index; gradient through that entry only

    # exclude the sample's own candidates from the negative pool
    neg_mask = ~torch.eye(N, dtype=torch.bool, device=logits.device)
    negatives = logits.reshape(N, N * k).masked_fill(
        ~neg_mask.unsqueeze(-1).expand(N, N, k).reshape(N, N * k), float("-inf")
    )
    stacked = torch.cat([pos.unsqueeze(1), negatives], dim=1)
    return (torch.logsumexp(stacked, dim=1) - pos).mean()
