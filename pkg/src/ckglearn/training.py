"""Contrastive fine-tuning loop with early stopping and checkpointing.

Each epoch shuffles premise groups, trains on fixed-size batches with the
multi-alternative loss, then scores the validation split with the plain
in-batch loss over single (premise, alternative) pairs.  Training stops at
the epoch budget or when the relative change in validation loss falls below
the configured threshold; the checkpoint with the best validation loss is
returned.
"""
from __future__ import annotations

import json
import math
import random
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import torch

from .encoders import TextEncoder, build_encoder, load_checkpoint, save_checkpoint
from .losses import LossConfig, SimilarityKind, info_nce, multi_alternative_loss
from .sampling import make_batches
from .triples import PremiseGroup


class TrainSetupError(ValueError):
    """Unusable configuration or inputs, caught before any training step."""


class TrainingError(RuntimeError):
    """A runtime abort mid-loop (non-finite loss, unwritable checkpoint)."""


@dataclass
class TrainConfig:
    """Hyperparameters for one training run.

    Defaults follow the reference schedule: batch size 196, max length 32,
    temperature 0.07, 10 epochs, early stop on <1% relative validation-loss
    change.  lr 1e-5 suits base-size pretrained backbones (use 5e-6 for
    large ones); the tiny from-scratch encoder wants a much larger rate.
    """

    k: int = 2
    batch_size: int = 196
    max_len: int = 32
    lr: float = 1e-5
    tau: float = 0.07
    max_epochs: int = 10
    early_stop_rel_delta: float = 0.01
    seed: int = 0
    backbone: str = "tiny"
    similarity: SimilarityKind = "cosine"
    # tiny-backbone shape; ignored by pretrained adapters
    vocab_size: int = 256
    hidden_dim: int = 32

    def __post_init__(self) -> None:
        for name in ("k", "batch_size", "max_len", "lr", "tau", "max_epochs", "vocab_size", "hidden_dim"):
            if getattr(self, name) <= 0:
                raise TrainSetupError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.early_stop_rel_delta < 1:
            raise TrainSetupError(
                f"early_stop_rel_delta must be in (0, 1), got {self.early_stop_rel_delta}"
            )
        if self.batch_size < 2:
            raise TrainSetupError("batch_size must be >= 2 for in-batch negatives")

    def loss_config(self) -> LossConfig:
        return LossConfig(tau=self.tau, k=self.k, kind=self.similarity)

    def build_encoder(self) -> TextEncoder:
        return build_encoder(
            self.backbone,
            max_len=self.max_len,
            vocab_size=self.vocab_size,
            hidden_dim=self.hidden_dim,
            seed=self.seed,
        )


@dataclass
class TrainState:
    """Mutable progress of a run; serialized into every checkpoint."""

    epoch: int = 0
    step: int = 0
    train_loss: float = math.nan
    valid_loss: float = math.nan
    best_valid_loss: float = math.inf
    best_epoch: int = 0
    checkpoint_path: str = ""


@dataclass
class TrainResult:
    best_checkpoint: Path
    best_valid_loss: float
    metrics: list[dict] = field(default_factory=list)
    metrics_path: Path | None = None
    stopped_early: bool = False


def _pairs_of(groups: list[PremiseGroup]) -> list[tuple[str, str]]:
    return [(g.premise, alt) for g in groups for alt in g.alternatives]


def evaluate_valid_loss(
    valid_groups: list[PremiseGroup],
    encoder: TextEncoder,
    cfg: TrainConfig,
) -> float:
    """Mean in-batch contrastive loss over validation pairs, one alternative per pair.

    Pairs are batched in file order (no shuffling), so the value is
    deterministic given the checkpoint.
    """
    pairs = _pairs_of(valid_groups)
    if len(pairs) < 2:
        raise TrainSetupError("validation needs at least 2 (premise, alternative) pairs")
    was_training = encoder.training
    encoder.eval()
    loss_cfg = LossConfig(tau=cfg.tau, k=1, kind=cfg.similarity)
    losses = []
    for start in range(0, len(pairs), cfg.batch_size):
        chunk = pairs[start : start + cfg.batch_size]
        if len(chunk) < 2:  # a trailing singleton has no negatives
            continue
        premises = encoder.encode_batch([p for p, _ in chunk], max_len=cfg.max_len)
        alternatives = encoder.encode_batch([a for _, a in chunk], max_len=cfg.max_len)
        losses.append(float(info_nce(premises, alternatives, loss_cfg)))
    if was_training:
        encoder.train()
    return sum(losses) / len(losses)


def _append_metrics(path: Path, row: dict) -> None:
    with path.open("a", encoding="utf-8") as handle:
        handle.write(json.dumps(row) + "\n")


def train(
    config: TrainConfig,
    train_groups: list[PremiseGroup],
    valid_groups: list[PremiseGroup],
    encoder: TextEncoder | None = None,
    run_dir: str | Path = "runs/default",
    resume_from: str | Path | None = None,
) -> TrainResult:
    """Run the full loop; returns the best-validation checkpoint and metrics.

    Pass ``resume_from`` to continue an interrupted run: optimizer and RNG
    states are restored from the checkpoint, so the completed run's metrics
    match an uninterrupted one with the same seed.
    """
    if not train_groups:
        raise TrainSetupError("no training premise groups")
    if not valid_groups:
        raise TrainSetupError("no validation premise groups")
    if len(train_groups) < config.batch_size:
        raise TrainSetupError(
            f"batch_size {config.batch_size} exceeds the {len(train_groups)} premise groups available"
        )

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = run_dir / "metrics.jsonl"

    torch.manual_seed(config.seed)
    rng = random.Random(config.seed)
    state = TrainState()
    metrics: list[dict] = []
    valid_history: list[float] = []

    if resume_from is not None:
        encoder, extra = load_checkpoint(resume_from)
        encoder.train()
        optimizer = torch.optim.AdamW(encoder.parameters(), lr=config.lr)
        optimizer.load_state_dict(extra["optimizer"])
        rng.setstate(extra["py_rng"])
        torch.set_rng_state(extra["torch_rng"])
        state = TrainState(**extra["state"])
        metrics = list(extra["metrics"])
        valid_history = list(extra["valid_history"])
        start_epoch = state.epoch + 1
    else:
        if encoder is None:
            encoder = config.build_encoder()
        encoder.train()
        optimizer = torch.optim.AdamW(encoder.parameters(), lr=config.lr)
        start_epoch = 1

    loss_cfg = config.loss_config()
    stopped_early = False

    for epoch in range(start_epoch, config.max_epochs + 1):
        encoder.train()
        epoch_losses: list[float] = []
        for batch in make_batches(train_groups, config.batch_size, config.k, rng):
            state.step += 1
            premises = encoder.encode_batch(
                batch.premises, max_len=config.max_len, batch_size=len(batch)
            )
            flat = [c for ex in batch.examples for c in ex.candidates]
            candidates = encoder.encode_batch(
                flat, max_len=config.max_len, batch_size=len(flat)
            ).reshape(len(batch), config.k, -1)
            loss = multi_alternative_loss(premises, candidates, loss_cfg)
            value = loss.detach().item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite training loss at step {state.step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_losses.append(value)

        state.epoch = epoch
        state.train_loss = sum(epoch_losses) / len(epoch_losses)
        state.valid_loss = evaluate_valid_loss(valid_groups, encoder, config)
        if not math.isfinite(state.valid_loss):
            raise TrainingError(f"non-finite validation loss after epoch {epoch}")
        if state.valid_loss < state.best_valid_loss:
            state.best_valid_loss = state.valid_loss
            state.best_epoch = epoch

        checkpoint_path = run_dir / f"epoch{epoch}.ckpt"
        state.checkpoint_path = str(checkpoint_path)
        row = {
            "epoch": epoch,
            "step": state.step,
            "train_loss": state.train_loss,
            "valid_loss": state.valid_loss,
            "best_valid_loss": state.best_valid_loss,
            "timestamp": time.time(),
        }
        metrics.append(row)
        valid_history.append(state.valid_loss)
        save_checkpoint(
            encoder,
            checkpoint_path,
            extra={
                "state": asdict(state),
                "optimizer": optimizer.state_dict(),
                "py_rng": rng.getstate(),
                "torch_rng": torch.get_rng_state(),
                "metrics": metrics,
                "valid_history": valid_history,
                "train_config": asdict(config),
            },
        )
        _append_metrics(metrics_path, row)

        if len(valid_history) >= 2:
            prev = valid_history[-2]
            if abs(state.valid_loss - prev) / abs(prev) < config.early_stop_rel_delta:
                stopped_early = True
                break

    encoder.eval()
    return TrainResult(
        best_checkpoint=run_dir / f"epoch{state.best_epoch}.ckpt",
        best_valid_loss=state.best_valid_loss,
        metrics=metrics,
        metrics_path=metrics_path,
        stopped_early=stopped_early,
    )
