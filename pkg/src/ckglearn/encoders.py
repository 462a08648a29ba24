"""Text encoders mapping sequences to fixed-dimension embedding vectors.

Two interchangeable backbones sit behind one contract: a tiny hashed-vocabulary
reference encoder (deterministic, a few thousand parameters, trainable on a
laptop CPU) and an adapter for large pretrained masked-LM encoders selected by
name.  Both expose last-layer hidden states; the sequence representation is
the hidden state at position 0 (the start marker).
"""
from __future__ import annotations

import hashlib
import os
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

CHECKPOINT_FORMAT_VERSION = 1

# tiny-tokenizer special ids; hashed word ids start after these
START_ID = 0
END_ID = 1
PAD_ID = 2
_NUM_SPECIALS = 3


class TokenizeError(ValueError):
    """Raised for untokenizable input (empty text, out-of-range ids)."""


class CheckpointError(RuntimeError):
    """Raised for unreadable, mismatched, or corrupt checkpoint files."""


@dataclass(frozen=True)
class TokenSequence:
    """Token ids for one text: start marker at position 0, end marker last.

    Marker ids are backbone-specific; ``start_id`` records which id plays
    the start-of-sequence role for validation.
    """

    ids: tuple[int, ...]
    start_id: int = START_ID

    def __post_init__(self) -> None:
        if not self.ids:
            raise TokenizeError("empty token sequence")
        if self.ids[0] != self.start_id:
            raise TokenizeError("token sequence must begin with the start marker")

    def __len__(self) -> int:
        return len(self.ids)


def hash_word(word: str, vocab_size: int) -> int:
    """Map a word into the hashed vocabulary range; stable across processes."""
    return _NUM_SPECIALS + zlib.crc32(word.encode("utf-8")) % (vocab_size - _NUM_SPECIALS)


def tiny_tokenize(text: str, max_len: int, vocab_size: int) -> TokenSequence:
    """Whitespace tokenization with hashed word ids and start/end markers.

    Truncation keeps the start marker and re-appends the end marker, so the
    result never exceeds max_len.
    """
    if not text.strip():
        raise TokenizeError("cannot tokenize empty text")
    if max_len < 3:
        raise TokenizeError(f"max_len must be at least 3, got {max_len}")
    word_ids = [hash_word(w, vocab_size) for w in text.split()]
    word_ids = word_ids[: max_len - 2]
    return TokenSequence(tuple([START_ID, *word_ids, END_ID]))


def pool(hidden: torch.Tensor) -> torch.Tensor:
    """Sequence representation: the hidden state at position 0."""
    if hidden.dim() != 2 or hidden.shape[0] == 0:
        raise ValueError(f"expected a non-empty length x dim matrix, got {tuple(hidden.shape)}")
    return hidden[0]


class TextEncoder(nn.Module):
    """Contract shared by all backbones; see TinyEncoder for the reference one."""

    backbone: str
    hidden_dim: int
    max_len: int

    def tokenize(self, text: str, max_len: int | None = None) -> TokenSequence:
        raise NotImplementedError

    def encode(self, tokens: TokenSequence) -> torch.Tensor:
        """Last-layer hidden states, shape (len(tokens), hidden_dim)."""
        raise NotImplementedError

    def encode_batch(
        self,
        texts: list[str],
        max_len: int | None = None,
        batch_size: int = 64,
    ) -> torch.Tensor:
        """Row i is pool(encode(tokenize(texts[i]))); chunking never changes results.

        Gradients are tracked only in training mode.
        """
        raise NotImplementedError

    def config(self) -> dict:
        raise NotImplementedError


class TinyEncoder(TextEncoder):
    """Hashed-vocabulary reference encoder.

    Token and position embeddings feed a single attention-free mixing layer
    (each position sees its own embedding plus the masked mean over the
    sequence), followed by a learned readout at the start position.  Fully
    deterministic given (vocab_size, hidden_dim, max_len, seed).
    """

    backbone = "tiny"

    def __init__(
        self,
        vocab_size: int = 256,
        hidden_dim: int = 32,
        max_len: int = 32,
        seed: int = 0,
    ):
        super().__init__()
        if vocab_size <= _NUM_SPECIALS:
            raise ValueError(f"vocab_size must exceed {_NUM_SPECIALS}, got {vocab_size}")
        self.vocab_size = vocab_size
        self.hidden_dim = hidden_dim
        self.max_len = max_len
        self.init_seed = seed

        gen = torch.Generator().manual_seed(seed)
        self.token_emb = nn.Parameter(torch.randn(vocab_size, hidden_dim, generator=gen) * 0.1)
        self.pos_emb = nn.Parameter(torch.randn(max_len, hidden_dim, generator=gen) * 0.1)
        self.mix = nn.Linear(2 * hidden_dim, hidden_dim)
        self.readout = nn.Linear(hidden_dim, hidden_dim)
        with torch.no_grad():
            self.mix.weight.copy_(
                torch.randn(hidden_dim, 2 * hidden_dim, generator=gen) / (2 * hidden_dim) ** 0.5
            )
            self.mix.bias.zero_()
            self.readout.weight.copy_(
                torch.randn(hidden_dim, hidden_dim, generator=gen) / hidden_dim**0.5
            )
            self.readout.bias.zero_()

    def config(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "hidden_dim": self.hidden_dim,
            "max_len": self.max_len,
            "seed": self.init_seed,
        }

    def tokenize(self, text: str, max_len: int | None = None) -> TokenSequence:
        return tiny_tokenize(text, max_len or self.max_len, self.vocab_size)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Hidden states for a padded id batch; pad positions are masked out.

        ids and mask are (batch, length); returns (batch, length, hidden_dim).
        """
        if int(ids.max()) >= self.vocab_size or int(ids.min()) < 0:
            raise TokenizeError("token id out of vocabulary range")
        length = ids.shape[1]
        if length > self.max_len:
            raise TokenizeError(f"sequence length {length} exceeds max_len {self.max_len}")
        e = self.token_emb[ids] + self.pos_emb[:length]
        fmask = mask.to(e.dtype).unsqueeze(-1)
        mean = (e * fmask).sum(dim=1) / fmask.sum(dim=1)
        ctx = mean.unsqueeze(1).expand_as(e)
        h = torch.tanh(self.mix(torch.cat([e, ctx], dim=-1)))
        start = torch.tanh(self.readout(h[:, 0]))
        return torch.cat([start.unsqueeze(1), h[:, 1:]], dim=1)

    def encode(self, tokens: TokenSequence) -> torch.Tensor:
        ids = torch.tensor([tokens.ids], dtype=torch.long)
        mask = torch.ones_like(ids, dtype=torch.bool)
        if self.training:
            return self(ids, mask)[0]
        with torch.no_grad():
            return self(ids, mask)[0]

    def encode_batch(
        self,
        texts: list[str],
        max_len: int | None = None,
        batch_size: int = 64,
    ) -> torch.Tensor:
        if not texts:
            raise ValueError("encode_batch requires at least one text")
        sequences = []
        for i, text in enumerate(texts):
            try:
                sequences.append(self.tokenize(text, max_len))
            except TokenizeError as exc:
                raise TokenizeError(f"text {i}: {exc}") from exc

        def run(chunk: list[TokenSequence]) -> torch.Tensor:
            width = max(len(s) for s in chunk)
            ids = torch.full((len(chunk), width), PAD_ID, dtype=torch.long)
            mask = torch.zeros((len(chunk), width), dtype=torch.bool)
            for row, seq in enumerate(chunk):
                ids[row, : len(seq)] = torch.tensor(seq.ids, dtype=torch.long)
                mask[row, : len(seq)] = True
            return self(ids, mask)[:, 0, :]

        chunks = [sequences[i : i + batch_size] for i in range(0, len(sequences), batch_size)]
        if self.training:
            return torch.cat([run(c) for c in chunks], dim=0)
        with torch.no_grad():
            return torch.cat([run(c) for c in chunks], dim=0)


class PretrainedEncoder(TextEncoder):
    """Adapter for large pretrained masked-LM encoders named by a model string.

    Requires the optional ``transformers`` dependency; the model's own
    tokenizer supplies start/end markers and truncation.
    """

    def __init__(self, model_name: str, max_len: int = 32):
        super().__init__()
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:  # pragma: no cover - exercised only without the extra
            raise ImportError(
                "pretrained backbones need the 'pretrained' extra: pip install ckglearn[pretrained]"
            ) from exc
        self.backbone = model_name
        self.max_len = max_len
        self._tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModel.from_pretrained(model_name)
        self.hidden_dim = int(self.model.config.hidden_size)

    def config(self) -> dict:
        return {"max_len": self.max_len}

    def tokenize(self, text: str, max_len: int | None = None) -> TokenSequence:
        if not text.strip():
            raise TokenizeError("cannot tokenize empty text")
        ids = self._tokenizer(
            text, truncation=True, max_length=max_len or self.max_len
        )["input_ids"]
        return TokenSequence(tuple(ids), start_id=ids[0])

    def _batch_inputs(self, texts: list[str], max_len: int | None):
        return self._tokenizer(
            texts,
            truncation=True,
            padding=True,
            max_length=max_len or self.max_len,
            return_tensors="pt",
        )

    def encode(self, tokens: TokenSequence) -> torch.Tensor:
        batch = {
            "input_ids": torch.tensor([tokens.ids], dtype=torch.long),
            "attention_mask": torch.ones(1, len(tokens), dtype=torch.long),
        }
        if self.training:
            return self.model(**batch).last_hidden_state[0]
        with torch.no_grad():
            return self.model(**batch).last_hidden_state[0]

    def encode_batch(
        self,
        texts: list[str],
        max_len: int | None = None,
        batch_size: int = 64,
    ) -> torch.Tensor:
        if not texts:
            raise ValueError("encode_batch requires at least one text")
        for i, text in enumerate(texts):
            if not text.strip():
                raise TokenizeError(f"text {i}: cannot tokenize empty text")

        def run(chunk: list[str]) -> torch.Tensor:
            batch = self._batch_inputs(chunk, max_len)
            return self.model(**batch).last_hidden_state[:, 0, :]

        chunks = [texts[i : i + batch_size] for i in range(0, len(texts), batch_size)]
        if self.training:
            return torch.cat([run(c) for c in chunks], dim=0)
        with torch.no_grad():
            return torch.cat([run(c) for c in chunks], dim=0)


def build_encoder(
    backbone: str,
    max_len: int = 32,
    vocab_size: int = 256,
    hidden_dim: int = 32,
    seed: int = 0,
) -> TextEncoder:
    """Construct a backbone by identifier: "tiny" or a pretrained model name."""
    if backbone == "tiny":
        return TinyEncoder(vocab_size=vocab_size, hidden_dim=hidden_dim, max_len=max_len, seed=seed)
    return PretrainedEncoder(backbone, max_len=max_len)


def encoder_fingerprint(encoder: TextEncoder) -> str:
    """Stable digest of the backbone identity and all parameter values."""
    digest = hashlib.sha256()
    digest.update(encoder.backbone.encode("utf-8"))
    digest.update(repr(sorted(encoder.config().items())).encode("utf-8"))
    for name, param in sorted(encoder.state_dict().items()):
        digest.update(name.encode("utf-8"))
        digest.update(param.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def atomic_save(obj: dict, path: str | Path) -> None:
    """torch.save via write-temp-then-rename so failures leave no partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            torch.save(obj, handle)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(encoder: TextEncoder, path: str | Path, extra: dict | None = None) -> str:
    """Write a versioned checkpoint; returns the encoder fingerprint."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "backbone": encoder.backbone,
        "config": encoder.config(),
        "state_dict": {k: v.cpu() for k, v in encoder.state_dict().items()},
        "extra": extra or {},
    }
    atomic_save(payload, path)
    return encoder_fingerprint(encoder)


def load_checkpoint(path: str | Path) -> tuple[TextEncoder, dict]:
    """Rebuild an encoder from a checkpoint; returns (encoder, extra payload)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version!r}")

    backbone = payload["backbone"]
    config = payload["config"]
    state_dict = payload["state_dict"]
    if backbone == "tiny":
        encoder = TinyEncoder(**config)
        declared = config["hidden_dim"]
        stored = state_dict["token_emb"].shape[1]
        if stored != declared:
            raise CheckpointError(
                f"hidden dimension mismatch: checkpoint declares {declared}, weights have {stored}"
            )
    else:
        encoder = PretrainedEncoder(backbone, max_len=config.get("max_len", 32))
    try:
        encoder.load_state_dict(state_dict)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint weights do not fit backbone {backbone!r}: {exc}") from exc
    encoder.eval()
    return encoder, payload.get("extra", {})
