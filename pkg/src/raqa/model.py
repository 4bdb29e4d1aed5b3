"""Desk-scale trainable sequence scorer.

A one-layer encoder/decoder transformer over a word vocabulary. The
contract any reasoning model must satisfy here: given (input ids,
attention mask, forced answer ids), return one distribution over the
vocabulary per answer position, deterministically in eval mode.

Masked input positions are excluded from attention by writing -inf into
the score matrix before softmax, so their exp is exactly 0.0 and their
value vectors contribute exact zeros to every reduction. Consequently the
output distributions are bit-identical under arbitrary substitutions of
masked tokens, which downstream code relies on for the token-masking
perturbation.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np
import torch
from torch import nn

from .tokenizer import WordTokenizer


class SequenceScorer(Protocol):
    """Minimal inference contract used by the scoring operations."""

    def output_distributions(
        self,
        token_ids: Sequence[int],
        attention_mask: Sequence[int],
        answer_token_ids: Sequence[int],
    ) -> np.ndarray:
        """Probability distribution over the vocabulary per answer position,
        shape (len(answer_token_ids), vocab_size)."""
        ...


def sinusoidal_positions(max_len: int, d_model: int) -> torch.Tensor:
    pos = torch.arange(max_len, dtype=torch.float32).unsqueeze(1)
    div = torch.exp(
        torch.arange(0, d_model, 2, dtype=torch.float32)
        * (-math.log(10000.0) / d_model)
    )
    pe = torch.zeros(max_len, d_model)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)
    return pe


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        assert d_model % n_heads == 0
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.o_proj = nn.Linear(d_model, d_model)

    def forward(
        self,
        query: torch.Tensor,
        key: torch.Tensor,
        value: torch.Tensor,
        key_mask: Optional[torch.Tensor] = None,
        causal: bool = False,
    ) -> torch.Tensor:
        b, tq, d = query.shape
        tk = key.shape[1]
        q = self.q_proj(query).view(b, tq, self.n_heads, self.d_head).transpose(1, 2)
        k = self.k_proj(key).view(b, tk, self.n_heads, self.d_head).transpose(1, 2)
        v = self.v_proj(value).view(b, tk, self.n_heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        if key_mask is not None:
            # key_mask: (b, tk) bool, True = attendable
            blocked = ~key_mask.view(b, 1, 1, tk)
            scores = scores.masked_fill(blocked, float("-inf"))
        if causal:
            future = torch.triu(
                torch.ones(tq, tk, dtype=torch.bool, device=scores.device), diagonal=1
            )
            scores = scores.masked_fill(future.view(1, 1, tq, tk), float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = attn @ v
        out = out.transpose(1, 2).reshape(b, tq, d)
        return self.o_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ffn_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, ffn_dim)
        self.fc2 = nn.Linear(ffn_dim, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.relu(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, d_model: int, n_heads: int, ffn_dim: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.ffn = FeedForward(d_model, ffn_dim)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, h, key_mask=key_mask)
        x = x + self.ffn(self.ln2(x))
        return x


class DecoderLayer(nn.Module):
    def __init__(self, d_model: int, n_heads: int, ffn_dim: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, n_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, n_heads)
        self.ln3 = nn.LayerNorm(d_model)
        self.ffn = FeedForward(d_model, ffn_dim)

    def forward(
        self, y: torch.Tensor, memory: torch.Tensor, memory_mask: torch.Tensor
    ) -> torch.Tensor:
        h = self.ln1(y)
        y = y + self.self_attn(h, h, h, causal=True)
        h = self.ln2(y)
        y = y + self.cross_attn(h, memory, memory, key_mask=memory_mask)
        y = y + self.ffn(self.ln3(y))
        return y


class ToyReasoner(nn.Module):
    """Trainable conditional scorer over a WordTokenizer vocabulary.

    meta carries run bookkeeping (encode mode, source dataset tag); it is
    persisted with checkpoints but never touches the computation.
    """

    def __init__(
        self,
        tokenizer: WordTokenizer,
        d_model: int = 48,
        n_heads: int = 2,
        ffn_dim: int = 96,
        n_layers: int = 1,
        max_len: int = 96,
        seed: int = 0,
        meta: Optional[dict] = None,
    ):
        super().__init__()
        self.tokenizer = tokenizer
        self.d_model = d_model
        self.n_heads = n_heads
        self.ffn_dim = ffn_dim
        self.n_layers = n_layers
        self.max_len = max_len
        self.seed = seed
        self.meta = dict(meta or {})

        v = tokenizer.vocab_size
        self.embed = nn.Embedding(v, d_model)
        self.register_buffer("pos", sinusoidal_positions(max_len, d_model))
        self.enc_layers = nn.ModuleList(
            EncoderLayer(d_model, n_heads, ffn_dim) for _ in range(n_layers)
        )
        self.enc_norm = nn.LayerNorm(d_model)
        self.dec_layers = nn.ModuleList(
            DecoderLayer(d_model, n_heads, ffn_dim) for _ in range(n_layers)
        )
        self.dec_norm = nn.LayerNorm(d_model)
        self.out_proj = nn.Linear(d_model, v)
        self._deterministic_init(seed)
        self.eval()

    @property
    def vocab_size(self) -> int:
        return self.tokenizer.vocab_size

    def _deterministic_init(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for p in self.parameters():
            if p.dim() >= 2:
                nn.init.normal_(p, mean=0.0, std=0.02, generator=gen)
            else:
                nn.init.zeros_(p)
        # LayerNorm weights start at 1
        for m in self.modules():
            if isinstance(m, nn.LayerNorm):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)

    def _encode_src(self, src: torch.Tensor, src_mask: torch.Tensor) -> torch.Tensor:
        x = self.embed(src) + self.pos[: src.shape[1]]
        for layer in self.enc_layers:
            x = layer(x, key_mask=src_mask)
        return self.enc_norm(x)

    def forward(
        self,
        src: torch.Tensor,
        src_mask: torch.Tensor,
        tgt: torch.Tensor,
    ) -> torch.Tensor:
        """Teacher-forced logits, shape (B, T, V).

        Position j of the output predicts tgt[:, j]; the decoder input is
        tgt shifted right behind a BOS token.
        """
        memory = self._encode_src(src, src_mask)
        bos = torch.full(
            (tgt.shape[0], 1), self.tokenizer.bos_id, dtype=tgt.dtype, device=tgt.device
        )
        dec_in = torch.cat([bos, tgt[:, :-1]], dim=1)
        y = self.embed(dec_in) + self.pos[: dec_in.shape[1]]
        for layer in self.dec_layers:
            y = layer(y, memory, memory_mask=src_mask)
        y = self.dec_norm(y)
        return self.out_proj(y)

    def answer_log_probs(
        self,
        src: torch.Tensor,
        src_mask: torch.Tensor,
        tgt: torch.Tensor,
        tgt_mask: torch.Tensor,
    ) -> torch.Tensor:
        """Log P of each forced answer token, zeroed at padding; (B, T)."""
        logits = self.forward(src, src_mask, tgt)
        logp = torch.log_softmax(logits, dim=-1)
        picked = logp.gather(-1, tgt.unsqueeze(-1)).squeeze(-1)
        return picked * tgt_mask

    def sequence_scores(
        self,
        src: torch.Tensor,
        src_mask: torch.Tensor,
        tgt: torch.Tensor,
        tgt_mask: torch.Tensor,
    ) -> torch.Tensor:
        """Differentiable mean answer-token log-probability per row; (B,)."""
        picked = self.answer_log_probs(src, src_mask, tgt, tgt_mask)
        return picked.sum(dim=1) / tgt_mask.sum(dim=1)

    @torch.no_grad()
    def output_distributions(
        self,
        token_ids: Sequence[int],
        attention_mask: Sequence[int],
        answer_token_ids: Sequence[int],
    ) -> np.ndarray:
        was_training = self.training
        self.eval()
        try:
            src = torch.tensor([list(token_ids)], dtype=torch.long)
            mask = torch.tensor([list(attention_mask)], dtype=torch.bool)
            tgt = torch.tensor([list(answer_token_ids)], dtype=torch.long)
            logits = self.forward(src, mask, tgt)
            probs = torch.softmax(logits, dim=-1)[0]
        finally:
            if was_training:
                self.train()
        return probs.double().numpy()

    # -- persistence ---------------------------------------------------

    def save_checkpoint(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self.state_dict(), directory / "weights.pt")
        manifest = {
            "vocab_size": self.vocab_size,
            "max_len": self.max_len,
            "tokenizer_id": self.tokenizer.tokenizer_id,
            "seed": self.seed,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "ffn_dim": self.ffn_dim,
            "n_layers": self.n_layers,
            "meta": self.meta,
            "tokenizer": json.loads(self.tokenizer.to_json()),
        }
        (directory / "manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8"
        )
        return directory

    @classmethod
    def load_checkpoint(cls, directory: str | Path) -> "ToyReasoner":
        directory = Path(directory)
        manifest = json.loads(
            (directory / "manifest.json").read_text(encoding="utf-8")
        )
        tokenizer = WordTokenizer(manifest["tokenizer"]["vocab"])
        model = cls(
            tokenizer,
            d_model=manifest["d_model"],
            n_heads=manifest["n_heads"],
            ffn_dim=manifest["ffn_dim"],
            n_layers=manifest["n_layers"],
            max_len=manifest["max_len"],
            seed=manifest["seed"],
            meta=manifest.get("meta", {}),
        )
        state = torch.load(directory / "weights.pt", weights_only=True)
        model.load_state_dict(state)
        model.eval()
        return model

    def clone_initial(self, seed: Optional[int] = None) -> "ToyReasoner":
        """Fresh model with identical architecture (new init seed optional)."""
        return ToyReasoner(
            self.tokenizer,
            d_model=self.d_model,
            n_heads=self.n_heads,
            ffn_dim=self.ffn_dim,
            n_layers=self.n_layers,
            max_len=self.max_len,
            seed=self.seed if seed is None else seed,
            meta=dict(self.meta),
        )
