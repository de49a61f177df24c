"""Small causal transformer with untied input and output embeddings.

Both the token embedding W_E and the output head W_L are |V| x d matrices
indexed by token id. They are kept untied because vocabulary growth seeds
the two rows of a new token from different sources: W_E from a hidden
state, W_L from an existing head row (see expand.py).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
from torch.nn import functional as F


class HarnessError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    context: int = 512
    layers: int = 6
    heads: int = 6
    dim: int = 384
    dropout: float = 0.2
    bias: bool = False

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise HarnessError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.context < 2 or self.layers < 1:
            raise HarnessError("context must be >= 2 and layers >= 1")


def full_preset() -> ModelConfig:
    return ModelConfig()


def reduced_preset() -> ModelConfig:
    """Desk-scale preset: same shape, a quarter the width and a third the depth."""
    return ModelConfig(context=256, layers=2, heads=2, dim=128)


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.c_attn = nn.Linear(cfg.dim, 3 * cfg.dim, bias=cfg.bias)
        self.c_proj = nn.Linear(cfg.dim, cfg.dim, bias=cfg.bias)
        self.attn_dropout = cfg.dropout
        self.resid_dropout = nn.Dropout(cfg.dropout)
        self.heads = cfg.heads
        self.dim = cfg.dim

    def forward(self, x):
        B, T, C = x.size()
        q, k, v = self.c_attn(x).split(self.dim, dim=2)
        q = q.view(B, T, self.heads, C // self.heads).transpose(1, 2)
        k = k.view(B, T, self.heads, C // self.heads).transpose(1, 2)
        v = v.view(B, T, self.heads, C // self.heads).transpose(1, 2)
        y = F.scaled_dot_product_attention(
            q, k, v, dropout_p=self.attn_dropout if self.training else 0.0, is_causal=True
        )
        y = y.transpose(1, 2).contiguous().view(B, T, C)
        return self.resid_dropout(self.c_proj(y))


class MLP(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.c_fc = nn.Linear(cfg.dim, 4 * cfg.dim, bias=cfg.bias)
        self.c_proj = nn.Linear(4 * cfg.dim, cfg.dim, bias=cfg.bias)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x):
        return self.dropout(self.c_proj(F.gelu(self.c_fc(x))))


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln_1 = nn.LayerNorm(cfg.dim, bias=cfg.bias)
        self.attn = CausalSelfAttention(cfg)
        self.ln_2 = nn.LayerNorm(cfg.dim, bias=cfg.bias)
        self.mlp = MLP(cfg)

    def forward(self, x):
        x = x + self.attn(self.ln_1(x))
        x = x + self.mlp(self.ln_2(x))
        return x


class GPT(nn.Module):
    """Decoder-only LM. forward() returns logits; hidden() also returns h^(L).

    h^(L) is the final hidden state after the last block and final layer
    norm, i.e. the vector whose product with W_L produces the logits.
    """

    def __init__(self, cfg: ModelConfig, vocab_size: int):
        super().__init__()
        if vocab_size < 1:
            raise HarnessError("vocab_size must be positive")
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.wte = nn.Embedding(vocab_size, cfg.dim)
        self.wpe = nn.Embedding(cfg.context, cfg.dim)
        self.drop = nn.Dropout(cfg.dropout)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.layers))
        self.ln_f = nn.LayerNorm(cfg.dim, bias=cfg.bias)
        self.lm_head = nn.Linear(cfg.dim, vocab_size, bias=False)
        self.apply(self._init_weights)
        # residual projections scaled down with depth, GPT-2 style
        for name, p in self.named_parameters():
            if name.endswith("c_proj.weight"):
                nn.init.normal_(p, mean=0.0, std=0.02 / math.sqrt(2 * cfg.layers))

    def _init_weights(self, module):
        if isinstance(module, nn.Linear):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.Embedding):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)

    def hidden(self, idx: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        B, T = idx.size()
        if T > self.cfg.context:
            raise HarnessError(f"sequence length {T} exceeds context {self.cfg.context}")
        pos = torch.arange(T, device=idx.device)
        x = self.drop(self.wte(idx) + self.wpe(pos))
        for block in self.blocks:
            x = block(x)
        h = self.ln_f(x)
        return self.lm_head(h), h

    def forward(self, idx: torch.Tensor, targets: torch.Tensor | None = None):
        logits, _ = self.hidden(idx)
        if targets is None:
            return logits, None
        loss = F.cross_entropy(logits.view(-1, logits.size(-1)), targets.reshape(-1))
        return logits, loss

    @property
    def embedding_rows(self) -> int:
        return self.wte.num_embeddings

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_model(cfg: ModelConfig, vocab_size: int, seed: int = 0) -> GPT:
    """Deterministic construction: same (cfg, vocab_size, seed) gives equal weights."""
    torch.manual_seed(seed)
    return GPT(cfg, vocab_size)
