"""Input featurization: multi-scale location encoding, Time2Vec, token embeddings,
sinusoidal positions.

Per-token layout (``model_dim`` wide)::

    [ space2vec (4*S) | time2vec(arrival) (T) | time2vec(departure) (T) | embedding (E) ]

Special tokens zero the first ``4*S + 2*T`` slots.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .preprocess import N_SPECIAL, SECONDS_PER_DAY, SpecialToken
from .types import Token, TokenKind

_SPECIAL_ID = {
    TokenKind.PAD: int(SpecialToken.PAD),
    TokenKind.BLANK: int(SpecialToken.BLANK),
    TokenKind.SEP: int(SpecialToken.SEP),
    TokenKind.ANS: int(SpecialToken.ANS),
}


class VocabularyError(KeyError):
    pass


@dataclass
class EncoderConfig:
    s2v_scales: int = 64
    s2v_min: float = 1.0
    s2v_max: float = 50_000.0
    t2v_dim: int = 16
    region_emb_dim: int = 32
    # Time2Vec input unit: rebased seconds divided by this.
    time_unit: float = SECONDS_PER_DAY

    def __post_init__(self):
        if not 0 < self.s2v_min < self.s2v_max:
            raise ValueError("need 0 < s2v_min < s2v_max")
        if min(self.s2v_scales, self.t2v_dim, self.region_emb_dim) < 1:
            raise ValueError("encoder dimensions must be positive")

    @property
    def spatial_dim(self) -> int:
        return 4 * self.s2v_scales

    @property
    def model_dim(self) -> int:
        return self.spatial_dim + 2 * self.t2v_dim + self.region_emb_dim


def s2v_wavelengths(cfg: EncoderConfig) -> torch.Tensor:
    """Geometric ladder from ``s2v_min`` to ``s2v_max`` (float64)."""
    s = cfg.s2v_scales
    if s == 1:
        return torch.tensor([cfg.s2v_min], dtype=torch.float64)
    ratio = cfg.s2v_max / cfg.s2v_min
    return cfg.s2v_min * ratio ** (torch.arange(s, dtype=torch.float64) / (s - 1))


def space2vec(xy: torch.Tensor, cfg: EncoderConfig) -> torch.Tensor:
    """Encode ``(..., 2)`` meters as ``(..., 4*S)``.

    Scale-major layout: slots ``4s..4s+3`` hold
    ``sin(x/l_s), cos(x/l_s), sin(y/l_s), cos(y/l_s)``.
    """
    lam = s2v_wavelengths(cfg).to(xy.dtype if xy.is_floating_point() else torch.float64)
    xy = xy.to(lam.dtype)
    ax = xy[..., 0:1] / lam
    ay = xy[..., 1:2] / lam
    out = torch.stack([torch.sin(ax), torch.cos(ax), torch.sin(ay), torch.cos(ay)], dim=-1)
    return out.flatten(-2)


class Time2Vec(nn.Module):
    """Slot 0 linear, the rest ``sin(w t + phi)``; one scalar time in, ``dim`` out."""

    def __init__(self, dim: int):
        super().__init__()
        self.omega = nn.Parameter(torch.randn(dim))
        self.phi = nn.Parameter(torch.randn(dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        z = t.unsqueeze(-1) * self.omega + self.phi
        return torch.cat([z[..., :1], torch.sin(z[..., 1:])], dim=-1)


def sinusoidal_positions(length: int, dim: int) -> torch.Tensor:
    """``PE[p, 2i] = sin(p / 10000^(2i/d))``, ``PE[p, 2i+1] = cos(...)``."""
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    i2 = torch.arange(0, dim, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i2 / dim)
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle)[:, : dim // 2]
    return pe


def positional_encode(x: torch.Tensor) -> torch.Tensor:
    """Add fixed sinusoidal positions to ``(..., L, d)``."""
    pe = sinusoidal_positions(x.shape[-2], x.shape[-1]).to(x.dtype)
    return x + pe


class TokenEmbedder(nn.Module):
    """Builds the concatenated per-token input vectors.

    The embedding table covers the whole vocabulary: special ids and region
    ids share it, and the temporal heads reuse it for their queries.
    """

    def __init__(self, cfg: EncoderConfig, vocab_size: int):
        super().__init__()
        if vocab_size <= N_SPECIAL:
            raise ValueError("vocabulary has no regions")
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.embedding = nn.Embedding(vocab_size, cfg.region_emb_dim)
        self.time2vec = Time2Vec(cfg.t2v_dim)

    def forward(self, ids, xy, arrival, departure, is_visit) -> torch.Tensor:
        """ids/arrival/departure/is_visit: ``(..., L)``; xy: ``(..., L, 2)``; times in days."""
        if (ids < 0).any() or (ids >= self.vocab_size).any():
            raise VocabularyError("token id outside the vocabulary")
        dtype = self.embedding.weight.dtype
        spatial = space2vec(xy, self.cfg).to(dtype)
        temporal = torch.cat(
            [self.time2vec(arrival.to(dtype)), self.time2vec(departure.to(dtype))], dim=-1
        )
        st = torch.cat([spatial, temporal], dim=-1) * is_visit.unsqueeze(-1).to(dtype)
        return torch.cat([st, self.embedding(ids)], dim=-1)

    def embed_tokens(self, tokens: list[Token], time_unit: float | None = None) -> torch.Tensor:
        """Convenience path for a single token list; returns ``(L, model_dim)``."""
        unit = self.cfg.time_unit if time_unit is None else time_unit
        ids, xy, arr, dep, vis = token_features(tokens, unit)
        return self.forward(ids, xy, arr, dep, vis)


def token_id(token: Token) -> int:
    if token.kind is TokenKind.VISIT:
        return token.visit.region
    return _SPECIAL_ID[token.kind]


def token_features(tokens: list[Token], time_unit: float = SECONDS_PER_DAY):
    """Tensors (ids, xy, arrival, departure, is_visit) for one token list."""
    ids, xy, arr, dep, vis = [], [], [], [], []
    for tok in tokens:
        ids.append(token_id(tok))
        if tok.is_visit:
            v = tok.visit
            xy.append((v.x, v.y))
            arr.append(v.arrival / time_unit)
            dep.append(v.departure / time_unit)
            vis.append(True)
        else:
            xy.append((0.0, 0.0))
            arr.append(0.0)
            dep.append(0.0)
            vis.append(False)
    return (
        torch.tensor(ids, dtype=torch.long),
        torch.tensor(xy, dtype=torch.float64).reshape(-1, 2),
        torch.tensor(arr, dtype=torch.float64),
        torch.tensor(dep, dtype=torch.float64),
        torch.tensor(vis, dtype=torch.bool),
    )


def check_divisible(model_dim: int, n_heads: int) -> None:
    if model_dim % n_heads:
        raise ValueError(f"model_dim {model_dim} not divisible by {n_heads} heads")


__all__ = [
    "EncoderConfig",
    "Time2Vec",
    "TokenEmbedder",
    "VocabularyError",
    "positional_encode",
    "s2v_wavelengths",
    "sinusoidal_positions",
    "space2vec",
    "token_features",
    "token_id",
]
