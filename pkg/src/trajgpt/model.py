"""The spatiotemporal network: causal sequence encoder, region head and two
cross-attention mixture heads (travel time, then duration), trained on the
joint negative log-likelihood.

Shapes: batch ``B``, length ``L``, model width ``d``, vocabulary ``V``.
Output position ``p`` predicts token ``p + 1`` from tokens ``0..p``; the
temporal heads additionally see the (teacher-forced) region and arrival of
token ``p + 1`` through their queries.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, asdict

import torch
import torch.nn.functional as F
from torch import nn

from . import gmm
from .batching import Batch
from .encoders import EncoderConfig, TokenEmbedder, check_divisible, positional_encode
from .preprocess import SpecialToken


class Variant(str, enum.Enum):
    FULL = "full"
    INDEPENDENCE = "independence"
    REGRESSION = "regression"


class LengthError(ValueError):
    pass


class NumericalError(FloatingPointError):
    pass


@dataclass
class ModelConfig:
    n_layers: int = 2
    n_heads: int = 8
    ff_dim: int = 32
    gmm_components: int = 3
    dropout: float = 0.1
    ln_eps: float = 1e-5
    learning_rate: float = 1e-4
    batch_size: int = 64
    max_seq_len: int = 512
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        for name in ("n_layers", "n_heads", "ff_dim", "gmm_components", "batch_size", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        check_divisible(self.model_dim, self.n_heads)

    @property
    def model_dim(self) -> int:
        return self.encoder.model_dim

    @property
    def region_emb_dim(self) -> int:
        return self.encoder.region_emb_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def geolife(cls, **overrides) -> "ModelConfig":
        base = dict(n_layers=2, n_heads=8, ff_dim=32, gmm_components=3, batch_size=64,
                    encoder=EncoderConfig(region_emb_dim=32))
        return cls(**{**base, **overrides})

    @classmethod
    def mobilitysim(cls, **overrides) -> "ModelConfig":
        base = dict(n_layers=4, n_heads=2, ff_dim=256, gmm_components=5, batch_size=128,
                    encoder=EncoderConfig(region_emb_dim=64))
        return cls(**{**base, **overrides})


def causal_mask(length: int, pad: torch.Tensor | None = None) -> torch.Tensor:
    """Boolean ``(B or 1, 1, L, L)`` attention permission: key ``j`` visible to query ``i``
    iff ``j <= i`` and ``j`` is not padding (a position always sees itself)."""
    allowed = torch.ones(length, length, dtype=torch.bool).tril()
    if pad is None:
        return allowed[None, None]
    keep = ~pad[:, None, None, :] | torch.eye(length, dtype=torch.bool)[None, None]
    return allowed[None, None] & keep


class MultiHeadAttention(nn.Module):
    def __init__(self, q_dim: int, kv_dim: int, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        check_divisible(d_model, n_heads)
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.w_q = nn.Linear(q_dim, d_model)
        self.w_k = nn.Linear(kv_dim, d_model)
        self.w_v = nn.Linear(kv_dim, d_model)
        self.w_o = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x):
        b, n, _ = x.shape
        return x.view(b, n, self.n_heads, self.head_dim).transpose(1, 2)

    def forward(self, q, k, v, allowed):
        qh, kh, vh = self._split(self.w_q(q)), self._split(self.w_k(k)), self._split(self.w_v(v))
        scores = qh @ kh.transpose(-2, -1) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~allowed, float("-inf"))
        attn = self.dropout(torch.softmax(scores, dim=-1))
        out = (attn @ vh).transpose(1, 2).reshape(q.shape[0], q.shape[1], -1)
        return self.w_o(out)


class FeedForward(nn.Sequential):
    def __init__(self, d_model: int, ff_dim: int, dropout: float):
        super().__init__(
            nn.Linear(d_model, ff_dim), nn.ReLU(), nn.Dropout(dropout), nn.Linear(ff_dim, d_model)
        )


class EncoderLayer(nn.Module):
    """Post-norm self-attention block."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.model_dim
        self.attn = MultiHeadAttention(d, d, d, cfg.n_heads, cfg.dropout)
        self.ff = FeedForward(d, cfg.ff_dim, cfg.dropout)
        self.norm1 = nn.LayerNorm(d, eps=cfg.ln_eps)
        self.norm2 = nn.LayerNorm(d, eps=cfg.ln_eps)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, allowed):
        x = self.norm1(x + self.drop(self.attn(x, x, x, allowed)))
        return self.norm2(x + self.drop(self.ff(x)))


class TransformerStack(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_layers))

    def forward(self, x, allowed):
        for layer in self.layers:
            x = layer(x, allowed)
        return x


class CrossAttentionHead(nn.Module):
    """Decoder-style block: query per position attends to ``H[0..p]``, then FF,
    then an affine map to the head's raw outputs."""

    def __init__(self, cfg: ModelConfig, q_dim: int, out_dim: int):
        super().__init__()
        d = cfg.model_dim
        self.q_proj = nn.Linear(q_dim, d)
        self.attn = MultiHeadAttention(q_dim, d, d, cfg.n_heads, cfg.dropout)
        self.ff = FeedForward(d, cfg.ff_dim, cfg.dropout)
        self.norm1 = nn.LayerNorm(d, eps=cfg.ln_eps)
        self.norm2 = nn.LayerNorm(d, eps=cfg.ln_eps)
        self.drop = nn.Dropout(cfg.dropout)
        self.out = nn.Linear(d, out_dim)

    def forward(self, query, h, allowed):
        x = self.norm1(self.q_proj(query) + self.drop(self.attn(query, h, h, allowed)))
        x = self.norm2(x + self.drop(self.ff(x)))
        return self.out(x)


@dataclass
class ModelOutput:
    hidden: torch.Tensor          # (B, L, d)
    region_logits: torch.Tensor   # (B, L, V)
    travel: gmm.GaussianMixtureParams | torch.Tensor  # mixture, or (B, L) point values
    duration: gmm.GaussianMixtureParams | torch.Tensor

    def region_probs(self) -> torch.Tensor:
        return torch.softmax(self.region_logits, dim=-1)


class TrajGPT(nn.Module):
    def __init__(self, cfg: ModelConfig, vocab_size: int, variant: Variant | str = Variant.FULL):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.variant = Variant(variant)
        enc = cfg.encoder
        d = cfg.model_dim
        self.embedder = TokenEmbedder(enc, vocab_size)
        self.input_dropout = nn.Dropout(cfg.dropout)
        self.encoder = TransformerStack(cfg)
        self.region_encoder = TransformerStack(cfg)
        self.region_out = nn.Linear(d, vocab_size)

        out_dim = 1 if self.variant is Variant.REGRESSION else 3 * cfg.gmm_components
        travel_q = enc.region_emb_dim
        duration_q = enc.region_emb_dim + enc.t2v_dim
        self.travel_head = CrossAttentionHead(cfg, travel_q, out_dim)
        self.duration_head = CrossAttentionHead(cfg, duration_q, out_dim)
        if self.variant is Variant.INDEPENDENCE:
            self.travel_query = nn.Parameter(torch.randn(travel_q) * 0.1)
            self.duration_query = nn.Parameter(torch.randn(duration_q) * 0.1)

    # -- encoder ---------------------------------------------------------

    def encode_sequence(self, ids, xy, arrival, departure, is_visit):
        """Hidden states ``H`` of shape ``(B, L, d)`` plus the attention mask used."""
        length = ids.shape[-1]
        if length > self.cfg.max_seq_len:
            raise LengthError(f"sequence length {length} exceeds max_seq_len {self.cfg.max_seq_len}")
        x = self.embedder(ids, xy, arrival, departure, is_visit)
        x = self.input_dropout(positional_encode(x))
        allowed = causal_mask(length, ids == int(SpecialToken.PAD))
        return self.encoder(x, allowed), allowed

    def region_logits(self, h, allowed):
        return self.region_out(self.region_encoder(h, allowed))

    # -- temporal heads ----------------------------------------------------

    def _queries(self, target_ids, target_arrival):
        if self.variant is Variant.INDEPENDENCE:
            shape = target_ids.shape
            return (
                self.travel_query.expand(*shape, -1),
                self.duration_query.expand(*shape, -1),
            )
        e = self.embedder.embedding(target_ids)
        t2v = self.embedder.time2vec(target_arrival.to(e.dtype))
        return e, torch.cat([e, t2v], dim=-1)

    def _finish(self, raw):
        if self.variant is Variant.REGRESSION:
            return raw.squeeze(-1)
        return gmm.positive_params(raw)

    def travel_time_params(self, h, target_ids, allowed):
        q, _ = self._queries(target_ids, torch.zeros_like(target_ids, dtype=h.dtype))
        return self._finish(self.travel_head(q, h, allowed))

    def duration_params(self, h, target_ids, target_arrival, allowed):
        _, q = self._queries(target_ids, target_arrival)
        return self._finish(self.duration_head(q, h, allowed))

    # -- full pass ---------------------------------------------------------

    def forward(self, batch: Batch, target_ids=None, target_arrival=None) -> ModelOutput:
        h, allowed = self.encode_sequence(
            batch.ids, batch.xy, batch.arrival, batch.departure, batch.is_visit
        )
        target_ids = batch.tgt_ids if target_ids is None else target_ids
        target_arrival = batch.tgt_arrival if target_arrival is None else target_arrival
        # special-token targets carry no embedding meaning for the heads; any id works
        return ModelOutput(
            hidden=h,
            region_logits=self.region_logits(h, allowed),
            travel=self.travel_time_params(h, target_ids, allowed),
            duration=self.duration_params(h, target_ids, target_arrival, allowed),
        )


@dataclass
class LossBreakdown:
    total: torch.Tensor
    region: torch.Tensor
    travel: torch.Tensor
    duration: torch.Tensor
    n_positions: int


def joint_nll_loss(model: TrajGPT, batch: Batch, batch_id=None) -> LossBreakdown:
    """Mean over predicted positions of region NLL plus, for visit targets,
    travel-time and duration NLL (squared error for the regression variant)."""
    out = model(batch)
    mask = batch.loss_mask
    tmask = batch.temporal_mask
    n = int(mask.sum())
    if n == 0:
        raise ValueError("batch has no predicted positions")
    dtype = out.region_logits.dtype
    region_nll = F.cross_entropy(
        out.region_logits[mask], batch.tgt_ids[mask], reduction="sum"
    )
    if tmask.any():
        tt = batch.tgt_travel.to(dtype)[tmask]
        dd = batch.tgt_duration.to(dtype)[tmask]
        if model.variant is Variant.REGRESSION:
            travel = ((out.travel[tmask] - tt) ** 2).sum()
            dur = ((out.duration[tmask] - dd) ** 2).sum()
        else:
            travel = -gmm.log_pdf(out.travel[tmask], tt).sum()
            dur = -gmm.log_pdf(out.duration[tmask], dd).sum()
    else:
        travel = dur = region_nll.new_zeros(())
    total = (region_nll + travel + dur) / n
    if not torch.isfinite(total):
        raise NumericalError(f"non-finite loss {float(total)} in batch {batch_id}")
    return LossBreakdown(total, region_nll / n, travel / n, dur / n, n)
