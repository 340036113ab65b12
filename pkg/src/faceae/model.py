"""Shape encoder, face-token decoder and coordinate heads."""

from __future__ import annotations

import math

import torch
from torch import nn

from .config import ModelConfig
from .errors import DataError
from .tensor_core import attention, cross_entropy_logits, gelu
from .tokenizer import SLOTS


class MultiHeadAttention(nn.Module):
    def __init__(self, d: int, heads: int, d_kv: int | None = None):
        super().__init__()
        d_kv = d if d_kv is None else d_kv
        self.heads = heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d_kv, d)
        self.v = nn.Linear(d_kv, d)
        self.o = nn.Linear(d, d)

    def forward(self, x, ctx=None, causal=False, kv_mask=None):
        ctx = x if ctx is None else ctx
        y = attention(self.q(x), self.k(ctx), self.v(ctx), self.heads, causal, kv_mask)
        return self.o(y)


class FeedForward(nn.Module):
    def __init__(self, d: int, mult: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(d, d * mult)
        self.fc2 = nn.Linear(d * mult, d)

    def forward(self, x):
        return self.fc2(gelu(self.fc1(x)))


class SelfAttentionLayer(nn.Module):
    """Pre-norm transformer encoder layer."""

    def __init__(self, d: int, heads: int, mult: int = 4):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads)
        self.ln2 = nn.LayerNorm(d)
        self.ffn = FeedForward(d, mult)

    def forward(self, x, causal=False, kv_mask=None):
        x = x + self.attn(self.ln1(x), causal=causal, kv_mask=kv_mask)
        return x + self.ffn(self.ln2(x))


class CrossAttentionLayer(nn.Module):
    def __init__(self, d: int, heads: int, d_kv: int, mult: int = 4):
        super().__init__()
        self.ln_q = nn.LayerNorm(d)
        self.ln_kv = nn.LayerNorm(d_kv)
        self.attn = MultiHeadAttention(d, heads, d_kv)
        self.ln2 = nn.LayerNorm(d)
        self.ffn = FeedForward(d, mult)

    def forward(self, x, ctx, kv_mask=None):
        x = x + self.attn(self.ln_q(x), self.ln_kv(ctx), kv_mask=kv_mask)
        return x + self.ffn(self.ln2(x))


class DecoderLayer(nn.Module):
    """Causal self-attention, cross-attention to the latent set, feed-forward."""

    def __init__(self, d: int, heads: int, d_latent: int, mult: int = 4):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, heads)
        self.ln2 = nn.LayerNorm(d)
        self.ln_c = nn.LayerNorm(d_latent)
        self.cross_attn = MultiHeadAttention(d, heads, d_latent)
        self.ln3 = nn.LayerNorm(d)
        self.ffn = FeedForward(d, mult)

    def forward(self, x, latent, pad_mask=None):
        x = x + self.self_attn(self.ln1(x), causal=True, kv_mask=pad_mask)
        x = x + self.cross_attn(self.ln2(x), self.ln_c(latent))
        return x + self.ffn(self.ln3(x))


def fourier_features(xyz: torch.Tensor, bands: int) -> torch.Tensor:
    freqs = (2.0 ** torch.arange(bands, dtype=xyz.dtype)) * math.pi
    ang = xyz[..., None] * freqs  # [..., 3, bands]
    ang = ang.flatten(-2)
    return torch.cat([xyz, torch.sin(ang), torch.cos(ang)], dim=-1)


class ShapeEncoder(nn.Module):
    """Point cloud -> latent vector set via query cross-attention + self-attention stack."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_latent
        self.point_embed = nn.Linear(3 + 6 * cfg.freq_bands + 3, d)
        if cfg.queries == "learnable":
            self.query_emb = nn.Parameter(torch.randn(cfg.k, d) * 0.02)
        self.cross = CrossAttentionLayer(d, cfg.heads, d, cfg.ffn_mult)
        self.layers = nn.ModuleList(SelfAttentionLayer(d, cfg.heads, cfg.ffn_mult)
                                    for _ in range(cfg.enc_layers))
        self.ln = nn.LayerNorm(d)
        self.down = nn.Linear(d, cfg.bottleneck_dim)
        self.up = nn.Linear(cfg.bottleneck_dim, d)

    def embed_points(self, cloud: torch.Tensor) -> torch.Tensor:
        feats = torch.cat([fourier_features(cloud[..., :3], self.cfg.freq_bands), cloud[..., 3:6]], -1)
        return self.point_embed(feats)

    def forward(self, cloud: torch.Tensor, query_idx: torch.Tensor | None = None) -> torch.Tensor:
        """cloud: [B, m, 6] positions+normals; query_idx: [B, k] (fps mode)."""
        if cloud.shape[-2] < self.cfg.k:
            raise DataError(f"need at least k={self.cfg.k} points, got {cloud.shape[-2]}")
        x = self.embed_points(cloud)
        if self.cfg.queries == "learnable":
            q = self.query_emb.expand(x.shape[0], -1, -1)
        else:
            if query_idx is None:
                raise DataError("fps queries need query indices")
            q = torch.gather(x, 1, query_idx[..., None].expand(-1, -1, x.shape[-1]))
        c = self.cross(q, x)
        for layer in self.layers:
            c = layer(c)
        return self.up(self.down(self.ln(c)))


class FaceEmbedding(nn.Module):
    """Face pooling: 9 slot ids -> one model-width token, plus BOS/EOS/positions."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        if cfg.pooling == "embed":
            self.coord_emb = nn.Embedding(cfg.resolution, cfg.d_coord)
            self.slot_emb = nn.Parameter(torch.randn(SLOTS, cfg.d_coord) * 0.02)
            self.fc1 = nn.Linear(SLOTS * cfg.d_coord, d)
        else:
            self.fc1 = nn.Linear(SLOTS, d)
        self.fc2 = nn.Linear(d, d)
        self.bos = nn.Parameter(torch.randn(d) * 0.02)
        self.eos = nn.Parameter(torch.randn(d) * 0.02)
        self.pos_emb = nn.Embedding(cfg.max_faces + 1, d)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        """tokens: [B, n, 9] -> [B, n + 1, d_model] with BOS at position 0."""
        b, n, _ = tokens.shape
        if n > self.cfg.max_faces:
            raise DataError(f"prefix of {n} faces exceeds max_faces={self.cfg.max_faces}")
        r = self.cfg.resolution
        is_eos = tokens[..., 0] == r
        ids = tokens.clamp(max=r - 1)
        if self.cfg.pooling == "embed":
            e = self.coord_emb(ids) + self.slot_emb  # [B, n, 9, d_coord]
            e = e.flatten(-2)
        else:
            e = ids.to(self.fc2.weight.dtype) / (r - 1) - 0.5
        t = self.fc2(gelu(self.fc1(e)))
        t = torch.where(is_eos[..., None], self.eos.expand_as(t), t)
        t = torch.cat([self.bos.expand(b, 1, -1), t], dim=1)
        return t + self.pos_emb.weight[: n + 1]


class CoordinateHead(nn.Module):
    """Base: teacher-forced logits for all 9 slots given target slots."""

    def forward(self, h: torch.Tensor, slots: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def slot_logits(self, h: torch.Tensor, prev: torch.Tensor) -> torch.Tensor:
        """Logits of slot ``j = prev.shape[-1]`` given the earlier slots of the face."""
        j = prev.shape[-1]
        if j >= SLOTS:
            raise DataError("a face has only 9 slots")
        pad = torch.zeros(*prev.shape[:-1], SLOTS - j, dtype=prev.dtype)
        return self.forward(h, torch.cat([prev, pad], -1))[..., j, :]


class CausalMLPHead(CoordinateHead):
    """Slot j: hidden = GELU(A h + sum_{s<j} E_s[c_s] + b_j); logits = W_j hidden."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        v, hid = cfg.resolution + 1, cfg.head_hidden
        self.inp = nn.Linear(cfg.d_model, hid)
        self.prev_emb = nn.Parameter(torch.randn(SLOTS - 1, v, hid) * 0.02)
        self.slot_bias = nn.Parameter(torch.zeros(SLOTS, hid))
        self.out_w = nn.Parameter(torch.zeros(SLOTS, hid, v))
        self.out_b = nn.Parameter(torch.zeros(SLOTS, v))

    def forward(self, h, slots):
        base = self.inp(h)[..., None, :]  # [..., 1, hid]
        prev = slots[..., : SLOTS - 1]
        e = self.prev_emb[torch.arange(SLOTS - 1), prev]  # [..., 8, hid]
        ctx = torch.cumsum(e, dim=-2)
        ctx = torch.cat([torch.zeros_like(ctx[..., :1, :]), ctx], dim=-2)
        z = gelu(base + ctx + self.slot_bias)
        return torch.einsum("...jh,jhv->...jv", z, self.out_w) + self.out_b


class ParallelHead(CoordinateHead):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.v = cfg.resolution + 1
        self.fc = nn.Linear(cfg.d_model, cfg.head_hidden)
        self.out = nn.Linear(cfg.head_hidden, SLOTS * self.v)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, h, slots):
        y = self.out(gelu(self.fc(h)))
        return y.reshape(*h.shape[:-1], SLOTS, self.v)


class AttentionHead(CoordinateHead):
    """One causal transformer layer over [h, slot_1, ..., slot_8]."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        v = cfg.resolution + 1
        d = cfg.head_hidden // 2
        self.inp = nn.Linear(cfg.d_model, d)
        self.tok_emb = nn.Embedding(v, d)
        self.slot_pos = nn.Parameter(torch.randn(SLOTS, d) * 0.02)
        self.layer = SelfAttentionLayer(d, 4 if d % 4 == 0 else 1, 2)
        self.ln = nn.LayerNorm(d)
        self.out_w = nn.Parameter(torch.zeros(SLOTS, d, v))
        self.out_b = nn.Parameter(torch.zeros(SLOTS, v))

    def forward(self, h, slots):
        lead = h.shape[:-1]
        x = torch.cat([self.inp(h)[..., None, :], self.tok_emb(slots[..., : SLOTS - 1])], dim=-2)
        x = (x + self.slot_pos).reshape(-1, SLOTS, x.shape[-1])
        z = self.ln(self.layer(x, causal=True)).reshape(*lead, SLOTS, -1)
        return torch.einsum("...jh,jhv->...jv", z, self.out_w) + self.out_b


HEADS = {"causal_mlp": CausalMLPHead, "parallel": ParallelHead, "attention": AttentionHead}


class FaceAE(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = ShapeEncoder(cfg)
        self.embed = FaceEmbedding(cfg)
        self.layers = nn.ModuleList(DecoderLayer(cfg.d_model, cfg.heads, cfg.d_latent, cfg.ffn_mult)
                                    for _ in range(cfg.dec_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = HEADS[cfg.head](cfg)

    @property
    def vocab_size(self) -> int:
        return self.cfg.resolution + 1

    def encode_shape(self, cloud, query_idx=None):
        return self.encoder(cloud, query_idx)

    def decode_faces(self, emb, latent, pad_mask=None):
        x = emb
        for layer in self.layers:
            x = layer(x, latent, pad_mask)
        return self.ln_f(x)

    def hidden(self, tokens_in, latent, pad_mask=None, pad_to: int | None = None):
        """Decoder outputs for BOS + ``tokens_in``.

        ``pad_to`` runs everything at a fixed length with trailing filler faces the
        causal mask hides; every prefix then goes through identically shaped
        kernels, so position p is bitwise independent of later faces.
        """
        n = tokens_in.shape[1] + 1
        if pad_to is not None and pad_to > n:
            extra = pad_to - n
            tokens_in = torch.cat([tokens_in, tokens_in.new_zeros(tokens_in.shape[0], extra, SLOTS)], 1)
            if pad_mask is not None:
                pad_mask = torch.cat([pad_mask, pad_mask.new_zeros(pad_mask.shape[0], extra)], 1)
        emb = self.embed(tokens_in)
        return self.decode_faces(emb, latent, pad_mask)[:, :n]

    def teacher_forced(self, cloud, query_idx, tokens, lengths):
        """Logits [B, T, 9, V] and validity mask [B, T] for padded targets ``tokens``.

        tokens: [B, T, 9], row b valid for the first lengths[b] entries (faces + EOS).
        """
        if tokens.shape[0] == 0:
            raise DataError("empty batch")
        t = tokens.shape[1]
        valid = torch.arange(t)[None, :] < lengths[:, None]
        latent = self.encode_shape(cloud, query_idx)
        h = self.hidden(tokens[:, : t - 1], latent, valid)
        return self.head(h, tokens), valid

    def forward_loss(self, cloud, query_idx, tokens, lengths):
        """Per-mesh mean over faces of the 9-slot cross-entropy sum, averaged over the batch."""
        logits, valid = self.teacher_forced(cloud, query_idx, tokens, lengths)
        nll = cross_entropy_logits(logits, tokens, reduction="none").sum(-1)  # [B, T]
        vf = valid.to(nll.dtype)
        per_mesh = (nll * vf).sum(-1) / vf.sum(-1)
        loss = per_mesh.mean()
        with torch.no_grad():
            hit = (logits.argmax(-1) == tokens) & valid[..., None]
            acc = hit.sum().item() / (SLOTS * valid.sum().item())
        return loss, acc

    @torch.no_grad()
    def greedy_decode(self, cloud, query_idx, max_faces: int):
        """Greedy face-by-face, slot-by-slot decoding for a single shape.

        Returns (faces [n, 9] int64 tensor, stop reason 'eos' | 'limit').
        """
        r = self.cfg.resolution
        max_faces = min(max_faces, self.cfg.max_faces)
        latent = self.encode_shape(cloud[None], None if query_idx is None else query_idx[None])
        faces = torch.zeros(0, SLOTS, dtype=torch.long)
        for _ in range(max_faces):
            h = self.hidden(faces[None], latent, pad_to=self.cfg.max_faces + 1)[0, -1]
            prev = torch.zeros(0, dtype=torch.long)
            for j in range(SLOTS):
                logits = self.head.slot_logits(h, prev)
                if j == 0 and int(logits.argmax()) == r:
                    return faces, "eos"
                # the end marker is only meaningful in slot 0
                tok = int(logits[:r].argmax())
                prev = torch.cat([prev, torch.tensor([tok])])
            faces = torch.cat([faces, prev[None]], dim=0)
        return faces, "limit"

    def n_params(self) -> int:
        return sum(p.numel() for p in self.parameters())
