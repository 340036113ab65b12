"""Finite-difference verification of every differentiable op and model block (64-bit)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from . import tensor_core as tc
from .config import ModelConfig
from .model import (AttentionHead, CausalMLPHead, DecoderLayer, FaceAE, FaceEmbedding, ParallelHead,
                    ShapeEncoder)

OP_TOL = 1e-4
E2E_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.rel_err < self.tol


def _leaf(gen: torch.Generator, *shape) -> torch.Tensor:
    return torch.randn(*shape, generator=gen, dtype=torch.float64).requires_grad_(True)


def _weighted(out: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    """Contract with fixed random weights so every output entry matters."""
    w = torch.randn(out.shape, generator=gen, dtype=torch.float64)
    return (out * w).sum()


def _op(name: str, make: Callable, gen: torch.Generator) -> CheckResult:
    inputs, f = make(gen)
    w_gen = torch.Generator().manual_seed(99)
    weights = None

    def fn():
        nonlocal weights
        out = f(*inputs)
        if weights is None:
            weights = torch.randn(out.shape, generator=w_gen, dtype=torch.float64)
        return (out * weights).sum()

    return CheckResult(name, tc.gradcheck(fn, inputs), OP_TOL)


def tiny_config(**kw) -> ModelConfig:
    base = dict(resolution=8, d_model=16, d_latent=16, bottleneck_dim=4, k=4, enc_layers=1,
                dec_layers=1, heads=2, max_faces=6, m=12, freq_bands=2, d_coord=4, head_hidden=16,
                ffn_mult=2)
    base.update(kw)
    return ModelConfig(**base)


def _randomize(module: torch.nn.Module, gen: torch.Generator) -> None:
    # zero-initialized output heads would make several gradients vanish identically
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.3)


def _module_check(name: str, module: torch.nn.Module, call: Callable, gen: torch.Generator,
                  extra: list[torch.Tensor] = (), max_entries: int = 60) -> CheckResult:
    module.double()
    _randomize(module, gen)
    params = [p for p in module.parameters()] + list(extra)
    w_gen = torch.Generator().manual_seed(7)
    weights = None

    def fn():
        nonlocal weights
        out = call()
        if weights is None:
            weights = torch.randn(out.shape, generator=w_gen, dtype=torch.float64)
        return (out * weights).sum()

    return CheckResult(name, tc.gradcheck(fn, params, max_entries=max_entries), OP_TOL)


def op_checks(seed: int = 0) -> list[CheckResult]:
    gen = torch.Generator().manual_seed(seed)
    ids = torch.tensor([[0, 3, 1], [2, 2, 4]])
    mask = torch.tensor([[True, True, False, True, False], [True, False, True, True, True]])
    cases = {
        "matmul": lambda g: ([_leaf(g, 3, 4), _leaf(g, 4, 2)], tc.matmul),
        "add": lambda g: ([_leaf(g, 3, 4), _leaf(g, 4)], torch.add),
        "mul": lambda g: ([_leaf(g, 3, 4), _leaf(g, 3, 1)], torch.mul),
        "linear": lambda g: ([_leaf(g, 5, 3), _leaf(g, 4, 3), _leaf(g, 4)], tc.linear),
        "embedding_lookup": lambda g: ([_leaf(g, 6, 3)], lambda t: tc.embedding_lookup(t, ids)),
        "layer_norm": lambda g: ([_leaf(g, 4, 6), _leaf(g, 6), _leaf(g, 6)], tc.layer_norm),
        "softmax": lambda g: ([_leaf(g, 3, 5)], tc.softmax),
        "log_softmax": lambda g: ([_leaf(g, 3, 5)], tc.log_softmax),
        "gelu": lambda g: ([_leaf(g, 4, 5)], tc.gelu),
        "concat": lambda g: ([_leaf(g, 2, 3), _leaf(g, 2, 2)], lambda a, b: tc.concat([a, b], -1)),
        "slice": lambda g: ([_leaf(g, 4, 6)], lambda x: tc.slice_(x, 1, 1, 4)),
        "attention": lambda g: ([_leaf(g, 2, 5, 8), _leaf(g, 2, 5, 8), _leaf(g, 2, 5, 8)],
                                lambda q, k, v: tc.attention(q, k, v, heads=2)),
        "attention_causal": lambda g: ([_leaf(g, 2, 5, 8), _leaf(g, 2, 5, 8), _leaf(g, 2, 5, 8)],
                                       lambda q, k, v: tc.attention(q, k, v, heads=2, causal=True)),
        "attention_masked": lambda g: ([_leaf(g, 2, 3, 8), _leaf(g, 2, 5, 8), _leaf(g, 2, 5, 8)],
                                       lambda q, k, v: tc.attention(q, k, v, heads=4, kv_mask=mask)),
        "cross_entropy": lambda g: ([_leaf(g, 6, 9)], lambda x: tc.cross_entropy_logits(
            x, torch.tensor([0, 8, 3, 3, 1, 5]), reduction="none")),
    }
    return [_op(name, make, gen) for name, make in cases.items()]


def block_checks(seed: int = 0) -> list[CheckResult]:
    gen = torch.Generator().manual_seed(seed)
    cfg = tiny_config()
    out = []
    layer = DecoderLayer(cfg.d_model, cfg.heads, cfg.d_latent, cfg.ffn_mult)
    x, lat = _leaf(gen, 2, 5, cfg.d_model), _leaf(gen, 2, 4, cfg.d_latent)
    pad = torch.tensor([[True] * 5, [True, True, True, False, False]])
    out.append(_module_check("decoder_layer", layer, lambda: layer(x, lat, pad), gen, [x, lat]))

    emb = FaceEmbedding(cfg)
    toks = torch.tensor([[[0, 1, 2, 3, 4, 5, 6, 7, 0], [1, 1, 1, 2, 2, 2, 3, 3, 3], [8] + [0] * 8]])
    out.append(_module_check("face_embedding", emb, lambda: emb(toks), gen))

    slots = torch.tensor([[[0, 1, 2, 3, 4, 5, 6, 7, 0], [8, 0, 0, 0, 0, 0, 0, 0, 0]]])
    for head_cls in (CausalMLPHead, ParallelHead, AttentionHead):
        head = head_cls(cfg)
        h = _leaf(gen, 1, 2, cfg.d_model)
        out.append(_module_check(f"head_{head_cls.__name__}", head, lambda: head(h, slots), gen, [h]))

    enc = ShapeEncoder(cfg)
    cloud = torch.cat([torch.rand(1, cfg.m, 3, generator=gen, dtype=torch.float64) - 0.5,
                       torch.nn.functional.normalize(torch.randn(1, cfg.m, 3, generator=gen,
                                                                 dtype=torch.float64), dim=-1)], -1)
    qidx = torch.tensor([[0, 3, 6, 9]])
    out.append(_module_check("shape_encoder", enc, lambda: enc(cloud, qidx), gen))
    return out


def end_to_end_check(seed: int = 0, fraction: float = 0.01, min_entries: int = 40) -> CheckResult:
    """Loss gradient vs central differences on a random ~1% of all parameter entries."""
    from .mesh_io import RawMesh
    from .mesh_prep import order_faces, prepare
    from .sampling import fps, sample_surface
    from .tokenizer import encode

    gen = torch.Generator().manual_seed(seed)
    cfg = tiny_config()
    torch.manual_seed(seed)
    model = FaceAE(cfg).double()
    _randomize(model, gen)
    mesh = RawMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.5]], [[0, 1, 2], [1, 3, 2]])
    qm = prepare(mesh, cfg.resolution)
    tokens = torch.from_numpy(encode(order_faces(qm)).tokens)[None]
    normed = RawMesh(qm.vertices / (cfg.resolution - 1) - 0.5, qm.faces)
    pc = sample_surface(normed, cfg.m, seed=seed)
    cloud = torch.from_numpy(pc.as_array())[None]
    qidx = torch.from_numpy(fps(pc.points, cfg.k))[None]
    lengths = torch.tensor([tokens.shape[1]])

    def fn():
        return model.forward_loss(cloud, qidx, tokens, lengths)[0]

    params = list(model.parameters())
    sizes = np.array([p.numel() for p in params])
    total = int(sizes.sum())
    n_pick = max(min_entries, int(round(fraction * total)))
    rng = np.random.default_rng(seed)
    flat = np.sort(rng.choice(total, size=n_pick, replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    for p in params:
        p.grad = None
    tc.backward(fn())
    analytic, numeric = [], []
    for i, p in enumerate(params):
        sel = flat[(flat >= offsets[i]) & (flat < offsets[i + 1])] - offsets[i]
        if len(sel) == 0:
            continue
        analytic.append(p.grad.reshape(-1)[sel])
        numeric.append(tc.numerical_grad(fn, p, 1e-5, sel.tolist()))
    a, n = torch.cat(analytic), torch.cat(numeric)
    err = float(torch.linalg.vector_norm(a - n) / max(float(torch.linalg.vector_norm(n)), 1e-12))
    return CheckResult(f"end_to_end_{n_pick}_of_{total}", err, E2E_TOL)


def run_all(seed: int = 0) -> list[CheckResult]:
    return op_checks(seed) + block_checks(seed) + [end_to_end_check(seed)]
