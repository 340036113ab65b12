"""Numerical substrate: differentiable ops, optimizers, checkpoints, gradcheck.

Arrays and reverse-mode recording come from torch; attention, the
cross-entropy, the optimizers and the finite-difference checker are
written here so that their exact arithmetic is under our control.
"""

from __future__ import annotations

import io
import math
import struct
from pathlib import Path
from typing import Callable, Iterable, Sequence

import torch
import torch.nn.functional as F

from .errors import DataError, NumericalError

Tensor = torch.Tensor


def set_determinism(threads: int = 1) -> None:
    torch.set_num_threads(max(1, int(threads)))
    torch.use_deterministic_algorithms(True)


# -- core ops -------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2]:
        raise DataError(f"matmul shape mismatch {tuple(a.shape)} @ {tuple(b.shape)}")
    return a @ b


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x W^T + b with W stored (out, in)."""
    if x.shape[-1] != weight.shape[-1]:
        raise DataError(f"linear expects last dim {weight.shape[-1]}, got {x.shape[-1]}")
    y = x @ weight.transpose(-1, -2)
    return y if bias is None else y + bias


def embedding_lookup(table: Tensor, ids: Tensor) -> Tensor:
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= table.shape[0]):
        raise DataError("embedding id out of range")
    return table[ids]


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    mu = x.mean(dim=-1, keepdim=True)
    xc = x - mu
    var = (xc * xc).mean(dim=-1, keepdim=True)
    y = xc / torch.sqrt(var + eps)
    if gamma is not None:
        y = y * gamma
    if beta is not None:
        y = y + beta
    return y


def softmax(x: Tensor, dim: int = -1) -> Tensor:
    z = x - x.amax(dim=dim, keepdim=True).detach()
    e = torch.exp(z)
    return e / e.sum(dim=dim, keepdim=True)


def log_softmax(x: Tensor, dim: int = -1) -> Tensor:
    z = x - x.amax(dim=dim, keepdim=True).detach()
    return z - torch.log(torch.exp(z).sum(dim=dim, keepdim=True))


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    return F.gelu(x)


def concat(tensors: Sequence[Tensor], dim: int = -1) -> Tensor:
    return torch.cat(list(tensors), dim=dim)


def slice_(x: Tensor, dim: int, start: int, stop: int) -> Tensor:
    return x.narrow(dim, start, stop - start)


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int = 1, causal: bool = False,
              kv_mask: Tensor | None = None) -> Tensor:
    """Multi-head scaled dot-product attention.

    q: [..., s_q, d]; k, v: [..., s_k, d]. kv_mask: [..., s_k] bool, True
    marks keys that may be attended. Queries whose every key is masked get a
    zero output instead of NaN.
    """
    d = q.shape[-1]
    if d % heads:
        raise DataError(f"model width {d} not divisible by {heads} heads")
    if causal and q.shape[-2] != k.shape[-2]:
        raise DataError("causal attention needs equal query and key lengths")
    dh = d // heads
    lead = q.shape[:-2]

    def split(t: Tensor) -> Tensor:
        return t.reshape(*t.shape[:-1], heads, dh).transpose(-2, -3)

    qh, kh, vh = split(q), split(k), split(v)
    scores = (qh @ kh.transpose(-1, -2)) * (1.0 / math.sqrt(dh))
    allowed = None
    s_q, s_k = q.shape[-2], k.shape[-2]
    if causal:
        allowed = torch.ones(s_q, s_k, dtype=torch.bool, device=q.device).tril()
    if kv_mask is not None:
        km = kv_mask[..., None, None, :]
        allowed = km if allowed is None else (allowed & km)
    if allowed is not None:
        scores = scores.masked_fill(~allowed, float("-inf"))
    w = torch.softmax(scores, dim=-1)
    if kv_mask is not None:
        w = w.masked_fill(~allowed.any(dim=-1, keepdim=True), 0.0)
    out = w @ vh
    return out.transpose(-2, -3).reshape(*lead, s_q, d)


def cross_entropy_logits(logits: Tensor, targets: Tensor, reduction: str = "mean") -> Tensor:
    """-log softmax(logits)[target] via log-sum-exp; reduction mean|sum|none."""
    vocab = logits.shape[-1]
    if targets.numel() and (int(targets.min()) < 0 or int(targets.max()) >= vocab):
        raise DataError("cross-entropy target out of range")
    nll = -log_softmax(logits, dim=-1).gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    if reduction == "none":
        return nll
    if reduction == "sum":
        return nll.sum()
    return nll.mean()


def backward(loss: Tensor) -> None:
    if loss.numel() != 1:
        raise DataError("backward needs a scalar loss")
    loss.backward()


# -- optimizers -----------------------------------------------------------------

_NS_FAST = (3.4445, -4.7750, 2.0315)
# p(x) = (15x - 10x^3 + 3x^5) / 8 has a flat fixed point at 1; one such step
# tightens the [0.68, 1.13] band the fast coefficients oscillate in
_NS_FINISH = (15 / 8, -10 / 8, 3 / 8)


def newton_schulz(g: Tensor, steps: int = 5, eps: float = 1e-7) -> Tensor:
    """Approximate the orthogonal polar factor of a 2-D matrix (quintic iteration)."""
    x = g / (torch.linalg.matrix_norm(g) + eps)
    tall = x.shape[0] > x.shape[1]
    if tall:
        x = x.T
    for i in range(steps):
        a, b, c = _NS_FINISH if i == steps - 1 and steps > 1 else _NS_FAST
        s = x @ x.T
        x = a * x + (b * s + c * s @ s) @ x
    return x.T if tall else x


class _Optimizer:
    def __init__(self, named_params: Iterable[tuple[str, Tensor]], lr: float, weight_decay: float):
        self.params = [(n, p) for n, p in named_params if p.requires_grad]
        self.lr = lr
        self.weight_decay = weight_decay
        self.step_count = 0
        self.state: dict[str, dict[str, Tensor]] = {}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def state_tensors(self) -> dict[str, Tensor]:
        out = {}
        for name, st in self.state.items():
            for key, t in st.items():
                out[f"{name}::{key}"] = t
        return out

    def load_state_tensors(self, tensors: dict[str, Tensor], step: int) -> None:
        self.step_count = step
        for full, t in tensors.items():
            name, key = full.rsplit("::", 1)
            self.state.setdefault(name, {})[key] = t.clone()


class AdamW(_Optimizer):
    def __init__(self, named_params, lr=6e-4, betas=(0.9, 0.95), eps=1e-8, weight_decay=0.1):
        super().__init__(named_params, lr, weight_decay)
        self.betas = betas
        self.eps = eps

    @torch.no_grad()
    def _update(self, name: str, p: Tensor, lr: float, t: int) -> None:
        g = p.grad if p.grad is not None else torch.zeros_like(p)
        st = self.state.setdefault(name, {})
        if "m" not in st:
            st["m"] = torch.zeros_like(p)
            st["v"] = torch.zeros_like(p)
        b1, b2 = self.betas
        st["m"].mul_(b1).add_(g, alpha=1 - b1)
        st["v"].mul_(b2).addcmul_(g, g, value=1 - b2)
        m_hat = st["m"] / (1 - b1 ** t)
        v_hat = st["v"] / (1 - b2 ** t)
        p.mul_(1 - lr * self.weight_decay)
        p.sub_(lr * m_hat / (torch.sqrt(v_hat) + self.eps))

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.step_count += 1
        for name, p in self.params:
            self._update(name, p, lr, self.step_count)


def default_muon_filter(name: str, p: Tensor) -> bool:
    return p.ndim == 2 and "emb" not in name and not name.endswith("out.weight")


class Muon(AdamW):
    """Momentum + Newton-Schulz orthogonalized updates for hidden 2-D weights.

    Everything the filter rejects is updated with AdamW.
    """

    def __init__(self, named_params, lr=6e-4, momentum=0.95, nesterov=True, ns_steps=5,
                 weight_decay=0.1, adam_lr=None, filter=default_muon_filter, **adam_kw):
        super().__init__(named_params, lr=lr, weight_decay=weight_decay, **adam_kw)
        self.momentum = momentum
        self.nesterov = nesterov
        self.ns_steps = ns_steps
        self.adam_ratio = 1.0 if adam_lr is None else adam_lr / lr
        self.use_muon = {n: filter(n, p) for n, p in self.params}

    @torch.no_grad()
    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.step_count += 1
        for name, p in self.params:
            if not self.use_muon[name]:
                self._update(name, p, lr * self.adam_ratio, self.step_count)
                continue
            g = p.grad if p.grad is not None else torch.zeros_like(p)
            st = self.state.setdefault(name, {})
            if "buf" not in st:
                st["buf"] = torch.zeros_like(p)
            buf = st["buf"]
            buf.mul_(self.momentum).add_(g)
            upd = g.add(buf, alpha=self.momentum) if self.nesterov else buf
            upd = newton_schulz(upd, self.ns_steps)
            scale = max(1.0, p.shape[0] / p.shape[1]) ** 0.5
            p.mul_(1 - lr * self.weight_decay)
            p.sub_(lr * scale * upd)


def build_optimizer(kind: str, named_params, lr: float, weight_decay: float) -> _Optimizer:
    if kind == "adamw":
        return AdamW(named_params, lr=lr, weight_decay=weight_decay)
    if kind == "muon":
        return Muon(named_params, lr=lr, weight_decay=weight_decay)
    raise DataError(f"unknown optimizer {kind!r}")


def warmup_cosine(step: int, total: int, peak: float, warmup_frac: float = 0.03,
                  floor: float = 0.0) -> float:
    """Linear warmup to ``peak`` then cosine decay to ``floor`` (0-based step)."""
    warm = max(1, int(round(warmup_frac * total)))
    if step < warm:
        return peak * (step + 1) / warm
    span = max(1, total - warm)
    prog = min(1.0, (step - warm) / span)
    return floor + 0.5 * (peak - floor) * (1.0 + math.cos(math.pi * prog))


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    total = torch.nn.utils.clip_grad_norm_(list(params), max_norm)
    total = float(total)
    if not math.isfinite(total):
        raise NumericalError("non-finite gradient norm")
    return total


# -- checkpoints ----------------------------------------------------------------

CKPT_MAGIC = b"FACEARAE"
CKPT_VERSION = 1
_DTYPES = {torch.float32: (0, "<f4"), torch.float64: (1, "<f8"), torch.int64: (2, "<i8")}
_CODES = {code: (dt, np_dt) for dt, (code, np_dt) in _DTYPES.items()}


def write_checkpoint(path: str | Path, config_text: str, tensors: dict[str, Tensor]) -> None:
    buf = io.BytesIO()
    cfg = config_text.encode("utf-8")
    buf.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(cfg)) + cfg)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        t = tensors[name].detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise DataError(f"unsupported checkpoint dtype {t.dtype}")
        code, np_dt = _DTYPES[t.dtype]
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)) + nb + struct.pack("<BB", code, t.ndim))
        buf.write(struct.pack(f"<{t.ndim}Q", *t.shape))
        buf.write(t.numpy().astype(np_dt).tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint(path: str | Path) -> tuple[str, dict[str, Tensor]]:
    import numpy as np

    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise DataError(f"{path}: not a checkpoint")
    version, n_cfg = struct.unpack_from("<II", data, 8)
    if version != CKPT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    off = 16
    config_text = data[off:off + n_cfg].decode("utf-8")
    off += n_cfg
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        code, ndim = struct.unpack_from("<BB", data, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        dt, np_dt = _CODES[code]
        n = math.prod(shape)
        arr = np.frombuffer(data, dtype=np_dt, count=n, offset=off).reshape(shape)
        off += arr.nbytes
        tensors[name] = torch.from_numpy(arr.copy())
    return config_text, tensors


# -- finite-difference oracle ---------------------------------------------------

def numerical_grad(fn: Callable[[], Tensor], x: Tensor, eps: float = 1e-5,
                   indices: Sequence[int] | None = None) -> Tensor:
    """Central differences of scalar ``fn()`` w.r.t. entries of ``x`` (mutated in place)."""
    flat = x.data.view(-1)
    idx = range(flat.numel()) if indices is None else indices
    out = torch.zeros(len(idx), dtype=torch.float64)
    with torch.no_grad():
        for j, i in enumerate(idx):
            orig = flat[i].item()
            flat[i] = orig + eps
            fp = float(fn())
            flat[i] = orig - eps
            fm = float(fn())
            flat[i] = orig
            out[j] = (fp - fm) / (2 * eps)
    return out


def relative_error(analytic: Tensor, numeric: Tensor, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|_inf, |n|_inf, floor).

    The floor keeps gradients that vanish identically (e.g. key biases under
    softmax shift invariance) from turning difference noise into O(1) errors.
    """
    a = analytic.detach().reshape(-1).double()
    n = numeric.detach().reshape(-1).double()
    if a.numel() == 0:
        return 0.0
    scale = max(float(a.abs().max()), float(n.abs().max()), floor)
    return float((a - n).abs().max()) / scale


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
              max_entries: int | None = None, seed: int = 0) -> float:
    """Relative error between autograd and central differences over ``inputs``.

    ``fn`` must return a scalar and read ``inputs`` afresh on every call.
    """
    for x in inputs:
        x.grad = None
    loss = fn()
    backward(loss)
    gen = torch.Generator().manual_seed(seed)
    analytic, numeric = [], []
    for x in inputs:
        total = x.numel()
        if max_entries is not None and total > max_entries:
            idx = torch.randperm(total, generator=gen)[:max_entries].tolist()
        else:
            idx = list(range(total))
        analytic.append((x.grad if x.grad is not None else torch.zeros_like(x)).reshape(-1)[idx])
        numeric.append(numerical_grad(fn, x, eps, idx))
    # one scale for the whole check: identically-zero blocks are judged against the rest
    return relative_error(torch.cat([a.double() for a in analytic]), torch.cat(numeric))
