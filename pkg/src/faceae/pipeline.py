"""Training loop, greedy reconstruction and the ablation harness."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import tensor_core as tc
from .config import RunConfig, parse_config, replace, serialize_config
from .errors import DataError, NumericalError
from .mesh_io import RawMesh
from .mesh_prep import (AugmentParams, NormRecord, QuantizedMesh, augment, dequantize, normalize,
                        order_faces, quantize)
from .metrics import eval_reconstruction
from .model import FaceAE
from .sampling import PointCloud, fps, sample_surface
from .tokenizer import SLOTS, DecodeStats, encode, faces_to_qmesh

log = logging.getLogger(__name__)

LOG_HEADER = "step,loss,slot_accuracy,lr,wallclock_ms"


@dataclass
class Example:
    """One training mesh in its normalized frame, plus its cached token rows."""

    mesh: RawMesh
    norm: NormRecord
    tokens: np.ndarray  # (N + 1, 9)


def prepare_dataset(meshes: list[RawMesh], cfg: RunConfig) -> list[Example]:
    out = []
    for i, mesh in enumerate(meshes):
        normed, rec = normalize(mesh)
        qm = quantize(normed, cfg.model.resolution, rec)
        n = qm.n_faces
        if n > cfg.model.max_faces:
            raise DataError(f"mesh {i} has {n} faces after quantization (max_faces={cfg.model.max_faces})")
        if n == 0:
            raise DataError(f"mesh {i} has no faces after quantization")
        tokens = encode(order_faces(qm, cfg.data.order)).tokens
        out.append(Example(normed, rec, tokens))
    return out


def cloud_tensor(cloud: PointCloud, k: int, need_queries: bool) -> tuple[torch.Tensor, torch.Tensor | None]:
    pts = torch.from_numpy(cloud.as_array()).float()
    idx = torch.from_numpy(fps(cloud.points, k)) if need_queries else None
    return pts, idx


def collate(clouds, queries, token_rows):
    lengths = torch.tensor([len(t) for t in token_rows])
    t_max = int(lengths.max())
    toks = torch.zeros(len(token_rows), t_max, SLOTS, dtype=torch.long)
    for i, t in enumerate(token_rows):
        toks[i, : len(t)] = torch.from_numpy(t)
    q = None if queries[0] is None else torch.stack(queries)
    return torch.stack(clouds), q, toks, lengths


class BatchSampler:
    """Deterministic per-step batches: every draw is keyed on (seed, step)."""

    def __init__(self, data: list[Example], cfg: RunConfig):
        self.data = data
        self.cfg = cfg
        d = cfg.data
        self.aug = AugmentParams(d.augment_rotate, d.augment_flip, d.augment_scale,
                                 (d.scale_lo, d.scale_hi), d.rotation_axis)
        self.augmenting = d.augment_rotate or d.augment_flip or d.augment_scale
        self._fixed: dict[int, tuple] = {}

    def example(self, i: int, rng: np.random.Generator | None):
        cfg = self.cfg
        ex = self.data[i]
        need_q = cfg.model.queries == "fps"
        if rng is not None and self.augmenting:
            mesh = augment(ex.mesh, int(rng.integers(2**31)), self.aug)
            qm = quantize(mesh, cfg.model.resolution)
            tokens = encode(order_faces(qm, cfg.data.order)).tokens
        else:
            mesh, tokens = ex.mesh, ex.tokens
        if rng is not None and cfg.data.resample_points:
            pts, q = cloud_tensor(sample_surface(mesh, cfg.model.m, int(rng.integers(2**31))),
                                  cfg.model.k, need_q)
        else:
            if i not in self._fixed:
                self._fixed[i] = cloud_tensor(sample_surface(ex.mesh, cfg.model.m, seed=i),
                                              cfg.model.k, need_q)
            pts, q = self._fixed[i]
        return pts, q, tokens

    def batch(self, step: int):
        rng = np.random.default_rng([self.cfg.train.seed, step])
        n, b = len(self.data), self.cfg.train.batch_size
        idx = rng.permutation(n)[:b] if b <= n else rng.integers(0, n, size=b)
        items = [self.example(int(i), rng) for i in idx]
        return collate(*zip(*items))


@dataclass
class TrainResult:
    model: FaceAE
    log_rows: list[tuple]
    stopped_at: int
    final_accuracy: float | None = None


@torch.no_grad()
def evaluate(model: FaceAE, data: list[Example], cfg: RunConfig) -> tuple[float, float]:
    """Teacher-forced (mean loss, slot accuracy) over ``data`` with fixed point samples."""
    model.eval()
    sampler = BatchSampler(data, cfg)
    losses, hits, total = [], 0, 0
    for i in range(len(data)):
        pts, q, toks = sampler.example(i, None)
        c, qq, t, lengths = collate([pts], [q], [toks])
        logits, valid = model.teacher_forced(c, qq, t, lengths)
        nll = tc.cross_entropy_logits(logits, t, reduction="none").sum(-1)
        losses.append(float(nll[valid].mean()))
        hits += int(((logits.argmax(-1) == t) & valid[..., None]).sum())
        total += SLOTS * int(valid.sum())
    model.train()
    return float(np.mean(losses)), hits / total


def _checkpoint_tensors(model: FaceAE, opt: tc._Optimizer | None, step: int) -> dict:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    if opt is not None:
        tensors.update({f"optim.{k}": v for k, v in opt.state_tensors().items()})
    tensors["meta.step"] = torch.tensor([step], dtype=torch.int64)
    return tensors


def save_checkpoint(path, model: FaceAE, cfg: RunConfig, opt=None, step: int = 0) -> None:
    tc.write_checkpoint(path, serialize_config(cfg), _checkpoint_tensors(model, opt, step))


def load_checkpoint(path) -> tuple[FaceAE, RunConfig, dict, int]:
    text, tensors = tc.read_checkpoint(path)
    cfg = parse_config(text)
    model = FaceAE(cfg.model)
    state = {k[6:]: v for k, v in tensors.items() if k.startswith("model.")}
    model.load_state_dict(state)
    optim = {k[6:]: v for k, v in tensors.items() if k.startswith("optim.")}
    step = int(tensors["meta.step"][0]) if "meta.step" in tensors else 0
    return model, cfg, optim, step


def train(meshes: list[RawMesh], cfg: RunConfig, out: str | Path | None = None,
          log_path: str | Path | None = None, resume: str | Path | None = None,
          threads: int = 1, until: int | None = None) -> TrainResult:
    """Train from scratch or from ``resume``; ``until`` stops early at that step
    (the schedule still follows ``cfg.train.steps``) so a run can be split."""
    cfg.validate()
    tcfg = cfg.train
    tc.set_determinism(threads)
    torch.manual_seed(tcfg.seed)
    data = prepare_dataset(meshes, cfg)
    model = FaceAE(cfg.model)
    opt = tc.build_optimizer(tcfg.optimizer, model.named_parameters(), tcfg.lr, tcfg.weight_decay)
    start = 0
    if resume is not None:
        model, _, opt_state, start = load_checkpoint(resume)
        opt = tc.build_optimizer(tcfg.optimizer, model.named_parameters(), tcfg.lr, tcfg.weight_decay)
        opt.load_state_tensors(opt_state, start)
    sampler = BatchSampler(data, cfg)
    rows: list[tuple] = []
    fh = None
    for path in (out, log_path):
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
    if log_path is not None:
        fh = open(log_path, "a" if resume is not None else "w")
        if resume is None:
            fh.write(LOG_HEADER + "\n")
    t0 = time.perf_counter()
    done = start
    final_acc = None
    try:
        for step in range(start, tcfg.steps if until is None else min(until, tcfg.steps)):
            lr = tc.warmup_cosine(step, tcfg.steps, tcfg.lr, tcfg.warmup_frac)
            cloud, q, toks, lengths = sampler.batch(step)
            loss, acc = model.forward_loss(cloud, q, toks, lengths)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite loss at step {step}")
            opt.zero_grad()
            loss.backward()
            tc.clip_grad_norm(model.parameters(), tcfg.grad_clip)
            opt.step(lr)
            row = (step, loss.item(), acc, lr, (time.perf_counter() - t0) * 1000.0)
            rows.append(row)
            if fh is not None and step % tcfg.log_every == 0:
                fh.write(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r},{row[4]:.1f}\n")
                fh.flush()
            if step % 100 == 0:
                log.info("step %d loss %.4f acc %.4f lr %.2e", step, row[1], acc, lr)
            done = step + 1
            if out is not None and tcfg.checkpoint_every and done % tcfg.checkpoint_every == 0:
                save_checkpoint(out, model, cfg, opt, done)
            if tcfg.stop_accuracy > 0 and done % tcfg.eval_every == 0:
                _, final_acc = evaluate(model, data, cfg)
                log.info("step %d train-set slot accuracy %.5f", done, final_acc)
                if final_acc >= tcfg.stop_accuracy:
                    break
    finally:
        if fh is not None:
            fh.close()
    stopped = done
    if out is not None:
        save_checkpoint(out, model, cfg, opt, stopped)
    return TrainResult(model, rows, stopped, final_acc)


# -- reconstruction ---------------------------------------------------------------

@dataclass
class Reconstruction:
    mesh: QuantizedMesh
    face_count: int
    stop_reason: str  # eos | limit
    degenerate_dropped: int
    rows: np.ndarray = field(repr=False, default=None)


def reconstruct(cloud: PointCloud, model: FaceAE, max_faces: int | None = None) -> Reconstruction:
    cfg = model.cfg
    max_faces = cfg.max_faces if max_faces is None else max_faces
    was_training = model.training
    model.eval()
    pts, q = cloud_tensor(cloud, cfg.k, cfg.queries == "fps")
    rows, reason = model.greedy_decode(pts, q, max_faces)
    model.train(was_training)
    rows = rows.numpy()
    stats = DecodeStats()
    qm = faces_to_qmesh(rows, cfg.resolution, stats=stats)
    return Reconstruction(qm, len(rows), reason, stats.degenerate_dropped, rows)


def reconstruct_mesh(mesh: RawMesh, model: FaceAE, seed: int = 0,
                     max_faces: int | None = None) -> tuple[Reconstruction, RawMesh]:
    """Normalize, sample, decode; returns the result and the decoded mesh in ``mesh``'s frame."""
    normed, rec = normalize(mesh)
    res = reconstruct(sample_surface(normed, model.cfg.m, seed), model, max_faces)
    res.mesh.norm = rec
    return res, dequantize(res.mesh, denormalize=True)


# -- ablation ---------------------------------------------------------------------

SUITES = {
    "orderings": ("data", "order", ["zyx", "zyx-component", "dfs", "bfs"]),
    "queries": ("model", "queries", ["fps", "learnable"]),
    "heads": ("model", "head", ["causal_mlp", "parallel", "attention"]),
}


@dataclass
class AblationRow:
    variant: str
    final_loss: float
    train_loss: float
    heldout_loss: float
    heldout_accuracy: float
    chamfer: float
    hausdorff: float
    pred_faces: float

    def as_list(self) -> list:
        return [self.variant, self.final_loss, self.train_loss, self.heldout_loss,
                self.heldout_accuracy, self.chamfer, self.hausdorff, self.pred_faces]


ABLATION_HEADER = ["variant", "final_loss", "train_loss", "heldout_loss", "heldout_accuracy",
                   "chamfer", "hausdorff", "pred_faces"]


def ablate(suite: str, cfg: RunConfig, train_meshes: list[RawMesh], test_meshes: list[RawMesh],
           threads: int = 1) -> list[AblationRow]:
    if suite not in SUITES:
        raise DataError(f"unknown ablation suite {suite!r}")
    section, key, values = SUITES[suite]
    rows = []
    for value in values:
        vcfg = replace(cfg, **{section: {key: value}})
        res = train(train_meshes, vcfg, threads=threads)
        tail = [r[1] for r in res.log_rows[-min(50, len(res.log_rows)):]]
        train_loss, _ = evaluate(res.model, prepare_dataset(train_meshes, vcfg), vcfg)
        test = prepare_dataset(test_meshes, vcfg)
        held_loss, held_acc = evaluate(res.model, test, vcfg)
        cds, hds, nf = [], [], []
        for i, ex in enumerate(test):
            rec = reconstruct(sample_surface(ex.mesh, vcfg.model.m, seed=i), res.model)
            nf.append(rec.mesh.n_faces)
            if rec.mesh.n_faces == 0:
                cds.append(math.nan)
                hds.append(math.nan)
                continue
            try:
                ev = eval_reconstruction(ex.mesh, dequantize(rec.mesh), vcfg.eval.samples, vcfg.eval.seed)
                cds.append(ev.chamfer)
                hds.append(ev.hausdorff)
            except DataError:
                cds.append(math.nan)
                hds.append(math.nan)
        rows.append(AblationRow(value, float(np.mean(tail)), train_loss, held_loss, held_acc,
                                _nanmean(cds), _nanmean(hds), float(np.mean(nf))))
        log.info("ablation %s=%s: %s", key, value, rows[-1])
    return rows


def _nanmean(x: list[float]) -> float:
    arr = np.asarray(x, dtype=np.float64)
    return float(np.nanmean(arr)) if np.isfinite(arr).any() else math.nan


def ordering_finding(rows: list[AblationRow]) -> str:
    by = {r.variant: r for r in rows}
    spatial = np.mean([by[v].heldout_loss for v in ("zyx", "zyx-component")])
    traversal = np.mean([by[v].heldout_loss for v in ("dfs", "bfs")])
    verdict = "spatial sorting better" if spatial < traversal else "spatial sorting NOT better"
    return (f"held-out loss: spatial (zyx, zyx-component) mean {spatial:.4f} vs "
            f"traversal (dfs, bfs) mean {traversal:.4f} -> {verdict}")
