"""Losses, adaptive branch weighting, PK sampling and the Adam training loop."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import diffmath as dm
from .config import Config
from .diffmath import Param, Tensor
from .model import ClassifierHead, PoseReIDModel
from .posegraph import Track

log = logging.getLogger(__name__)

warn_counts: Counter = Counter()

LOG_COLUMNS = ("epoch", "lr", "l_id", "l_tri_a", "l_tri_p", "lambda", "total")


# ---------------------------------------------------------------------------
# losses


def hardest_pairs(dist: np.ndarray, labels: np.ndarray) -> tuple[list[int], list[int], list[int]]:
    """Per anchor: index of the farthest positive and the nearest negative.

    Anchors without any other same-label sample are skipped (counted in
    `warn_counts`).
    """
    anchors, pos, neg = [], [], []
    n = len(labels)
    for i in range(n):
        same = labels == labels[i]
        other = ~same
        same[i] = False
        if not same.any():
            warn_counts["anchor_without_positive"] += 1
            continue
        if not other.any():
            continue
        pidx = np.flatnonzero(same)
        nidx = np.flatnonzero(other)
        anchors.append(i)
        pos.append(int(pidx[np.argmax(dist[i, pidx])]))
        neg.append(int(nidx[np.argmin(dist[i, nidx])]))
    return anchors, pos, neg


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def triplet_batch_hard(features, labels, margin: float) -> Tensor:
    """Sum over anchors of max(0, margin + hardest positive - hardest negative)."""
    f = dm.tensor(features)
    labels = np.asarray(labels)
    if f.rows != len(labels):
        raise dm.DimensionError(f"{f.rows} features but {len(labels)} labels")
    if len(np.unique(labels)) < 2:
        raise ValueError("batch-hard triplet loss needs at least two identities in the batch")
    anchors, pos, neg = hardest_pairs(pairwise_distances(f.value), labels)
    if not anchors:
        return Tensor(np.zeros((1, 1)))
    fa = dm.take_rows(f, anchors)
    d_pos = dm.row_distance(fa, dm.take_rows(f, pos))
    d_neg = dm.row_distance(fa, dm.take_rows(f, neg))
    hinge = dm.relu(dm.add(dm.sub(d_pos, d_neg), margin))
    return dm.sum_all(hinge)


def identity_loss(head: ClassifierHead, fused, labels) -> Tensor:
    """Mean cross-entropy of the classifier logits at the true class."""
    labels = np.asarray(labels)
    c = head.weight.cols
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    return dm.cross_entropy(head.logits(fused), labels)


def adaptive_lambda(l_a: float, l_p: float) -> float:
    """Share of the appearance triplet loss in the sum of both triplet losses."""
    if l_a < 0 or l_p < 0:
        raise ValueError("triplet losses must be nonnegative")
    s = l_a + l_p
    if s == 0:
        return 0.5
    return l_a / s


@dataclass
class LossReport:
    l_tri_a: float
    l_tri_p: float
    l_id: float
    lam: float
    total: float

    def row(self) -> dict:
        return {"l_id": self.l_id, "l_tri_a": self.l_tri_a, "l_tri_p": self.l_tri_p,
                "lambda": self.lam, "total": self.total}


def combine_losses(l_id: Tensor, l_tri_a: Tensor, l_tri_p: Tensor, fixed_lambda: float | None = None):
    """Weighted total with a detached lambda; returns (LossReport, total tensor)."""
    la, lp = l_tri_a.item(), l_tri_p.item()
    lam = adaptive_lambda(la, lp) if fixed_lambda is None else float(fixed_lambda)
    total = dm.add(dm.add(l_id, dm.scale(l_tri_a, lam)), dm.scale(l_tri_p, 1.0 - lam))
    return LossReport(la, lp, l_id.item(), lam, total.item()), total


@dataclass
class Batch:
    tracks: list[Track]
    labels: np.ndarray  # class indices

    def __len__(self) -> int:
        return len(self.tracks)


def total_loss(batch: Batch, model: PoseReIDModel, margin: float | None = None,
               fixed_lambda: float | None = None):
    """Both branches, both triplet losses, identity loss, weighted total."""
    cfg = model.cfg
    margin = cfg.margin if margin is None else margin
    fa, fp = model.features(batch.tracks)
    l_a = triplet_batch_hard(fa, batch.labels, margin)
    l_p = triplet_batch_hard(fp, batch.labels, margin)
    l_id = identity_loss(model.head, dm.concat_cols([fa, fp]), batch.labels)
    return combine_losses(l_id, l_a, l_p, fixed_lambda)


# ---------------------------------------------------------------------------
# sampling and optimization


def pk_sample(tracks: Sequence[Track], P: int, K: int, rng: np.random.Generator,
              class_index: dict[int, int] | None = None) -> Batch:
    """P identities x K tracks each; identities with fewer than K tracks are
    sampled with replacement."""
    by_id: dict[int, list[Track]] = defaultdict(list)
    for t in tracks:
        by_id[t.identity].append(t)
    ids = sorted(by_id)
    if len(ids) < P:
        raise ValueError(f"need at least P={P} identities, dataset has {len(ids)}")
    chosen = rng.choice(len(ids), size=P, replace=False)
    out: list[Track] = []
    for ci in chosen:
        group = by_id[ids[ci]]
        replace = len(group) < K
        if replace:
            warn_counts["pk_with_replacement"] += 1
            log.info("identity %s has %d tracks < K=%d; sampling with replacement", ids[ci], len(group), K)
        picks = rng.choice(len(group), size=K, replace=replace)
        out.extend(group[i] for i in picks)
    if class_index is None:
        class_index = {c: i for i, c in enumerate(ids)}
    labels = np.array([class_index[t.identity] for t in out], dtype=np.intp)
    return Batch(out, labels)


def lr_schedule(epoch: int, base_lr: float = 3e-4, step: int = 200, gamma: float = 0.1) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * gamma ** (epoch // step)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Param]) -> "AdamState":
        return cls([np.zeros_like(p.value) for p in params], [np.zeros_like(p.value) for p in params])


def adam_step(params: Sequence[Param], state: AdamState, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """One bias-corrected Adam update from each param's .grad; grads are reset after."""
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.zero_grad()


class Adam:
    def __init__(self, params: Sequence[Param], betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.betas = betas
        self.eps = eps
        self.state = AdamState.for_params(self.params)

    def step(self, lr: float) -> None:
        adam_step(self.params, self.state, lr, self.betas, self.eps)

    def zero_grad(self) -> None:
        dm.zero_grads(self.params)


# ---------------------------------------------------------------------------
# training loop


def train(cfg: Config, tracks: Sequence[Track], log_path: str | Path | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> tuple[PoseReIDModel, list[dict]]:
    """Train from scratch; one PK batch per epoch.  Deterministic given cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    classes = sorted({t.identity for t in tracks})
    model = PoseReIDModel(cfg, classes, rng)
    opt = Adam(model.parameters())
    fixed = cfg.fixed_lambda
    history = []
    log.info("training %s/%s margin=%g lambda=%s epochs=%d", cfg.cell, cfg.pooling, cfg.margin,
             cfg.lambda_mode, cfg.epochs)
    writer = fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="", encoding="utf-8")
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
    try:
        for epoch in range(cfg.epochs):
            lr = lr_schedule(epoch, cfg.lr, cfg.lr_step)
            batch = pk_sample(tracks, cfg.P, cfg.K, rng, model.class_index)
            report, total = total_loss(batch, model, cfg.margin, fixed)
            if not math.isfinite(report.total):
                raise FloatingPointError(f"loss diverged at epoch {epoch}")
            dm.backward(total)
            opt.step(lr)
            row = {"epoch": epoch, "lr": lr, **report.row()}
            history.append(row)
            if writer is not None:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
            if on_epoch is not None:
                on_epoch(row)
    finally:
        if fh is not None:
            fh.close()
    return model, history
