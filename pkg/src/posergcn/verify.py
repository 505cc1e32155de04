"""Gradient-check pipelines and the cell microbenchmark."""

from __future__ import annotations

import itertools
import statistics
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import diffmath as dm
from .appearance import AaParams, RaParams, aa, ra
from .attention import AttentionParams, pool
from .cells import make_cell_params, param_count, unroll
from .model import ClassifierHead
from .posegraph import canonical_adjacency
from .training import combine_losses, identity_loss, triplet_batch_hard

GRADCHECK_CELLS = (("rgcn", 1), ("rgcn", 2), ("rgcn", 3), ("lgcn", 1), ("gcn_rnn", 1), ("gcn_lstm", 1))
GRADCHECK_POOLINGS = ("dam", "tam", "nam", "mean")
GRADCHECK_LOSSES = ("triplet", "identity", "combined")
GRADCHECK_TOL = 1e-4
# Several pipeline gradients have entries near 1e-8 while the loss is O(1-10);
# at h = 1e-6 the central difference then carries roundoff of order
# eps * |loss| / h, comparable to the entry itself.  1e-4 keeps the
# truncation error (order h^2) well below the tolerance.
GRADCHECK_STEP = 1e-4


@dataclass
class ToyBatch:
    xs: list[list[np.ndarray]]  # per track: T arrays of 14 x 2
    apps: list[np.ndarray]  # per track: T x d
    labels: np.ndarray


def toy_batch(T: int = 3, d: int = 4, ids: int = 2, per_id: int = 2, seed: int = 0) -> ToyBatch:
    rng = np.random.default_rng(seed)
    xs, apps, labels = [], [], []
    for i in range(ids):
        for _ in range(per_id):
            frames = []
            for _ in range(T):
                x = rng.uniform(-1, 1, size=(14, 2))
                x[rng.random(14) < 0.15] = 0.0  # a few occluded keypoints
                frames.append(x)
            xs.append(frames)
            apps.append(rng.normal(size=(T, d)))
            labels.append(i)
    return ToyBatch(xs, apps, np.array(labels))


@dataclass
class GradcheckResult:
    name: str
    error: float
    passed: bool


def _pose_pipeline(cell: str, layers: int, pooling: str, loss: str, n: int, T: int,
                   seed: int) -> tuple[Callable, list]:
    rng = np.random.default_rng(seed)
    batch = toy_batch(T=T, seed=seed)
    a_hat = canonical_adjacency().a_hat
    cp = make_cell_params(cell, n, layers, rng)
    att = AttentionParams.init(n, rng)
    d = batch.apps[0].shape[1]
    agg = AaParams.init(d, rng)
    head = ClassifierHead.init(d + 2 * n, int(batch.labels.max()) + 1, rng)
    # large margin keeps the hinge active on most anchors
    margin = 2.0

    def features():
        fp = dm.concat_rows([pool(pooling, unroll(None, xs, cp, a_hat), att) for xs in batch.xs])
        fa = dm.concat_rows([aa(app, agg) for app in batch.apps])
        return fa, fp

    params = cp.parameters() + ([] if pooling == "mean" else att.parameters())
    if loss == "triplet":
        def fn():
            return triplet_batch_hard(features()[1], batch.labels, margin)
        return fn, params

    params = params + agg.parameters() + head.parameters()
    if loss == "identity":
        def fn():
            fa, fp = features()
            return identity_loss(head, dm.concat_cols([fa, fp]), batch.labels)
        return fn, params

    # lambda is detached in training, so freeze it at the base point here
    with dm.no_grad():
        fa, fp = features()
        lam = combine_losses(identity_loss(head, dm.concat_cols([fa, fp]), batch.labels),
                             triplet_batch_hard(fa, batch.labels, margin),
                             triplet_batch_hard(fp, batch.labels, margin))[0].lam

    def fn():
        fa, fp = features()
        l_id = identity_loss(head, dm.concat_cols([fa, fp]), batch.labels)
        return combine_losses(l_id, triplet_batch_hard(fa, batch.labels, margin),
                              triplet_batch_hard(fp, batch.labels, margin), fixed_lambda=lam)[1]
    return fn, params


def _appearance_pipeline(kind: str, seed: int) -> tuple[Callable, list]:
    rng = np.random.default_rng(seed)
    batch = toy_batch(seed=seed)
    d = batch.apps[0].shape[1]
    p = AaParams.init(d, rng) if kind == "aa" else RaParams.init(d, rng)
    agg = aa if kind == "aa" else ra

    def fn():
        fa = dm.concat_rows([agg(app, p) for app in batch.apps])
        return triplet_batch_hard(fa, batch.labels, 5.0)
    return fn, p.parameters()


def gradcheck_pipelines(n: int = 3, T: int = 3, seed: int = 0):
    """Yields (name, loss_fn, params) for every checked pipeline."""
    for (cell, layers), pooling, loss in itertools.product(GRADCHECK_CELLS, GRADCHECK_POOLINGS, GRADCHECK_LOSSES):
        name = f"{cell}{'' if cell != 'rgcn' else f'-L{layers}'}/{pooling}/{loss}"
        fn, params = _pose_pipeline(cell, layers, pooling, loss, n, T, seed)
        yield name, fn, params
    for kind in ("aa", "ra"):
        fn, params = _appearance_pipeline(kind, seed)
        yield f"appearance-{kind}/triplet", fn, params


def run_gradcheck(n: int = 3, T: int = 3, tol: float = GRADCHECK_TOL, step: float = GRADCHECK_STEP,
                  seed: int = 0, only: str | None = None) -> list[GradcheckResult]:
    """`only` keeps the pipelines whose name contains that substring."""
    out = []
    for name, fn, params in gradcheck_pipelines(n, T, seed):
        if only and only not in name:
            continue
        err = dm.finite_diff_check(fn, params, step)
        out.append(GradcheckResult(name, err, err <= tol))
    return out


# ---------------------------------------------------------------------------
# benchmark


@dataclass
class BenchRow:
    cell: str
    params: int
    median_s: float
    reps: int


def bench_cells(cells=("rgcn", "lgcn", "gcn_rnn", "gcn_lstm"), n: int = 64, T: int = 10,
                reps: int = 10_000, seed: int = 0) -> list[BenchRow]:
    """Median wall-clock of a forward unroll per cell on one random sequence."""
    rng = np.random.default_rng(seed)
    xs = [rng.uniform(-1, 1, size=(14, 2)) for _ in range(T)]
    a_hat = canonical_adjacency().a_hat
    rows = []
    for cell in cells:
        p = make_cell_params(cell, n, 1, np.random.default_rng(seed))
        times = []
        with dm.no_grad():
            unroll(None, xs, p, a_hat)  # warm-up
            for _ in range(reps):
                t0 = time.perf_counter()
                unroll(None, xs, p, a_hat)
                times.append(time.perf_counter() - t0)
        rows.append(BenchRow(cell, param_count(p), statistics.median(times), reps))
    return rows
