"""Temporal graph cells over 14-node pose graphs.

All cells use the row convention: node features are rows, so a layer is
``X @ W``.  Hidden states start at zero.

* RGCN   - ``H_t = tanh(H_{t-1} W_h + relu(A^L X_t W_x1 ... W_xL) + b)``
* LGCN   - LSTM gating where every gate's input term is a graph convolution
* GCN&RNN / GCN&LSTM - a GCN per frame followed by a per-node recurrent
  cell, fed one node at a time
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Callable, Sequence

import numpy as np

from . import diffmath as dm
from .diffmath import DimensionError, Param, Tensor
from .posegraph import NUM_KEYPOINTS, TemporalPoseGraph


def init_param(rng: np.random.Generator, rows: int, cols: int, fan_in: int, name: str = "") -> Param:
    bound = 1.0 / math.sqrt(fan_in)
    return Param(rng.uniform(-bound, bound, size=(rows, cols)), name=name)


@dataclass
class GraphState:
    h: Tensor
    c: Tensor | None = None


def zero_state(n: int, with_cell: bool = False, nodes: int = NUM_KEYPOINTS) -> GraphState:
    h = Tensor(np.zeros((nodes, n)))
    return GraphState(h, Tensor(np.zeros((nodes, n))) if with_cell else None)


class ParamSet:
    """Mixin: iterate the Params held in dataclass fields (lists included)."""

    def named_parameters(self) -> list[tuple[str, Param]]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Param):
                out.append((f.name, v))
            elif isinstance(v, (list, tuple)):
                out.extend((f"{f.name}.{i}", p) for i, p in enumerate(v))
        return out

    def parameters(self) -> list[Param]:
        return [p for _, p in self.named_parameters()]


@dataclass
class RgcnParams(ParamSet):
    w_h: Param
    w_x: list[Param]
    b: Param

    @property
    def n(self) -> int:
        return self.w_h.rows

    @property
    def layers(self) -> int:
        return len(self.w_x)

    @classmethod
    def init(cls, n: int, layers: int = 1, rng: np.random.Generator | None = None) -> "RgcnParams":
        if n < 1 or layers < 1:
            raise ValueError("n and layers must be >= 1")
        rng = rng or np.random.default_rng(0)
        w_x = [init_param(rng, 2 if i == 0 else n, n, 2 if i == 0 else n) for i in range(layers)]
        return cls(w_h=init_param(rng, n, n, n), w_x=w_x, b=init_param(rng, 1, n, n))


@dataclass
class LgcnParams(ParamSet):
    w_f: list[Param]
    w_i: list[Param]
    w_o: list[Param]
    w_g: list[Param]
    u_f: Param
    u_i: Param
    u_o: Param
    u_g: Param
    b_f: Param
    b_i: Param
    b_o: Param
    b_g: Param

    @property
    def n(self) -> int:
        return self.u_f.rows

    @property
    def layers(self) -> int:
        return len(self.w_f)

    @classmethod
    def init(cls, n: int, layers: int = 1, rng: np.random.Generator | None = None) -> "LgcnParams":
        if n < 1 or layers < 1:
            raise ValueError("n and layers must be >= 1")
        rng = rng or np.random.default_rng(0)

        def stack():
            return [init_param(rng, 2 if i == 0 else n, n, 2 if i == 0 else n) for i in range(layers)]

        kw = {f"w_{g}": stack() for g in "fiog"}
        kw.update({f"u_{g}": init_param(rng, n, n, n) for g in "fiog"})
        kw.update({f"b_{g}": init_param(rng, 1, n, n) for g in "fiog"})
        return cls(**kw)


@dataclass
class GcnRnnParams(ParamSet):
    w_g: Param  # 2 x n frame GCN
    w_h: Param  # n x n
    w_x: Param  # n x n
    b: Param  # 1 x n

    @property
    def n(self) -> int:
        return self.w_h.rows

    @classmethod
    def init(cls, n: int, rng: np.random.Generator | None = None) -> "GcnRnnParams":
        rng = rng or np.random.default_rng(0)
        return cls(w_g=init_param(rng, 2, n, 2), w_h=init_param(rng, n, n, n),
                   w_x=init_param(rng, n, n, n), b=init_param(rng, 1, n, n))


@dataclass
class GcnLstmParams(ParamSet):
    """Frame GCN plus a per-node LSTM; gate blocks ordered (i, f, g, o)."""

    w_g: Param  # 2 x n
    w: Param  # n x 4n input weights
    u: Param  # n x 4n recurrent weights
    b: Param  # 1 x 4n

    @property
    def n(self) -> int:
        return self.w_g.cols

    @classmethod
    def init(cls, n: int, rng: np.random.Generator | None = None) -> "GcnLstmParams":
        rng = rng or np.random.default_rng(0)
        return cls(w_g=init_param(rng, 2, n, 2), w=init_param(rng, n, 4 * n, n),
                   u=init_param(rng, n, 4 * n, n), b=init_param(rng, 1, 4 * n, n))


def param_count(params) -> int:
    return sum(p.size for p in params.parameters())


# ---------------------------------------------------------------------------
# steps


def _check_inputs(state: GraphState, x0, a_hat, n: int) -> tuple[Tensor, np.ndarray]:
    x0 = dm.tensor(x0)
    a_hat = np.asarray(a_hat, dtype=np.float64)
    k = a_hat.shape[0]
    if a_hat.shape != (k, k) or x0.shape != (k, 2):
        raise DimensionError(f"x0 {x0.shape} and a_hat {a_hat.shape} do not describe the same graph")
    if state.h.shape != (k, n):
        raise DimensionError(f"state {state.h.shape} does not match ({k}, {n})")
    return x0, a_hat


def graph_term(x0: Tensor, a_hat: np.ndarray, w_layers: Sequence[Param]) -> Tensor:
    """relu(A^L X W_1 ... W_L) with a single relu around the whole product."""
    prop = np.linalg.matrix_power(a_hat, len(w_layers)) @ x0.value
    out = dm.matmul(Tensor(prop), w_layers[0])
    for w in w_layers[1:]:
        out = dm.matmul(out, w)
    return dm.relu(out)


def _rgcn(state, x0, a_hat, p: RgcnParams) -> GraphState:
    x0, a_hat = _check_inputs(state, x0, a_hat, p.n)
    pre = dm.add(dm.add(dm.matmul(state.h, p.w_h), graph_term(x0, a_hat, p.w_x)), p.b)
    return GraphState(dm.tanh(pre))


def rgcn_step(state: GraphState, x0, a_hat, p: RgcnParams) -> GraphState:
    """One RGCN step with a single graph-convolution layer."""
    if p.layers != 1:
        raise ValueError(f"rgcn_step takes a single GC layer, got {p.layers}; use rgcn_multilayer_step")
    return _rgcn(state, x0, a_hat, p)


def rgcn_multilayer_step(state: GraphState, x0, a_hat, p: RgcnParams) -> GraphState:
    if p.layers < 2:
        raise ValueError("rgcn_multilayer_step needs at least two GC layers")
    return _rgcn(state, x0, a_hat, p)


def lgcn_step(state: GraphState, x0, a_hat, p: LgcnParams) -> GraphState:
    if state.c is None:
        raise ValueError("lgcn_step needs a state carrying cell memory")
    x0, a_hat = _check_inputs(state, x0, a_hat, p.n)
    h = state.h

    def gate(w, u, b):
        return dm.add(dm.add(graph_term(x0, a_hat, w), dm.matmul(h, u)), b)

    f = dm.sigmoid(gate(p.w_f, p.u_f, p.b_f))
    i = dm.sigmoid(gate(p.w_i, p.u_i, p.b_i))
    o = dm.sigmoid(gate(p.w_o, p.u_o, p.b_o))
    g = dm.tanh(gate(p.w_g, p.u_g, p.b_g))
    c = dm.add(dm.hadamard(f, state.c), dm.hadamard(i, g))
    return GraphState(dm.hadamard(o, dm.tanh(c)), c)


def frame_gcn(x0: Tensor, a_hat: np.ndarray, w_g: Param) -> Tensor:
    return dm.relu(dm.matmul(Tensor(a_hat @ x0.value), w_g))


def gcn_rnn_step(state: GraphState, x0, a_hat, p: GcnRnnParams) -> GraphState:
    """Frame GCN, then a vanilla RNN applied to each node in turn."""
    x0, a_hat = _check_inputs(state, x0, a_hat, p.n)
    x = frame_gcn(x0, a_hat, p.w_g)
    rows = []
    for i in range(x.rows):
        h_i = dm.take_rows(state.h, i)
        x_i = dm.take_rows(x, i)
        rows.append(dm.tanh(dm.add(dm.add(dm.matmul(h_i, p.w_h), dm.matmul(x_i, p.w_x)), p.b)))
    return GraphState(dm.concat_rows(rows))


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w: Param, u: Param, b: Param) -> tuple[Tensor, Tensor]:
    """Standard LSTM cell on row vectors; gate blocks ordered (i, f, g, o)."""
    n = h.cols
    z = dm.add(dm.add(dm.matmul(x, w), dm.matmul(h, u)), b)
    i = dm.sigmoid(dm.slice_cols(z, 0, n))
    f = dm.sigmoid(dm.slice_cols(z, n, 2 * n))
    g = dm.tanh(dm.slice_cols(z, 2 * n, 3 * n))
    o = dm.sigmoid(dm.slice_cols(z, 3 * n, 4 * n))
    c_new = dm.add(dm.hadamard(f, c), dm.hadamard(i, g))
    return dm.hadamard(o, dm.tanh(c_new)), c_new


def gcn_lstm_step(state: GraphState, x0, a_hat, p: GcnLstmParams) -> GraphState:
    if state.c is None:
        raise ValueError("gcn_lstm_step needs a state carrying cell memory")
    x0, a_hat = _check_inputs(state, x0, a_hat, p.n)
    x = frame_gcn(x0, a_hat, p.w_g)
    hs, cs = [], []
    for i in range(x.rows):
        h_i, c_i = lstm_cell(dm.take_rows(x, i), dm.take_rows(state.h, i), dm.take_rows(state.c, i),
                             p.w, p.u, p.b)
        hs.append(h_i)
        cs.append(c_i)
    return GraphState(dm.concat_rows(hs), dm.concat_rows(cs))


# ---------------------------------------------------------------------------
# dispatch and unrolling

CELL_KINDS = ("rgcn", "lgcn", "gcn_rnn", "gcn_lstm")


def make_cell_params(kind: str, n: int, layers: int = 1, rng: np.random.Generator | None = None):
    if kind == "rgcn":
        return RgcnParams.init(n, layers, rng)
    if kind == "lgcn":
        return LgcnParams.init(n, layers, rng)
    if layers != 1:
        raise ValueError(f"{kind} supports a single GC layer only")
    if kind == "gcn_rnn":
        return GcnRnnParams.init(n, rng)
    if kind == "gcn_lstm":
        return GcnLstmParams.init(n, rng)
    raise ValueError(f"unknown cell {kind!r}; expected one of {CELL_KINDS}")


def step_for(params) -> Callable:
    """The step function matching a parameter set."""
    if isinstance(params, RgcnParams):
        return rgcn_step if params.layers == 1 else rgcn_multilayer_step
    if isinstance(params, LgcnParams):
        return lgcn_step
    if isinstance(params, GcnRnnParams):
        return gcn_rnn_step
    if isinstance(params, GcnLstmParams):
        return gcn_lstm_step
    raise TypeError(f"no cell for {type(params).__name__}")


def has_cell_memory(params) -> bool:
    return isinstance(params, (LgcnParams, GcnLstmParams))


def unroll(cell: Callable | None, graph: TemporalPoseGraph | Sequence, params, a_hat=None) -> list[GraphState]:
    """Run `cell` left to right from a zero state; returns all T states.

    `graph` is a TemporalPoseGraph or a sequence of 14 x 2 feature arrays
    (then `a_hat` must be given).  `cell=None` picks the step for `params`.
    """
    if isinstance(graph, TemporalPoseGraph):
        xs = graph.features()
        a_hat = graph.adjacency.a_hat if a_hat is None else a_hat
    else:
        xs = list(graph)
        if a_hat is None:
            raise ValueError("a_hat is required when unrolling raw features")
    if not xs:
        raise ValueError("cannot unroll an empty sequence")
    cell = cell or step_for(params)
    a_hat = np.asarray(a_hat, dtype=np.float64)
    state = zero_state(params.n, has_cell_memory(params), a_hat.shape[0])
    states = []
    for x0 in xs:
        state = cell(state, x0, a_hat, params)
        states.append(state)
    return states
