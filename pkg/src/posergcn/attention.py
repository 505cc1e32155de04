"""Pooling of the T graph hidden states into a pose feature.

`dam` concatenates node-attention and time-attention vectors, always in the
order [node ; time].  The ablation poolers (`mean_pool`, `tam_only`,
`nam_only`) duplicate their n-vector to length 2n so every pooler emits the
same dimension.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffmath as dm
from .cells import GraphState, ParamSet, init_param
from .diffmath import Param, Tensor

POOLINGS = ("dam", "tam", "nam", "mean")


@dataclass
class AttentionParams(ParamSet):
    w_node: Param  # n x 1
    w_time: Param  # n x 1

    @classmethod
    def init(cls, n: int, rng: np.random.Generator | None = None) -> "AttentionParams":
        rng = rng or np.random.default_rng(0)
        return cls(w_node=init_param(rng, n, 1, n), w_time=init_param(rng, n, 1, n))

    @classmethod
    def zeros(cls, n: int) -> "AttentionParams":
        return cls(Param(np.zeros((n, 1))), Param(np.zeros((n, 1))))


def _hidden(states: Sequence) -> list[Tensor]:
    if not states:
        raise ValueError("pooling needs at least one hidden state")
    return [s.h if isinstance(s, GraphState) else dm.tensor(s) for s in states]


def node_attention(states: Sequence, p: AttentionParams) -> tuple[Tensor, Tensor]:
    """Returns (14 x 1 node weights, 1 x n pooled vector)."""
    hs = _hidden(states)
    h_bar = dm.mean_of(hs)  # time mean, 14 x n
    weights = dm.softmax(dm.matmul(h_bar, p.w_node))
    return weights, dm.matmul(dm.transpose(weights), h_bar)


def time_attention(states: Sequence, p: AttentionParams) -> tuple[Tensor, Tensor]:
    """Returns (T x 1 frame weights, 1 x n pooled vector)."""
    hs = _hidden(states)
    per_frame = dm.concat_rows([dm.mean_rows(h) for h in hs])  # T x n
    weights = dm.softmax(dm.matmul(per_frame, p.w_time))
    return weights, dm.matmul(dm.transpose(weights), per_frame)


def dam(states: Sequence, p: AttentionParams) -> Tensor:
    _, h_n = node_attention(states, p)
    _, h_t = time_attention(states, p)
    return dm.concat_cols([h_n, h_t])


def mean_pool(states: Sequence, p: AttentionParams | None = None) -> Tensor:
    m = dm.mean_rows(dm.mean_of(_hidden(states)))
    return dm.concat_cols([m, m])


def tam_only(states: Sequence, p: AttentionParams) -> Tensor:
    _, h_t = time_attention(states, p)
    return dm.concat_cols([h_t, h_t])


def nam_only(states: Sequence, p: AttentionParams) -> Tensor:
    _, h_n = node_attention(states, p)
    return dm.concat_cols([h_n, h_n])


_POOLERS = {"dam": dam, "tam": tam_only, "nam": nam_only, "mean": mean_pool}


def pool(kind: str, states: Sequence, p: AttentionParams) -> Tensor:
    try:
        fn = _POOLERS[kind]
    except KeyError:
        raise ValueError(f"unknown pooling {kind!r}; expected one of {POOLINGS}") from None
    return fn(states, p)


def attention_scores(states: Sequence, p: AttentionParams) -> tuple[np.ndarray, np.ndarray]:
    """Plain arrays (frame weights, node weights) for inspection."""
    with dm.no_grad():
        a_n, _ = node_attention(states, p)
        a_t, _ = time_attention(states, p)
    return a_t.value.ravel().copy(), a_n.value.ravel().copy()
