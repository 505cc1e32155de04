"""Appearance aggregators over per-frame feature sequences (T x d).

The per-frame features come from outside (a precomputed backbone or the
synthetic generator); this module only aggregates them over time.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffmath as dm
from .cells import ParamSet, init_param, lstm_cell
from .diffmath import DimensionError, Param, Tensor

AGGREGATORS = ("ap", "aa", "ra")

APFT_MAGIC = b"APFT"
APFT_VERSION = 1


@dataclass
class AaParams(ParamSet):
    score: Param  # d x 1

    @classmethod
    def init(cls, d: int, rng: np.random.Generator | None = None) -> "AaParams":
        rng = rng or np.random.default_rng(0)
        return cls(init_param(rng, d, 1, d))


@dataclass
class RaParams(ParamSet):
    """LSTM over d-dim frames with hidden size d; gates ordered (i, f, g, o)."""

    w: Param  # d x 4d
    u: Param  # d x 4d
    b: Param  # 1 x 4d

    @property
    def d(self) -> int:
        return self.u.rows

    @classmethod
    def init(cls, d: int, rng: np.random.Generator | None = None) -> "RaParams":
        rng = rng or np.random.default_rng(0)
        return cls(init_param(rng, d, 4 * d, d), init_param(rng, d, 4 * d, d), init_param(rng, 1, 4 * d, d))


def _seq(seq) -> Tensor:
    t = dm.tensor(seq)
    if t.rows < 1:
        raise ValueError("appearance sequence needs at least one frame")
    return t


def ap(seq) -> Tensor:
    """Average pooling over frames -> 1 x d."""
    return dm.mean_rows(_seq(seq))


def aa_weights(seq, p: AaParams) -> Tensor:
    s = _seq(seq)
    if s.cols != p.score.rows:
        raise DimensionError(f"aa: features have d={s.cols}, score vector has {p.score.rows}")
    return dm.softmax(dm.matmul(s, p.score))


def aa(seq, p: AaParams) -> Tensor:
    """Attention-weighted average of frames -> 1 x d."""
    s = _seq(seq)
    w = aa_weights(s, p)
    return dm.matmul(dm.transpose(w), s)


def ra(seq, p: RaParams) -> Tensor:
    """Mean of per-frame LSTM outputs -> 1 x d."""
    s = _seq(seq)
    if s.cols != p.w.rows:
        raise DimensionError(f"ra: features have d={s.cols}, LSTM expects {p.w.rows}")
    h = Tensor(np.zeros((1, p.d)))
    c = Tensor(np.zeros((1, p.d)))
    outs = []
    for t in range(s.rows):
        h, c = lstm_cell(dm.take_rows(s, t), h, c, p.w, p.u, p.b)
        outs.append(h)
    return dm.mean_of(outs)


def make_aggregator_params(kind: str, d: int, rng: np.random.Generator | None = None):
    if kind == "ap":
        return None
    if kind == "aa":
        return AaParams.init(d, rng)
    if kind == "ra":
        return RaParams.init(d, rng)
    raise ValueError(f"unknown aggregator {kind!r}; expected one of {AGGREGATORS}")


def aggregate(kind: str, seq, params) -> Tensor:
    if kind == "ap":
        return ap(seq)
    if kind == "aa":
        return aa(seq, params)
    if kind == "ra":
        return ra(seq, params)
    raise ValueError(f"unknown aggregator {kind!r}; expected one of {AGGREGATORS}")


# ---------------------------------------------------------------------------
# APFT files: "APFT", u32 version, u32 d, u32 T, then T*d little-endian float32


def write_apft(path: str | Path, feats: np.ndarray) -> None:
    feats = np.asarray(feats, dtype="<f4")
    if feats.ndim != 2:
        raise ValueError("appearance features must be T x d")
    T, d = feats.shape
    with open(path, "wb") as fh:
        fh.write(APFT_MAGIC + struct.pack("<III", APFT_VERSION, d, T))
        fh.write(feats.tobytes(order="C"))


def read_apft(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != APFT_MAGIC:
        raise ValueError(f"{path}: not an APFT file")
    version, d, T = struct.unpack("<III", blob[4:16])
    if version != APFT_VERSION:
        raise ValueError(f"{path}: unsupported APFT version {version}")
    body = blob[16:]
    if len(body) != 4 * d * T:
        raise ValueError(f"{path}: expected {T}x{d} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(T, d).astype(np.float64)
