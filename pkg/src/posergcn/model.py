"""Two-branch model (appearance + pose) and its checkpoint format."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffmath as dm
from .appearance import aggregate, make_aggregator_params
from .attention import AttentionParams, pool
from .cells import ParamSet, init_param, make_cell_params, unroll
from .config import Config
from .diffmath import Param, Tensor
from .posegraph import Track

CKPT_MAGIC = b"PRGC"
CKPT_VERSION = 1

BRANCHES = ("appearance", "pose", "fused")


@dataclass
class ClassifierHead(ParamSet):
    weight: Param  # (d + 2n) x C
    bias: Param  # 1 x C

    @classmethod
    def init(cls, dim: int, num_classes: int, rng: np.random.Generator | None = None) -> "ClassifierHead":
        rng = rng or np.random.default_rng(0)
        return cls(init_param(rng, dim, num_classes, dim), Param(np.zeros((1, num_classes))))

    def logits(self, fused) -> Tensor:
        fused = dm.tensor(fused)
        if fused.cols != self.weight.rows:
            raise dm.DimensionError(f"classifier expects {self.weight.rows} inputs, got {fused.cols}")
        return dm.add(dm.matmul(fused, self.weight), self.bias)


class PoseReIDModel:
    def __init__(self, cfg: Config, classes: Sequence[int], rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.classes = [int(c) for c in classes]
        self.class_index = {c: i for i, c in enumerate(self.classes)}
        self.cell = make_cell_params(cfg.cell, cfg.n, cfg.layers, rng)
        self.attention = AttentionParams.init(cfg.n, rng)
        self.appearance = make_aggregator_params(cfg.aggregator, cfg.d, rng)
        self.head = ClassifierHead.init(cfg.d + 2 * cfg.n, max(len(self.classes), 1), rng)

    def named_parameters(self) -> list[tuple[str, Param]]:
        out = [(f"cell.{k}", p) for k, p in self.cell.named_parameters()]
        out += [(f"attention.{k}", p) for k, p in self.attention.named_parameters()]
        if self.appearance is not None:
            out += [(f"appearance.{k}", p) for k, p in self.appearance.named_parameters()]
        out += [(f"head.{k}", p) for k, p in self.head.named_parameters()]
        return out

    def parameters(self) -> list[Param]:
        return [p for _, p in self.named_parameters()]

    def labels(self, tracks: Sequence[Track]) -> np.ndarray:
        try:
            return np.array([self.class_index[t.identity] for t in tracks], dtype=np.intp)
        except KeyError as exc:
            raise ValueError(f"identity {exc.args[0]} is not a training class") from None

    def _clip(self, track: Track) -> Track:
        return track.truncated(self.cfg.T)

    def hidden_states(self, track: Track):
        return unroll(None, self._clip(track).graph, self.cell)

    def pose_feature(self, track: Track) -> Tensor:
        return pool(self.cfg.pooling, self.hidden_states(track), self.attention)

    def appearance_feature(self, track: Track) -> Tensor:
        track = self._clip(track)
        if track.appearance is None:
            raise ValueError(f"track {track.track_id} carries no appearance features")
        if track.appearance.shape[1] != self.cfg.d:
            raise dm.DimensionError(
                f"track {track.track_id} has appearance dimension {track.appearance.shape[1]}, model expects {self.cfg.d}")
        return aggregate(self.cfg.aggregator, track.appearance, self.appearance)

    def features(self, tracks: Sequence[Track]) -> tuple[Tensor, Tensor]:
        """Stacked (N x d appearance, N x 2n pose) features."""
        fa = dm.concat_rows([self.appearance_feature(t) for t in tracks])
        fp = dm.concat_rows([self.pose_feature(t) for t in tracks])
        return fa, fp

    def embed(self, tracks: Sequence[Track], branch: str = "fused") -> np.ndarray:
        if branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}")
        with dm.no_grad():
            if branch == "appearance":
                rows = [self.appearance_feature(t).value for t in tracks]
            elif branch == "pose":
                rows = [self.pose_feature(t).value for t in tracks]
            else:
                rows = [np.concatenate([self.appearance_feature(t).value, self.pose_feature(t).value], axis=1)
                        for t in tracks]
        return np.concatenate(rows, axis=0)


# ---------------------------------------------------------------------------
# checkpoint: magic, u32 version, u32 meta_len, meta JSON, u32 count, then
# per entry u16 name_len, name, u32 rows, u32 cols, rows*cols little-endian f64


def save_checkpoint(path: str | Path, model: PoseReIDModel, extra: dict | None = None) -> None:
    meta = {"config": asdict(model.cfg), "classes": model.classes}
    if extra:
        meta.update(extra)
    meta_blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    named = model.named_parameters()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(meta_blob)))
        fh.write(meta_blob)
        fh.write(struct.pack("<I", len(named)))
        for name, p in named:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)) + nb)
            fh.write(struct.pack("<II", *p.shape))
            fh.write(p.value.astype("<f8").tobytes(order="C"))


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if blob[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, meta_len = struct.unpack_from("<II", blob, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    meta = json.loads(blob[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    values = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        rows, cols = struct.unpack_from("<II", blob, pos)
        pos += 8
        nbytes = 8 * rows * cols
        values[name] = np.frombuffer(blob[pos:pos + nbytes], dtype="<f8").reshape(rows, cols).astype(np.float64)
        pos += nbytes
    return meta, values


def load_model(path: str | Path) -> tuple[PoseReIDModel, dict]:
    meta, values = read_checkpoint(path)
    model = PoseReIDModel(Config(**meta["config"]), meta["classes"])
    named = dict(model.named_parameters())
    if set(named) != set(values):
        missing = sorted(set(named) ^ set(values))
        raise ValueError(f"{path}: checkpoint parameters do not match the model ({missing})")
    for name, p in named.items():
        if values[name].shape != p.shape:
            raise ValueError(f"{path}: {name} has shape {values[name].shape}, expected {p.shape}")
        p.value[...] = values[name]
    return model, meta
