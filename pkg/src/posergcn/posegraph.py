"""14-keypoint pose graphs, normalized adjacency and the JSONL track format.

Keypoint numbering (1-based, as used in the edge list):

    1 head, 2 neck, 3 right shoulder, 4 right elbow, 5 right wrist,
    6 left shoulder, 7 left elbow, 8 left wrist, 9 right hip, 10 right knee,
    11 right ankle, 12 left hip, 13 left knee, 14 left ankle
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

NUM_KEYPOINTS = 14

KEYPOINT_NAMES = (
    "head", "neck",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee", "l_ankle",
)

# 1-based skeleton edges; a 13-edge tree rooted at the neck.
SKELETON_EDGES = (
    (1, 2),
    (2, 3), (2, 6),
    (3, 4), (6, 7),
    (4, 5), (7, 8),
    (2, 9), (2, 12),
    (9, 10), (12, 13),
    (10, 11), (13, 14),
)

warn_counts: Counter = Counter()


@dataclass(frozen=True)
class AdjacencyMatrix:
    a: np.ndarray
    a_hat: np.ndarray

    def power(self, k: int) -> np.ndarray:
        return np.linalg.matrix_power(self.a_hat, k)


def normalize_adjacency(a) -> np.ndarray:
    """Symmetric normalization with self-loops, D~^-1/2 (A + I) D~^-1/2."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValueError("adjacency must be symmetric")
    if not np.isin(a, (0.0, 1.0)).all():
        raise ValueError("adjacency must be binary")
    if np.any(np.diag(a) != 0):
        raise ValueError("adjacency must have a zero diagonal")
    a_tilde = a + np.eye(a.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return d_inv_sqrt[:, None] * a_tilde * d_inv_sqrt[None, :]


def adjacency_from_edges(edges: Iterable[tuple[int, int]], num_nodes: int = NUM_KEYPOINTS) -> np.ndarray:
    a = np.zeros((num_nodes, num_nodes))
    for i, j in edges:
        a[i - 1, j - 1] = a[j - 1, i - 1] = 1.0
    return a


def canonical_adjacency() -> AdjacencyMatrix:
    a = adjacency_from_edges(SKELETON_EDGES)
    return AdjacencyMatrix(a=a, a_hat=normalize_adjacency(a))


@dataclass(frozen=True)
class PoseFrame:
    coords: np.ndarray  # 14 x 2, bbox-normalized to [-1, 1]
    visible: np.ndarray  # 14 bools

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        visible = np.asarray(self.visible, dtype=bool)
        if coords.shape != (NUM_KEYPOINTS, 2) or visible.shape != (NUM_KEYPOINTS,):
            raise ValueError(f"PoseFrame needs 14x2 coords and 14 flags, got {coords.shape}, {visible.shape}")
        coords = np.where(visible[:, None], coords, 0.0)
        coords.setflags(write=False)
        visible.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "visible", visible)


def frame_from_detection(keypoints: Sequence, bbox: Sequence[float]) -> PoseFrame:
    """Map detector keypoints into bbox-centered coordinates in [-1, 1]^2.

    `keypoints` has 14 entries, each an (x, y) pair or None for a missed
    detection.  `bbox` is (x, y, w, h) with (x, y) the top-left corner.
    Points outside the box are clamped and counted in `warn_counts`.
    """
    x, y, w, h = (float(v) for v in bbox)
    if w <= 0 or h <= 0:
        raise ValueError(f"bbox needs positive width and height, got {bbox}")
    if len(keypoints) != NUM_KEYPOINTS:
        raise ValueError(f"expected {NUM_KEYPOINTS} keypoints, got {len(keypoints)}")
    cx, cy = x + w / 2.0, y + h / 2.0
    coords = np.zeros((NUM_KEYPOINTS, 2))
    visible = np.zeros(NUM_KEYPOINTS, dtype=bool)
    for i, kp in enumerate(keypoints):
        if kp is None:
            continue
        u = (float(kp[0]) - cx) / (w / 2.0)
        v = (float(kp[1]) - cy) / (h / 2.0)
        if abs(u) > 1.0 or abs(v) > 1.0:
            warn_counts["keypoint_clamped"] += 1
            u = min(max(u, -1.0), 1.0)
            v = min(max(v, -1.0), 1.0)
        coords[i] = (u, v)
        visible[i] = True
    return PoseFrame(coords, visible)


@dataclass(frozen=True)
class TemporalPoseGraph:
    frames: tuple[PoseFrame, ...]
    adjacency: AdjacencyMatrix

    @property
    def T(self) -> int:
        return len(self.frames)

    def features(self) -> list[np.ndarray]:
        """Initial node features per frame (14 x 2 each, zero rows when occluded)."""
        return [f.coords for f in self.frames]

    def visibility(self) -> np.ndarray:
        return np.stack([f.visible for f in self.frames])


_CANONICAL = canonical_adjacency()


def build_temporal_graph(frames: Sequence[PoseFrame]) -> TemporalPoseGraph:
    frames = tuple(frames)
    if not frames:
        raise ValueError("a temporal pose graph needs at least one frame")
    return TemporalPoseGraph(frames=frames, adjacency=_CANONICAL)


# ---------------------------------------------------------------------------
# JSONL track records


@dataclass
class Track:
    track_id: str
    identity: int
    camera: int
    graph: TemporalPoseGraph
    appearance: np.ndarray | None = None  # T x d
    split: str | None = None
    raw_frames: list = field(default_factory=list, repr=False)

    @property
    def T(self) -> int:
        return self.graph.T

    def truncated(self, T: int) -> "Track":
        if T >= self.graph.T:
            return self
        app = None if self.appearance is None else self.appearance[:T]
        return Track(self.track_id, self.identity, self.camera,
                     build_temporal_graph(self.graph.frames[:T]), app, self.split, self.raw_frames[:T])


def track_from_record(rec: dict) -> Track:
    raw = rec["frames"]
    frames = [frame_from_detection(fr["keypoints"], fr["bbox"]) for fr in raw]
    app = None
    if raw and "appearance" in raw[0]:
        app = np.array([fr["appearance"] for fr in raw], dtype=np.float64)
    return Track(
        track_id=str(rec["track_id"]),
        identity=int(rec["identity"]),
        camera=int(rec["camera"]),
        graph=build_temporal_graph(frames),
        appearance=app,
        split=rec.get("split"),
        raw_frames=raw,
    )


def iter_records(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc})") from None


def load_tracks(path: str | Path, split: str | None = None) -> list[Track]:
    """Read a JSONL pose file; `split` keeps records tagged with it or untagged."""
    tracks = []
    for rec in iter_records(path):
        tag = rec.get("split")
        if split is not None and tag is not None and tag != split:
            continue
        tracks.append(track_from_record(rec))
    return tracks


def write_records(records: Iterable[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")))
            fh.write("\n")
