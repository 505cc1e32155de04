"""Synthetic walkers, retrieval (query vs gallery) and mAP / CMC metrics."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .posegraph import NUM_KEYPOINTS

log = logging.getLogger(__name__)

warn_counts: Counter = Counter()

# torso, upper arm, lower arm, upper leg, lower leg (body-height units)
BASE_LIMBS = np.array([0.30, 0.15, 0.13, 0.24, 0.24])
HEAD_LENGTH = 0.10
SHOULDER_HALF = 0.05
HIP_HALF = 0.035
JITTER_SIGMA = 0.01
LIMB_SPREAD = 0.35  # ratios drawn from BASE_LIMBS * U(1 - spread, 1 + spread)
FREQ_RANGE = (0.25, 0.9)
AMP_RANGE = (0.15, 0.6)
APPEARANCE_SIGMA = 0.1


@dataclass(frozen=True)
class SyntheticIdentity:
    """Body proportions and gait style of one synthetic pedestrian.

    The hip swing at frame t is amplitude * sin(phase_offset + frequency * t);
    every track of the identity follows the same sinusoid.
    """

    limb_ratios: np.ndarray
    gait_frequency: float  # radians per frame
    gait_amplitude: float  # radians of leg swing
    phase_offset: float
    appearance_centroid: np.ndarray


def sample_identities(n_ids: int, d: int, appearance_ambiguity: float,
                      rng: np.random.Generator) -> list[SyntheticIdentity]:
    shared = rng.normal(size=d)
    out = []
    for _ in range(n_ids):
        ratios = BASE_LIMBS * rng.uniform(1.0 - LIMB_SPREAD, 1.0 + LIMB_SPREAD, size=5)
        own = rng.normal(size=d)
        centroid = (1.0 - appearance_ambiguity) * own + appearance_ambiguity * shared
        out.append(SyntheticIdentity(
            limb_ratios=ratios,
            gait_frequency=float(rng.uniform(*FREQ_RANGE)),
            gait_amplitude=float(rng.uniform(*AMP_RANGE)),
            phase_offset=float(rng.uniform(0.0, 2.0 * math.pi)),
            appearance_centroid=centroid,
        ))
    return out


def walker_pose(ident: SyntheticIdentity, phase: float) -> np.ndarray:
    """14 x 2 keypoints (x right, y down, body-height units) at a gait phase."""
    torso, up_arm, lo_arm, up_leg, lo_leg = ident.limb_ratios
    amp = ident.gait_amplitude
    pts = np.zeros((NUM_KEYPOINTS, 2))
    bob = 0.015 * amp * math.cos(2.0 * phase)
    neck = np.array([0.0, bob])
    pts[1] = neck
    pts[0] = neck + (0.0, -HEAD_LENGTH)
    swing = amp * math.sin(phase)
    arm = -0.7 * amp * math.sin(phase)  # arms counter-swing the legs

    for side, sign in ((0, 1.0), (1, -1.0)):
        shoulder = neck + (sign * -SHOULDER_HALF, 0.02)
        a = sign * arm
        elbow = shoulder + up_arm * np.array([math.sin(a), math.cos(a)])
        fa = a + 0.35
        wrist = elbow + lo_arm * np.array([math.sin(fa), math.cos(fa)])
        base = 2 + 3 * side
        pts[base], pts[base + 1], pts[base + 2] = shoulder, elbow, wrist

        hip = neck + (sign * -HIP_HALF, torso)
        t = sign * swing
        knee = hip + up_leg * np.array([math.sin(t), math.cos(t)])
        # knee bends most while the leg swings forward
        flex = 0.6 * amp * (1.0 + math.cos(phase + (0.0 if sign > 0 else math.pi)))
        s = t - flex
        ankle = knee + lo_leg * np.array([math.sin(s), math.cos(s)])
        base = 8 + 3 * side
        pts[base], pts[base + 1], pts[base + 2] = hip, knee, ankle
    return pts


def _bbox(pts: np.ndarray) -> list[float]:
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    h = (hi[1] - lo[1]) * 1.1
    w = 0.6 * h
    cx, cy = (lo + hi) / 2.0
    return [cx - w / 2.0, cy - h / 2.0, w, h]


def synth_tracks(n_ids: int, tracks_per_id: int, T: int, occlusion_rate: float = 0.0,
                 appearance_ambiguity: float = 0.0, seed: int = 0, d: int = 64,
                 cameras: int = 2) -> list[dict]:
    """Records in the JSONL pose format, one per track.

    Tracks of one identity alternate between cameras.  The first half of each
    identity's tracks is tagged ``split = "train"``, the rest ``"test"``.
    """
    if n_ids < 2:
        raise ValueError("need at least two identities")
    if tracks_per_id < 1 or T < 1 or d < 1 or cameras < 1:
        raise ValueError("tracks_per_id, T, d and cameras must be >= 1")
    if not 0.0 <= occlusion_rate < 1.0:
        raise ValueError("occlusion_rate must lie in [0, 1)")
    if not 0.0 <= appearance_ambiguity <= 1.0:
        raise ValueError("appearance_ambiguity must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    idents = sample_identities(n_ids, d, appearance_ambiguity, rng)
    n_train = (tracks_per_id + 1) // 2 if tracks_per_id > 1 else 1
    records = []
    for pid, ident in enumerate(idents):
        for k in range(tracks_per_id):
            px_scale = rng.uniform(80.0, 160.0)
            origin = rng.uniform([50.0, 50.0], [600.0, 300.0])
            drift = rng.uniform(-3.0, 3.0)
            frames = []
            for t in range(T):
                body = walker_pose(ident, ident.phase_offset + ident.gait_frequency * t)
                body = body + rng.normal(scale=JITTER_SIGMA, size=body.shape)
                pix = body * px_scale + origin + (drift * t, 0.0)
                bbox = _bbox(pix)
                hidden = rng.random(NUM_KEYPOINTS) < occlusion_rate
                kps = [None if hidden[i] else [float(pix[i, 0]), float(pix[i, 1])] for i in range(NUM_KEYPOINTS)]
                feat = ident.appearance_centroid + rng.normal(scale=APPEARANCE_SIGMA, size=d)
                frames.append({"keypoints": kps, "bbox": [float(v) for v in bbox],
                               "appearance": [float(v) for v in feat]})
            records.append({
                "track_id": f"id{pid:03d}_t{k:02d}",
                "identity": pid,
                "camera": k % cameras,
                "split": "train" if (k < n_train or tracks_per_id == 1) else "test",
                "frames": frames,
            })
    return records


# ---------------------------------------------------------------------------
# metrics


def average_precision(relevant: Sequence) -> float:
    """Mean over relevant positions of precision at that position.

    Returns nan (and counts a warning) when nothing is relevant.
    """
    flags = np.asarray(relevant, dtype=bool)
    hits = np.flatnonzero(flags)
    if hits.size == 0:
        warn_counts["query_without_match"] += 1
        return float("nan")
    ranks = hits + 1
    return float(np.mean(np.arange(1, hits.size + 1) / ranks))


def cmc(rankings: Sequence[Sequence], ks: Sequence[int] = (1, 5, 20)) -> dict[int, float]:
    """Fraction of queries whose first relevant item sits at position <= k."""
    firsts = []
    for r in rankings:
        hits = np.flatnonzero(np.asarray(r, dtype=bool))
        if hits.size == 0:
            warn_counts["query_without_match"] += 1
            continue
        firsts.append(hits[0] + 1)
    if not firsts:
        return {k: float("nan") for k in ks}
    firsts = np.array(firsts)
    return {k: float(np.mean(firsts <= k)) for k in ks}


@dataclass
class RetrievalSet:
    query: np.ndarray
    query_labels: np.ndarray
    query_cams: np.ndarray
    gallery: np.ndarray
    gallery_labels: np.ndarray
    gallery_cams: np.ndarray

    def __post_init__(self):
        for name in ("query", "gallery"):
            setattr(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=np.float64)))
        for name in ("query_labels", "query_cams", "gallery_labels", "gallery_cams"):
            setattr(self, name, np.asarray(getattr(self, name)).ravel())
        if self.query.shape[1] != self.gallery.shape[1]:
            raise ValueError(f"query dim {self.query.shape[1]} != gallery dim {self.gallery.shape[1]}")
        if len(self.query_labels) != len(self.query) or len(self.gallery_labels) != len(self.gallery):
            raise ValueError("label counts must match embedding counts")

    @classmethod
    def leave_one_out(cls, emb, labels, cams) -> "RetrievalSet":
        """Every item is a query against all items (itself removed by the camera rule)."""
        return cls(emb, labels, cams, emb, labels, cams)


def retrieve(rs: RetrievalSet, normalize: bool = False) -> list[np.ndarray]:
    """Per query: relevance flags of the gallery sorted by ascending distance.

    Gallery items sharing identity and camera with the query are dropped;
    ties keep gallery order.
    """
    if len(rs.gallery) == 0:
        raise ValueError("gallery is empty")
    q, g = rs.query, rs.gallery
    if normalize:
        q = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
        g = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
    out = []
    for i in range(len(q)):
        diff = g - q[i]
        dist = np.sqrt((diff * diff).sum(axis=1))
        keep = ~((rs.gallery_labels == rs.query_labels[i]) & (rs.gallery_cams == rs.query_cams[i]))
        idx = np.flatnonzero(keep)
        order = idx[np.argsort(dist[idx], kind="stable")]
        out.append(rs.gallery_labels[order] == rs.query_labels[i])
    return out


def evaluate(rs: RetrievalSet, normalize: bool = False) -> dict[str, float]:
    rankings = retrieve(rs, normalize)
    valid = [r for r in rankings if r.any()]
    skipped = len(rankings) - len(valid)
    if skipped:
        warn_counts["query_without_match"] += skipped
        log.warning("%d queries have no match in the gallery and are excluded", skipped)
    aps = [average_precision(r) for r in valid]
    curve = cmc(valid)
    return {"mAP": float(np.mean(aps)) if aps else float("nan"),
            "rank1": curve[1], "rank5": curve[5], "rank20": curve[20]}


def expected_random_ap(relevant: int, total: int) -> float:
    """Expected AP of a uniformly random ranking with `relevant` hits among `total`."""
    h = sum(1.0 / p for p in range(1, total + 1))
    if total == 1:
        return 1.0
    return (h + (relevant - 1) / (total - 1) * (total - h)) / total
