"""Desk-scale experiments shared by the acceptance suite and scripts/."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .evaldata import RetrievalSet, evaluate, synth_tracks
from .model import BRANCHES, PoseReIDModel
from .posegraph import Track, track_from_record
from .training import train

# Settings for the synthetic retrieval experiments.  The Config default
# lr = 3e-4 barely moves in 400 single-batch epochs on this data.
PREMISE_CONFIG = Config(lr=0.01, lr_step=300)


@dataclass
class SynthSetup:
    ids: int = 20
    tracks: int = 8
    frames: int = 10
    occlusion: float = 0.1
    ambiguity: float = 1.0
    seed: int = 0

    def split(self) -> tuple[list[Track], list[Track]]:
        recs = synth_tracks(self.ids, self.tracks, self.frames, self.occlusion, self.ambiguity, seed=self.seed)
        tracks = [track_from_record(r) for r in recs]
        return [t for t in tracks if t.split == "train"], [t for t in tracks if t.split == "test"]


@dataclass
class RunResult:
    metrics: dict  # branch -> metric dict
    history: list[dict]
    seconds: float
    model: PoseReIDModel = field(repr=False)


def branch_metrics(model: PoseReIDModel, tracks, branches=BRANCHES) -> dict:
    labels = np.array([t.identity for t in tracks])
    cams = np.array([t.camera for t in tracks])
    return {b: evaluate(RetrievalSet.leave_one_out(model.embed(tracks, b), labels, cams),
                        normalize=model.cfg.normalize)
            for b in branches}


def run(cfg: Config, setup: SynthSetup) -> RunResult:
    """Train on the train split, evaluate every branch on the held-out tracks."""
    train_tracks, test_tracks = setup.split()
    t0 = time.perf_counter()
    model, history = train(cfg, train_tracks)
    seconds = time.perf_counter() - t0
    return RunResult(branch_metrics(model, test_tracks), history, seconds, model)


def tail_mean(history: list[dict], key: str, last: int = 20) -> float:
    return float(np.mean([row[key] for row in history[-last:]]))
