"""posergcn command line: synth, train, eval, gradcheck, bench, inspect.

Exit codes: 0 success, 1 verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import functools
import hashlib
import json
import logging
import subprocess
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import diffmath as dm
from .attention import attention_scores
from .config import ConfigError, load_config
from .evaldata import RetrievalSet, evaluate, synth_tracks
from .model import BRANCHES, load_model, save_checkpoint
from .posegraph import KEYPOINT_NAMES, load_tracks, write_records
from .training import train
from .verify import GRADCHECK_STEP, GRADCHECK_TOL, bench_cells, run_gradcheck

log = logging.getLogger("posergcn")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2

METRIC_COLUMNS = ("run_id", "config_hash", "mAP", "rank1", "rank5", "rank20")


class UsageError(Exception):
    pass


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             timeout=5, cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    records = synth_tracks(args.ids, args.tracks, args.frames, args.occlusion, args.ambiguity,
                           seed=args.seed, d=args.dim, cameras=args.cameras)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_records(records, out)
    print(f"wrote {len(records)} tracks ({args.ids} ids x {args.tracks}, T={args.frames}) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    tracks = load_tracks(args.data, split="train")
    if not tracks:
        raise UsageError(f"{args.data}: no training tracks")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": asdict(cfg),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "git_describe": _git_describe(),
        "started": _now(),
        "finished": None,
        "outputs": {"checkpoint": str(out / "checkpoint.bin"), "train_log": str(out / "train_log.csv")},
        "data": str(args.data),
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    log.info("config %s  margin=%g  lambda_mode=%s", cfg.hash(), cfg.margin, cfg.lambda_mode)

    def progress(row):
        if args.verbose and (row["epoch"] % 50 == 0 or row["epoch"] == cfg.epochs - 1):
            print(f"epoch {row['epoch']:4d}  lr {row['lr']:.2e}  total {row['total']:.4f}  "
                  f"l_id {row['l_id']:.4f}  l_a {row['l_tri_a']:.4f}  l_p {row['l_tri_p']:.4f}  "
                  f"lambda {row['lambda']:.3f}")

    model, _ = train(cfg, tracks, out / "train_log.csv", progress)
    save_checkpoint(out / "checkpoint.bin", model, {"config_hash": cfg.hash()})
    manifest["finished"] = _now()
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"checkpoint: {out / 'checkpoint.bin'}")
    return EXIT_OK


def evaluate_checkpoint(checkpoint, data, branch: str = "fused", split: str | None = "test") -> dict:
    model, meta = load_model(checkpoint)
    tracks = load_tracks(data, split=split)
    if not tracks:
        raise UsageError(f"{data}: no tracks for split {split!r}")
    emb = model.embed(tracks, branch)
    labels = np.array([t.identity for t in tracks])
    cams = np.array([t.camera for t in tracks])
    metrics = evaluate(RetrievalSet.leave_one_out(emb, labels, cams), normalize=model.cfg.normalize)
    metrics["config_hash"] = meta.get("config_hash", model.cfg.hash())
    return metrics


def default_run_id(config_hash: str, data, branch: str) -> str:
    """Content-derived id: the same config, data and branch give the same id."""
    digest = hashlib.sha256(Path(data).read_bytes()).hexdigest()[:8]
    return f"{config_hash[:8]}-{digest}-{branch}"


def cmd_eval(args) -> int:
    split = None if args.split == "all" else args.split
    m = evaluate_checkpoint(args.checkpoint, args.data, args.branch, split)
    run_id = args.run_id or default_run_id(m["config_hash"], args.data, args.branch)
    row = {"run_id": run_id, "config_hash": m["config_hash"],
           **{k: repr(float(m[k])) for k in ("mAP", "rank1", "rank5", "rank20")}}
    if args.out:
        out = Path(args.out)
        new = not out.exists() or out.stat().st_size == 0
        with open(out, "a", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
            if new:
                w.writeheader()
            w.writerow(row)
    w = csv.DictWriter(sys.stdout, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerow(row)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()
    run = functools.partial(run_gradcheck, args.n, args.frames, args.tol, args.step, only=args.only)
    if args.inject_fault:
        with dm.inject_fault(args.inject_fault):
            results = run()
    else:
        results = run()
    if not results:
        raise UsageError(f"no pipeline matches {args.only!r}")
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  max_rel_err {r.error:.3e}  {'ok' if r.passed else 'FAIL'}")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} pipelines within {args.tol:g} "
          f"({time.perf_counter() - t0:.1f}s)")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_bench(args) -> int:
    rows = bench_cells(args.cells, args.n, args.frames, args.reps)
    print(f"{'cell':<10} {'params':>8} {'median_ms':>10} {'reps':>7}")
    for r in rows:
        print(f"{r.cell:<10} {r.params:>8d} {r.median_s * 1e3:>10.4f} {r.reps:>7d}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    model, _ = load_model(args.checkpoint)
    tracks = {t.track_id: t for t in load_tracks(args.data)}
    if args.track not in tracks:
        raise UsageError(f"track {args.track!r} not found in {args.data}")
    print(format_attention(model, tracks[args.track]))
    return EXIT_OK


def format_attention(model, track) -> str:
    track = track.truncated(model.cfg.T)
    a_t, a_n = attention_scores(model.hidden_states(track), model.attention)
    vis = track.graph.visibility()  # T x 14
    lines = [f"track {track.track_id}  identity {track.identity}  camera {track.camera}", "",
             f"{'frame':>5}  {'a_t':>9}  {'visible':>7}  flag"]
    for t, w in enumerate(a_t):
        flag = "occluded" if not vis[t].all() else ""
        lines.append(f"{t:>5d}  {w:>9.6f}  {int(vis[t].sum()):>4d}/14  {flag}".rstrip())
    lines.append(f"{'sum':>5}  {a_t.sum():>9.6f}")
    lines += ["", f"{'node':>5}  {'name':<11} {'a_j':>9}  {'occluded':>8}  flag"]
    T = vis.shape[0]
    for j, w in enumerate(a_n):
        hidden = int(T - vis[:, j].sum())
        flag = "occluded" if hidden else ""
        lines.append(f"{j + 1:>5d}  {KEYPOINT_NAMES[j]:<11} {w:>9.6f}  {hidden:>4d}/{T:<3d}  {flag}".rstrip())
    lines.append(f"{'sum':>5}  {'':<11} {a_n.sum():>9.6f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="posergcn", description=__doc__.splitlines()[0])
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic walker dataset (JSONL)")
    s.add_argument("--ids", type=int, default=20)
    s.add_argument("--tracks", type=int, default=8)
    s.add_argument("--frames", type=int, default=10)
    s.add_argument("--occlusion", type=float, default=0.1)
    s.add_argument("--ambiguity", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dim", type=int, default=64, help="appearance feature dimension")
    s.add_argument("--cameras", type=int, default=2)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("train", help="train from a key = value config")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="retrieval metrics for a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--branch", choices=BRANCHES, default="fused")
    s.add_argument("--split", choices=("train", "test", "all"), default="test")
    s.add_argument("--run-id")
    s.add_argument("--out", help="metrics CSV (appended)")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("gradcheck", help="finite-difference check of every pipeline")
    s.add_argument("--n", type=int, default=3)
    s.add_argument("--frames", type=int, default=3)
    s.add_argument("--tol", type=float, default=GRADCHECK_TOL)
    s.add_argument("--step", type=float, default=GRADCHECK_STEP)
    s.add_argument("--only", help="run pipelines whose name contains this substring")
    s.add_argument("--inject-fault", choices=("tanh", "sigmoid", "relu"), help=argparse.SUPPRESS)
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("bench", help="median unroll time and parameter count per cell")
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--frames", type=int, default=10)
    s.add_argument("--reps", type=int, default=10_000)
    s.add_argument("--cells", nargs="+", default=["rgcn", "lgcn", "gcn_rnn", "gcn_lstm"],
                   choices=["rgcn", "lgcn", "gcn_rnn", "gcn_lstm"])
    s.set_defaults(fn=cmd_bench)

    s = sub.add_parser("inspect", help="dump attention scores for one track")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--track", required=True)
    s.set_defaults(fn=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        key = f" (key: {exc.key})" if exc.key else ""
        print(f"posergcn: config error{key}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ValueError, OSError) as exc:
        print(f"posergcn: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
