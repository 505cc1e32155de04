"""Clip length T vs retrieval; the generator produces T frames per track.

    python scripts/frames_sweep.py --frames 4 8 12 16
"""

import argparse

from posergcn.experiments import PREMISE_CONFIG, SynthSetup, run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, nargs="+", default=[4, 8, 12, 16])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args()

    print("seed,T,pose_mAP,pose_rank1,fused_mAP,fused_rank1,train_s")
    for seed in args.seeds:
        for T in args.frames:
            res = run(PREMISE_CONFIG.replace(T=T, seed=seed), SynthSetup(frames=T, seed=seed))
            p, f = res.metrics["pose"], res.metrics["fused"]
            print(f"{seed},{T},{p['mAP']:.4f},{p['rank1']:.4f},{f['mAP']:.4f},{f['rank1']:.4f},{res.seconds:.0f}",
                  flush=True)


if __name__ == "__main__":
    main()
