"""Appearance-only vs pose vs fused retrieval when appearance is uninformative.

    python scripts/premise.py --seeds 0 1 2 --ambiguity 1.0
"""

import argparse

from posergcn.experiments import PREMISE_CONFIG, SynthSetup, run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--ambiguity", type=float, default=1.0)
    ap.add_argument("--occlusion", type=float, default=0.1)
    ap.add_argument("--epochs", type=int, default=PREMISE_CONFIG.epochs)
    args = ap.parse_args()

    print("seed,branch,mAP,rank1,rank5,rank20,train_s")
    for seed in args.seeds:
        cfg = PREMISE_CONFIG.replace(seed=seed, epochs=args.epochs)
        res = run(cfg, SynthSetup(occlusion=args.occlusion, ambiguity=args.ambiguity, seed=seed))
        for branch, m in res.metrics.items():
            print(f"{seed},{branch},{m['mAP']:.4f},{m['rank1']:.4f},{m['rank5']:.4f},{m['rank20']:.4f},"
                  f"{res.seconds:.0f}", flush=True)


if __name__ == "__main__":
    main()
