"""Adaptive vs fixed lambda: tail-averaged pose triplet loss and fused retrieval.

    python scripts/lambda_ablation.py --modes adaptive fixed:0.5 fixed:1.0
"""

import argparse

from posergcn.experiments import PREMISE_CONFIG, SynthSetup, run, tail_mean


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--modes", nargs="+", default=["adaptive", "fixed:0.0", "fixed:0.5", "fixed:1.0"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--ambiguity", type=float, default=0.5)
    args = ap.parse_args()

    print("seed,lambda_mode,l_tri_p_last20,l_tri_a_last20,fused_mAP,fused_rank1")
    for seed in args.seeds:
        setup = SynthSetup(ambiguity=args.ambiguity, seed=seed)
        for mode in args.modes:
            res = run(PREMISE_CONFIG.replace(lambda_mode=mode, seed=seed), setup)
            f = res.metrics["fused"]
            print(f"{seed},{mode},{tail_mean(res.history, 'l_tri_p'):.4f},{tail_mean(res.history, 'l_tri_a'):.4f},"
                  f"{f['mAP']:.4f},{f['rank1']:.4f}", flush=True)


if __name__ == "__main__":
    main()
