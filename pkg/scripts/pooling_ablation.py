"""Fused mAP for each pooling head (dam, tam, nam, mean) and cell type.

    python scripts/pooling_ablation.py --seeds 0 1 2 --cells rgcn lgcn
"""

import argparse

from posergcn.experiments import PREMISE_CONFIG, SynthSetup, run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--cells", nargs="+", default=["rgcn"])
    ap.add_argument("--poolings", nargs="+", default=["dam", "tam", "nam", "mean"])
    args = ap.parse_args()

    print("seed,cell,pooling,fused_mAP,fused_rank1,pose_mAP")
    for seed in args.seeds:
        setup = SynthSetup(seed=seed)
        for cell in args.cells:
            for pooling in args.poolings:
                res = run(PREMISE_CONFIG.replace(cell=cell, pooling=pooling, seed=seed), setup)
                f, p = res.metrics["fused"], res.metrics["pose"]
                print(f"{seed},{cell},{pooling},{f['mAP']:.4f},{f['rank1']:.4f},{p['mAP']:.4f}", flush=True)


if __name__ == "__main__":
    main()
