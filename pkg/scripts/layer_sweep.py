"""Number of graph-convolution layers in the RGCN input path vs retrieval.

    python scripts/layer_sweep.py --layers 1 2 3
"""

import argparse

from posergcn.experiments import PREMISE_CONFIG, SynthSetup, run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--layers", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args()

    print("seed,layers,pose_mAP,pose_rank1,fused_mAP,fused_rank1")
    for seed in args.seeds:
        for layers in args.layers:
            res = run(PREMISE_CONFIG.replace(layers=layers, seed=seed), SynthSetup(seed=seed))
            p, f = res.metrics["pose"], res.metrics["fused"]
            print(f"{seed},{layers},{p['mAP']:.4f},{p['rank1']:.4f},{f['mAP']:.4f},{f['rank1']:.4f}", flush=True)


if __name__ == "__main__":
    main()
