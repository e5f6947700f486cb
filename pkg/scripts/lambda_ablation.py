"""Final ||eta|| against the anchor strength, median over seeds."""
import argparse

import numpy as np

from dirichlet_nas import bench, engine
from dirichlet_nas import space as sp


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lambdas", default="0,1e-3,1")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--n", type=int, default=1024)
    ap.add_argument("--distance", default="eta-l2", choices=["eta-l2", "kl"])
    args = ap.parse_args()

    spec = sp.micro_space()
    ds = bench.gen_dataset("spirals", args.n, 0.1, 0)
    print("lambda,seed,eta_norm,genotype")
    for lam in (float(v) for v in args.lambdas.split(",")):
        norms = []
        for seed in range(args.seeds):
            cfg = engine.SearchConfig(seed=seed, lambda_anchor=lam, distance=args.distance)
            g, _, st = engine.run_search(cfg, spec, ds)
            norms.append(float(np.linalg.norm(np.concatenate(st.etas()))))
            print(f"{lam},{seed},{norms[-1]:.6f},{g.key()}")
        print(f"# lambda {lam}: median {np.median(norms):.6f}")


if __name__ == "__main__":
    main()
