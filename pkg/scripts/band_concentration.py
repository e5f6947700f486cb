"""Median exploration-band width for random beta and for beta scaled by 10."""
import argparse

import numpy as np

from dirichlet_nas import bench
from dirichlet_nas import diagnostics as dg
from dirichlet_nas import space as sp


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--oracle", required=True)
    ap.add_argument("--dataset", default="spirals")
    ap.add_argument("--noise", type=float, default=0.1)
    ap.add_argument("--n", type=int, default=4096)
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--bands", type=int, default=1000)
    args = ap.parse_args()

    spec = sp.micro_space()
    table = bench.OracleTable.load(args.oracle, bench.gen_dataset(args.dataset, args.n, args.noise, 0))
    rng = np.random.default_rng(0)
    print("trial,median_width,median_width_x10")
    for i in range(args.trials):
        betas = [rng.uniform(0.3, 5.0, spec.n_ops) for _ in range(spec.n_edges)]
        w = [np.median(dg.band_widths([c * b for b in betas], spec, table.__getitem__, 100, args.bands,
                                      np.random.default_rng(i))) for c in (1, 10)]
        print(f"{i},{w[0]:.4f},{w[1]:.4f}")


if __name__ == "__main__":
    main()
