"""Oracle rank of the selected genotype over several seeds.

    python scripts/search_quality.py --dataset spirals --noise 0.1 --seeds 5
"""
import argparse
import time

from dirichlet_nas import bench, engine
from dirichlet_nas import space as sp


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dataset", default="spirals", choices=bench.DATASET_KINDS)
    ap.add_argument("--n", type=int, default=4096)
    ap.add_argument("--noise", type=float, default=0.1)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--oracle", help="reuse a saved table instead of building one")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    spec = sp.micro_space()
    ds = bench.gen_dataset(args.dataset, args.n, args.noise, 0)
    if args.oracle:
        table = bench.OracleTable.load(args.oracle, ds)
    else:
        t = time.perf_counter()
        table = bench.build_oracle(spec, ds, workers=args.workers)
        print(f"oracle built in {time.perf_counter() - t:.1f}s; best {table.best().key()} "
              f"{table[table.best()]:.3f}")
    for seed in range(args.seeds):
        t = time.perf_counter()
        g, _, _ = engine.run_search(engine.SearchConfig(seed=seed), spec, ds)
        print(f"seed {seed}: {g.key():7s} acc {table[g]:.3f} rank {bench.rank_of(g, table):.3f} "
              f"({time.perf_counter() - t:.1f}s)")


if __name__ == "__main__":
    main()
