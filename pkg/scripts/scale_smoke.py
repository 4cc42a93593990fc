"""Time per-user index builds and k=4 retrieval on a synthetic dataset."""

import argparse
import statistics
import time

from lampsum.retrieval import RetrievalConfig, build_indexes, generate_query, retrieve_top_k
from lampsum.synthetic import synthetic_tweets


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--users", type=int, default=1000)
    ap.add_argument("--items", type=int, default=50)
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)

    instances, profiles = synthetic_tweets(args.users, args.items)
    t0 = time.perf_counter()
    indexes = build_indexes(profiles.values(), workers=args.workers)
    t_build = time.perf_counter() - t0
    cfg = RetrievalConfig(k=args.k)
    lat = []
    for inst in instances:
        q0 = time.perf_counter()
        retrieve_top_k(indexes[inst.user_id], generate_query(inst), cfg)
        lat.append((time.perf_counter() - q0) * 1000)
    lat.sort()
    print(f"users={args.users} items/user={args.items} build={t_build:.2f}s "
          f"retrieval total={sum(lat) / 1000:.2f}s median={statistics.median(lat):.3f}ms "
          f"p95={lat[int(0.95 * (len(lat) - 1))]:.3f}ms")


if __name__ == "__main__":
    main()
