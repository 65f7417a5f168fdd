"""Time and memory of a long stationary run.

    python scripts/bench_simulator.py --events 10000000
"""
import argparse
import resource
import time

from agingpa.model import AffineWeights, ProcessSpec
from agingpa.simulate import growth_rate, run


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--events", type=int, default=10**7)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    t0 = time.perf_counter()
    pop = run(ProcessSpec(AffineWeights(1, 1)), seed=args.seed, max_events=args.events)
    elapsed = time.perf_counter() - t0
    peak_mb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024
    print(f"births={pop.births} seconds={elapsed:.1f} events_per_second={pop.births / elapsed:.0f}")
    print(f"peak_rss_mb={peak_mb:.0f} rss_bytes_per_individual={peak_mb * 2**20 / pop.size:.0f}")
    print(f"growth_rate={growth_rate(pop):.4f} (expected 2)")


if __name__ == "__main__":
    main()
