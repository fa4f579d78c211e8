"""Median and p95 finality latency of the bundled happy-path trace across depths."""

import argparse

from contractwatch.bench import bundled_traces
from contractwatch.chainsim import ChainSim, SimConfig, run_trace


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--depths", default="1,6,12,20,30,50")
    ap.add_argument("--block-interval-ms", type=int, default=13_000)
    ap.add_argument("--reorg-probability", type=float, default=0.0)
    ap.add_argument("--max-reorg-depth", type=int, default=3)
    ap.add_argument("--seed", type=int, default=42)
    a = ap.parse_args()

    trace = next(t for t in bundled_traces() if t.name.endswith("happy_path.ndjson"))
    print("k    median_s  p95_s   gas       reverts")
    for k in map(int, a.depths.split(",")):
        cfg = SimConfig(finality_depth=k, block_interval_ms=a.block_interval_ms,
                        reorg_probability=a.reorg_probability,
                        max_reorg_depth=a.max_reorg_depth, seed=a.seed)
        m = run_trace(ChainSim(cfg), trace)
        print(f"{k:<4} {m.median_latency() / 1000:<9.1f} {m.p95_latency() / 1000:<7.1f} "
              f"{m.total_gas:<9} {m.revert_then_remine}")


if __name__ == "__main__":
    main()
