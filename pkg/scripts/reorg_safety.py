"""Random load with reorgs: how many 'final' transactions get orphaned per depth k."""

import argparse

from contractwatch.chainsim import SimConfig, simulate_load


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--blocks", type=int, default=10_000)
    ap.add_argument("--reorg-probability", type=float, default=0.05)
    ap.add_argument("--max-reorg-depth", type=int, default=3)
    ap.add_argument("--depths", default="1,2,3,4,6,20")
    ap.add_argument("--seed", type=int, default=3)
    a = ap.parse_args()

    print("k    reorgs  reverted  final_then_orphaned  fofi  gas_cap")
    for k in map(int, a.depths.split(",")):
        cfg = SimConfig(finality_depth=k, reorg_probability=a.reorg_probability,
                        max_reorg_depth=a.max_reorg_depth, seed=a.seed)
        r = simulate_load(cfg, a.blocks)
        print(f"{k:<4} {r.reorgs:<7} {r.reverted:<9} {r.final_then_orphaned:<20} "
              f"{r.fofi_ok!s:<5} {r.gas_cap_ok}")


if __name__ == "__main__":
    main()
