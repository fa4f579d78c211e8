"""Gas-limit arithmetic: loop bounds and per-transaction gas budgets."""

import argparse

from contractwatch.chainsim import SimConfig, avg_gas_per_tx, max_loop_iterations, txs_per_block


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    d = SimConfig()
    ap.add_argument("--block-gas-limit", type=int, default=d.block_gas_limit)
    ap.add_argument("--per-iteration-gas", type=int, default=d.per_iteration_gas)
    ap.add_argument("--txs-per-hour", type=int, default=23_150)
    ap.add_argument("--blocks-per-hour", type=int, default=177)
    a = ap.parse_args()

    print(f"block gas limit        {a.block_gas_limit}")
    for base in (0, d.base_tx_cost):
        n = max_loop_iterations(a.block_gas_limit, base, a.per_iteration_gas)
        print(f"max loop iterations    {n} (base cost {base}, {a.per_iteration_gas}/iteration)")
    per_block = txs_per_block(a.txs_per_hour, a.blocks_per_hour)
    print(f"txs per block          {per_block} ({a.txs_per_hour}/h over {a.blocks_per_hour} blocks/h)")
    print(f"avg gas per tx         {avg_gas_per_tx(8_000_000, per_block)} (8000000 gas blocks)")


if __name__ == "__main__":
    main()
