"""Show that a higher gas price cannot move a transaction ahead of its own predecessor."""

from contractwatch.chainsim import ChainSim, SimTx


def show(sim):
    for b in sim.chain:
        if b.txs:
            desc = ", ".join(f"{sim.txs[t].sender}#{sim.txs[t].nonce}@{sim.txs[t].gas_price}"
                             for t in b.txs)
            print(f"  block {b.height}: {desc}")


def main():
    sim = ChainSim()
    print("A#1 bids 100 but is queued behind A#0 at price 1; B#0 bids 50:")
    sim.submit_tx(SimTx("A", 1, 100, 21_000, 21_000))
    sim.submit_tx(SimTx("B", 0, 50, 21_000, 21_000))
    sim.step()
    sim.submit_tx(SimTx("A", 0, 1, 21_000, 21_000))
    sim.step()
    sim.step()
    show(sim)


if __name__ == "__main__":
    main()
