"""Discrete-time simulator of on-chain contract execution.

Blocks are produced on a fixed interval. Each block greedily takes the
highest gas-price transactions that fit under the block gas limit, but an
account's transactions only become eligible in nonce order, so a later,
better-paying transaction from the same account waits for its
predecessors. Reorganisations replace the last few blocks with empty
competitors and send their transactions back to the mempool; a
transaction counts as final once it is ``finality_depth`` blocks deep.

A block sealed at time T is assembled from the mempool as it stood when the
previous block was sealed (T - interval), so a transaction waits between
one and two intervals for its first confirmation.
"""

from __future__ import annotations

import math
import random
import statistics
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .trace import Trace, TraceEvent

PENDING, INCLUDED, FINAL, REJECTED, ORPHANED = "pending", "included", "final", "rejected", "orphaned"

# Illustrative per-operation execution costs for the car-insurance contract,
# on top of the base transaction cost. POREQ stores the policy and personal data.
DEFAULT_ACTION_GAS = {
    "POREQ": 180_000,
    "POconfirm": 45_000,
    "POreject": 30_000,
    "makeClaim": 60_000,
    "validateClaim": 35_000,
    "invalidateClaim": 35_000,
    "payClaim": 50_000,
    "refuseClaim": 30_000,
    "requestDeletion": 25_000,
    "deletePersonalData": 25_000,
}


class ChainSimError(Exception):
    pass


class GasLimitExceedsBlockLimit(ChainSimError):
    pass


class NonceInPast(ChainSimError):
    pass


class DuplicateNonce(ChainSimError):
    pass


class UnknownTx(ChainSimError, KeyError):
    pass


@dataclass
class SimConfig:
    block_interval_ms: int = 13_000
    block_gas_limit: int = 8_001_071
    base_tx_cost: int = 21_000
    per_action_gas: dict = field(default_factory=lambda: dict(DEFAULT_ACTION_GAS))
    default_action_gas: int = 40_000
    per_iteration_gas: int = 8_156
    reorg_probability: float = 0.0
    max_reorg_depth: int = 0
    finality_depth: int = 20
    seed: int = 0
    drop_on_reorg: bool = False

    def __post_init__(self):
        if self.block_gas_limit <= self.base_tx_cost:
            raise ValueError("block gas limit must exceed the base transaction cost")
        if not 0.0 <= self.reorg_probability <= 1.0:
            raise ValueError("reorg probability must lie in [0, 1]")
        if self.max_reorg_depth < 0 or self.finality_depth < 1 or self.block_interval_ms <= 0:
            raise ValueError("depths must be non-negative, finality depth and interval positive")

    @property
    def finality_guaranteed(self) -> bool:
        return self.finality_depth > self.max_reorg_depth

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown sim config fields: {sorted(unknown)}")
        d = dict(d)
        if "per_action_gas" in d:
            d["per_action_gas"] = {**DEFAULT_ACTION_GAS, **d["per_action_gas"]}
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def bitcoin_preset(**overrides) -> SimConfig:
    """Ten-minute blocks with six-block finality."""
    return SimConfig(**{"block_interval_ms": 600_000, "finality_depth": 6, **overrides})


class GasModel:
    def __init__(self, config: SimConfig):
        self.config = config

    def gas_for(self, op: str, loops: int = 0) -> int:
        c = self.config
        return c.base_tx_cost + c.per_action_gas.get(op, c.default_action_gas) + loops * c.per_iteration_gas


def max_loop_iterations(block_gas_limit: int, base_tx_cost: int, per_iteration_gas: int) -> int:
    if per_iteration_gas <= 0:
        raise ValueError("per-iteration gas must be positive")
    return max(0, (block_gas_limit - base_tx_cost) // per_iteration_gas)


def avg_gas_per_tx(block_gas_limit: int, txs_per_block: int) -> int:
    if txs_per_block <= 0:
        raise ValueError("txs per block must be positive")
    return block_gas_limit // txs_per_block


def txs_per_block(txs_per_hour: int, blocks_per_hour: int) -> int:
    if blocks_per_hour <= 0:
        raise ValueError("blocks per hour must be positive")
    return txs_per_hour // blocks_per_hour


@dataclass
class SimTx:
    sender: str
    nonce: int
    gas_price: int
    gas_limit: int
    gas_used: int
    payload: object = None
    submitted_at: Optional[int] = None
    id: str = ""
    status: str = PENDING
    included_height: Optional[int] = None
    included_at: Optional[int] = None
    final_at: Optional[int] = None
    reverts: int = 0
    order: int = 0


@dataclass(frozen=True)
class Block:
    height: int
    block_id: int
    parent_id: int
    txs: tuple
    gas_used: int
    gas_limit: int
    produced_at: int


@dataclass(frozen=True)
class ReorgReport:
    occurred: bool
    depth: int = 0
    reverted_tx_ids: tuple = ()


class ChainSim:
    def __init__(self, config: Optional[SimConfig] = None):
        self.config = config or SimConfig()
        self.rng = random.Random(self.config.seed)
        self.chain: list[Block] = []
        self.orphans: list[Block] = []
        self.txs: dict[str, SimTx] = {}
        self.nonces: dict[str, int] = {}
        self.clock = 0
        self.reorgs: list[ReorgReport] = []
        self.final_then_orphaned: list[str] = []
        self._pending: dict[str, dict[int, SimTx]] = {}
        self._unfinal: dict[str, SimTx] = {}
        self._next_block_id = 1
        self._counter = 0

    @property
    def height(self) -> int:
        return len(self.chain)

    def mempool(self) -> list[SimTx]:
        return sorted((tx for by_nonce in self._pending.values() for tx in by_nonce.values()),
                      key=lambda t: t.order)

    def submit_tx(self, tx: SimTx) -> str:
        if tx.gas_limit > self.config.block_gas_limit:
            raise GasLimitExceedsBlockLimit(
                f"gas limit {tx.gas_limit} exceeds block limit {self.config.block_gas_limit}")
        if tx.nonce < self.nonces.get(tx.sender, 0):
            raise NonceInPast(f"{tx.sender}: nonce {tx.nonce} already used")
        if tx.nonce in self._pending.get(tx.sender, {}):
            raise DuplicateNonce(f"{tx.sender}: nonce {tx.nonce} already pending")
        self._counter += 1
        tx.order = self._counter
        tx.id = tx.id or f"tx{self._counter}"
        if tx.submitted_at is None:
            tx.submitted_at = self.clock
        self.txs[tx.id] = tx
        if tx.gas_used > tx.gas_limit:
            tx.status = REJECTED  # out of gas; never enters the mempool
        else:
            tx.status = PENDING
            self._pending.setdefault(tx.sender, {})[tx.nonce] = tx
        return tx.id

    def produce_block(self) -> Block:
        cutoff = self.clock
        self.clock += self.config.block_interval_ms
        height = len(self.chain) + 1
        remaining = self.config.block_gas_limit
        chosen = []
        if self._pending:
            next_nonce = dict(self.nonces)
            skipped = set()
            while True:
                best = None
                for sender, by_nonce in self._pending.items():
                    tx = by_nonce.get(next_nonce.get(sender, 0))
                    if (tx is None or tx.id in skipped or tx.submitted_at > cutoff):
                        continue
                    if tx.gas_used > remaining:
                        skipped.add(tx.id)
                        continue
                    if best is None or (-tx.gas_price, tx.order) < (-best.gas_price, best.order):
                        best = tx
                if best is None:
                    break
                chosen.append(best)
                remaining -= best.gas_used
                next_nonce[best.sender] = best.nonce + 1
                del self._pending[best.sender][best.nonce]
                if not self._pending[best.sender]:
                    del self._pending[best.sender]
            for tx in chosen:
                self.nonces[tx.sender] = tx.nonce + 1
                tx.status = INCLUDED
                tx.included_height = height
                tx.included_at = self.clock
                self._unfinal[tx.id] = tx
        parent = self.chain[-1].block_id if self.chain else 0
        block = Block(height, self._next_block_id, parent, tuple(t.id for t in chosen),
                      self.config.block_gas_limit - remaining, self.config.block_gas_limit,
                      self.clock)
        self._next_block_id += 1
        self.chain.append(block)
        return block

    def maybe_reorg(self) -> ReorgReport:
        c = self.config
        if c.reorg_probability <= 0 or c.max_reorg_depth <= 0 or not self.chain:
            return ReorgReport(False)
        if self.rng.random() >= c.reorg_probability:
            return ReorgReport(False)
        depth = min(self.rng.randint(1, c.max_reorg_depth), len(self.chain))
        dropped = self.chain[-depth:]
        del self.chain[-depth:]
        reverted = []
        for block in dropped:
            for tx_id in block.txs:
                tx = self.txs[tx_id]
                reverted.append(tx_id)
                if tx.final_at is not None:
                    self.final_then_orphaned.append(tx_id)
                tx.reverts += 1
                tx.included_height = tx.included_at = tx.final_at = None
                self._unfinal.pop(tx_id, None)
                self.nonces[tx.sender] = min(self.nonces[tx.sender], tx.nonce)
                if c.drop_on_reorg:
                    tx.status = ORPHANED
                else:
                    tx.status = PENDING
                    self._pending.setdefault(tx.sender, {})[tx.nonce] = tx
        for block in dropped:
            parent = self.chain[-1].block_id if self.chain else 0
            self.chain.append(Block(block.height, self._next_block_id, parent, (), 0,
                                    block.gas_limit, block.produced_at))
            self._next_block_id += 1
        self.orphans.extend(dropped)
        report = ReorgReport(True, depth, tuple(reverted))
        self.reorgs.append(report)
        return report

    def _update_finality(self):
        k = self.config.finality_depth
        h = len(self.chain)
        for tx_id, tx in list(self._unfinal.items()):
            if h - tx.included_height + 1 >= k:
                tx.status = FINAL
                tx.final_at = self.clock
                del self._unfinal[tx_id]

    def step(self) -> Block:
        """Produce one block, draw a possible reorg, then settle finality."""
        block = self.produce_block()
        self.maybe_reorg()
        self._update_finality()
        return block

    def confirmations(self, tx_id: str) -> int:
        tx = self.txs.get(tx_id)
        if tx is None:
            raise UnknownTx(tx_id)
        if tx.included_height is None:
            return 0
        return len(self.chain) - tx.included_height + 1

    def is_final(self, tx_id: str) -> bool:
        return self.confirmations(tx_id) >= self.config.finality_depth

    def canonical_txs(self) -> list[SimTx]:
        return [self.txs[t] for b in self.chain for t in b.txs]

    def settled(self) -> bool:
        return not self._pending and not self._unfinal


@dataclass(frozen=True)
class TxRecord:
    index: int
    type: str
    sender: str
    tx_id: Optional[str]
    submit_time: int
    inclusion_time: Optional[int]
    final_time: Optional[int]
    gas: int
    latency_ms: Optional[int]
    reverts: int
    status: str
    error: Optional[str] = None


@dataclass
class ChainMetrics:
    records: list = field(default_factory=list)
    total_gas: int = 0
    revert_then_remine: int = 0
    rejected: int = 0
    final_reverts: int = 0
    blocks: int = 0

    @property
    def latencies(self) -> list[int]:
        return [r.latency_ms for r in self.records if r.latency_ms is not None]

    def median_latency(self) -> Optional[float]:
        lat = self.latencies
        return statistics.median(lat) if lat else None

    def p95_latency(self) -> Optional[int]:
        return percentile(self.latencies, 95)


def percentile(values, pct: float):
    """Nearest-rank percentile; None for an empty sample."""
    if not values:
        return None
    ordered = sorted(values)
    rank = max(1, math.ceil(pct / 100 * len(ordered)))
    return ordered[rank - 1]


def run_trace(sim: ChainSim, trace: Trace, gas_model: Optional[GasModel] = None,
              settle_blocks: Optional[int] = None) -> ChainMetrics:
    """Submit every trace event as a transaction and run until all settle.

    Each event is sent from its originator's account with a client-side
    nonce counter. After the last submission the chain keeps producing blocks
    until every transaction is final or rejected, or ``settle_blocks`` more
    blocks have been produced.
    """
    gas_model = gas_model or GasModel(sim.config)
    interval = sim.config.block_interval_ms
    client_nonce: dict[str, int] = {}
    metrics = ChainMetrics()
    submitted: list[tuple[int, TraceEvent, Optional[str], Optional[str], int]] = []

    events = sorted(trace.events, key=lambda e: e.at)
    for i, ev in enumerate(events):
        while sim.clock + interval <= ev.at:
            sim.step()
        gas = gas_model.gas_for(ev.type, ev.loops)
        nonce = client_nonce.get(ev.originator, 0)
        tx = SimTx(ev.originator, nonce, ev.gas_price, ev.gas_limit or gas, gas, ev, ev.at)
        try:
            tx_id = sim.submit_tx(tx)
        except ChainSimError as exc:
            submitted.append((i, ev, None, f"{type(exc).__name__}: {exc}", gas))
            continue
        if tx.status != REJECTED:
            client_nonce[ev.originator] = nonce + 1
        submitted.append((i, ev, tx_id, None if tx.status != REJECTED else "out of gas", gas))

    budget = settle_blocks
    if budget is None:
        budget = 10 * sim.config.finality_depth + 100 * max(1, sim.config.max_reorg_depth) + 1000
    while not sim.settled() and budget > 0:
        sim.step()
        budget -= 1

    for i, ev, tx_id, err, gas in submitted:
        tx = sim.txs.get(tx_id) if tx_id else None
        if tx is None or tx.status == REJECTED:
            metrics.rejected += 1
            metrics.records.append(TxRecord(i, ev.type, ev.originator, tx_id, ev.at, None, None,
                                            gas, None, 0, REJECTED, err))
            continue
        latency = tx.final_at - tx.submitted_at if tx.final_at is not None else None
        if tx.status == FINAL:
            metrics.total_gas += tx.gas_used
        if tx.reverts and tx.included_height is not None:
            metrics.revert_then_remine += tx.reverts
        metrics.records.append(TxRecord(i, ev.type, ev.originator, tx.id, tx.submitted_at,
                                        tx.included_at, tx.final_at, tx.gas_used, latency,
                                        tx.reverts, tx.status))
    metrics.final_reverts = len(sim.final_then_orphaned)
    metrics.blocks = sim.height
    return metrics


@dataclass
class LoadReport:
    blocks: int
    submitted: int
    final: int
    reverted: int
    reorgs: int
    final_then_orphaned: int
    fofi_ok: bool
    gas_cap_ok: bool


def check_fofi(sim: ChainSim) -> bool:
    """Canonical inclusion order per account equals consecutive nonce order."""
    expected: dict[str, int] = {}
    for tx in sim.canonical_txs():
        if tx.nonce != expected.get(tx.sender, 0):
            return False
        expected[tx.sender] = tx.nonce + 1
    return True


def check_gas_cap(sim: ChainSim) -> bool:
    return all(sum(sim.txs[t].gas_used for t in b.txs) == b.gas_used <= b.gas_limit
               for b in sim.chain)


def simulate_load(config: SimConfig, n_blocks: int, accounts: int = 4, max_per_block: int = 3,
                  workload_seed: int = 1) -> LoadReport:
    """Drive ``n_blocks`` of random traffic from a few accounts.

    Workload randomness comes from its own generator so the chain's reorg
    draws depend only on ``config.seed``.
    """
    rng = random.Random(workload_seed)
    sim = ChainSim(config)
    nonce = {f"acct{a}": 0 for a in range(accounts)}
    gas = GasModel(config)
    ops = sorted(config.per_action_gas)
    for _ in range(n_blocks):
        for _ in range(rng.randint(0, max_per_block)):
            sender = f"acct{rng.randrange(accounts)}"
            used = gas.gas_for(rng.choice(ops), rng.randint(0, 3))
            sim.submit_tx(SimTx(sender, nonce[sender], rng.randint(1, 100), used, used))
            nonce[sender] += 1
        sim.step()
    reverted = sum(1 for tx in sim.txs.values() if tx.reverts)
    final = sum(1 for tx in sim.txs.values() if tx.status == FINAL)
    return LoadReport(n_blocks, len(sim.txs), final, reverted, len(sim.reorgs),
                      len(sim.final_then_orphaned), check_fofi(sim), check_gas_cap(sim))
