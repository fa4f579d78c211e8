import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contractwatch import chainsim as cs
from contractwatch.chainsim import ChainSim, SimConfig, SimTx
from contractwatch.trace import Trace, TraceEvent

I = 13_000


def tx(sender, nonce, price=1, gas=50_000, limit=None):
    return SimTx(sender, nonce, price, limit or gas, gas)


# pure arithmetic


@pytest.mark.parametrize("args,expected", [((8_001_071, 0, 8_156), 981),
                                           ((8_001_071, 21_000, 8_156), 978),
                                           ((100, 0, 200), 0)])
def test_max_loop_iterations(args, expected):
    assert cs.max_loop_iterations(*args) == expected == max(0, (args[0] - args[1]) // args[2])


def test_avg_gas_and_rate():
    assert cs.avg_gas_per_tx(8_000_000, 130) == 61_538
    assert cs.txs_per_block(23_150, 177) == 130
    assert cs.avg_gas_per_tx(12_345, 1) == 12_345
    with pytest.raises(ValueError):
        cs.avg_gas_per_tx(1, 0)
    with pytest.raises(ValueError):
        cs.max_loop_iterations(1, 0, 0)


def test_config_defaults_and_checks():
    c = SimConfig()
    assert (c.block_gas_limit, c.base_tx_cost, c.per_iteration_gas, c.finality_depth) == \
        (8_001_071, 21_000, 8_156, 20)
    with pytest.raises(ValueError):
        SimConfig(block_gas_limit=100, base_tx_cost=100)
    with pytest.raises(ValueError):
        SimConfig(reorg_probability=1.5)
    with pytest.raises(ValueError):
        SimConfig.from_dict({"bogus": 1})
    assert SimConfig.from_dict(c.to_dict()) == c
    assert not SimConfig(max_reorg_depth=20, finality_depth=20).finality_guaranteed
    assert cs.bitcoin_preset().block_interval_ms == 600_000


def test_gas_model():
    g = cs.GasModel(SimConfig())
    assert g.gas_for("POREQ") == 21_000 + cs.DEFAULT_ACTION_GAS["POREQ"]
    assert g.gas_for("unknown", loops=3) == 21_000 + 40_000 + 3 * 8_156


# submission


def test_submit_errors():
    sim = ChainSim()
    with pytest.raises(cs.GasLimitExceedsBlockLimit):
        sim.submit_tx(tx("a", 0, limit=9_000_000))
    tid = sim.submit_tx(tx("a", 0))
    assert sim.txs[tid].status == cs.PENDING and sim.mempool()[0].id == tid
    with pytest.raises(cs.DuplicateNonce):
        sim.submit_tx(tx("a", 0))
    sim.step()
    with pytest.raises(cs.NonceInPast):
        sim.submit_tx(tx("a", 0))


def test_out_of_gas_rejected():
    sim = ChainSim()
    tid = sim.submit_tx(SimTx("a", 0, 1, 30_000, 50_000))
    assert sim.txs[tid].status == cs.REJECTED and sim.mempool() == []


# block production


def test_fofi_price_cannot_jump_nonce():
    sim = ChainSim()
    t1 = sim.submit_tx(tx("A", 0, price=1))
    t2 = sim.submit_tx(tx("A", 1, price=100))
    sim.step()
    assert sim.chain[-1].txs == (t1, t2)


def test_later_nonce_waits_for_missing_predecessor():
    sim = ChainSim()
    t2 = sim.submit_tx(tx("A", 1, price=100))
    for _ in range(3):
        sim.step()
    assert sim.canonical_txs() == []
    t1 = sim.submit_tx(tx("A", 0, price=1))
    sim.step()
    sim.step()
    assert [t.id for t in sim.canonical_txs()] == [t1, t2]


@given(st.lists(st.integers(1, 1000), min_size=1, max_size=7))
def test_cross_account_order_is_price_order(prices):
    sim = ChainSim()
    ids = [sim.submit_tx(tx(f"acct{i}", 0, price=p)) for i, p in enumerate(prices)]
    sim.step()
    # oracle: stable sort on price, descending
    expected = [i for _, _, i in sorted(zip([-p for p in prices], range(len(ids)), ids))]
    assert list(sim.chain[-1].txs) == expected


def test_empty_block():
    sim = ChainSim()
    b = sim.step()
    assert b.txs == () and b.gas_used == 0 and b.produced_at == I and sim.height == 1


def test_gas_limit_fills_block():
    c = SimConfig(block_gas_limit=200_000)
    sim = ChainSim(c)
    for i in range(5):
        sim.submit_tx(tx(f"a{i}", 0, gas=60_000))
    b = sim.step()
    assert len(b.txs) == 3 and b.gas_used == 180_000


def test_inclusion_waits_for_next_template():
    sim = ChainSim()
    sim.step()  # clock 13s
    t = sim.submit_tx(SimTx("a", 0, 1, 50_000, 50_000, submitted_at=14_000))
    sim.step()  # sealed at 26s from the 13s template
    assert sim.txs[t].included_height is None
    sim.step()
    assert sim.txs[t].included_at == 39_000


# reorgs and finality


def test_reorg_returns_txs_to_mempool():
    sim = ChainSim(SimConfig(reorg_probability=0.0))
    for i in range(10):
        sim.submit_tx(tx("a", i))
        sim.step()
    sim.config = SimConfig(reorg_probability=1.0, max_reorg_depth=3)
    rep = sim.maybe_reorg()
    assert rep.occurred and 1 <= rep.depth <= 3
    assert sim.height == 10
    assert all(b.txs == () for b in sim.chain[-rep.depth:])
    pending = {t.id for t in sim.mempool()}
    assert set(rep.reverted_tx_ids) <= pending
    for tid in rep.reverted_tx_ids:
        assert sim.confirmations(tid) == 0 and not sim.is_final(tid)


def test_no_reorg_when_p_zero():
    sim = ChainSim(SimConfig(reorg_probability=0.0, max_reorg_depth=3))
    for _ in range(200):
        sim.submit_tx(tx("a", len(sim.txs)))
        sim.step()
    assert sim.reorgs == [] and not sim.maybe_reorg().occurred


def test_confirmations_and_finality():
    sim = ChainSim()
    tid = sim.submit_tx(tx("a", 0))
    sim.step()
    assert sim.confirmations(tid) == 1 and not sim.is_final(tid)
    for _ in range(18):
        sim.step()
    assert sim.confirmations(tid) == 19 and not sim.is_final(tid)
    sim.step()
    assert sim.confirmations(tid) == 20 and sim.is_final(tid)
    assert sim.txs[tid].status == cs.FINAL
    with pytest.raises(cs.UnknownTx):
        sim.confirmations("nope")


def test_long_run_reincluded_exactly_once_and_safe():
    c = SimConfig(reorg_probability=0.05, max_reorg_depth=3, finality_depth=20, seed=3)
    sim = ChainSim(c)
    nonce = {}
    for i in range(3000):
        if i % 2 == 0:
            a = f"a{i % 3}"
            sim.submit_tx(tx(a, nonce.setdefault(a, 0)))
            nonce[a] += 1
        sim.step()
    while not sim.settled():
        sim.step()
    canon = [t.id for t in sim.canonical_txs()]
    assert len(canon) == len(set(canon)) == len(sim.txs)
    assert any(t.reverts for t in sim.txs.values())
    assert sim.final_then_orphaned == []
    assert cs.check_fofi(sim) and cs.check_gas_cap(sim)
    assert all(t.status == cs.FINAL for t in sim.txs.values())


def test_drop_on_reorg_marks_orphaned():
    c = SimConfig(reorg_probability=1.0, max_reorg_depth=1, drop_on_reorg=True)
    sim = ChainSim(c)
    tid = sim.submit_tx(tx("a", 0))
    sim.step()
    assert sim.txs[tid].status == cs.ORPHANED and sim.confirmations(tid) == 0


# schedules


schedule = st.lists(st.tuples(st.integers(0, 3), st.integers(1, 50), st.integers(0, 3),
                              st.booleans()), max_size=40)


def _drive(cfg, sched):
    sim = ChainSim(cfg)
    nonce = {}
    held = {}
    for acct, price, blocks, hold in sched:
        a = f"acct{acct}"
        n = nonce.get(a, 0)
        nonce[a] = n + 1
        t = tx(a, n, price=price, gas=21_000 + price * 1000)
        if hold and a not in held:
            held[a] = t  # submitted late, after its successors
        else:
            sim.submit_tx(t)
        for _ in range(blocks):
            sim.step()
    for t in held.values():
        sim.submit_tx(t)
    for _ in range(80):
        sim.step()
    return sim


@settings(max_examples=200, deadline=None)
@given(schedule, st.integers(0, 2**16))
def test_fofi_and_gas_cap_property(sched, seed):
    cfg = SimConfig(block_gas_limit=150_000, reorg_probability=0.1, max_reorg_depth=2, seed=seed)
    sim = _drive(cfg, sched)
    assert cs.check_fofi(sim)
    assert cs.check_gas_cap(sim)
    # conservation: every submitted tx ends final
    assert sim.settled()
    assert all(t.status == cs.FINAL for t in sim.txs.values())


@settings(max_examples=50, deadline=None)
@given(schedule, st.integers(0, 2**16))
def test_determinism(sched, seed):
    cfg = SimConfig(reorg_probability=0.2, max_reorg_depth=3, seed=seed)
    a, b = _drive(cfg, sched), _drive(cfg, sched)
    assert a.chain == b.chain and a.orphans == b.orphans


# run_trace


def _latency_oracle(t, k, interval):
    return math.ceil(t / interval) * interval + k * interval - t


def test_run_trace_latency_matches_oracle(traces):
    trace = traces["happy_path.ndjson"]
    for k in (1, 20, 30):
        cfg = SimConfig(finality_depth=k)
        m = cs.run_trace(ChainSim(cfg), trace)
        assert [r.latency_ms for r in m.records] == \
            [_latency_oracle(e.at, k, I) for e in trace.events]
        assert m.rejected == 0 and m.revert_then_remine == 0 and m.final_reverts == 0
        assert m.total_gas == sum(cs.GasModel(cfg).gas_for(e.type) for e in trace.events)
        assert m.median_latency() >= k * I


def test_run_trace_empty():
    m = cs.run_trace(ChainSim(), Trace([]))
    assert m.records == [] and m.total_gas == 0 and m.median_latency() is None
    assert m.p95_latency() is None


def test_run_trace_records_submit_errors():
    ev = TraceEvent(0, "POREQ", "alice", "bob", gas_limit=9_000_000)
    ok = TraceEvent(0, "POconfirm", "bob", "alice")
    m = cs.run_trace(ChainSim(), Trace([ev, ok]))
    assert m.rejected == 1
    assert m.records[0].status == cs.REJECTED and "GasLimitExceedsBlockLimit" in m.records[0].error
    assert m.records[1].status == cs.FINAL


def test_run_trace_loop_heavy_event_hits_cap():
    cfg = SimConfig()
    loops = cs.max_loop_iterations(cfg.block_gas_limit, cfg.base_tx_cost, cfg.per_iteration_gas)
    heavy = TraceEvent(0, "payClaim", "bob", "alice", loops=loops + 5)
    m = cs.run_trace(ChainSim(cfg), Trace([heavy]))
    assert m.rejected == 1


def test_percentile_nearest_rank():
    assert cs.percentile([], 95) is None
    assert cs.percentile([5], 95) == 5
    assert cs.percentile(list(range(1, 101)), 95) == 95
    assert cs.percentile(list(range(1, 21)), 50) == 10
