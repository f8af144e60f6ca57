import math
import random

import pytest

from shardbft import messages as msg
from shardbft.batcher import (
    BatcherConfig,
    BatcherNode,
    SamplingPolicy,
    required_sample_size,
    sample_verify,
    scan_pool,
    verification_rng,
)
from shardbft.core import Batch, BatchAttestationShare, BatchKey, ComplaintVote, Transaction
from shardbft.crypto import Signature
from shardbft.pools import SecondaryPool
from shardbft.router import RouterConfig, validate_transaction

from conftest import StubCtx, make_tx

US = 1_000_000

ROUTERS = {p: 200 + p for p in range(8)}
BATCHERS = {p: 300 + p for p in range(8)}
CONSENSUS = tuple(400 + p for p in range(4))
ASSEMBLER = 500


def _cfg(party, client_directory, party_keys, n=4, f=1, sample_count=30, behavior=None, **over):
    defaults = dict(
        party=party,
        shard=0,
        n_parties=n,
        f=f,
        keypair=party_keys[party],
        client_directory=client_directory,
        scheme="test_mac",
        sim_seed=42,
        max_batch_size=100,
        max_batch_latency_us=100_000,
        min_propose_interval_us=5_000,
        bucket_period_us=50_000,
        t_forward_us=200_000,
        t_complain_us=200_000,
        epoch_length_us=10 * US,
        sample_count=sample_count,
        router_ids=ROUTERS,
        batcher_ids=BATCHERS,
        consensus_ids=CONSENSUS[:n],
        assembler_id=ASSEMBLER,
        behavior=behavior,
    )
    defaults.update(over)
    return BatcherConfig(**defaults)


def _pump(node, ctx, until):
    while True:
        due = [(t, m) for t, m in ctx.timers if t <= until]
        if not due:
            break
        due.sort(key=lambda tm: tm[0])
        t, m = due[0]
        ctx.timers.remove((t, m))
        ctx.time = max(ctx.time, t)
        node.handle(m, ctx)


def _sent_of(ctx, kind):
    return [(d, m) for d, m in ctx.sent if isinstance(m, kind)]


# --- sampling math -----------------------------------------------------------


def test_required_sample_size_reference_values():
    p = 2.0**-30
    assert required_sample_size(0.5, p) == 30
    assert required_sample_size(0.75, p) == 73  # ceil(72.28)
    assert required_sample_size(0.95, p) == 406  # ceil(405.40)


def test_required_sample_size_rejects_degenerate():
    for alpha in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            required_sample_size(alpha, 0.5)
    for p in (0.0, 1.0):
        with pytest.raises(ValueError):
            required_sample_size(0.5, p)


def test_sampling_policy_from_bounds():
    policy = SamplingPolicy.from_bounds(0.5, 2.0**-30)
    assert policy.sample_count == 30
    assert policy.sample_count >= 1


def test_sample_verify_all_valid(client_keys, client_directory):
    txs = [make_tx(c % 4, bytes([c + 1]) * 4, client_keys) for c in range(10)]
    batch = Batch(0, 0, 0, 0, tuple(txs))
    cfg = RouterConfig(1, 0, client_directory)
    ok = lambda tx: validate_transaction(tx, cfg) is None
    assert sample_verify(batch, 5, random.Random(1), ok) is None


def test_sample_verify_all_invalid_certain(client_directory):
    txs = [Transaction(90 + i, b"x", Signature("test_mac", b"\x00" * 32)) for i in range(100)]
    batch = Batch(0, 0, 0, 0, tuple(txs))
    cfg = RouterConfig(1, 0, client_directory)
    ok = lambda tx: validate_transaction(tx, cfg) is None
    for seed in range(20):
        found = sample_verify(batch, 1, random.Random(seed), ok)
        assert found is not None


def test_sample_verify_miss_rate_matches_alpha_power_k():
    # Half the indices are invalid; the analytic miss probability is
    # alpha^K. Monte Carlo with K=2 over 20k trials should land within
    # 3 standard errors of 0.25.
    n = 100
    invalid = set(range(0, n, 2))
    txs = tuple(Transaction(0, bytes([i + 1]), Signature("test_mac", b"")) for i in range(n))
    batch = Batch(0, 0, 0, 0, txs)
    is_valid = lambda tx: (tx.payload[0] - 1) not in invalid
    trials = 20_000
    k = 2
    misses = sum(
        1 for s in range(trials) if sample_verify(batch, k, random.Random(s), is_valid) is None
    )
    expected = 0.5**k
    sigma = math.sqrt(expected * (1 - expected) / trials)
    assert abs(misses / trials - expected) <= 3 * sigma


def test_sample_verify_empty_and_small_batches():
    empty = Batch(0, 0, 0, 0, ())
    assert sample_verify(empty, 30, random.Random(0), lambda tx: False) is None
    one = Batch(0, 0, 0, 0, (Transaction(0, b"x", Signature("test_mac", b"")),))
    assert sample_verify(one, 30, random.Random(0), lambda tx: False) == 0


def test_verification_rng_deterministic():
    a = verification_rng(1, 2, 3, 4)
    b = verification_rng(1, 2, 3, 4)
    assert [a.randrange(1000) for _ in range(10)] == [b.randrange(1000) for _ in range(10)]
    c = verification_rng(1, 2, 3, 5)
    assert [c.randrange(1000) for _ in range(10)] != [
        verification_rng(1, 2, 3, 4).randrange(1000) for _ in range(10)
    ]


# --- scan timing --------------------------------------------------------------


def test_scan_pool_forward_then_complain(client_keys):
    pool = SecondaryPool()
    txs = [make_tx(0, bytes([i + 1]) * 3, client_keys) for i in range(3)]
    for tx in txs:
        pool.insert(tx)
    fwd, complain = scan_pool(pool, now=0, t_forward=200, t_complain=300)
    assert not fwd and not complain  # just sealed
    fwd, complain = scan_pool(pool, now=200, t_forward=200, t_complain=300)
    assert {t.tx_id for t in fwd} == {t.tx_id for t in txs}
    assert not complain
    fwd, complain = scan_pool(pool, now=499, t_forward=200, t_complain=300)
    assert not fwd and not complain
    fwd, complain = scan_pool(pool, now=500, t_forward=200, t_complain=300)
    assert not fwd and complain


def test_scan_pool_emptied_bucket_no_action(client_keys):
    pool = SecondaryPool()
    tx = make_tx(0, b"stuck?", client_keys)
    pool.insert(tx)
    scan_pool(pool, now=0, t_forward=200, t_complain=300)
    pool.remove([tx.tx_id])
    fwd, complain = scan_pool(pool, now=10_000, t_forward=200, t_complain=300)
    assert not fwd and not complain


# --- primary behavior ------------------------------------------------------------


def test_primary_batches_on_timer(client_directory, client_keys, party_keys):
    node = BatcherNode(_cfg(0, client_directory, party_keys), 300)
    ctx = StubCtx()
    node.start(ctx)
    for i in range(3):
        node.handle(msg.ForwardTx(make_tx(i % 4, bytes([i + 1]) * 4, client_keys), i, 200), ctx)
    assert node.height == 0
    _pump(node, ctx, until=node.cfg.max_batch_latency_us)
    assert node.height == 1
    batch = node.ledger[0]
    assert batch.seq == 0 and batch.primary == 0 and len(batch.txs) == 3
    shares = _sent_of(ctx, msg.ConsensusSubmission)
    bas = [m.event for _, m in shares if isinstance(m.event, BatchAttestationShare)]
    assert len(bas) == len(CONSENSUS)
    assert bas[0].seq == 0 and bas[0].digest == batch.digest()
    stored = _sent_of(ctx, msg.BatchStored)
    assert stored and stored[0][0] == ASSEMBLER


def test_primary_two_full_batches_disjoint(client_directory, client_keys, party_keys):
    node = BatcherNode(_cfg(0, client_directory, party_keys, max_batch_size=3), 300)
    ctx = StubCtx()
    node.start(ctx)
    for i in range(6):
        node.handle(msg.ForwardTx(make_tx(i % 4, bytes([i + 1]) * 5, client_keys), i, 200), ctx)
    _pump(node, ctx, until=US)
    assert node.height == 2
    a, b = node.ledger
    assert (a.seq, b.seq) == (0, 1)
    assert not {t.tx_id for t in a.txs} & {t.tx_id for t in b.txs}
    assert len(a.txs) == len(b.txs) == 3


def test_primary_empty_pool_no_batch(client_directory, party_keys):
    node = BatcherNode(_cfg(0, client_directory, party_keys), 300)
    ctx = StubCtx()
    node.start(ctx)
    _pump(node, ctx, until=US)
    assert node.height == 0
    assert not _sent_of(ctx, msg.ConsensusSubmission)


def test_primary_answers_queued_pull_on_persist(client_directory, client_keys, party_keys):
    node = BatcherNode(_cfg(0, client_directory, party_keys), 300)
    ctx = StubCtx()
    node.start(ctx)
    node.handle(msg.PullRequest(0, 0, requester=301, requester_party=1), ctx)
    assert not _sent_of(ctx, msg.PullResponse)
    node.handle(msg.ForwardTx(make_tx(0, b"hello", client_keys), 0, 200), ctx)
    _pump(node, ctx, until=node.cfg.max_batch_latency_us)
    responses = _sent_of(ctx, msg.PullResponse)
    assert len(responses) == 1
    dest, resp = responses[0]
    assert dest == 301 and resp.batch.seq == 0


# --- secondary behavior ----------------------------------------------------------


def _secondary_with_batch(client_directory, client_keys, party_keys, txs, primary=0, party=1):
    node = BatcherNode(_cfg(party, client_directory, party_keys), 300 + party)
    ctx = StubCtx()
    node.start(ctx)
    pulls = _sent_of(ctx, msg.PullRequest)
    assert pulls and pulls[0][0] == BATCHERS[primary]
    ctx.take_sent()
    batch = Batch(0, 0, 0, primary, tuple(txs))
    node.handle(msg.PullResponse(0, 0, batch, primary), ctx)
    return node, ctx, batch


def test_secondary_persists_and_attests(client_directory, client_keys, party_keys):
    txs = [make_tx(i % 4, bytes([i + 1]) * 6, client_keys) for i in range(4)]
    node, ctx, batch = _secondary_with_batch(client_directory, client_keys, party_keys, txs)
    assert node.height == 1
    bas = [m.event for _, m in _sent_of(ctx, msg.ConsensusSubmission)]
    assert all(isinstance(e, BatchAttestationShare) for e in bas)
    # Matches the proposer's key field-for-field.
    assert bas[0].key() == batch.key()
    assert bas[0].signer == 1 and bas[0].primary == 0
    # Pulls the next height.
    next_pulls = _sent_of(ctx, msg.PullRequest)
    assert next_pulls and next_pulls[0][1].seq == 1


def test_secondary_removes_pooled_txs_on_persist(client_directory, client_keys, party_keys):
    node = BatcherNode(_cfg(1, client_directory, party_keys), 301)
    ctx = StubCtx()
    node.start(ctx)
    txs = [make_tx(i % 4, bytes([i + 7]) * 6, client_keys) for i in range(4)]
    for i, tx in enumerate(txs):
        node.handle(msg.ForwardTx(tx, i, 200), ctx)
    assert len(node.pool) == 4
    node.handle(msg.PullResponse(0, 0, Batch(0, 0, 0, 0, tuple(txs)), 0), ctx)
    assert len(node.pool) == 0


def test_secondary_complains_on_bogus_batch(client_directory, client_keys, party_keys):
    good = [make_tx(i % 4, bytes([i + 1]) * 6, client_keys) for i in range(15)]
    bad = [Transaction(70 + i, b"zz", Signature("test_mac", b"\x00" * 32)) for i in range(15)]
    node, ctx, _ = _secondary_with_batch(client_directory, client_keys, party_keys, good + bad)
    assert node.height == 0 and node.halted
    votes = [m.event for _, m in _sent_of(ctx, msg.ConsensusSubmission)]
    assert votes and all(isinstance(v, ComplaintVote) for v in votes)
    assert votes[0].term == 0 and votes[0].signer == 1
    # Halted until a term change: further responses are ignored.
    node.handle(msg.PullResponse(0, 0, Batch(0, 0, 0, 0, tuple(good)), 0), ctx)
    assert node.height == 0


def test_secondary_ignores_stale_or_foreign_responses(client_directory, client_keys, party_keys):
    txs = [make_tx(0, b"only", client_keys)]
    node = BatcherNode(_cfg(1, client_directory, party_keys), 301)
    ctx = StubCtx()
    node.start(ctx)
    ctx.take_sent()
    node.handle(msg.PullResponse(0, 0, Batch(0, 0, 0, 2, tuple(txs)), 2), ctx)  # not the primary
    assert node.height == 0
    node.handle(msg.PullResponse(0, 5, Batch(0, 5, 0, 0, tuple(txs)), 0), ctx)  # wrong seq
    assert node.height == 0


def test_secondary_accepts_historical_batch_from_current_primary(
    client_directory, client_keys, party_keys
):
    # After a failover the new primary serves its ledger, which includes
    # batches minted under older terms; a catching-up secondary takes them.
    node = BatcherNode(_cfg(3, client_directory, party_keys), 303)
    ctx = StubCtx()
    node.start(ctx)
    node.handle(msg.OrderedUpdate(0, (), (), new_term=1), ctx)
    assert not node.is_primary
    txs = [make_tx(0, b"old batch", client_keys)]
    old = Batch(0, 0, 0, 0, tuple(txs))  # term 0, proposed by party 0
    node.handle(msg.PullResponse(0, 0, old, 1), ctx)  # served by party 1, the term-1 primary
    assert node.height == 1


def test_censorship_forward_once_then_complain(client_directory, client_keys, party_keys):
    node = BatcherNode(_cfg(1, client_directory, party_keys), 301)
    ctx = StubCtx()
    node.start(ctx)
    tx = make_tx(0, b"will be stuck", client_keys)
    node.handle(msg.ForwardTx(tx, 0, 200), ctx)
    ctx.take_sent()
    _pump(node, ctx, until=node.cfg.bucket_period_us + node.cfg.t_forward_us)
    fwd = [(d, m) for d, m in ctx.sent if isinstance(m, msg.SubmitTx)]
    assert len(fwd) == 1
    assert fwd[0][0] == ROUTERS[0]  # the primary party's router
    assert fwd[0][1].reply_to is None
    ctx.take_sent()
    _pump(node, ctx, until=ctx.time + node.cfg.t_complain_us + node.cfg.bucket_period_us)
    votes = [m.event for _, m in _sent_of(ctx, msg.ConsensusSubmission)]
    assert len(votes) == len(CONSENSUS) and isinstance(votes[0], ComplaintVote)
    # One complaint per term, and the tx is forwarded only once.
    ctx.take_sent()
    _pump(node, ctx, until=ctx.time + US)
    assert not _sent_of(ctx, msg.ConsensusSubmission)
    assert not [m for _, m in ctx.sent if isinstance(m, msg.SubmitTx)]


# --- term changes -------------------------------------------------------------------


def test_term_change_reproposes_unordered_batches(client_directory, client_keys, party_keys):
    txs = [make_tx(i % 4, bytes([i + 1]) * 6, client_keys) for i in range(4)]
    node, ctx, batch = _secondary_with_batch(client_directory, client_keys, party_keys, txs)
    ctx.take_sent()
    # Term 1 makes party 1 the primary; the persisted batch never reached the
    # attestation threshold, so its txs are re-proposed at the pool front.
    node.handle(msg.OrderedUpdate(0, (), (), new_term=1), ctx)
    assert node.is_primary
    assert {t.tx_id for t in txs} <= set(node.pool.tx_index)
    assert node.reproposed_tx_ids
    _pump(node, ctx, until=ctx.time + US)
    assert node.height == 2
    redo = node.ledger[1]
    assert redo.term == 1 and redo.primary == 1
    assert [t.tx_id for t in redo.txs] == [t.tx_id for t in txs]


def test_term_change_skips_thresholded_batches(client_directory, client_keys, party_keys):
    txs = [make_tx(i % 4, bytes([i + 1]) * 6, client_keys) for i in range(4)]
    node, ctx, batch = _secondary_with_batch(client_directory, client_keys, party_keys, txs)
    ctx.take_sent()
    node.handle(msg.OrderedUpdate(0, (batch.key(),), (), new_term=1), ctx)
    assert node.is_primary
    assert not node.reproposed_tx_ids
    _pump(node, ctx, until=ctx.time + US)
    assert node.height == 1  # nothing to re-propose


def test_term_change_back_to_secondary(client_directory, client_keys, party_keys):
    node = BatcherNode(_cfg(0, client_directory, party_keys), 300)
    ctx = StubCtx()
    node.start(ctx)
    tx = make_tx(0, b"pooled", client_keys)
    node.handle(msg.ForwardTx(tx, 0, 200), ctx)
    ctx.take_sent()
    node.handle(msg.OrderedUpdate(0, (), (), new_term=1), ctx)
    assert not node.is_primary
    assert isinstance(node.pool, SecondaryPool)
    assert tx.tx_id in node.pool.tx_index
    pulls = _sent_of(ctx, msg.PullRequest)
    assert pulls and pulls[0][0] == BATCHERS[1]


def test_orphan_refs_attached_and_capped(client_directory, client_keys, party_keys):
    node = BatcherNode(_cfg(0, client_directory, party_keys, max_orphan_refs=2), 300)
    ctx = StubCtx()
    node.start(ctx)
    orphans = tuple(BatchKey(0, 0, bytes([i]) * 32, 0) for i in range(3))
    node.handle(msg.OrderedUpdate(0, (), orphans, None), ctx)
    for i in range(2):
        node.handle(msg.ForwardTx(make_tx(i, bytes([i + 1]) * 3, client_keys), i, 200), ctx)
    _pump(node, ctx, until=node.cfg.max_batch_latency_us)
    bas = [m.event for _, m in _sent_of(ctx, msg.ConsensusSubmission)][0]
    # seq 0 cannot reference seq-0 orphans (only strictly earlier), so the
    # refs wait for the next attestation.
    assert bas.orphan_refs == ()
    ctx.take_sent()
    for i in range(2, 4):
        node.handle(msg.ForwardTx(make_tx(i, bytes([i + 1]) * 3, client_keys), i, 200), ctx)
    _pump(node, ctx, until=ctx.time + US)
    bas2 = [m.event for _, m in _sent_of(ctx, msg.ConsensusSubmission)][0]
    assert bas2.seq == 1
    assert bas2.orphan_refs == orphans[:2]  # capped at 2
