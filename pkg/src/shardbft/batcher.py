"""Per-(party, shard) batching node.

A batcher is the primary for a term when the round-robin assignment lands on
its party, otherwise it is a secondary. Primaries bundle pooled transactions
into batches, persist them, attest them, and serve them to pullers.
Secondaries pull batches in ledger order, spot-check a random sample of the
transactions inside, persist and attest the good ones, and raise complaint
votes when the primary misbehaves or starves their pooled transactions.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Mapping

from . import messages as msg
from .behaviors import (
    EQUIVOCATE_BATCH,
    FALSE_COMPLAINT,
    INJECT_BOGUS,
    SILENT_SECONDARY,
    WITHHOLD_BAS,
    AdversaryBehavior,
)
from .core import (
    Batch,
    BatchAttestationShare,
    BatchKey,
    ComplaintVote,
    Transaction,
    encode_bas_payload,
    encode_complaint_payload,
    primary_for_term,
    sha256,
    u64,
)
from .crypto import KeyPair, Signature, sign
from .pools import (
    INSERT_ACCEPTED,
    INSERT_DUPLICATE,
    PrimaryPool,
    SecondaryPool,
)
from .router import RouterConfig, validate_transaction

_LONG_AGO = -(10**18)


def required_sample_size(alpha: float, p_fail: float) -> int:
    """Samples per batch so that a batch with valid fraction <= alpha slips
    through with probability at most p_fail: ceil(ln(p_fail) / ln(alpha))."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be strictly between 0 and 1")
    if not 0.0 < p_fail < 1.0:
        raise ValueError("p_fail must be strictly between 0 and 1")
    raw = math.log(p_fail) / math.log(alpha)
    nearest = round(raw)
    # Guard against float noise on exact integer ratios (e.g. alpha=0.5, p=2^-30).
    k = nearest if abs(raw - nearest) < 1e-9 else math.ceil(raw)
    return max(1, k)


@dataclass(frozen=True)
class SamplingPolicy:
    alpha: float
    p_fail: float
    sample_count: int

    @classmethod
    def from_bounds(cls, alpha: float, p_fail: float) -> "SamplingPolicy":
        return cls(alpha, p_fail, required_sample_size(alpha, p_fail))


def sample_verify(batch: Batch, sample_count: int, rng: random.Random, is_valid) -> int | None:
    """Draw indices uniformly with replacement and verify the hit transactions.

    Returns the index of the first invalid transaction found, or None when
    every sampled transaction checks out. Sampling with replacement matches
    the miss-probability model alpha^K; without replacement would only do
    better.
    """
    n = len(batch.txs)
    if n == 0:
        return None
    draws = min(sample_count, n)
    for _ in range(draws):
        idx = rng.randrange(n)
        if not is_valid(batch.txs[idx]):
            return idx
    return None


def verification_rng(sim_seed: int, party: int, shard: int, seq: int) -> random.Random:
    material = sha256(u64(sim_seed) + u64(party) + u64(shard) + u64(seq))
    return random.Random(int.from_bytes(material, "big"))


def scan_pool(pool: SecondaryPool, now: int, t_forward: int, t_complain: int):
    """Censorship sweep over a bucketed pool.

    Seals the open bucket, returns (txs to forward to the primary, complain?).
    Buckets older than t_forward get their transactions forwarded once; a
    bucket still non-empty t_complain after forwarding triggers a complaint.
    """
    pool.seal(now)
    to_forward: list[Transaction] = []
    complain = False
    for bucket in pool.sealed:
        if not bucket.txs:
            continue
        if bucket.forwarded_at is None:
            if now - bucket.sealed_at >= t_forward:
                bucket.forwarded_at = now
                to_forward.extend(bucket.txs.values())
        elif now - bucket.forwarded_at >= t_complain:
            complain = True
    return to_forward, complain


@dataclass(frozen=True)
class BatcherConfig:
    party: int
    shard: int
    n_parties: int
    f: int
    keypair: KeyPair
    client_directory: Mapping[int, bytes]
    scheme: str
    sim_seed: int
    max_batch_size: int
    max_batch_latency_us: int
    min_propose_interval_us: int
    bucket_period_us: int
    t_forward_us: int
    t_complain_us: int
    epoch_length_us: int
    sample_count: int
    max_orphan_refs: int = 8
    pool_capacity: int | None = None
    max_tx_size: int = 1 << 20
    behavior: AdversaryBehavior | None = None
    # Wiring: node ids in the host.
    router_ids: Mapping[int, int] = field(default_factory=dict)  # party -> router node
    batcher_ids: Mapping[int, int] = field(default_factory=dict)  # party -> batcher node (this shard)
    consensus_ids: tuple[int, ...] = ()
    assembler_id: int = -1


class BatcherNode:
    def __init__(self, cfg: BatcherConfig, node_id: int):
        self.cfg = cfg
        self.node_id = node_id
        self.term = 0
        self.ledger: list[Batch] = []
        self.persisted_ids: set[bytes] = set()
        self.thresholded: set[BatchKey] = set()
        self.orphan_queue: list[BatchKey] = []
        self._orphan_seen: set[BatchKey] = set()
        self.forwarded: set[bytes] = set()
        self.complained_term = -1
        self.halted = False
        self.outstanding_pull: int | None = None
        self.pending_pulls: dict[int, list[tuple[int, int]]] = {}
        self.equiv_variants: dict[int, dict[int, Batch]] = {}
        self.batch_opened_at: int | None = None
        self.last_propose_at = _LONG_AGO
        self.kick_scheduled = False
        self.reproposed_tx_ids: list[bytes] = []
        self._adv_rng = random.Random(
            int.from_bytes(sha256(b"adv" + u64(cfg.sim_seed) + u64(cfg.party) + u64(cfg.shard)), "big")
        )
        self._validator_cfg = RouterConfig(1, cfg.party, cfg.client_directory, cfg.max_tx_size)
        if self.is_primary:
            self.pool: PrimaryPool | SecondaryPool = PrimaryPool(cfg.max_batch_size, cfg.pool_capacity)
        else:
            self.pool = SecondaryPool(cfg.pool_capacity)

    # --- role -----------------------------------------------------------

    @property
    def is_primary(self) -> bool:
        return primary_for_term(self.term, self.cfg.n_parties) == self.cfg.party

    @property
    def height(self) -> int:
        return len(self.ledger)

    def _behaves(self, kind: str) -> bool:
        return self.cfg.behavior is not None and self.cfg.behavior.kind == kind

    # --- lifecycle --------------------------------------------------------

    def start(self, ctx) -> None:
        ctx.schedule(self.cfg.bucket_period_us, msg.BucketTick())
        if not self.is_primary:
            self._issue_pull(ctx)
        if self._behaves(FALSE_COMPLAINT) and not self.is_primary:
            self._send_complaint(ctx, force=True)

    def handle(self, message, ctx) -> None:
        if isinstance(message, msg.ForwardTx):
            self._on_forward(message, ctx)
        elif isinstance(message, msg.PullRequest):
            self._on_pull_request(message, ctx)
        elif isinstance(message, msg.PullResponse):
            self._on_pull_response(message, ctx)
        elif isinstance(message, msg.OrderedUpdate):
            self._on_ordered_update(message, ctx)
        elif isinstance(message, msg.BatchTimer):
            self._on_batch_timer(message, ctx)
        elif isinstance(message, msg.ProposeKick):
            self.kick_scheduled = False
            self._try_propose(ctx)
        elif isinstance(message, msg.BucketTick):
            self._on_bucket_tick(ctx)
        elif isinstance(message, msg.AssemblerPull):
            batch = self.ledger[message.seq] if message.seq < self.height else None
            ctx.send(
                message.requester,
                msg.AssemblerPullResponse(message.shard, message.seq, batch, self.cfg.party),
            )

    # --- pool intake ------------------------------------------------------

    def _on_forward(self, m: msg.ForwardTx, ctx) -> None:
        status = self._insert(m.tx, ctx)
        if m.submission_id is not None:
            ctx.send(m.reply_router, msg.EnqueueResult(m.submission_id, status))

    def _insert(self, tx: Transaction, ctx) -> str:
        if self.cfg.behavior is not None and self.cfg.behavior.censors(tx):
            # A censoring party drops the transaction but acknowledges it, so
            # the client cannot tell this party apart from an honest one.
            return INSERT_ACCEPTED
        if tx.tx_id in self.persisted_ids:
            return INSERT_DUPLICATE
        status = self.pool.insert(tx)
        if status == INSERT_ACCEPTED and self.is_primary:
            self._arm_proposal(ctx)
        return status

    def _arm_proposal(self, ctx) -> None:
        assert isinstance(self.pool, PrimaryPool)
        if self.pool.has_sealed():
            self._maybe_kick(ctx)
        if self.pool.pending:
            if self.batch_opened_at is None:
                self.batch_opened_at = ctx.now()
                ctx.schedule(self.cfg.max_batch_latency_us, msg.BatchTimer(self.batch_opened_at))
        else:
            self.batch_opened_at = None

    def _maybe_kick(self, ctx) -> None:
        if self.kick_scheduled:
            return
        delay = max(0, self.last_propose_at + self.cfg.min_propose_interval_us - ctx.now())
        self.kick_scheduled = True
        ctx.schedule(delay, msg.ProposeKick())

    def _on_batch_timer(self, m: msg.BatchTimer, ctx) -> None:
        if not self.is_primary or self.batch_opened_at != m.opened_at:
            return
        self._try_propose(ctx, timer_expired=True)

    # --- primary: proposing ----------------------------------------------

    def _try_propose(self, ctx, timer_expired: bool = False) -> None:
        if not self.is_primary or not isinstance(self.pool, PrimaryPool):
            return
        now = ctx.now()
        if now - self.last_propose_at < self.cfg.min_propose_interval_us:
            self._maybe_kick(ctx)
            return
        timed_out = self.batch_opened_at is not None and (
            timer_expired or now - self.batch_opened_at >= self.cfg.max_batch_latency_us
        )
        if not self.pool.has_sealed() and not (self.pool.pending and timed_out):
            return
        txs = self.pool.next_batch()
        if not self.pool.pending:
            self.batch_opened_at = None
        if not txs:
            return
        self.last_propose_at = now
        batch = self._build_batch(tuple(txs))
        self._persist(batch, ctx)
        if self.pool.has_sealed():
            self._maybe_kick(ctx)

    def _build_batch(self, txs: tuple[Transaction, ...]) -> Batch:
        seq = self.height
        if self._behaves(INJECT_BOGUS) and txs:
            txs = self._inject_bogus(txs)
        batch = Batch(self.cfg.shard, seq, self.term, self.cfg.party, txs)
        if self._behaves(EQUIVOCATE_BATCH) and len(txs) > 1:
            variant = Batch(self.cfg.shard, seq, self.term, self.cfg.party, tuple(reversed(txs)))
            others = [p for p in range(self.cfg.n_parties) if p != self.cfg.party]
            split = {p: (batch if i < len(others) // 2 else variant) for i, p in enumerate(others)}
            self.equiv_variants[seq] = split
        return batch

    def _inject_bogus(self, txs: tuple[Transaction, ...]) -> tuple[Transaction, ...]:
        out = list(txs)
        count = max(1, int(len(out) * self.cfg.behavior.bogus_fraction))
        slots = self._adv_rng.sample(range(len(out)), min(count, len(out)))
        for i in slots:
            fake_client = (1 << 40) + self._adv_rng.randrange(1 << 20)
            payload = self._adv_rng.randbytes(max(1, len(out[i].payload)))
            out[i] = Transaction(fake_client, payload, Signature(self.cfg.scheme, b"\x00" * 32))
        return tuple(out)

    # --- persistence + attestation ------------------------------------------

    def _persist(self, batch: Batch, ctx) -> None:
        self.ledger.append(batch)
        ids = [tx.tx_id for tx in batch.txs]
        self.persisted_ids.update(ids)
        if isinstance(self.pool, SecondaryPool):
            self.pool.remove(ids)
        self.forwarded.difference_update(ids)
        ctx.send(self.cfg.assembler_id, msg.BatchStored(batch))
        if not (self._behaves(WITHHOLD_BAS) or self._behaves(SILENT_SECONDARY)):
            self._send_attestation(batch, ctx)
        self._answer_pending_pulls(batch.seq, ctx)

    def _send_attestation(self, batch: Batch, ctx) -> None:
        refs = self._take_orphan_refs(batch.seq)
        epoch = ctx.now() // self.cfg.epoch_length_us
        payload = encode_bas_payload(batch.seq, batch.digest(), batch.shard, batch.primary, epoch, refs)
        share = BatchAttestationShare(
            signer=self.cfg.party,
            seq=batch.seq,
            digest=batch.digest(),
            shard=batch.shard,
            primary=batch.primary,
            epoch=epoch,
            orphan_refs=refs,
            signature=sign(self.cfg.keypair, payload),
        )
        for cid in self.cfg.consensus_ids:
            ctx.send(cid, msg.ConsensusSubmission(share))

    def _take_orphan_refs(self, seq: int) -> tuple[BatchKey, ...]:
        if not self.orphan_queue:
            return ()
        taken, kept = [], []
        for key in self.orphan_queue:
            if key.seq < seq and len(taken) < self.cfg.max_orphan_refs:
                taken.append(key)
            else:
                kept.append(key)
        self.orphan_queue = kept
        return tuple(taken)

    # --- serving pulls ----------------------------------------------------------

    def _on_pull_request(self, m: msg.PullRequest, ctx) -> None:
        if m.seq < self.height:
            batch = self.equiv_variants.get(m.seq, {}).get(m.requester_party, self.ledger[m.seq])
            ctx.send(m.requester, msg.PullResponse(m.shard, m.seq, batch, self.cfg.party))
        else:
            # Queue even while secondary: a request can race our own term
            # change. The requester ignores answers from non-primaries.
            waiters = self.pending_pulls.setdefault(m.seq, [])
            if (m.requester, m.requester_party) not in waiters:
                waiters.append((m.requester, m.requester_party))

    def _answer_pending_pulls(self, seq: int, ctx) -> None:
        for requester, party in self.pending_pulls.pop(seq, []):
            batch = self.equiv_variants.get(seq, {}).get(party, self.ledger[seq])
            ctx.send(requester, msg.PullResponse(self.cfg.shard, seq, batch, self.cfg.party))

    # --- secondary: pulling, verifying, persisting --------------------------------

    def _issue_pull(self, ctx) -> None:
        if self.is_primary or self.halted or self._behaves(SILENT_SECONDARY):
            return
        seq = self.height
        if self.outstanding_pull == seq:
            return
        self.outstanding_pull = seq
        primary_party = primary_for_term(self.term, self.cfg.n_parties)
        ctx.send(
            self.cfg.batcher_ids[primary_party],
            msg.PullRequest(self.cfg.shard, seq, self.node_id, self.cfg.party),
        )

    def _on_pull_response(self, m: msg.PullResponse, ctx) -> None:
        if self.is_primary or self.halted:
            return
        primary_party = primary_for_term(self.term, self.cfg.n_parties)
        if m.responder_party != primary_party or m.batch is None:
            return
        if m.seq != self.height or m.batch.seq != self.height:
            return
        batch = m.batch
        current = batch.term == self.term and batch.primary == primary_party
        historical = batch.term < self.term
        if not (current or historical):
            # Mislabelled batch served by the live primary: misbehavior.
            self._send_complaint(ctx)
            self.halted = True
            return
        rng = verification_rng(self.cfg.sim_seed, self.cfg.party, self.cfg.shard, batch.seq)
        bad = sample_verify(
            batch,
            self.cfg.sample_count,
            rng,
            lambda tx: validate_transaction(tx, self._validator_cfg) is None,
        )
        if bad is not None:
            self._send_complaint(ctx)
            self.halted = True
            self.outstanding_pull = None
            return
        self.outstanding_pull = None
        self._persist(batch, ctx)
        self._issue_pull(ctx)

    # --- complaints and censorship --------------------------------------------------

    def _send_complaint(self, ctx, force: bool = False) -> None:
        if self.complained_term >= self.term and not force:
            return
        self.complained_term = self.term
        payload = encode_complaint_payload(self.term, self.cfg.shard)
        vote = ComplaintVote(self.cfg.party, self.term, self.cfg.shard, sign(self.cfg.keypair, payload))
        for cid in self.cfg.consensus_ids:
            ctx.send(cid, msg.ConsensusSubmission(vote))

    def _on_bucket_tick(self, ctx) -> None:
        ctx.schedule(self.cfg.bucket_period_us, msg.BucketTick())
        if self._behaves(FALSE_COMPLAINT) and not self.is_primary:
            self._send_complaint(ctx)
        if self.is_primary or not isinstance(self.pool, SecondaryPool):
            return
        if self.halted or self._behaves(SILENT_SECONDARY):
            return
        to_forward, complain = scan_pool(
            self.pool, ctx.now(), self.cfg.t_forward_us, self.cfg.t_complain_us
        )
        primary_party = primary_for_term(self.term, self.cfg.n_parties)
        router = self.cfg.router_ids[primary_party]
        for tx in to_forward:
            if tx.tx_id in self.forwarded:
                continue
            self.forwarded.add(tx.tx_id)
            ctx.send(router, msg.SubmitTx(tx, 0, None))
        if complain:
            self._send_complaint(ctx)

    # --- ordered view ---------------------------------------------------------------

    def _on_ordered_update(self, m: msg.OrderedUpdate, ctx) -> None:
        self.thresholded.update(m.thresholded)
        for key in m.orphaned:
            if key not in self._orphan_seen:
                self._orphan_seen.add(key)
                self.orphan_queue.append(key)
        if m.new_term is not None and m.new_term > self.term:
            self._change_term(m.new_term, ctx)

    def _change_term(self, new_term: int, ctx) -> None:
        was_primary = self.is_primary
        self.term = new_term
        self.halted = False
        self.forwarded.clear()
        if self.is_primary:
            if isinstance(self.pool, SecondaryPool):
                carried = self.pool.drain()
                self.pool = PrimaryPool(self.cfg.max_batch_size, self.cfg.pool_capacity)
                for tx in carried:
                    if tx.tx_id not in self.persisted_ids:
                        self.pool.insert(tx)
            redo: list[Transaction] = []
            for batch in self.ledger:
                if batch.key() not in self.thresholded:
                    redo.extend(batch.txs)
            if redo:
                added = self.pool.push_front(redo)
                if added:
                    self.reproposed_tx_ids.extend(tx.tx_id for tx in redo)
            self.batch_opened_at = None
            self.outstanding_pull = None
            self._arm_proposal(ctx)
        else:
            if was_primary and isinstance(self.pool, PrimaryPool):
                carried = self.pool.drain()
                self.pool = SecondaryPool(self.cfg.pool_capacity)
                for tx in carried:
                    if tx.tx_id not in self.persisted_ids:
                        self.pool.insert(tx)
            elif isinstance(self.pool, SecondaryPool):
                self.pool.reset_timers(ctx.now())
            self.outstanding_pull = None
            self._issue_pull(ctx)
            if self._behaves(FALSE_COMPLAINT):
                self._send_complaint(ctx)
