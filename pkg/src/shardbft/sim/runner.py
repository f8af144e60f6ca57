"""Seeded discrete-event simulation of a full deployment.

One virtual clock (integer microseconds), one event heap. Events are
ordered by (time, sender id, per-sender sequence) so ties are broken
deterministically. Per-link latency is sampled from a seeded RNG; messages
sent before GST may be delayed arbitrarily (but land by GST + Delta), after
GST every correct-to-correct message lands within the declared bound.
Node CPU time is free: this is a protocol-logic simulator, not a
performance model.

The total-order primitive is a trusted sequencer in the harness: it
deduplicates submissions, cuts a round every round_interval, and delivers
identical rounds to every consensus node.
"""

from __future__ import annotations

import heapq
import random

from .. import messages as msg
from ..assembler import AssemblerConfig, AssemblerNode
from ..batcher import BatcherConfig, BatcherNode
from ..behaviors import CENSOR_TX, CRASH, INJECT_BOGUS
from ..consensus import ConsensusConfig, ConsensusNode
from ..core import (
    BatchAttestationShare,
    Transaction,
    header_digest,
    sha256,
    tx_signing_bytes,
    u64,
)
from ..crypto import keygen, sign
from ..router import RouterConfig, RouterNode, map_to_shard, validate_transaction
from .checks import (
    check_agreement,
    check_censorship_bound,
    check_no_loss_no_unbounded_dup,
    check_validity,
)
from .report import RunReport, TxRecord
from .scenario import ScenarioConfig

SEQUENCER = 0
HUB = 1

_NEVER = 1 << 62


class _Ctx:
    __slots__ = ("runner", "node_id")

    def __init__(self, runner, node_id: int):
        self.runner = runner
        self.node_id = node_id

    def now(self) -> int:
        return self.runner.now_us

    def send(self, dest: int, message) -> None:
        self.runner.network_send(self.node_id, dest, message)

    def schedule(self, delay_us: int, message) -> None:
        self.runner.push(self.runner.now_us + delay_us, self.node_id, self.node_id, message)

    def is_down(self, node_id: int) -> bool:
        return self.runner.node_down(node_id)


class _Runner:
    def __init__(self, cfg: ScenarioConfig):
        cfg.validate()
        self.cfg = cfg
        self.now_us = 0
        self.heap: list = []
        self.send_seq: dict[int, int] = {}
        self.rng_net = random.Random(self._derive(b"net"))
        self.rng_client = random.Random(self._derive(b"client"))

        n, k = cfg.n_parties, cfg.shard_count
        self.party_keys_full = {p: keygen(sha256(b"party" + u64(cfg.seed) + u64(p)), cfg.scheme) for p in range(n)}
        self.party_pubs = {p: kp.public for p, kp in self.party_keys_full.items()}
        self.client_keys = {c: keygen(sha256(b"client" + u64(cfg.seed) + u64(c)), cfg.scheme) for c in range(cfg.clients)}
        self.client_directory = {c: kp.public for c, kp in self.client_keys.items()}

        behaviors = {a.party: a.behavior() for a in cfg.adversaries}
        self.crash_at = {
            a.party: a.crash_at_us for a in cfg.adversaries if a.kind == CRASH
        }

        # Node id layout: sequencer, hub, then routers, consensus, assemblers, batchers.
        self.router_id = {p: 2 + p for p in range(n)}
        self.consensus_id = {p: 2 + n + p for p in range(n)}
        self.assembler_id = {p: 2 + 2 * n + p for p in range(n)}
        self.batcher_id = {(p, s): 2 + 3 * n + p * k + s for p in range(n) for s in range(k)}
        total_nodes = 2 + 3 * n + n * k
        self.party_of = [-1] * total_nodes
        for p in range(n):
            self.party_of[self.router_id[p]] = p
            self.party_of[self.consensus_id[p]] = p
            self.party_of[self.assembler_id[p]] = p
            for s in range(k):
                self.party_of[self.batcher_id[(p, s)]] = p

        proto = cfg.protocol
        sample_count = proto.resolved_sample_count()
        self.nodes: dict[int, object] = {}
        self.routers: dict[int, RouterNode] = {}
        self.batchers: dict[tuple[int, int], BatcherNode] = {}
        self.consensus: dict[int, ConsensusNode] = {}
        self.assemblers: dict[int, AssemblerNode] = {}
        for p in range(n):
            rcfg = RouterConfig(k, p, self.client_directory, proto.max_tx_size)
            router = RouterNode(rcfg, self.router_id[p], {s: self.batcher_id[(p, s)] for s in range(k)})
            self.routers[p] = router
            self.nodes[self.router_id[p]] = router

            ccfg = ConsensusConfig(
                party=p,
                n_parties=n,
                f=cfg.f,
                shard_count=k,
                keypair=self.party_keys_full[p],
                party_keys=self.party_pubs,
                epoch_length_us=proto.epoch_length_us,
                epoch_window=proto.epoch_window,
                sequencer_id=SEQUENCER,
                peer_ids=tuple(self.consensus_id[q] for q in range(n) if q != p),
                batcher_ids={s: self.batcher_id[(p, s)] for s in range(k)},
                assembler_id=self.assembler_id[p],
            )
            cons = ConsensusNode(ccfg, self.consensus_id[p])
            self.consensus[p] = cons
            self.nodes[self.consensus_id[p]] = cons

            acfg = AssemblerConfig(
                party=p,
                n_parties=n,
                f=cfg.f,
                party_keys=self.party_pubs,
                batcher_ids=dict(self.batcher_id),
                fetch_timeout_us=proto.fetch_timeout_us,
            )
            asm = AssemblerNode(acfg, self.assembler_id[p])
            self.assemblers[p] = asm
            self.nodes[self.assembler_id[p]] = asm

            for s in range(k):
                bcfg = BatcherConfig(
                    party=p,
                    shard=s,
                    n_parties=n,
                    f=cfg.f,
                    keypair=self.party_keys_full[p],
                    client_directory=self.client_directory,
                    scheme=cfg.scheme,
                    sim_seed=cfg.seed,
                    max_batch_size=proto.max_batch_size,
                    max_batch_latency_us=proto.max_batch_latency_us,
                    min_propose_interval_us=proto.min_propose_interval_us,
                    bucket_period_us=proto.bucket_period_us,
                    t_forward_us=proto.t_forward_us,
                    t_complain_us=proto.t_complain_us,
                    epoch_length_us=proto.epoch_length_us,
                    sample_count=sample_count,
                    max_orphan_refs=proto.max_orphan_refs,
                    pool_capacity=proto.pool_capacity,
                    max_tx_size=proto.max_tx_size,
                    behavior=behaviors.get(p),
                    router_ids={q: self.router_id[q] for q in range(n)},
                    batcher_ids={q: self.batcher_id[(q, s)] for q in range(n)},
                    consensus_ids=tuple(self.consensus_id[q] for q in range(n)),
                    assembler_id=self.assembler_id[p],
                )
                node = BatcherNode(bcfg, self.batcher_id[(p, s)])
                self.batchers[(p, s)] = node
                self.nodes[self.batcher_id[(p, s)]] = node

        self.ctxs = {nid: _Ctx(self, nid) for nid in self.nodes}
        self.tx_records: list[TxRecord] = []
        # Sequencer state.
        self.round_buffer: list = []
        self.round_seen: set = set()
        self.round_no = 0

    # --- plumbing ---------------------------------------------------------

    def _derive(self, tag: bytes) -> int:
        return int.from_bytes(sha256(tag + u64(self.cfg.seed)), "big")

    def push(self, t: int, sender: int, dest: int, message) -> None:
        seq = self.send_seq.get(sender, 0)
        self.send_seq[sender] = seq + 1
        heapq.heappush(self.heap, (t, sender, seq, dest, message))

    def _link_delay(self) -> int:
        lat = self.cfg.latency
        return lat.base_us + (self.rng_net.randint(0, lat.jitter_us) if lat.jitter_us else 0)

    def delivery_time(self, at: int) -> int:
        gst = self.cfg.gst_us
        if at < gst:
            # Adversarial pre-GST scheduling, still bounded by GST + Delta.
            slack = (gst - at) + self.cfg.delta_us
            chosen = at + self.rng_net.randint(self._link_delay(), slack)
            return min(chosen, gst + self._link_delay())
        return at + self._link_delay()

    def network_send(self, sender: int, dest: int, message) -> None:
        self.push(self.delivery_time(self.now_us), sender, dest, message)

    def node_down(self, node_id: int) -> bool:
        party = self.party_of[node_id]
        return party >= 0 and self.crash_at.get(party, _NEVER) <= self.now_us

    # --- clients -----------------------------------------------------------

    def _schedule_clients(self) -> None:
        cfg = self.cfg
        count = cfg.resolved_tx_count()
        censoring = [a for a in cfg.adversaries if a.kind == CENSOR_TX]
        for i in range(count):
            t = cfg.duration_us * i // count
            client = i % cfg.clients
            if cfg.tx_size >= 8:
                payload = u64(i) + self.rng_client.randbytes(cfg.tx_size - 8)
            else:
                payload = self.rng_client.randbytes(cfg.tx_size)
            tx = Transaction(
                client, payload, sign(self.client_keys[client], tx_signing_bytes(client, payload))
            )
            censored = any(client in a.censor_clients for a in censoring)
            record = TxRecord(
                index=i,
                tx_id=tx.tx_id,
                client=client,
                shard=map_to_shard(tx.tx_id, cfg.shard_count),
                submit_us=t,
                censored=censored,
            )
            self.tx_records.append(record)
            for p in range(cfg.n_parties):
                sid = i * cfg.n_parties + p
                self.push(self.delivery_time(t), HUB, self.router_id[p], msg.SubmitTx(tx, sid, HUB))

    def _on_hub(self, message) -> None:
        if not isinstance(message, msg.SubmissionReply):
            return
        record = self.tx_records[message.submission_id // self.cfg.n_parties]
        party = message.submission_id % self.cfg.n_parties
        if message.ok:
            record.acks.add(party)
            if record.ack_quorum_us is None and len(record.acks) >= self.cfg.n_parties - self.cfg.f:
                record.ack_quorum_us = self.now_us
        else:
            record.rejects[message.reason] = record.rejects.get(message.reason, 0) + 1

    # --- total-order sequencer ----------------------------------------------------

    @staticmethod
    def _event_ident(event):
        if isinstance(event, BatchAttestationShare):
            return (0, event.signer, event.seq, event.shard, event.digest, event.primary)
        return (1, event.signer, event.shard, event.term)

    def _on_sequencer(self, message) -> None:
        if isinstance(message, msg.SequencerSubmit):
            ident = self._event_ident(message.event)
            if ident not in self.round_seen:
                self.round_seen.add(ident)
                self.round_buffer.append(message.event)
        elif isinstance(message, msg.RoundTick):
            if self.round_buffer:
                self.round_no += 1
                delivery = msg.RoundDelivery(self.round_no, tuple(self.round_buffer))
                self.round_buffer = []
                for p in range(self.cfg.n_parties):
                    self.network_send(SEQUENCER, self.consensus_id[p], delivery)
            self.push(
                self.now_us + self.cfg.protocol.round_interval_us, SEQUENCER, SEQUENCER, msg.RoundTick()
            )

    # --- main loop ------------------------------------------------------------------

    def run(self) -> RunReport:
        cfg = self.cfg
        self._schedule_clients()
        for nid, node in self.nodes.items():
            node.start(self.ctxs[nid])
        self.push(cfg.protocol.round_interval_us, SEQUENCER, SEQUENCER, msg.RoundTick())

        limit = cfg.duration_us + cfg.drain_us
        gst = cfg.gst_us
        lossy = cfg.lossy_party
        quiescent = False
        processed = 0
        while self.heap:
            t, sender, _seq, dest, message = heapq.heappop(self.heap)
            if t > limit:
                break
            self.now_us = t
            party = self.party_of[dest] if dest < len(self.party_of) else -1
            if party >= 0 and self.crash_at.get(party, _NEVER) <= t:
                continue
            if lossy is not None and party == lossy and t >= gst and sender != dest:
                continue
            if dest == SEQUENCER:
                self._on_sequencer(message)
            elif dest == HUB:
                self._on_hub(message)
            else:
                self.nodes[dest].handle(message, self.ctxs[dest])
            processed += 1
            if processed % 128 == 0 and self.now_us > cfg.duration_us and self._goal_met():
                quiescent = True
                break
        if not quiescent:
            quiescent = self._goal_met()
        return self._build_report(quiescent)

    def _network_idle(self) -> bool:
        """Nothing in flight except self-timers and traffic to dead nodes."""
        gst = self.cfg.gst_us
        lossy = self.cfg.lossy_party
        for t, sender, _seq, dest, _message in self.heap:
            if sender == dest:
                continue
            party = self.party_of[dest] if dest < len(self.party_of) else -1
            if party >= 0 and self.crash_at.get(party, _NEVER) <= t:
                continue
            if lossy is not None and party == lossy and t >= gst:
                continue
            return False
        return True

    def _goal_met(self) -> bool:
        correct = self.cfg.correct_parties()
        lengths = {len(self.assemblers[p].ledger) for p in correct}
        if len(lengths) != 1:
            return False
        for p in correct:
            asm = self.assemblers[p]
            if asm.header_buffer or asm.fetching:
                return False
        for p in correct:
            for s in range(self.cfg.shard_count):
                for tx_id in self.batchers[(p, s)].pool.tx_index:
                    # Pool residue is fine once the tx is committed everywhere
                    # (a diverged secondary can never persist the winning
                    # batch for a seq it filled during an old term).
                    if any(tx_id not in self.assemblers[q].inclusion_times for q in correct):
                        return False
        heads = {self.consensus[p].state.next_block_seq for p in correct}
        if len(heads) != 1 or heads.pop() != lengths.pop():
            return False
        for record in self.tx_records:
            if record.ack_quorum_us is None:
                continue
            for p in correct:
                if record.tx_id not in self.assemblers[p].inclusion_times:
                    return False
        return self._network_idle()

    # --- report ----------------------------------------------------------------------

    def _build_report(self, quiescent: bool) -> RunReport:
        cfg = self.cfg
        correct = cfg.correct_parties()
        ref = correct[0]
        ref_asm = self.assemblers[ref]
        ref_cons = self.consensus[ref]

        inclusion = {p: dict(self.assemblers[p].inclusion_times) for p in correct}
        for record in self.tx_records:
            times = [inclusion[p].get(record.tx_id) for p in correct]
            known = [x for x in times if x is not None]
            record.first_commit_us = min(known) if known else None
            record.last_commit_us = max(known) if len(known) == len(correct) else None
            record.commit_count = ref_asm.tx_commit_counts.get(record.tx_id, 0)

        reproposed: list[str] = []
        seen_repro: set[bytes] = set()
        for p in correct:
            for s in range(cfg.shard_count):
                for tx_id in self.batchers[(p, s)].reproposed_tx_ids:
                    if tx_id not in seen_repro:
                        seen_repro.add(tx_id)
                        reproposed.append(tx_id.hex())

        ledgers = {p: list(self.assemblers[p].ledger) for p in correct}
        ledger_digests = {
            p: sha256(b"".join(header_digest(b.header) for b in ledgers[p])).hex() for p in correct
        }

        per_shard: dict[int, dict] = {
            s: {"batches": 0, "txs": 0, "duplicates": 0} for s in range(cfg.shard_count)
        }
        shard_seen: dict[int, set] = {s: set() for s in range(cfg.shard_count)}
        bogus_batches = 0
        vcfg = RouterConfig(cfg.shard_count, ref, self.client_directory, cfg.protocol.max_tx_size)
        alpha = cfg.protocol.alpha
        for block in ledgers[ref]:
            for batch in block.batches:
                stats = per_shard[batch.shard]
                stats["batches"] += 1
                stats["txs"] += len(batch.txs)
                for tx in batch.txs:
                    if tx.tx_id in shard_seen[batch.shard]:
                        stats["duplicates"] += 1
                    shard_seen[batch.shard].add(tx.tx_id)
                if batch.txs:
                    invalid = sum(1 for tx in batch.txs if validate_transaction(tx, vcfg) is not None)
                    if invalid > (1 - alpha) * len(batch.txs):
                        bogus_batches += 1

        drops: dict[str, int] = {}
        for p in correct:
            for reason, count in self.consensus[p].drops.items():
                drops[reason] = drops.get(reason, 0) + count

        duplicate_commits = sum(c - 1 for c in ref_asm.tx_commit_counts.values() if c > 1)

        report = RunReport(
            config=cfg.to_dict(),
            quiescent=quiescent,
            end_time_us=self.now_us,
            tx_records=self.tx_records,
            term_changes=list(ref_cons.term_change_log),
            reproposed_tx_ids=reproposed,
            pending_series=list(ref_cons.pending_series),
            throughput_series=list(ref_asm.throughput_series),
            ledger_digests=ledger_digests,
            committed_total=ref_asm.committed_txs,
            duplicate_commits=duplicate_commits,
            bogus_batch_commits=bogus_batches,
            per_shard=per_shard,
            drops=drops,
            checks={},
            ledgers=ledgers,
            inclusion=inclusion,
        )
        report.checks["agreement"] = check_agreement(ledgers)
        report.checks["no_loss_no_unbounded_dup"] = check_no_loss_no_unbounded_dup(report)
        kinds = {a.kind for a in cfg.adversaries}
        if CENSOR_TX in kinds:
            report.checks["censorship_bound"] = check_censorship_bound(report, cfg.censorship_bound_us())
        if INJECT_BOGUS in kinds:
            report.checks["validity"] = check_validity(report)
        return report


def run_scenario(cfg: ScenarioConfig) -> RunReport:
    """Execute one scenario; deterministic for a given (config, seed)."""
    return _Runner(cfg).run()
