"""Typed messages exchanged between nodes, and the node runtime interface.

Every node is a single-threaded state machine with a ``handle(message, ctx)``
entry point. The context is provided by the host (the simulator, or a unit
test stub) and is the only way a node interacts with the world.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

from .core import Batch, BatchAttestationShare, BatchKey, BlockHeader, ComplaintVote, Transaction
from .crypto import Signature


class NodeContext(Protocol):
    def now(self) -> int:
        """Current virtual time in microseconds."""

    def send(self, dest: int, message) -> None:
        """Deliver a message to another node, subject to the network model."""

    def schedule(self, delay_us: int, message) -> None:
        """Deliver a message back to the calling node after a delay."""

    def is_down(self, node_id: int) -> bool:
        """Whether a co-located component of the same party has crashed."""


# Enqueue confirmation statuses.
ENQ_ACCEPTED = "accepted"
ENQ_DUPLICATE = "duplicate"
ENQ_BACKPRESSURE = "backpressure"


# --- client <-> router <-> batcher -----------------------------------------


@dataclass(frozen=True, slots=True)
class SubmitTx:
    tx: Transaction
    submission_id: int
    reply_to: int | None  # client sink node; None for peer forwards


@dataclass(frozen=True, slots=True)
class ForwardTx:
    tx: Transaction
    submission_id: int | None
    reply_router: int


@dataclass(frozen=True, slots=True)
class EnqueueResult:
    submission_id: int
    status: str


@dataclass(frozen=True, slots=True)
class SubmissionReply:
    submission_id: int
    ok: bool
    reason: str


# --- batch dissemination -----------------------------------------------------


@dataclass(frozen=True, slots=True)
class PullRequest:
    shard: int
    seq: int
    requester: int  # node id to answer
    requester_party: int


@dataclass(frozen=True, slots=True)
class PullResponse:
    shard: int
    seq: int
    batch: Batch | None
    responder_party: int


@dataclass(frozen=True, slots=True)
class BatchStored:
    """Push of a freshly persisted batch to the same party's assembler."""

    batch: Batch


# --- consensus ----------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class ConsensusSubmission:
    event: BatchAttestationShare | ComplaintVote


@dataclass(frozen=True, slots=True)
class SequencerSubmit:
    event: BatchAttestationShare | ComplaintVote


@dataclass(frozen=True, slots=True)
class RoundDelivery:
    round_no: int
    events: tuple


@dataclass(frozen=True, slots=True)
class HeaderShare:
    block_seq: int
    header_hash: bytes
    signer: int
    signature: Signature


@dataclass(frozen=True, slots=True)
class PublishedHeader:
    header: BlockHeader
    quorum_sigs: tuple[tuple[int, Signature], ...]


@dataclass(frozen=True, slots=True)
class OrderedUpdate:
    """Per-shard digest of one ordered round, consensus -> own batcher."""

    shard: int
    thresholded: tuple[BatchKey, ...]
    orphaned: tuple[BatchKey, ...]
    new_term: int | None


# --- assembler ------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class AssemblerPull:
    shard: int
    seq: int
    requester: int


@dataclass(frozen=True, slots=True)
class AssemblerPullResponse:
    shard: int
    seq: int
    batch: Batch | None
    responder_party: int


# --- timers -----------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class BatchTimer:
    opened_at: int


@dataclass(frozen=True, slots=True)
class ProposeKick:
    pass


@dataclass(frozen=True, slots=True)
class BucketTick:
    pass


@dataclass(frozen=True, slots=True)
class RoundTick:
    pass


@dataclass(frozen=True, slots=True)
class FetchRetry:
    key: BatchKey
    attempt: int
