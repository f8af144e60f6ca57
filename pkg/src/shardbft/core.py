"""Shared domain types, canonical byte encodings, and threshold arithmetic.

Everything that is signed or hashed anywhere in the system is encoded here,
in one place, so that every node derives byte-identical payloads. Integers
are fixed-width 8-byte big-endian; lists are length-prefixed; each signed
payload starts with a one-byte domain tag so payloads of different kinds can
never collide. The byte layouts are documented in docs/formats.md.

Party ids, shard ids, terms and epochs are plain non-negative ints.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

from .crypto import Signature

DIGEST_LEN = 32
ZERO_DIGEST = b"\x00" * DIGEST_LEN

# Domain tags for signed payloads.
_TAG_BAS = b"\x42"
_TAG_COMPLAINT = b"\x43"
_TAG_HEADER = b"\x48"

_U64 = struct.Struct(">Q")


def u64(value: int) -> bytes:
    return _U64.pack(value)


def read_u64(buf: bytes, off: int) -> tuple[int, int]:
    return _U64.unpack_from(buf, off)[0], off + 8


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


# ---------------------------------------------------------------------------
# Threshold arithmetic


def quorum_size(n: int, f: int) -> int:
    """Smallest count whose pairwise intersections always exceed ``f`` parties.

    ceil((n + f + 1) / 2); equals 2f+1 when n = 3f+1.
    """
    if f < 0 or n < 3 * f + 1:
        raise ValueError(f"invalid configuration: need n >= 3f+1, got n={n}, f={f}")
    return (n + f + 2) // 2


def attestation_threshold(f: int) -> int:
    """Distinct attestations required before a batch enters the total order."""
    if f < 0:
        raise ValueError("fault bound must be non-negative")
    return f + 1


def primary_for_term(term: int, n: int) -> int:
    """Round-robin assignment of the proposing party for a term."""
    return term % n


# ---------------------------------------------------------------------------
# Transactions


def tx_signing_bytes(client_id: int, payload: bytes) -> bytes:
    return u64(client_id) + payload


@dataclass(frozen=True, slots=True)
class Transaction:
    client_id: int
    payload: bytes
    signature: Signature

    @property
    def tx_id(self) -> bytes:
        return sha256(tx_signing_bytes(self.client_id, self.payload))


def encode_transaction(tx: Transaction) -> bytes:
    return b"".join(
        (
            u64(tx.client_id),
            u64(len(tx.payload)),
            tx.payload,
            u64(len(tx.signature.data)),
            tx.signature.data,
        )
    )


def decode_transaction(buf: bytes, off: int, scheme: str) -> tuple[Transaction, int]:
    client_id, off = read_u64(buf, off)
    plen, off = read_u64(buf, off)
    payload = bytes(buf[off : off + plen])
    off += plen
    slen, off = read_u64(buf, off)
    sig = bytes(buf[off : off + slen])
    off += slen
    return Transaction(client_id, payload, Signature(scheme, sig)), off


# ---------------------------------------------------------------------------
# Batches


@dataclass(frozen=True)
class Batch:
    """Ordered transactions proposed for one shard at one ledger position."""

    shard: int
    seq: int
    term: int
    primary: int
    txs: tuple[Transaction, ...]

    def digest(self) -> bytes:
        cached = self.__dict__.get("_digest")
        if cached is None:
            cached = sha256(encode_batch(self))
            self.__dict__["_digest"] = cached
        return cached

    def key(self) -> BatchKey:
        return BatchKey(self.seq, self.shard, self.digest(), self.primary)


def encode_batch(batch: Batch) -> bytes:
    parts = [u64(batch.shard), u64(batch.seq), u64(batch.term), u64(batch.primary), u64(len(batch.txs))]
    for tx in batch.txs:
        enc = encode_transaction(tx)
        parts.append(u64(len(enc)))
        parts.append(enc)
    return b"".join(parts)


def decode_batch(buf: bytes, off: int, scheme: str) -> tuple[Batch, int]:
    shard, off = read_u64(buf, off)
    seq, off = read_u64(buf, off)
    term, off = read_u64(buf, off)
    primary, off = read_u64(buf, off)
    count, off = read_u64(buf, off)
    txs = []
    for _ in range(count):
        tlen, off = read_u64(buf, off)
        tx, end = decode_transaction(buf, off, scheme)
        if end != off + tlen:
            raise ValueError("corrupt batch encoding")
        txs.append(tx)
        off = end
    return Batch(shard, seq, term, primary, tuple(txs)), off


def compute_batch_digest(batch: Batch) -> bytes:
    """Collision-resistant digest over the canonical batch encoding.

    Covers (shard, seq, term, primary, tx list); order-sensitive.
    """
    return batch.digest()


# ---------------------------------------------------------------------------
# Attestations


@dataclass(frozen=True, slots=True)
class BatchKey:
    """Aggregation key for attestation counting: (seq, shard, digest, primary)."""

    seq: int
    shard: int
    digest: bytes
    primary: int

    def slot(self) -> tuple[int, int, int]:
        # The ledger position a key occupies, independent of content digest.
        return (self.shard, self.seq, self.primary)


@dataclass(frozen=True, slots=True)
class BatchAttestationShare:
    """One party's signed claim that a batch is persisted on its disk."""

    signer: int
    seq: int
    digest: bytes
    shard: int
    primary: int
    epoch: int
    orphan_refs: tuple[BatchKey, ...]
    signature: Signature

    def key(self) -> BatchKey:
        return BatchKey(self.seq, self.shard, self.digest, self.primary)


def encode_bas_payload(
    seq: int,
    digest: bytes,
    shard: int,
    primary: int,
    epoch: int,
    orphan_refs: tuple[BatchKey, ...] = (),
) -> bytes:
    """Injective signing payload for a batch attestation share."""
    if len(digest) != DIGEST_LEN:
        raise ValueError(f"digest must be {DIGEST_LEN} bytes")
    parts = [_TAG_BAS, u64(seq), digest, u64(shard), u64(primary), u64(epoch), u64(len(orphan_refs))]
    for ref in orphan_refs:
        parts.append(u64(ref.seq))
        parts.append(u64(ref.shard))
        parts.append(ref.digest)
        parts.append(u64(ref.primary))
    return b"".join(parts)


def decode_bas_payload(buf: bytes) -> tuple[int, bytes, int, int, int, tuple[BatchKey, ...]]:
    if buf[:1] != _TAG_BAS:
        raise ValueError("not an attestation payload")
    off = 1
    seq, off = read_u64(buf, off)
    digest = bytes(buf[off : off + DIGEST_LEN])
    off += DIGEST_LEN
    shard, off = read_u64(buf, off)
    primary, off = read_u64(buf, off)
    epoch, off = read_u64(buf, off)
    count, off = read_u64(buf, off)
    refs = []
    for _ in range(count):
        rseq, off = read_u64(buf, off)
        rshard, off = read_u64(buf, off)
        rdigest = bytes(buf[off : off + DIGEST_LEN])
        off += DIGEST_LEN
        rprimary, off = read_u64(buf, off)
        refs.append(BatchKey(rseq, rshard, rdigest, rprimary))
    if off != len(buf):
        raise ValueError("trailing bytes in attestation payload")
    return seq, digest, shard, primary, epoch, tuple(refs)


def bas_payload(share: BatchAttestationShare) -> bytes:
    return encode_bas_payload(
        share.seq, share.digest, share.shard, share.primary, share.epoch, share.orphan_refs
    )


# ---------------------------------------------------------------------------
# Complaints


@dataclass(frozen=True, slots=True)
class ComplaintVote:
    """Signed accusation against the proposing party of (shard, term)."""

    signer: int
    term: int
    shard: int
    signature: Signature


def encode_complaint_payload(term: int, shard: int) -> bytes:
    return _TAG_COMPLAINT + u64(term) + u64(shard)


# ---------------------------------------------------------------------------
# Block headers and blocks


@dataclass(frozen=True, slots=True)
class BlockHeader:
    block_seq: int
    prev_header_hash: bytes
    batch_digests: tuple[BatchKey, ...]


def encode_header_payload(header: BlockHeader) -> bytes:
    parts = [_TAG_HEADER, u64(header.block_seq), header.prev_header_hash, u64(len(header.batch_digests))]
    for key in header.batch_digests:
        parts.append(u64(key.seq))
        parts.append(u64(key.shard))
        parts.append(key.digest)
        parts.append(u64(key.primary))
    return b"".join(parts)


def header_digest(header: BlockHeader) -> bytes:
    return sha256(encode_header_payload(header))


@dataclass(frozen=True)
class Block:
    """A quorum-signed header joined with the batches it references."""

    header: BlockHeader
    quorum_sigs: tuple[tuple[int, Signature], ...]  # (signer, signature), signer-sorted
    batches: tuple[Batch, ...]

    txs: tuple[Transaction, ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "txs", tuple(tx for b in self.batches for tx in b.txs))


def encode_block(block: Block) -> bytes:
    parts = [encode_header_payload(block.header), u64(len(block.quorum_sigs))]
    for signer, sig in block.quorum_sigs:
        parts.append(u64(signer))
        parts.append(u64(len(sig.data)))
        parts.append(sig.data)
    parts.append(u64(len(block.batches)))
    for batch in block.batches:
        enc = encode_batch(batch)
        parts.append(u64(len(enc)))
        parts.append(enc)
    return b"".join(parts)


def decode_header_payload(buf: bytes, off: int) -> tuple[BlockHeader, int]:
    if buf[off : off + 1] != _TAG_HEADER:
        raise ValueError("not a header payload")
    off += 1
    block_seq, off = read_u64(buf, off)
    prev = bytes(buf[off : off + DIGEST_LEN])
    off += DIGEST_LEN
    count, off = read_u64(buf, off)
    keys = []
    for _ in range(count):
        seq, off = read_u64(buf, off)
        shard, off = read_u64(buf, off)
        digest = bytes(buf[off : off + DIGEST_LEN])
        off += DIGEST_LEN
        primary, off = read_u64(buf, off)
        keys.append(BatchKey(seq, shard, digest, primary))
    return BlockHeader(block_seq, prev, tuple(keys)), off


def decode_block(buf: bytes, off: int, scheme: str) -> tuple[Block, int]:
    header, off = decode_header_payload(buf, off)
    nsigs, off = read_u64(buf, off)
    sigs = []
    for _ in range(nsigs):
        signer, off = read_u64(buf, off)
        slen, off = read_u64(buf, off)
        sigs.append((signer, Signature(scheme, bytes(buf[off : off + slen]))))
        off += slen
    nbatches, off = read_u64(buf, off)
    batches = []
    for _ in range(nbatches):
        blen, off = read_u64(buf, off)
        batch, end = decode_batch(buf, off, scheme)
        if end != off + blen:
            raise ValueError("corrupt block encoding")
        batches.append(batch)
        off = end
    return Block(header, tuple(sigs), tuple(batches)), off
