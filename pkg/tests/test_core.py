import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shardbft.core import (
    Batch,
    BatchKey,
    Transaction,
    attestation_threshold,
    compute_batch_digest,
    decode_bas_payload,
    decode_batch,
    encode_bas_payload,
    encode_batch,
    quorum_size,
    sha256,
)
from shardbft.crypto import Signature

from conftest import make_batch, make_tx


def test_quorum_size_known_values():
    assert quorum_size(4, 1) == 3  # 2f+1 for n=3f+1
    assert quorum_size(7, 2) == 5
    assert quorum_size(10, 3) == 7


def test_quorum_size_rejects_bad_config():
    with pytest.raises(ValueError):
        quorum_size(3, 1)
    with pytest.raises(ValueError):
        quorum_size(6, 2)
    with pytest.raises(ValueError):
        quorum_size(4, -1)


def test_quorum_minimality_by_enumeration():
    # Oracle for (10, 3): enumerate all pairs of subsets of each candidate
    # size; 7 is the smallest size whose pairwise intersections always
    # exceed f parties.
    n, f = 10, 3
    q = quorum_size(n, f)
    assert q == 7

    def always_intersects(size):
        subsets = list(itertools.combinations(range(n), size))
        return all(len(set(a) & set(b)) > f for a in subsets for b in subsets)

    assert always_intersects(q)
    assert not always_intersects(q - 1)


def test_quorum_intersection_property_all_valid_configs():
    for f in range(0, 6):
        for n in range(3 * f + 1, 3 * f + 8):
            assert quorum_size(n, f) * 2 - n >= f + 1


def test_attestation_threshold():
    assert attestation_threshold(1) == 2
    assert attestation_threshold(0) == 1
    assert attestation_threshold(3) == 4
    with pytest.raises(ValueError):
        attestation_threshold(-1)


def test_bas_payload_deterministic_and_distinct():
    digest = b"\x00" * 32
    a = encode_bas_payload(0, digest, 0, 0, 0, ())
    assert a == encode_bas_payload(0, digest, 0, 0, 0, ())
    assert a != encode_bas_payload(0, digest, 1, 0, 0, ())
    assert a != encode_bas_payload(1, digest, 0, 0, 0, ())
    assert a != encode_bas_payload(0, digest, 0, 0, 1, ())


def test_bas_payload_rejects_bad_digest():
    with pytest.raises(ValueError):
        encode_bas_payload(0, b"\x00" * 31, 0, 0, 0, ())


_keys = st.builds(
    BatchKey,
    st.integers(0, 2**32),
    st.integers(0, 64),
    st.binary(min_size=32, max_size=32),
    st.integers(0, 64),
)
_payload_args = st.tuples(
    st.integers(0, 2**40),
    st.binary(min_size=32, max_size=32),
    st.integers(0, 1000),
    st.integers(0, 1000),
    st.integers(0, 2**32),
    st.lists(_keys, max_size=4).map(tuple),
)


@settings(max_examples=200)
@given(_payload_args)
def test_bas_payload_round_trip(args):
    seq, digest, shard, primary, epoch, refs = args
    encoded = encode_bas_payload(seq, digest, shard, primary, epoch, refs)
    assert decode_bas_payload(encoded) == (seq, digest, shard, primary, epoch, refs)


@settings(max_examples=200)
@given(_payload_args, _payload_args)
def test_bas_payload_injective(a, b):
    ea = encode_bas_payload(*a)
    eb = encode_bas_payload(*b)
    assert (ea == eb) == (a == b)


def test_batch_digest_deterministic(client_keys):
    txs = [make_tx(c % 4, bytes([c]) * 8, client_keys) for c in range(5)]
    batch = make_batch(txs)
    again = make_batch(txs)
    assert compute_batch_digest(batch) == compute_batch_digest(again)


def test_batch_digest_order_sensitive(client_keys):
    txs = [make_tx(c % 4, bytes([c]) * 8, client_keys) for c in range(5)]
    assert compute_batch_digest(make_batch(txs)) != compute_batch_digest(make_batch(txs[::-1]))


def test_batch_digest_metadata_sensitive(client_keys):
    txs = [make_tx(0, b"payload", client_keys)]
    base = make_batch(txs)
    assert compute_batch_digest(base) != compute_batch_digest(make_batch(txs, seq=1))
    assert compute_batch_digest(base) != compute_batch_digest(make_batch(txs, term=1))
    assert compute_batch_digest(base) != compute_batch_digest(make_batch(txs, primary=1))
    assert compute_batch_digest(base) != compute_batch_digest(make_batch(txs, shard=1))


def test_batch_digest_perturbations_no_collisions(client_keys):
    rng = random.Random(7)
    txs = [make_tx(c % 4, rng.randbytes(16), client_keys) for c in range(8)]
    base = make_batch(txs)
    seen_inputs = {(None, None)}
    seen_digests = {compute_batch_digest(base)}
    checked = 0
    while checked < 1000:
        i = rng.randrange(len(txs))
        pos = rng.randrange(16)
        bit = rng.randrange(8)
        if (i, (pos, bit)) in seen_inputs:
            continue
        seen_inputs.add((i, (pos, bit)))
        mutated = list(txs)
        payload = bytearray(mutated[i].payload)
        payload[pos] ^= 1 << bit
        mutated[i] = Transaction(mutated[i].client_id, bytes(payload), mutated[i].signature)
        digest = compute_batch_digest(make_batch(mutated))
        assert digest not in seen_digests
        seen_digests.add(digest)
        checked += 1


def test_batch_encoding_round_trip(client_keys, scheme):
    rng = random.Random(3)
    txs = [make_tx(c % 4, rng.randbytes(rng.randint(1, 40)), client_keys) for c in range(6)]
    batch = Batch(2, 9, 1, 3, tuple(txs))
    decoded, end = decode_batch(encode_batch(batch), 0, scheme)
    assert end == len(encode_batch(batch))
    assert decoded == batch
    assert compute_batch_digest(decoded) == compute_batch_digest(batch)


def test_tx_id_stable_under_resigning(client_keys):
    tx1 = make_tx(1, b"same payload", client_keys)
    tx2 = Transaction(1, b"same payload", Signature(tx1.signature.scheme, b"\x00" * 32))
    assert tx1.tx_id == tx2.tx_id
    assert sha256(b"x") != tx1.tx_id
