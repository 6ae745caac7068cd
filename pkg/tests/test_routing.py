import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from kadmesh.ident import ID_BITS, common_prefix_len
from kadmesh.routing import Contact, InsertResult, RoutingTable, bucket_index


def with_prefix(self_id: bytes, shared: int, rng: random.Random) -> bytes:
    """Random id sharing exactly ``shared`` leading bits with ``self_id``."""
    me = int.from_bytes(self_id, "big")
    free = ID_BITS - shared
    low = rng.getrandbits(free - 1)
    flipped = (~me >> (free - 1) & 1) << (free - 1)
    return (((me >> free) << free) | flipped | low).to_bytes(32, "big")


def brute_closest(table, target, n):
    t = int.from_bytes(target, "big")
    return sorted(table, key=lambda c: int.from_bytes(c.id, "big") ^ t)[:n]


def check_placement(table):
    for bucket in table.buckets:
        for c in bucket.contacts:
            assert table.bucket_index(c.id) == bucket.index
            assert c.id != table.self_id
    assert sum(1 for b in table.buckets if b.contacts) <= table.max_buckets


@pytest.fixture
def rng():
    return random.Random(11)


def test_bucket_index_examples(rng):
    me = rng.randbytes(32)
    assert bucket_index(me, with_prefix(me, 0, rng)) == 0
    assert bucket_index(me, with_prefix(me, 5, rng)) == 5
    assert bucket_index(me, with_prefix(me, 40, rng), 16) == 15


def test_bucket_index_rejects_self(rng):
    me = rng.randbytes(32)
    with pytest.raises(ValueError):
        bucket_index(me, me)
    with pytest.raises(ValueError):
        RoutingTable(me).insert(Contact(me), 0)


def test_insert_into_empty(rng):
    table = RoutingTable(rng.randbytes(32))
    peer = Contact(rng.randbytes(32))
    assert table.insert(peer, 5) is InsertResult.ADDED
    assert len(table.buckets[table.bucket_index(peer.id)]) == 1


def test_full_bucket_drops_newcomer(rng):
    me = rng.randbytes(32)
    table = RoutingTable(me, k=20)
    peers = [Contact(with_prefix(me, 0, rng)) for _ in range(21)]
    for p in peers[:20]:
        assert table.insert(p, 0) is InsertResult.ADDED
    before = [c.id for c in table.buckets[0].contacts]
    assert table.insert(peers[20], 1) is InsertResult.DROPPED_BUCKET_FULL
    assert [c.id for c in table.buckets[0].contacts] == before


def test_reinsert_moves_to_most_recent(rng):
    me = rng.randbytes(32)
    table = RoutingTable(me)
    peers = [Contact(with_prefix(me, 2, rng)) for _ in range(3)]
    for i, p in enumerate(peers):
        table.insert(p, i)
    assert table.insert(Contact(peers[0].id), 10) is InsertResult.REFRESHED
    bucket = table.buckets[2].contacts
    assert bucket[-1].id == peers[0].id and bucket[-1].last_seen == 10


def test_remove(rng):
    me = rng.randbytes(32)
    table = RoutingTable(me, k=2)
    assert table.remove(rng.randbytes(32)) is False
    a = Contact(with_prefix(me, 1, rng))
    table.insert(a, 0)
    assert table.remove(a.id) is True
    assert len(table) == 0
    b, c, d = (Contact(with_prefix(me, 1, rng)) for _ in range(3))
    table.insert(b, 0)
    table.insert(c, 0)
    assert table.insert(d, 0) is InsertResult.DROPPED_BUCKET_FULL
    table.remove(b.id)
    assert table.insert(d, 0) is InsertResult.ADDED


def test_closest_empty(rng):
    assert RoutingTable(rng.randbytes(32)).closest(rng.randbytes(32)) == []


def test_closest_matches_brute_force_40(rng):
    table = RoutingTable(rng.randbytes(32))
    for _ in range(40):
        table.insert(Contact(rng.randbytes(32)), 0)
    for _ in range(20):
        target = rng.randbytes(32)
        assert [c.id for c in table.closest(target, 20)] == [c.id for c in brute_closest(table, target, 20)]


def test_closest_exact_match_first(rng):
    table = RoutingTable(rng.randbytes(32))
    contacts = [Contact(rng.randbytes(32)) for _ in range(30)]
    for c in contacts:
        table.insert(c, 0)
    stored = list(table)
    assert table.closest(stored[7].id, 1)[0].id == stored[7].id


def test_closest_rejects_bad_n(rng):
    with pytest.raises(ValueError):
        RoutingTable(rng.randbytes(32)).closest(rng.randbytes(32), 0)


def test_refresh_targets(rng):
    me = rng.randbytes(32)
    table = RoutingTable(me)
    assert table.refresh_targets(rng) == []
    table.insert(Contact(with_prefix(me, 0, rng)), 0)
    targets = table.refresh_targets(rng)
    assert len(targets) == 1 and bucket_index(me, targets[0][1]) == 0
    table.insert(Contact(with_prefix(me, 30, rng)), 0)
    targets = table.refresh_targets(rng)
    assert [i for i, _ in targets] == list(range(16))
    for i, t in targets:
        assert bucket_index(me, t) == i
    assert common_prefix_len(me, targets[15][1]) >= 15


def test_dump_format(rng):
    me = rng.randbytes(32)
    table = RoutingTable(me)
    table.insert(Contact(with_prefix(me, 3, rng)), 1234)
    rows = json.loads(table.dump_json())
    assert rows[0]["bucket"] == 3 and rows[0]["last_seen_ms"] == 1234
    assert rows[0]["peer_id_text"].startswith("Qm")


ops = st.lists(st.tuples(st.booleans(), st.integers(0, 40), st.integers(0, 10_000)), max_size=300)


@settings(max_examples=60)
@given(st.randoms(use_true_random=False), ops)
def test_placement_invariant(r, trace):
    me = r.randbytes(32)
    table = RoutingTable(me, k=4)
    pool = [with_prefix(me, r.randrange(20), r) for _ in range(41)]
    for is_insert, idx, now in trace:
        if is_insert:
            table.insert(Contact(pool[idx]), now)
        else:
            table.remove(pool[idx])
        check_placement(table)


@settings(max_examples=60)
@given(st.randoms(use_true_random=False), st.integers(1, 200))
def test_insert_only_never_evicts(r, n):
    me = r.randbytes(32)
    table = RoutingTable(me, k=3)
    seen = set()
    for _ in range(n):
        peer = with_prefix(me, r.randrange(6), r)
        if table.insert(Contact(peer), 0) is not InsertResult.DROPPED_BUCKET_FULL:
            seen.add(peer)
        assert {c.id for c in table} == seen
