"""k-bucket routing table.

Buckets are indexed by shared-prefix length with the local id, one bit per
level, saturating at ``max_buckets - 1``. A full bucket never evicts: new
contacts are dropped until an existing one is removed.
"""
from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

from .ident import ID_BITS, ID_BYTES, NodeId, common_prefix_len, peer_id_text

DEFAULT_K = 20
DEFAULT_MAX_BUCKETS = 16


@dataclass
class Contact:
    id: NodeId
    addrs: Tuple[str, ...] = ()
    last_seen: int = 0

    def __post_init__(self):
        if len(self.id) != ID_BYTES:
            raise ValueError("contact id must be 32 bytes")
        self.addrs = tuple(self.addrs)
        self.int_id = int.from_bytes(self.id, "big")

    def as_provider(self) -> dict:
        return {"id": peer_id_text(self.id), "multiaddrs": list(self.addrs)}


class InsertResult(enum.Enum):
    ADDED = "added"
    REFRESHED = "refreshed"
    DROPPED_BUCKET_FULL = "dropped_bucket_full"


@dataclass
class KBucket:
    index: int
    k: int
    contacts: List[Contact] = field(default_factory=list)  # least-recently-seen first

    def __len__(self) -> int:
        return len(self.contacts)

    def find(self, node_id: NodeId) -> Optional[int]:
        for i, c in enumerate(self.contacts):
            if c.id == node_id:
                return i
        return None


class RoutingTable:
    def __init__(self, self_id: NodeId, k: int = DEFAULT_K, max_buckets: int = DEFAULT_MAX_BUCKETS):
        if len(self_id) != ID_BYTES:
            raise ValueError("self_id must be 32 bytes")
        if k < 1 or not 1 <= max_buckets <= ID_BITS:
            raise ValueError("k must be >= 1 and max_buckets in [1, 256]")
        self.self_id = self_id
        self.k = k
        self.max_buckets = max_buckets
        self.buckets = [KBucket(i, k) for i in range(max_buckets)]

    def bucket_index(self, peer: NodeId) -> int:
        return bucket_index(self.self_id, peer, self.max_buckets)

    def insert(self, contact: Contact, now: int) -> InsertResult:
        bucket = self.buckets[self.bucket_index(contact.id)]
        pos = bucket.find(contact.id)
        if pos is not None:
            existing = bucket.contacts.pop(pos)
            existing.last_seen = now
            if contact.addrs:
                existing.addrs = contact.addrs
            bucket.contacts.append(existing)
            return InsertResult.REFRESHED
        if len(bucket) >= self.k:
            return InsertResult.DROPPED_BUCKET_FULL
        bucket.contacts.append(Contact(contact.id, contact.addrs, now))
        return InsertResult.ADDED

    def remove(self, node_id: NodeId) -> bool:
        if node_id == self.self_id:
            return False
        bucket = self.buckets[self.bucket_index(node_id)]
        pos = bucket.find(node_id)
        if pos is None:
            return False
        del bucket.contacts[pos]
        return True

    def get(self, node_id: NodeId) -> Optional[Contact]:
        if node_id == self.self_id:
            return None
        bucket = self.buckets[self.bucket_index(node_id)]
        pos = bucket.find(node_id)
        return None if pos is None else bucket.contacts[pos]

    def __contains__(self, node_id: NodeId) -> bool:
        return self.get(node_id) is not None

    def __iter__(self) -> Iterator[Contact]:
        for bucket in self.buckets:
            yield from bucket.contacts

    def __len__(self) -> int:
        return sum(len(b) for b in self.buckets)

    def closest(self, target: bytes, n: Optional[int] = None) -> List[Contact]:
        """Up to ``n`` contacts (default k) ordered by XOR distance to ``target``."""
        n = self.k if n is None else n
        if n < 1:
            raise ValueError("n must be >= 1")
        t = int.from_bytes(target, "big")
        ranked = [c for b in self.buckets for c in b.contacts]
        ranked.sort(key=lambda c: c.int_id ^ t)
        return ranked[:n]

    def highest_nonempty(self) -> int:
        for bucket in reversed(self.buckets):
            if bucket.contacts:
                return bucket.index
        return -1

    def refresh_targets(self, rng: random.Random) -> List[Tuple[int, bytes]]:
        return [(i, random_key_in_bucket(self.self_id, i, self.max_buckets, rng))
                for i in range(self.highest_nonempty() + 1)]

    def dump(self) -> List[dict]:
        return [
            {"bucket": b.index, "peer_id_text": peer_id_text(c.id), "last_seen_ms": c.last_seen}
            for b in self.buckets for c in b.contacts
        ]

    def dump_json(self) -> str:
        return json.dumps(self.dump())


def bucket_index(self_id: NodeId, peer: NodeId, max_buckets: int = DEFAULT_MAX_BUCKETS) -> int:
    if peer == self_id:
        raise ValueError("a node never stores itself")
    return min(common_prefix_len(self_id, peer), max_buckets - 1)


def random_key_in_bucket(self_id: NodeId, index: int, max_buckets: int, rng: random.Random) -> bytes:
    """Uniform random key whose bucket index relative to ``self_id`` is ``index``."""
    me = int.from_bytes(self_id, "big")
    saturated = index == max_buckets - 1
    # keep the top `index` bits of self; for non-saturated buckets flip the next one
    free_bits = ID_BITS - index
    while True:
        low = rng.getrandbits(free_bits)
        if not saturated:
            low = (low & ((1 << (free_bits - 1)) - 1)) | ((~me >> (free_bits - 1) & 1) << (free_bits - 1))
        key = ((me >> free_bits) << free_bits) | low
        if key != me:
            return key.to_bytes(ID_BYTES, "big")
