"""Provider records: a key/value datastore fronted by an LRU cache.

Datastore keys are ``/providers/<CID-MULTIHASH>/<PEER-ID>`` (both segments
uppercase unpadded base32) and values are the entry time as a varint.
Reads filter out expired records; only ``cleanup`` deletes them.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Tuple

from .ident import Cid, CidVersion, Multihash, NodeId, b32decode, b32encode, varint_decode, varint_encode

PREFIX = "/providers/"
LRU_SIZE = 256
HOUR_MS = 3_600_000


def make_provider_key(cid: Cid, peer: NodeId) -> str:
    return f"{PREFIX}{b32encode(cid.multihash.encode(), lower=False)}/{b32encode(peer, lower=False)}"


def parse_provider_key(text: str) -> Tuple[bytes, NodeId]:
    """Return ``(multihash bytes, peer id)`` encoded in a datastore key."""
    if not text.startswith(PREFIX):
        raise ValueError(f"not a provider key: {text!r}")
    cid_part, _, peer_part = text[len(PREFIX):].partition("/")
    return b32decode(cid_part), b32decode(peer_part)


@dataclass(frozen=True)
class ProviderRecord:
    cid: Cid
    peer: NodeId
    entered_at: int

    def encoded_time(self) -> bytes:
        return varint_encode(self.entered_at)


class ProviderStore:
    def __init__(self, ttl_ms: int = HOUR_MS, cleanup_interval_ms: int = HOUR_MS, cache_size: int = LRU_SIZE):
        self.ttl_ms = ttl_ms
        self.cleanup_interval_ms = cleanup_interval_ms
        self.cache_size = cache_size
        self.datastore: Dict[str, bytes] = {}
        # multihash bytes -> {peer: entered_at}
        self.cache: "OrderedDict[bytes, Dict[NodeId, int]]" = OrderedDict()
        self.datastore_reads = 0
        self.removed_total = 0

    def __len__(self) -> int:
        return len(self.datastore)

    def _load(self, mh: bytes) -> Dict[NodeId, int]:
        self.datastore_reads += 1
        prefix = f"{PREFIX}{b32encode(mh, lower=False)}/"
        peers = {}
        for key, value in self.datastore.items():
            if key.startswith(prefix):
                _, peer = parse_provider_key(key)
                peers[peer] = varint_decode(value)[0]
        return peers

    def _cached(self, mh: bytes) -> Dict[NodeId, int]:
        entry = self.cache.get(mh)
        if entry is None:
            entry = self._load(mh)
            self.cache[mh] = entry
            if len(self.cache) > self.cache_size:
                self.cache.popitem(last=False)
        self.cache.move_to_end(mh)
        return entry

    def add_provider(self, cid: Cid, peer: NodeId, now: int) -> None:
        mh = cid.multihash.encode()
        entry = self._cached(mh)
        self.datastore[make_provider_key(cid, peer)] = varint_encode(now)
        entry[peer] = now

    def get_providers(self, cid: Cid, now: int) -> List[NodeId]:
        mh = cid.multihash.encode()
        if mh in self.cache:
            entry = self._cached(mh)
        else:
            entry = self._load(mh)
            if not entry:
                return []
            self.cache[mh] = entry
            if len(self.cache) > self.cache_size:
                self.cache.popitem(last=False)
        return [peer for peer, t in entry.items() if now - t < self.ttl_ms]

    def cleanup(self, now: int) -> int:
        self.datastore_reads += 1
        expired = []
        for key, value in self.datastore.items():
            if now - varint_decode(value)[0] >= self.ttl_ms:
                expired.append(key)
        for key in expired:
            del self.datastore[key]
            mh, peer = parse_provider_key(key)
            entry = self.cache.get(mh)
            if entry is not None:
                entry.pop(peer, None)
                if not entry:
                    del self.cache[mh]
        self.removed_total += len(expired)
        return len(expired)

    def records(self) -> List[ProviderRecord]:
        out = []
        for key in sorted(self.datastore):
            mh, peer = parse_provider_key(key)
            out.append(ProviderRecord(Cid(CidVersion.V0, Multihash.decode(mh)), peer,
                                      varint_decode(self.datastore[key])[0]))
        return out

    def dump(self) -> str:
        return "".join(f"{key} {varint_decode(self.datastore[key])[0]}\n" for key in sorted(self.datastore))
