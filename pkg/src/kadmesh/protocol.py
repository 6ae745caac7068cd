"""DHT messages and per-node protocol logic.

A :class:`DhtNode` is a deterministic state machine. It never touches a
clock or a socket itself; everything goes through the ``net`` object it is
given (the simulator), which must provide::

    net.now                       -> int, simulated milliseconds
    net.send(src, dst_id, msg)    -> bool, False when the peer cannot be dialled
    net.call_later(ms, fn)        -> handle with .cancel()
    net.next_request_id()         -> int

Lookups run in rounds: each round queries either ``alpha`` unqueried peers
(while the closest known peer keeps improving) or every unqueried peer in the
current top k, and the lookup ends once the top k have all been queried.
"""
from __future__ import annotations

import enum
import functools
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Set, Tuple

from .ident import ID_BYTES, Cid, Key, NodeId, varint_encode
from .providers import ProviderStore
from .routing import Contact, RoutingTable

log = logging.getLogger(__name__)


class Kind(enum.IntEnum):
    FIND_NODE = 0
    FIND_NODE_REPLY = 1
    ADD_PROVIDER = 2
    GET_PROVIDERS = 3
    GET_PROVIDERS_REPLY = 4


REPLIES = (Kind.FIND_NODE_REPLY, Kind.GET_PROVIDERS_REPLY)


def _encode_contact(c: Contact) -> bytes:
    return _contact_bytes(c.id, c.addrs)


@functools.lru_cache(maxsize=65536)
def _contact_bytes(node_id: bytes, addrs: Tuple[str, ...]) -> bytes:
    out = bytearray(node_id)
    out += varint_encode(len(addrs))
    for addr in addrs:
        raw = addr.encode("utf-8")
        out += varint_encode(len(raw)) + raw
    return bytes(out)


@dataclass
class Message:
    kind: Kind
    key: bytes
    contacts: Tuple[Contact, ...] = ()
    provider_peers: Tuple[Contact, ...] = ()
    # simulator metadata, not part of the wire form
    request_id: int = 0
    tag: str = "query"

    def encode(self) -> bytes:
        """kind ‖ varint key-len ‖ key ‖ varint n ‖ contacts ‖ varint m ‖ providers"""
        out = bytearray([int(self.kind)])
        out += varint_encode(len(self.key)) + self.key
        for group in (self.contacts, self.provider_peers):
            out += varint_encode(len(group))
            for c in group:
                out += _encode_contact(c)
        return bytes(out)


@dataclass
class DhtConfig:
    k: int = 20
    alpha: int = 3
    max_buckets: int = 16
    provider_ttl_ms: int = 3_600_000
    cleanup_interval_ms: int = 3_600_000
    query_timeout_ms: int = 10_000
    early_exit: bool = True


class ProvideError(RuntimeError):
    def __init__(self, failed: int, k: int):
        super().__init__(f"Failed to provide to {failed} of {k} peers")
        self.failed = failed
        self.k = k


@dataclass
class LookupState:
    target: Key
    alpha: int = 3
    k: int = 20
    shortlist: Dict[NodeId, Contact] = field(default_factory=dict)
    distance: Dict[NodeId, int] = field(default_factory=dict)
    queried: Set[NodeId] = field(default_factory=set)
    failed: Set[NodeId] = field(default_factory=set)
    hops: int = 0
    messages: int = 0
    providers: Dict[NodeId, Contact] = field(default_factory=dict)
    done: bool = False
    cancelled: bool = False

    def __post_init__(self):
        self._target_int = int.from_bytes(self.target, "big")

    def add(self, c: Contact) -> None:
        if c.id not in self.shortlist and c.id not in self.failed:
            self.shortlist[c.id] = c
            self.distance[c.id] = c.int_id ^ self._target_int

    def top(self) -> List[Contact]:
        live = [i for i in self.shortlist if i not in self.failed]
        live.sort(key=self.distance.__getitem__)
        return [self.shortlist[i] for i in live[:self.k]]


class Lookup:
    """One iterative lookup driven by replies and timeouts from ``node``."""

    def __init__(self, node: "DhtNode", target: Key, mode: str, on_done: Callable[["Lookup"], None],
                 tag: str = "query", limit: Optional[int] = None):
        if mode not in ("nodes", "providers"):
            raise ValueError(f"unknown lookup mode {mode!r}")
        cfg = node.config
        self.node = node
        self.mode = mode
        self.tag = tag
        self.limit = limit if limit is not None else cfg.k
        self.on_done = on_done
        self.state = LookupState(target, cfg.alpha, cfg.k)
        self._outstanding: Set[int] = set()
        self._last_best: Optional[int] = None

    @property
    def result(self) -> List[Contact]:
        if self.mode == "providers":
            return list(self.state.providers.values())[:self.limit]
        return self.state.top()

    def start(self) -> None:
        node, st = self.node, self.state
        if self.mode == "providers":
            cid = Cid.from_key(st.target)
            for peer in node.providers.get_providers(cid, node.net.now):
                st.providers[peer] = node.contact_for(peer)
            if st.providers and (node.config.early_exit or len(st.providers) >= self.limit):
                return self._finish()
        for c in node.table.closest(st.target, st.k):
            st.add(c)
        self._next_round()

    def cancel(self) -> None:
        if not self.state.done:
            self.state.cancelled = True
            self._finish()

    def _next_round(self) -> None:
        node, st = self.node, self.state
        while not st.done:
            top = st.top()
            pending = [c for c in top if c.id not in st.queried]
            if not pending:
                return self._finish()
            best = st.distance[top[0].id]
            if self._last_best is None or best < self._last_best:
                batch = pending[:st.alpha]
            else:
                batch = pending
            self._last_best = best
            st.hops += 1
            kind = Kind.GET_PROVIDERS if self.mode == "providers" else Kind.FIND_NODE
            for c in batch:
                st.queried.add(c.id)
                st.messages += 1
                rid = node.request(c, Message(kind, st.target, tag=self.tag), self)
                if rid is None:
                    self._mark_failed(c)
                else:
                    self._outstanding.add(rid)
            if self._outstanding:
                return

    def _mark_failed(self, c: Contact) -> None:
        self.state.failed.add(c.id)
        self.node.table.remove(c.id)

    def on_reply(self, rid: int, peer: Contact, msg: Message) -> None:
        st = self.state
        self._outstanding.discard(rid)
        if st.done:
            return
        for c in msg.contacts:
            if c.id != self.node.id:
                st.add(c)
        if self.mode == "providers":
            for p in msg.provider_peers:
                st.providers.setdefault(p.id, p)
            if self.node.config.early_exit and len(st.providers) >= self.limit:
                return self._finish()
        self._round_maybe_complete()

    def on_timeout(self, rid: int, peer: Contact) -> None:
        self._outstanding.discard(rid)
        if self.state.done:
            return
        self._mark_failed(peer)
        self._round_maybe_complete()

    def _round_maybe_complete(self) -> None:
        if self._outstanding:
            return
        if self.mode == "providers" and self.node.config.early_exit and self.state.providers:
            return self._finish()
        self._next_round()

    def _finish(self) -> None:
        st = self.state
        st.done = True
        for rid in list(self._outstanding):
            self.node.cancel_request(rid)
        self._outstanding.clear()
        self.on_done(self)


@dataclass
class ProvideOutcome:
    cid: Cid
    targets: List[Contact]
    failed: int
    lookup: Lookup
    error: Optional[ProvideError] = None


class DhtNode:
    def __init__(self, node_id: NodeId, net, config: Optional[DhtConfig] = None, addrs: Tuple[str, ...] = ()):
        self.id = node_id
        self.net = net
        self.config = config or DhtConfig()
        self.contact = Contact(node_id, addrs)
        self.table = RoutingTable(node_id, self.config.k, self.config.max_buckets)
        self.providers = ProviderStore(self.config.provider_ttl_ms, self.config.cleanup_interval_ms)
        self.alive = True
        self.dropped_malformed = 0
        self._pending: Dict[int, Tuple[Lookup, Contact, object]] = {}

    def __repr__(self) -> str:
        return f"DhtNode({self.id.hex()[:12]})"

    def contact_for(self, peer: NodeId) -> Contact:
        if peer == self.id:
            return self.contact
        known = self.table.get(peer)
        return Contact(peer, known.addrs if known else ())

    # -- receiver side --------------------------------------------------

    def handle_message(self, msg: Message, sender: Contact, now: int) -> Optional[Message]:
        if len(msg.key) != ID_BYTES:
            self.dropped_malformed += 1
            return None
        if sender.id != self.id:
            self.table.insert(sender, now)
        if msg.kind == Kind.ADD_PROVIDER:
            # only the sender may announce itself
            if any(p.id == sender.id for p in msg.provider_peers):
                self.providers.add_provider(Cid.from_key(msg.key), sender.id, now)
            return None
        closer = self._closer(msg.key, sender.id)
        if msg.kind == Kind.FIND_NODE:
            return Message(Kind.FIND_NODE_REPLY, msg.key, contacts=closer, tag=msg.tag)
        if msg.kind == Kind.GET_PROVIDERS:
            found = self.providers.get_providers(Cid.from_key(msg.key), now)
            peers = tuple(self.contact_for(p) for p in found)
            return Message(Kind.GET_PROVIDERS_REPLY, msg.key, contacts=closer, provider_peers=peers, tag=msg.tag)
        return None

    def _closer(self, key: Key, exclude: NodeId) -> Tuple[Contact, ...]:
        k = self.config.k
        return tuple(c for c in self.table.closest(key, k + 1) if c.id != exclude)[:k]

    def receive(self, msg: Message, sender: Contact) -> None:
        """Entry point for delivered messages."""
        now = self.net.now
        if msg.kind in REPLIES:
            if sender.id != self.id:
                self.table.insert(sender, now)
            entry = self._pending.pop(msg.request_id, None)
            if entry is None:
                return
            lookup, peer, timer = entry
            timer.cancel()
            lookup.on_reply(msg.request_id, peer, msg)
            return
        reply = self.handle_message(msg, sender, now)
        if reply is not None:
            reply.request_id = msg.request_id
            self.net.send(self, sender.id, reply)

    # -- requester side -------------------------------------------------

    def request(self, peer: Contact, msg: Message, lookup: Lookup) -> Optional[int]:
        rid = self.net.next_request_id()
        msg.request_id = rid
        if not self.net.send(self, peer.id, msg):
            return None
        timer = self.net.call_later(self.config.query_timeout_ms, lambda: self._timeout(rid))
        self._pending[rid] = (lookup, peer, timer)
        return rid

    def cancel_request(self, rid: int) -> None:
        entry = self._pending.pop(rid, None)
        if entry is not None:
            entry[2].cancel()

    def _timeout(self, rid: int) -> None:
        entry = self._pending.pop(rid, None)
        if entry is not None:
            lookup, peer, _ = entry
            lookup.on_timeout(rid, peer)

    # -- operations -----------------------------------------------------

    def start_lookup(self, target: Key, on_done: Callable[[Lookup], None], mode: str = "nodes",
                     tag: str = "query", limit: Optional[int] = None) -> Lookup:
        lookup = Lookup(self, target, mode, on_done, tag, limit)
        lookup.start()
        return lookup

    def start_bootstrap(self, seed: Contact, on_done: Callable[[Lookup], None], tag: str = "query") -> Lookup:
        if seed.id == self.id:
            raise ValueError("cannot bootstrap against self")
        now = self.net.now
        self.table.insert(seed, now)

        def finished(lookup: Lookup) -> None:
            for c in lookup.result:
                self.table.insert(c, self.net.now)
            if not len(self.table):
                # seed unreachable: keep it for later refreshes
                self.table.insert(seed, self.net.now)
            on_done(lookup)

        return self.start_lookup(self.id, finished, "nodes", tag)

    def start_provide(self, cid: Cid, on_done: Callable[[ProvideOutcome], None], tag: str = "query") -> Lookup:
        k = self.config.k
        self.providers.add_provider(cid, self.id, self.net.now)
        fallback = self.table.closest(cid.key, k)

        def finished(lookup: Lookup) -> None:
            targets = lookup.result or fallback
            if not targets:
                log.warning("provide %s: no known peers, stored locally only", cid)
            failed = 0
            for peer in targets:
                msg = Message(Kind.ADD_PROVIDER, cid.key, provider_peers=(self.contact,), tag=tag)
                if not self.net.send(self, peer.id, msg):
                    failed += 1
            outcome = ProvideOutcome(cid, list(targets), failed, lookup)
            if targets and failed == len(targets):
                outcome.error = ProvideError(failed, k)
            elif failed:
                log.warning("provide %s: %d of %d sends failed", cid, failed, len(targets))
            on_done(outcome)

        return self.start_lookup(cid.key, finished, "nodes", tag)

    def start_find_providers(self, cid: Cid, on_done: Callable[[Lookup], None], limit: int = 20,
                             tag: str = "query") -> Lookup:
        return self.start_lookup(cid.key, on_done, "providers", tag, limit)
