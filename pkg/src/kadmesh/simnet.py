"""Deterministic discrete-event network simulator.

One event loop, one integer millisecond clock. Events fire in
``(fire_at, sequence)`` order, so a given seed and scenario always produce
the same trace.
"""
from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

from .ident import Cid, Key, NodeId, mine_node_id, random_key
from .metrics import Metrics
from .protocol import DhtConfig, DhtNode, Lookup, Message, ProvideOutcome
from .routing import Contact


class SimError(RuntimeError):
    pass


class PastEventError(SimError):
    pass


class EventCapExceeded(SimError):
    pass


@dataclass
class LatencyModel:
    base_ms: int = 10
    jitter_ms: int = 5
    setup_ms: int = 50

    def delay(self, rng: random.Random, first_use: bool) -> int:
        d = self.base_ms + (rng.randint(0, self.jitter_ms) if self.jitter_ms else 0)
        return d + self.setup_ms if first_use else d

    @property
    def max_delay(self) -> int:
        return self.base_ms + self.jitter_ms + self.setup_ms


@dataclass
class RandomWalkConfig:
    enabled: bool = True
    interval_ms: int = 300_000
    timeout_ms: int = 10_000


# -- event payloads ---------------------------------------------------------

@dataclass
class Deliver:
    msg: Message
    src: Contact


@dataclass
class RefreshTick:
    pass


@dataclass
class CleanupTick:
    pass


@dataclass
class RandomWalkTick:
    pass


@dataclass
class NodeJoin:
    seed: Optional[Contact] = None
    then: Optional[Callable[[], None]] = None


@dataclass
class NodeLeave:
    pass


@dataclass
class Call:
    fn: Callable[[], None]
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


@dataclass
class SimEvent:
    fire_at: int
    target: Optional[NodeId]
    payload: Any
    seq: int = field(default=-1)


class Simulator:
    def __init__(self, seed: int = 0, config: Optional[DhtConfig] = None,
                 latency: Optional[LatencyModel] = None,
                 refresh_interval_ms: int = 600_000, refresh_enabled: bool = True,
                 random_walk: Optional[RandomWalkConfig] = None,
                 id_difficulty: int = 0, handshake_weight: int = 10, hash_weight: int = 1,
                 event_cap: int = 20_000_000, record_trace: bool = False):
        self.seed = seed
        self.config = config or DhtConfig()
        self.latency = latency or LatencyModel()
        self.refresh_interval_ms = refresh_interval_ms
        self.refresh_enabled = refresh_enabled
        self.random_walk = random_walk or RandomWalkConfig(enabled=False)
        self.id_difficulty = id_difficulty
        self.event_cap = event_cap
        self.rng = random.Random(f"{seed}:net")
        self.id_rng = random.Random(f"{seed}:ids")
        self.metrics = Metrics(handshake_weight=handshake_weight, hash_weight=hash_weight)
        self.nodes: Dict[NodeId, DhtNode] = {}
        self.order: List[DhtNode] = []
        self.severed: set = set()
        self._used_pairs: set = set()
        self._queue: List[Tuple[int, int, SimEvent]] = []
        self._seq = 0
        self._rid = 0
        self._now = 0
        self.processed = 0
        self.trace: Optional[List[tuple]] = [] if record_trace else None
        self._trace_hash = hashlib.sha256()

    # -- clock and scheduling -------------------------------------------

    @property
    def now(self) -> int:
        return self._now

    def schedule(self, event: SimEvent) -> SimEvent:
        if event.fire_at < self._now:
            raise PastEventError(f"event at {event.fire_at} ms is before now ({self._now} ms)")
        event.seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, (event.fire_at, event.seq, event))
        return event

    def at(self, delay_ms: int, target: Optional[NodeId], payload: Any) -> SimEvent:
        return self.schedule(SimEvent(self._now + delay_ms, target, payload))

    def call_later(self, delay_ms: int, fn: Callable[[], None]) -> Call:
        call = Call(fn)
        self.at(delay_ms, None, call)
        return call

    def next_request_id(self) -> int:
        self._rid += 1
        return self._rid

    @property
    def trace_digest(self) -> str:
        return self._trace_hash.hexdigest()

    def _step(self) -> None:
        fire_at, seq, ev = heapq.heappop(self._queue)
        payload = ev.payload
        if isinstance(payload, Call) and payload.cancelled:
            return
        self._now = fire_at
        self.processed += 1
        if self.processed > self.event_cap:
            raise EventCapExceeded(f"more than {self.event_cap} events processed")
        kind = type(payload).__name__
        if isinstance(payload, Deliver):
            kind = f"Deliver:{payload.msg.kind.name}"
        entry = (fire_at, seq, kind, ev.target.hex()[:16] if ev.target else "-")
        self._trace_hash.update(repr(entry).encode())
        if self.trace is not None:
            self.trace.append(entry)
        self._dispatch(ev)

    def run_until(self, t_end: int) -> int:
        """Process every event with ``fire_at <= t_end``; the clock ends at ``t_end``."""
        start = self.processed
        while self._queue and self._queue[0][0] <= t_end:
            self._step()
        self._now = max(self._now, t_end)
        return self.processed - start

    def run_while(self, pending: Callable[[], bool], horizon_ms: Optional[int] = None) -> None:
        """Process events while ``pending()`` holds."""
        limit = None if horizon_ms is None else self._now + horizon_ms
        while pending():
            if not self._queue:
                raise SimError("event queue drained before the operation completed")
            if limit is not None and self._queue[0][0] > limit:
                raise SimError("operation did not complete within the horizon")
            self._step()

    # -- network ----------------------------------------------------------

    def reachable(self, src: NodeId, dst: NodeId) -> bool:
        node = self.nodes.get(dst)
        return node is not None and node.alive and (src, dst) not in self.severed

    def sever(self, a: NodeId, b: NodeId) -> None:
        self.severed.add((a, b))
        self.severed.add((b, a))

    def sever_all(self) -> None:
        ids = list(self.nodes)
        for a in ids:
            for b in ids:
                if a != b:
                    self.severed.add((a, b))

    def send(self, src: DhtNode, dst: NodeId, msg: Message) -> bool:
        self.metrics.on_send(src.id, msg)
        if not src.alive or not self.reachable(src.id, dst):
            self.metrics.on_drop()
            return False
        pair = (src.id, dst)
        first = pair not in self._used_pairs
        if first:
            self._used_pairs.add(pair)
            self.metrics.on_handshake(msg.tag)
        self.at(self.latency.delay(self.rng, first), dst, Deliver(msg, src.contact))
        return True

    # -- nodes ------------------------------------------------------------

    def add_node(self, node_id: Optional[NodeId] = None) -> DhtNode:
        if node_id is None:
            node_id, attempts = mine_node_id(self.id_rng, self.id_difficulty)
            self.metrics.on_hash(attempts, "identity")
        if node_id in self.nodes:
            raise SimError("duplicate node id")
        node = DhtNode(node_id, self, self.config, (f"/sim/{len(self.order)}",))
        self.nodes[node_id] = node
        self.order.append(node)
        self.metrics.register(node_id)
        if self.refresh_enabled:
            self.at(self.refresh_interval_ms, node_id, RefreshTick())
        self.at(self.config.cleanup_interval_ms, node_id, CleanupTick())
        if self.random_walk.enabled:
            self.at(self.random_walk.interval_ms, node_id, RandomWalkTick())
        return node

    def leave(self, node_id: NodeId, delay_ms: int = 0) -> None:
        self.at(delay_ms, node_id, NodeLeave())

    # -- dispatch ---------------------------------------------------------

    def _dispatch(self, ev: SimEvent) -> None:
        p = ev.payload
        if isinstance(p, Call):
            p.fn()
            return
        node = self.nodes.get(ev.target)
        if isinstance(p, Deliver):
            if node is None or not node.alive:
                self.metrics.on_drop(in_flight=True)
                return
            self.metrics.on_deliver(node.id, p.msg)
            node.receive(p.msg, p.src)
            return
        if node is None or not node.alive:
            return
        if isinstance(p, RefreshTick):
            refresh_tick(self, node)
        elif isinstance(p, CleanupTick):
            removed = node.providers.cleanup(self._now)
            self.metrics.on_cleanup(node.id, removed)
            self.at(self.config.cleanup_interval_ms, node.id, CleanupTick())
        elif isinstance(p, RandomWalkTick):
            random_walk_tick(self, node)
        elif isinstance(p, NodeJoin):
            self._join(node, p)
        elif isinstance(p, NodeLeave):
            node.alive = False

    def _join(self, node: DhtNode, p: NodeJoin) -> None:
        def joined(lookup: Optional[Lookup] = None) -> None:
            self.metrics.joined += 1
            if lookup is not None:
                self.metrics.on_lookup(lookup)
            if p.then is not None:
                p.then()

        if p.seed is None:
            joined()
        else:
            node.start_bootstrap(p.seed, joined)

    # -- synchronous wrappers around the callback API ---------------------

    def _await(self, start: Callable[[Callable[[Any], None]], Any]) -> Any:
        box: List[Any] = []
        start(box.append)
        self.run_while(lambda: not box)
        return box[0]

    def lookup(self, node: DhtNode, target: Key, mode: str = "nodes", tag: str = "query",
               limit: Optional[int] = None) -> Tuple[List[Contact], Lookup]:
        lk = self._await(lambda cb: node.start_lookup(target, cb, mode, tag, limit))
        self.metrics.on_lookup(lk)
        return lk.result, lk

    def bootstrap(self, node: DhtNode, seed: Contact) -> Lookup:
        lk = self._await(lambda cb: node.start_bootstrap(seed, cb))
        self.metrics.on_lookup(lk)
        return lk

    def provide(self, node: DhtNode, cid: Cid) -> ProvideOutcome:
        outcome = self._await(lambda cb: node.start_provide(cid, cb))
        self.metrics.on_lookup(outcome.lookup)
        # let the ADD_PROVIDER messages land
        self.run_until(self.now + self.latency.max_delay)
        if outcome.error is not None:
            raise outcome.error
        return outcome

    def find_providers(self, node: DhtNode, cid: Cid, limit: int = 20) -> Tuple[List[Contact], Lookup]:
        lk = self._await(lambda cb: node.start_find_providers(cid, cb, limit))
        self.metrics.on_lookup(lk)
        return lk.result, lk

    def live_ids(self) -> List[NodeId]:
        return [n.id for n in self.order if n.alive]


def refresh_tick(sim: Simulator, node: DhtNode) -> None:
    """Look up one random key per bucket, from bucket 0 to the highest occupied."""
    sim.metrics.on_refresh(node.id)
    for _, target in node.table.refresh_targets(sim.rng):
        node.start_lookup(target, sim.metrics.on_lookup, "nodes", "maintenance")
    sim.at(sim.refresh_interval_ms, node.id, RefreshTick())


def random_walk_tick(sim: Simulator, node: DhtNode) -> None:
    target = random_key(sim.rng)
    sim.metrics.on_hash(1, "walk")
    lookup = node.start_lookup(target, sim.metrics.on_lookup, "nodes", "walk")
    if not lookup.state.done:
        sim.call_later(sim.random_walk.timeout_ms, lookup.cancel)
    sim.at(sim.random_walk.interval_ms, node.id, RandomWalkTick())


def spawn_chain(sim: Simulator, n: int) -> List[DhtNode]:
    """Create ``n`` nodes where node i initially knows only node i+1.

    Nodes then join from the last one backwards, each bootstrap starting when
    the previous one finishes.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    nodes = [sim.add_node() for _ in range(n)]
    for i in range(n - 1):
        nodes[i].table.insert(nodes[i + 1].contact, sim.now)

    def join(i: int) -> None:
        if i < 0:
            return
        seed = nodes[i + 1].contact if i + 1 < n else None
        sim.at(0, nodes[i].id, NodeJoin(seed, lambda: join(i - 1)))

    join(n - 1)
    return nodes


def wait_for_joins(sim: Simulator, n: int) -> None:
    sim.run_while(lambda: sim.metrics.joined < n)


def spawn_converged(sim: Simulator, n: int) -> List[DhtNode]:
    """``n`` nodes whose tables hold every other node that fits, inserted in a seeded order."""
    nodes = [sim.add_node() for _ in range(n)]
    for node in nodes:
        others = [o for o in nodes if o is not node]
        sim.rng.shuffle(others)
        for o in others:
            node.table.insert(o.contact, sim.now)
    sim.metrics.joined += n
    return nodes
