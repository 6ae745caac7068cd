"""Work and traffic counters collected by the simulator.

Work units replace CPU sampling: each handled message costs 1 unit in the
category of the operation that caused it, each first contact between an
ordered pair of nodes costs ``handshake_weight`` and each hash evaluation
(identity generation, random walk targets) costs ``hash_weight``.
"""
from __future__ import annotations

import copy
from collections import Counter
from typing import Dict

from .ident import NodeId, peer_id_text

WORK_CATEGORIES = ("handshake", "hash", "query", "maintenance", "walk")
MESSAGE_KINDS = ("FIND_NODE", "FIND_NODE_REPLY", "ADD_PROVIDER", "GET_PROVIDERS", "GET_PROVIDERS_REPLY")


class Metrics:
    def __init__(self, handshake_weight: int = 10, hash_weight: int = 1):
        self.handshake_weight = handshake_weight
        self.hash_weight = hash_weight
        self.sent = 0
        self.delivered = 0
        self.dropped = 0
        self.dropped_in_flight = 0
        self.messages_by_kind: Dict[str, int] = {k: 0 for k in MESSAGE_KINDS}
        self.bytes_by_kind: Dict[str, int] = {k: 0 for k in MESSAGE_KINDS}
        self.work: Dict[str, int] = {c: 0 for c in WORK_CATEGORIES}
        self.handshakes = 0
        self.hash_evaluations = 0
        self.lookups: Dict[str, int] = {}
        self.hops: Counter = Counter()
        self.cleanup_removed = 0
        self.joined = 0
        self.per_node: Dict[NodeId, Dict[str, int]] = {}

    @property
    def in_flight(self) -> int:
        return self.sent - self.delivered - self.dropped

    def register(self, node_id: NodeId) -> None:
        self.per_node[node_id] = {"sent": 0, "received": 0, "work": 0, "refresh_ticks": 0, "cleanup_removed": 0}

    def on_send(self, src: NodeId, msg) -> None:
        kind = msg.kind.name
        self.sent += 1
        self.messages_by_kind[kind] += 1
        self.bytes_by_kind[kind] += len(msg.encode())
        self.per_node[src]["sent"] += 1

    def on_drop(self, in_flight: bool = False) -> None:
        self.dropped += 1
        if in_flight:
            self.dropped_in_flight += 1

    def on_deliver(self, dst: NodeId, msg) -> None:
        self.delivered += 1
        self.work[msg.tag] += 1
        node = self.per_node[dst]
        node["received"] += 1
        node["work"] += 1

    def on_handshake(self, tag: str) -> None:
        self.handshakes += 1
        self.work["handshake"] += self.handshake_weight

    def on_hash(self, evaluations: int, reason: str) -> None:
        self.hash_evaluations += evaluations
        self.work["hash"] += evaluations * self.hash_weight

    def on_lookup(self, lookup) -> None:
        self.lookups[lookup.tag] = self.lookups.get(lookup.tag, 0) + 1
        self.hops[lookup.state.hops] += 1

    def on_refresh(self, node_id: NodeId) -> None:
        self.per_node[node_id]["refresh_ticks"] += 1

    def on_cleanup(self, node_id: NodeId, removed: int) -> None:
        self.cleanup_removed += removed
        self.per_node[node_id]["cleanup_removed"] += removed

    @property
    def total_work(self) -> int:
        return sum(self.work.values())

    def share(self, category: str) -> float:
        total = self.total_work
        return self.work[category] / total if total else 0.0

    def snapshot(self) -> "Metrics":
        return copy.deepcopy(self)

    def to_dict(self) -> dict:
        total = self.total_work
        return {
            "messages": {"sent": self.sent, "delivered": self.delivered, "dropped": self.dropped,
                         "dropped_in_flight": self.dropped_in_flight, "in_flight": self.in_flight},
            "messages_by_kind": dict(self.messages_by_kind),
            "bytes_by_kind": dict(self.bytes_by_kind),
            "work": dict(self.work),
            "work_total": total,
            "work_share": {c: round(self.work[c] / total, 6) if total else 0.0 for c in WORK_CATEGORIES},
            "handshakes": self.handshakes,
            "hash_evaluations": self.hash_evaluations,
            "lookups": {k: self.lookups[k] for k in sorted(self.lookups)},
            "hop_histogram": {str(h): self.hops[h] for h in sorted(self.hops)},
            "cleanup_removed": self.cleanup_removed,
            "per_node": [
                {"peer_id": peer_id_text(nid), **counters} for nid, counters in self.per_node.items()
            ],
        }
