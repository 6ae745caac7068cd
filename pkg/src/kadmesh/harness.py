"""Experiment runners and report emission."""
from __future__ import annotations

import csv
import io
import json
import math
import random
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from .dag import build_root, chunk, dedup_count
from .ident import ID_BYTES, make_cid, peer_id_text, xor_distance
from .metrics import WORK_CATEGORIES
from .providers import ProviderStore
from .routing import Contact, RoutingTable
from .scenario import Scenario
from .simnet import Simulator, spawn_chain, spawn_converged, wait_for_joins

FIVE_MINUTES_MS = 300_000

# work category -> (component, function class) for the breakdown table
WORK_COMPONENTS = {
    "handshake": ("network", "connection setup"),
    "hash": ("identity", "hash evaluation"),
    "query": ("kad-dht", "bootstrap/provide/find"),
    "maintenance": ("kad-dht", "bucket refresh"),
    "walk": ("kad-dht", "random walk"),
}


class ReportError(OSError):
    pass


def _provide_and_find(sim: Simulator, nodes, content: str) -> dict:
    cid = make_cid(content.encode("utf-8"))
    provider = nodes[-1]
    outcome = sim.provide(provider, cid)
    found, lookup = sim.find_providers(nodes[0], cid)
    remote = sum(1 for n in nodes if n is not provider and n.providers.get_providers(cid, sim.now))
    return {
        "cid": cid.text,
        "success": [c.id for c in found] == [provider.id],
        "provider_index": len(nodes) - 1,
        "expected_provider": peer_id_text(provider.id),
        "providers": [c.as_provider() for c in found],
        "provide": {"targets": len(outcome.targets), "failed": outcome.failed, "remote_records": remote,
                    "hops": outcome.lookup.state.hops, "messages": outcome.lookup.state.messages},
        "find": {"hops": lookup.state.hops, "messages": lookup.state.messages},
    }


def run_paper_testbed(scenario: Scenario, seed: Optional[int] = None) -> dict:
    """Chain of ``scenario.nodes`` nodes; the last provides, node 0 looks it up."""
    sim = scenario.simulator(seed)
    nodes = spawn_chain(sim, scenario.nodes)
    wait_for_joins(sim, scenario.nodes)
    joined_at = sim.now
    outcome = _provide_and_find(sim, nodes, scenario.content)
    return {
        "experiment": "paper_testbed",
        "seed": sim.seed,
        "nodes": scenario.nodes,
        "success": outcome.pop("success"),
        **outcome,
        "joined_at_ms": joined_at,
        "sim_time_ms": sim.now,
        "events": sim.processed,
        "trace_digest": sim.trace_digest,
        "metrics": sim.metrics.to_dict(),
    }


def _mark(sim: Simulator, label: str) -> dict:
    m = sim.metrics
    return {"label": label, "t_ms": sim.now, "maintenance_share": round(m.share("maintenance"), 6),
            "work": dict(m.work), "work_total": m.total_work}


def run_one_hour_refresh(scenario: Scenario, seed: Optional[int] = None) -> dict:
    """Start, provide and find, then keep the network running for ``duration_ms``."""
    sim = scenario.simulator(seed)
    nodes = spawn_chain(sim, scenario.nodes)
    wait_for_joins(sim, scenario.nodes)
    outcome = _provide_and_find(sim, nodes, scenario.content)
    marks = [_mark(sim, "first_lookup_complete")]
    for label, t in (("5min", FIVE_MINUTES_MS), ("end", scenario.duration_ms)):
        if t >= sim.now:
            sim.run_until(t)
            marks.append(_mark(sim, label))
    by_label = {m["label"]: m for m in marks}

    ticks = [c["refresh_ticks"] for c in sim.metrics.per_node.values()]
    expected_ticks = scenario.duration_ms // scenario.refresh_interval_ms if scenario.refresh_enabled else 0
    checks = {"refresh_ticks_per_node": all(t == expected_ticks for t in ticks)}
    if "5min" in by_label and "end" in by_label:
        early, late = by_label["5min"]["maintenance_share"], by_label["end"]["maintenance_share"]
        if scenario.refresh_enabled:
            checks["maintenance_share_increases"] = late > early
        else:
            checks["maintenance_share_zero"] = early == 0 and late == 0
    return {
        "experiment": "one_hour_refresh",
        "seed": sim.seed,
        "nodes": scenario.nodes,
        "success": all(checks.values()) and outcome["success"],
        "checks": checks,
        "expected_refresh_ticks": expected_ticks,
        "refresh_ticks": {"min": min(ticks), "max": max(ticks)},
        "find_success": outcome["success"],
        "marks": marks,
        "sim_time_ms": sim.now,
        "events": sim.processed,
        "trace_digest": sim.trace_digest,
        "metrics": sim.metrics.to_dict(),
    }


def run_custom(scenario: Scenario, seed: Optional[int] = None) -> dict:
    sim = scenario.simulator(seed)
    nodes = spawn_chain(sim, scenario.nodes)
    wait_for_joins(sim, scenario.nodes)
    outcome = _provide_and_find(sim, nodes, scenario.content)
    if scenario.duration_ms > sim.now:
        sim.run_until(scenario.duration_ms)
    return {
        "experiment": "custom",
        "seed": sim.seed,
        "nodes": scenario.nodes,
        "success": outcome.pop("success"),
        **outcome,
        "sim_time_ms": sim.now,
        "events": sim.processed,
        "trace_digest": sim.trace_digest,
        "metrics": sim.metrics.to_dict(),
    }


# -- oracle sweep -----------------------------------------------------------

def brute_force_closest(contacts: Sequence[Contact], target: bytes, n: int) -> List[Contact]:
    return sorted(contacts, key=lambda c: xor_distance(c.id, target))[:n]


def _rand_id(rng: random.Random) -> bytes:
    return rng.randbytes(ID_BYTES)


def check_closest(rng: random.Random, sizes: Sequence[int], instances: int = 25,
                  closest: Optional[Callable[[RoutingTable, bytes, int], List[Contact]]] = None) -> Optional[dict]:
    closest = closest or (lambda table, target, n: table.closest(target, n))
    for size in sizes:
        for _ in range(instances):
            table = RoutingTable(_rand_id(rng))
            for _ in range(size):
                table.insert(Contact(_rand_id(rng)), 0)
            target = _rand_id(rng)
            got = [c.id for c in closest(table, target, table.k)]
            want = [c.id for c in brute_force_closest(list(table), target, table.k)]
            if got != want:
                return {"size": size, "target": target.hex(), "got": [g.hex() for g in got],
                        "want": [w.hex() for w in want]}
    return None


def check_lookup(scenario: Scenario, rng: random.Random, sizes: Sequence[int], targets: int) -> Optional[dict]:
    k = scenario.k
    for size in sizes:
        sim = scenario.simulator(rng.getrandbits(32), refresh_enabled=False,
                                 random_walk=None)
        nodes = spawn_converged(sim, size)
        hops = []
        for _ in range(targets):
            target = _rand_id(rng)
            node = nodes[rng.randrange(size)]
            result, lk = sim.lookup(node, target)
            want = sorted((i for i in sim.live_ids() if i != node.id), key=lambda i: xor_distance(i, target))[:k]
            if [c.id for c in result] != want:
                return {"size": size, "target": target.hex(), "from": node.id.hex(),
                        "got": [c.id.hex() for c in result], "want": [w.hex() for w in want]}
            hops.append(lk.state.hops)
        bound = math.ceil(math.log2(size)) + 2
        if sum(hops) / len(hops) > bound:
            return {"size": size, "mean_hops": sum(hops) / len(hops), "bound": bound}
    return None


def check_provider_expiry(rng: random.Random, trials: int = 20) -> Optional[dict]:
    ttl = 3_600_000
    for _ in range(trials):
        store = ProviderStore(ttl_ms=ttl)
        cid = make_cid(rng.randbytes(8))
        now = ttl + rng.randrange(ttl)
        entered = {}
        for _ in range(rng.randint(1, 30)):
            peer = _rand_id(rng)
            t = now - rng.choice([0, 1, ttl - 1, ttl, ttl + 1, rng.randrange(2 * ttl)])
            t = max(t, 0)
            entered[peer] = t
            store.add_provider(cid, peer, t)
        live = sorted(p for p, t in entered.items() if now - t < ttl)
        if sorted(store.get_providers(cid, now)) != live:
            return {"phase": "get_providers", "now": now, "entered": {p.hex(): t for p, t in entered.items()}}
        expired = len(entered) - len(live)
        if store.cleanup(now) != expired or len(store) != len(live):
            return {"phase": "cleanup", "now": now, "entered": {p.hex(): t for p, t in entered.items()}}
    return None


def check_dag(rng: random.Random, files: int = 10, max_size: int = 600_000) -> Optional[dict]:
    for _ in range(files):
        content = rng.randbytes(rng.randrange(max_size))
        blocks = chunk(content)
        if b"".join(b.data for b in blocks) != content:
            return {"phase": "reassembly", "size": len(content)}
        root = build_root(blocks).cid
        if content:
            bit = rng.randrange(len(content) * 8)
            flipped = bytearray(content)
            flipped[bit // 8] ^= 1 << (bit % 8)
            if build_root(chunk(bytes(flipped))).cid == root:
                return {"phase": "bit_flip", "size": len(content), "bit": bit}
        total, unique = dedup_count([content, content])
        if unique != len(blocks):
            return {"phase": "dedup", "size": len(content), "total": total, "unique": unique}
    return None


FAULTS = {
    # swaps the two nearest contacts
    "missorted-closest": lambda table, target, n: (lambda r: r[1:2] + r[:1] + r[2:])(table.closest(target, n)),
}


def run_oracle_sweep(scenario: Scenario, seed: Optional[int] = None, fault: Optional[str] = None) -> dict:
    seed = scenario.seed if seed is None else seed
    rng = random.Random(f"{seed}:oracle")
    sizes = list(scenario.sweep_sizes)
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; choose from {sorted(FAULTS)}")
    suites = {
        "closest_peers": lambda: check_closest(rng, sizes, closest=FAULTS.get(fault)),
        "lookup_convergence": lambda: check_lookup(scenario, rng, sizes, scenario.sweep_targets),
        "provider_expiry": lambda: check_provider_expiry(rng),
        "dag_propagation": lambda: check_dag(rng),
    }
    results: Dict[str, dict] = {}
    for name, suite in suites.items():
        counterexample = suite()
        results[name] = {"passed": counterexample is None}
        if counterexample is not None:
            results[name]["counterexample"] = counterexample
    return {
        "experiment": "oracle_sweep",
        "seed": seed,
        "sizes": sizes,
        "fault": fault,
        "success": all(r["passed"] for r in results.values()),
        "suites": results,
    }


RUNNERS = {
    "paper_testbed": run_paper_testbed,
    "one_hour_refresh": run_one_hour_refresh,
    "oracle_sweep": run_oracle_sweep,
    "custom": run_custom,
}


def run_scenario(scenario: Scenario, seed: Optional[int] = None) -> dict:
    return RUNNERS[scenario.kind](scenario, seed)


# -- reports ----------------------------------------------------------------

def _flatten(value, prefix: str = ""):
    if isinstance(value, dict):
        for k, v in value.items():
            yield from _flatten(v, f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(value, list):
        for i, v in enumerate(value):
            yield from _flatten(v, f"{prefix}[{i}]")
    else:
        yield prefix, value


def render_table(report: dict) -> str:
    lines = [f"experiment: {report.get('experiment')}", f"seed: {report.get('seed')}",
             f"success: {report.get('success')}"]
    for key in ("cid", "expected_provider", "sim_time_ms", "events", "trace_digest"):
        if key in report:
            lines.append(f"{key}: {report[key]}")
    if "suites" in report:
        lines.append("")
        for name, res in report["suites"].items():
            lines.append(f"{name:<20} {'PASS' if res['passed'] else 'FAIL'}")
    metrics = report.get("metrics")
    if metrics:
        total = metrics["work_total"]
        rows = [(*WORK_COMPONENTS[c], metrics["work"][c]) for c in WORK_CATEGORIES]
        lines += ["", "Work breakdown", f"{'Component':<12} {'Function':<24} {'Units':>10} {'Share%':>8}"]
        for comp, func, units in sorted(rows, key=lambda r: (-r[2], r[0], r[1])):
            share = 100.0 * units / total if total else 0.0
            lines.append(f"{comp:<12} {func:<24} {units:>10} {share:>8.2f}")
        msgs = metrics["messages"]
        lines += ["", "Messages", f"{'Kind':<22} {'Count':>8} {'Bytes':>10}"]
        for kind, count in metrics["messages_by_kind"].items():
            lines.append(f"{kind:<22} {count:>8} {metrics['bytes_by_kind'][kind]:>10}")
        lines.append(f"sent={msgs['sent']} delivered={msgs['delivered']} dropped={msgs['dropped']} "
                     f"in_flight={msgs['in_flight']}")
    if "marks" in report:
        lines += ["", f"{'Mark':<24} {'t_ms':>10} {'Maintenance%':>13}"]
        for m in report["marks"]:
            lines.append(f"{m['label']:<24} {m['t_ms']:>10} {100 * m['maintenance_share']:>13.2f}")
    return "\n".join(lines) + "\n"


def format_report(report: dict, fmt: str = "json") -> str:
    if fmt == "json":
        return json.dumps(report, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["field", "value"])
        writer.writerows(_flatten(report))
        return buf.getvalue()
    if fmt in ("table", "text-table"):
        return render_table(report)
    raise ValueError(f"unknown report format {fmt!r}")


def emit_report(report: dict, fmt: str = "json", out: Optional[Path] = None) -> str:
    text = format_report(report, fmt)
    if out is not None:
        path = Path(out)
        try:
            path.write_text(text)
        except OSError as exc:
            raise ReportError(f"cannot write report to {path}: {exc.strerror or exc}") from exc
    return text
