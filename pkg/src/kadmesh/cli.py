"""``kadmesh`` command line.

Exit codes: 0 when every check in the experiment passed, 1 on an assertion
failure, 2 on a configuration or I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor

from .harness import FAULTS, ReportError, emit_report, run_oracle_sweep, run_paper_testbed, run_scenario
from .scenario import ScenarioError, load_scenario

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _emit(report: dict, args) -> int:
    text = emit_report(report, args.format, args.out)
    if args.out is None:
        sys.stdout.write(text)
    return EXIT_OK if report["success"] else EXIT_FAIL


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario, seed=args.seed, nodes=args.nodes)
    return _emit(run_scenario(scenario), args)


def cmd_testbed(args) -> int:
    source = args.scenario or {}
    scenario = load_scenario(source, kind="paper_testbed", seed=args.seed, nodes=args.nodes)
    if args.seeds == 1:
        return _emit(run_paper_testbed(scenario), args)
    seeds = range(scenario.seed, scenario.seed + args.seeds)
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            reports = list(pool.map(run_paper_testbed, [scenario] * len(seeds), seeds))
    else:
        reports = [run_paper_testbed(scenario, s) for s in seeds]
    ok = sum(r["success"] for r in reports)
    summary = {
        "experiment": "paper_testbed_batch",
        "nodes": scenario.nodes,
        "seeds": [seeds.start, seeds.stop - 1],
        "success": ok == len(reports),
        "success_rate": ok / len(reports),
        "failed_seeds": [r["seed"] for r in reports if not r["success"]],
        "find_hops": {str(h): sum(r["find"]["hops"] == h for r in reports)
                      for h in sorted({r["find"]["hops"] for r in reports})},
    }
    return _emit(summary, args)


def cmd_oracle(args) -> int:
    overrides = {"seed": args.seed}
    if args.sizes:
        overrides["sweep_sizes"] = args.sizes
    scenario = load_scenario(args.scenario or {}, kind="oracle_sweep", **overrides)
    return _emit(run_oracle_sweep(scenario, fault=args.inject_fault), args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kadmesh", description="Simulated Kademlia content-routing experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int)
        p.add_argument("--format", choices=["json", "csv", "table"], default="json")
        p.add_argument("--out")

    p = sub.add_parser("run", help="run the experiment described by a scenario file")
    p.add_argument("scenario")
    p.add_argument("--nodes", type=int)
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("testbed", help="chain bootstrap, provide from the last node, find from node 0")
    p.add_argument("--scenario")
    p.add_argument("--nodes", type=int, default=40)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to run")
    p.add_argument("--workers", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_testbed)

    p = sub.add_parser("oracle", help="run the brute-force oracle suites")
    p.add_argument("--scenario")
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--inject-fault", choices=sorted(FAULTS))
    common(p)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, ReportError) as exc:
        print(f"kadmesh: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
