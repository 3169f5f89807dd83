"""Command-line harness: simulate, evolve, test, timeline.

Exit codes are uniform across commands: 0 when everything passed, 1 when
any test machine failed, 2 on usage, config, or input-file errors.  Every
run writes one plain-text manifest describing what ran and what it emitted;
the manifest is the only output containing wall-clock time, so repeated
runs with the same flags produce byte-identical taps and reports.
"""

from __future__ import annotations

import argparse
import sys
import threading
import time
from dataclasses import replace
from importlib import resources

from .broker import Broker, BrokerError, QueueClosed, matches
from .evolution import (
    DEFAULT_ENERGY_TARGET,
    evaluate_solution,
    load_ga_config,
    run_observer,
)
from .logmodel import LogModelError, load_tap, routing_key
from .neural import GenomeShapeMismatch, NetworkTopology, decode, load_genome, save_genome
from .testkit import (
    TestkitError,
    compile as compile_machine,
    format_report,
    load_test_plan,
    merge_timeline,
    run as run_machine,
)
from .world import (
    WorldConfig,
    WorldError,
    load_world_config,
    parse_fault_spec,
    run_episode,
)

USAGE_ERROR = 2
TEST_FAILURE = 1

_USER_ERRORS = (
    WorldError,
    TestkitError,
    LogModelError,
    GenomeShapeMismatch,
    BrokerError,
    OSError,
)


def data_path(name: str) -> str:
    """Path of a packaged default asset (config, plan, demo genome)."""
    return str(resources.files("masharness").joinpath("data", name))


def _load_world(args) -> WorldConfig:
    path = args.config or data_path("world.cfg")
    config = load_world_config(path)
    if getattr(args, "seed", None) is not None:
        config = replace(config, rngSeed=args.seed)
    return config


def _load_genome(args):
    path = args.genome or data_path("demo_genome.txt")
    return load_genome(path)


def _parse_faults(args):
    return tuple(parse_fault_spec(text) for text in (args.fault or ()))


def write_manifest(path: str, command: str, entries: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"command: {command}\n")
        for key, value in entries.items():
            fh.write(f"{key}: {value}\n")
        fh.write(f"wallclock: {time.strftime('%Y-%m-%dT%H:%M:%S%z')}\n")


def cmd_simulate(args) -> int:
    config = _load_world(args)
    topology, genes = _load_genome(args)
    faults = _parse_faults(args)
    tap = args.tap or "tap.log"
    # one plain episode with full world logging; no observer protocol here
    broker = Broker(tap=tap)
    try:
        metrics = run_episode(config, decode(genes, topology), broker, faults=faults)
    finally:
        broker.close()
    print(f"pPeople={metrics.pPeople:.6f}")
    print(f"pTrip={metrics.pTrip:.6f}")
    print(f"pEnergy={metrics.pEnergy:.6f}")
    write_manifest(
        args.manifest,
        "simulate",
        {
            "config": args.config or data_path("world.cfg"),
            "genome": args.genome or data_path("demo_genome.txt"),
            "seed": config.rngSeed,
            "faults": ",".join(args.fault or ()) or "-",
            "tap": tap,
            "pPeople": f"{metrics.pPeople:.6f}",
            "pTrip": f"{metrics.pTrip:.6f}",
            "pEnergy": f"{metrics.pEnergy:.6f}",
        },
    )
    return 0


def cmd_evolve(args) -> int:
    config = load_world_config(args.config or data_path("world.cfg"))
    ga_path = args.ga_config or data_path("ga.cfg")
    ga_config = load_ga_config(ga_path)
    if args.seed is not None:
        ga_config = replace(ga_config, rngSeed=args.seed)
    out_path = args.genome or "evolved_genome.txt"
    history_path = out_path + ".history"
    topology = NetworkTopology(hiddenCount=ga_config.hiddenCount)
    broker = Broker(tap=args.tap) if args.tap else Broker()
    try:
        result = run_observer(config, ga_config, topology, broker, history_path=history_path)
    finally:
        broker.close()
    save_genome(out_path, result.best.genes, topology)
    report = result.finalReport
    print(f"fitness={report.fitness:.6f}")
    print(f"pPeople={report.metrics.pPeople:.6f}")
    print(f"pTrip={report.metrics.pTrip:.6f}")
    print(f"pEnergy={report.metrics.pEnergy:.6f}")
    print(f"energyTargetMet={report.energyTargetMet}")
    print(f"peopleTargetMet={report.peopleTargetMet}")
    write_manifest(
        args.manifest,
        "evolve",
        {
            "config": args.config or data_path("world.cfg"),
            "gaConfig": ga_path,
            "seed": ga_config.rngSeed,
            "genomeOut": out_path,
            "history": history_path,
            "fitness": f"{report.fitness:.6f}",
            "energyTargetMet": report.energyTargetMet,
            "peopleTargetMet": report.peopleTargetMet,
        },
    )
    return 0


def run_test_plan(
    cases,
    world_config: WorldConfig,
    genes,
    topology: NetworkTopology,
    faults=(),
    *,
    wallclock: bool = False,
    tap: str | None = None,
    energy_target: float | None = None,
):
    """Execute a parsed plan against one episode; returns (verdicts, report).

    One queue per case, bound to the union of the case's patterns, plus an
    error-monitor queue on ``*.*.*.error.#`` whose events annotate every
    verdict.  Machines consume on their own threads while the episode runs
    under the observer evaluation protocol; the broker close at the end
    releases any machine still waiting.
    """
    if energy_target is None:
        energy_target = DEFAULT_ENERGY_TARGET
    broker = Broker(tap=tap)
    machines = []
    workers = []
    results: dict[str, object] = {}
    lock = threading.Lock()
    try:
        for case in cases:
            patterns = []
            for spec in case.validationSequence:
                for alt in spec.alternatives:
                    if alt not in patterns:
                        patterns.append(alt)
            queue = broker.declare_queue(case.functionName, patterns)
            machine = compile_machine(case)
            machines.append(machine)

            def worker(machine=machine, queue=queue):
                verdict = run_machine(machine, queue, wallclock=wallclock)
                with lock:
                    results[machine.name] = verdict

            thread = threading.Thread(target=worker, daemon=True, name=case.functionName)
            workers.append(thread)
        error_queue = broker.declare_queue("error-monitor", ["*.*.*.error.#"])
        for thread in workers:
            thread.start()
        report, _ = evaluate_solution(
            world_config,
            genes,
            topology,
            broker,
            faults=faults,
            energy_target=energy_target,
            world_logs=True,
        )
    finally:
        broker.close()
    for thread in workers:
        thread.join()

    error_notes = []
    while True:
        try:
            event = error_queue.consume(0.0)
        except QueueClosed:
            break
        if event is None:
            break
        error_notes.append(f"error log: {routing_key(event).encode()} {event.message}")
    verdicts = []
    for case in cases:
        verdict = results[case.functionName]
        if error_notes:
            verdict = replace(verdict, annotations=tuple(error_notes))
        verdicts.append(verdict)
    return verdicts, report


def cmd_test(args) -> int:
    plan_path = args.plan or data_path("default_plan.txt")
    cases = load_test_plan(plan_path)
    config = _load_world(args)
    topology, genes = _load_genome(args)
    faults = _parse_faults(args)
    verdicts, report = run_test_plan(
        cases,
        config,
        genes,
        topology,
        faults,
        wallclock=args.wallclock,
        tap=args.tap,
    )
    for verdict in verdicts:
        print(format_report(verdict))
    print(
        f"episode fitness={report.fitness:.6f} "
        f"energyTargetMet={report.energyTargetMet} peopleTargetMet={report.peopleTargetMet}"
    )
    for verdict in verdicts:
        if verdict.passed:
            print(f"VERDICT {verdict.name} PASS")
        else:
            print(f"VERDICT {verdict.name} FAIL {verdict.failedState}")
    all_passed = all(v.passed for v in verdicts)
    write_manifest(
        args.manifest,
        "test",
        {
            "plan": plan_path,
            "config": args.config or data_path("world.cfg"),
            "genome": args.genome or data_path("demo_genome.txt"),
            "seed": config.rngSeed,
            "faults": ",".join(args.fault or ()) or "-",
            "tap": args.tap or "-",
            "verdicts": " ".join(
                f"{v.name}={'PASS' if v.passed else 'FAIL'}" for v in verdicts
            ),
        },
    )
    return 0 if all_passed else TEST_FAILURE


def cmd_timeline(args) -> int:
    events = load_tap(args.tap)
    pattern = args.pattern
    timeline = [e for e in merge_timeline(events) if matches(pattern, e)]
    for event in timeline:
        print(f"{event.timestamp}\t{routing_key(event).encode()}\t{event.message}")
    write_manifest(
        args.manifest,
        "timeline",
        {"tap": args.tap, "pattern": pattern, "events": len(timeline)},
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="masharness",
        description="Run, evolve, and test the streetlight multi-agent system.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, ga=False, plan=False, tap_required=False):
        p.add_argument("--config", help="world config file (key=value)")
        p.add_argument("--genome", help="genome file")
        p.add_argument("--fault", action="append", metavar="KIND:ID[,ID...]",
                       help="inject a fault (repeatable)")
        p.add_argument("--seed", type=int, help="override the config RNG seed")
        p.add_argument("--manifest", default="manifest.txt", help="run manifest path")
        if ga:
            p.add_argument("--ga-config", help="GA config file (key=value)")
        if plan:
            p.add_argument("--plan", help="test plan file")
            p.add_argument("--wallclock", action="store_true",
                           help="real-time state timeouts instead of simulation ticks")
        p.add_argument("--tap", required=tap_required,
                       help="mirror all published events to this file")

    p_sim = sub.add_parser("simulate", help="run one logged episode")
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_evo = sub.add_parser("evolve", help="run the observer's genetic algorithm")
    common(p_evo, ga=True)
    p_evo.set_defaults(func=cmd_evolve)

    p_test = sub.add_parser("test", help="execute a test plan against one episode")
    common(p_test, plan=True)
    p_test.set_defaults(func=cmd_test)

    p_tl = sub.add_parser("timeline", help="filter and print a tap file")
    p_tl.add_argument("pattern", help="binding pattern to filter by")
    p_tl.add_argument("--tap", required=True, help="tap file to read")
    p_tl.add_argument("--manifest", default="manifest.txt", help="run manifest path")
    p_tl.set_defaults(func=cmd_timeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code else 0
    try:
        return args.func(args)
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
