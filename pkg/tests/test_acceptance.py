"""Acceptance suite: one test per criterion, each printing a PASS line with
its measured figures. Run with `pytest tests/test_acceptance.py -v -s`."""

import io
import random
import threading
import time

import pytest

from tiernet.cli import RemoteExecutor, run_script
from tiernet.api import ApiServer
from tiernet.commands import render_command
from tiernet.config import make_config, parse_config
from tiernet.demand import (
    Complete,
    Demand,
    DemandKind,
    Grab,
    Pending,
    Requeue,
    TierId,
    TierType,
    transition,
)
from tiernet.errors import StateMachineError
from tiernet.graph import load_graph, save_graph, translate
from tiernet.manager import bootstrap_gmt
from tiernet.node import NodeDaemon
from tiernet.service import ManagementService
from tiernet.store import AlreadyComputed, DemandStore
from tiernet.tiers import WorkerTier, checksum64, instantiate_tier
from tiernet.transport import StoreServer, connect

from conftest import LISTING_DGT_CONFIG, example_graph, make_demand, worker_id
from test_service_api import write_configs

ALL_KINDS = set(DemandKind)


def report(name, detail):
    print(f"\nACCEPTANCE {name}: PASS ({detail})")


def test_demand_state_machine_randomized():
    """>= 10k random event sequences: no out-of-machine state, illegal events
    always error; runtime < 10 s."""
    started = time.perf_counter()
    rng = random.Random(2024)
    legal = {"pending": {"grab"}, "processing": {"complete", "requeue"}, "computed": set()}
    next_state = {"grab": "processing", "complete": "computed", "requeue": "pending"}
    sequences = 10_000
    illegal_seen = 0
    for i in range(sequences):
        demand = make_demand(context=(("seq", i),))
        for _ in range(rng.randint(1, 10)):
            name = rng.choice(("grab", "complete", "requeue"))
            event = {
                "grab": Grab(worker_id(rng.randint(1, 4))),
                "complete": Complete(b"r"),
                "requeue": Requeue(),
            }[name]
            state = demand.state.name
            assert state in legal, f"out-of-machine state {state}"
            if name in legal[state]:
                demand = transition(demand, event)
                assert demand.state.name == next_state[name]
            else:
                illegal_seen += 1
                with pytest.raises(StateMachineError):
                    transition(demand, event)
        assert demand.state.name in legal
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0, f"state-machine suite took {elapsed:.1f}s"
    report(
        "demand-state-machine",
        f"{sequences} sequences, {illegal_seen} illegal events rejected, {elapsed:.2f}s",
    )


def test_exclusive_grab_eight_workers():
    """8 workers x 1000 demands on one store: every demand computed exactly
    once, zero duplicate completions, over 20 repetitions; runtime < 60 s."""
    started = time.perf_counter()
    repetitions = 20
    demands_per_rep = 1000
    workers = [worker_id(i) for i in range(1, 9)]
    total_duplicates = 0
    for rep in range(repetitions):
        store = DemandStore()
        for w in workers:
            store.connect_tier(w)
        signatures = []
        for k in range(demands_per_rep):
            d = make_demand(identifier=f"r{rep}", context=(("k", k),), payload=k.to_bytes(4, "big"))
            store.deposit(d)
            signatures.append(d.signature)
        completions = {}
        lock = threading.Lock()

        def drain(w):
            local = []
            while True:
                demand = store.grab(w, ALL_KINDS)
                if demand is None:
                    break
                store.return_result(w, demand.signature, checksum64(demand.payload))
                local.append(demand.signature)
            with lock:
                for sig in local:
                    completions[sig] = completions.get(sig, 0) + 1

        threads = [threading.Thread(target=drain, args=(w,)) for w in workers]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        stats = store.stats()
        assert stats.count("computed") == demands_per_rep
        assert set(completions) == set(signatures)
        duplicates = sum(1 for n in completions.values() if n != 1)
        total_duplicates += duplicates
        assert duplicates == 0
    elapsed = time.perf_counter() - started
    assert elapsed < 60.0, f"exclusive-grab suite took {elapsed:.1f}s"
    report(
        "exclusive-grab",
        f"{repetitions} reps x {demands_per_rep} demands, "
        f"duplicate completions {total_duplicates}, {elapsed:.1f}s",
    )


HEARTBEAT_S = 0.2
MISSED = 3


def _sequential_oracle(demands, work):
    """Single-worker sequential run on a fresh store; the failure-free result set."""
    store = DemandStore()
    w = worker_id(1)
    store.connect_tier(w)
    for d in demands:
        store.deposit(d)
    results = {}
    while True:
        got = store.grab(w, ALL_KINDS)
        if got is None:
            break
        store.return_result(w, got.signature, work(got.payload))
        results[got.signature] = store.lookup(got.signature)
    return results


def _failsafe_scenario():
    """Shared by the fail-safe and memoization criteria: run 200 demands over
    a live store server with 2 workers, killing one mid-run."""
    demands = [
        make_demand(identifier="job", context=(("k", k),), payload=bytes([k % 256] * 16))
        for k in range(200)
    ]
    worker_config = make_config(
        [
            ("gipsy.GEE.multitier.wrapper.impl", "worker"),
            ("net.work.function", "sleep-then-checksum"),
            ("net.work.delay.ms", "2"),
            ("net.worker.poll.ms", "1"),
        ]
    )
    oracle = _sequential_oracle(demands, lambda p: checksum64(p))

    store = DemandStore()
    server = StoreServer(store, heartbeat_seconds=HEARTBEAT_S, missed_beats=MISSED).start()
    w1 = WorkerTier(TierId(1, TierType.DWT, 1), worker_config, server.endpoint)
    w2 = WorkerTier(TierId(1, TierType.DWT, 2), worker_config, server.endpoint)
    w1.start()
    w2.start()
    feeder = connect(server.endpoint, TierId(1, TierType.DGT, 1))
    for d in demands:
        feeder.deposit(d)

    dead_tier = w1.id
    while store.stats().count("computed") < 80:
        time.sleep(0.002)
    kill_time = time.monotonic()
    w1.kill()

    # fail-safe bound: nothing held by the dead tier within 3x heartbeat
    bound = kill_time + 3 * HEARTBEAT_S
    while time.monotonic() < bound:
        if all(holder != dead_tier for holder in store.holders().values()):
            break
        time.sleep(0.005)
    held_by_dead = [s for s, h in store.holders().items() if h == dead_tier]
    requeue_elapsed = time.monotonic() - kill_time

    deadline = time.monotonic() + 60
    while store.stats().count("computed") < 200 and time.monotonic() < deadline:
        time.sleep(0.01)
    results = {d.signature: store.lookup(d.signature) for d in demands}
    w2.stop()
    feeder.close()
    return store, server, demands, oracle, results, held_by_dead, requeue_elapsed


@pytest.fixture(scope="module")
def failsafe_run():
    store, server, demands, oracle, results, held_by_dead, requeue_elapsed = _failsafe_scenario()
    yield store, demands, oracle, results, held_by_dead, requeue_elapsed
    server.stop()
    store.close()


def test_failsafe_requeue(failsafe_run):
    """Kill 1 of 2 workers mid-run of 200 demands: all 200 reach computed,
    byte-equal to the sequential oracle; dead tier holds nothing within
    3x heartbeat of the kill."""
    store, demands, oracle, results, held_by_dead, requeue_elapsed = failsafe_run
    assert held_by_dead == [], f"dead tier still held {len(held_by_dead)} demands"
    assert requeue_elapsed < 3 * HEARTBEAT_S + 0.5
    assert all(v is not None for v in results.values()), "some demands never computed"
    assert results == oracle, "results differ from failure-free sequential run"
    report(
        "failsafe-requeue",
        f"200/200 computed after kill, requeue within {requeue_elapsed * 1000:.0f} ms "
        f"(bound {3 * HEARTBEAT_S * 1000:.0f} ms), byte-equal to oracle",
    )


def test_memoization_after_failsafe_run(failsafe_run):
    """Re-depositing all 200 signatures: 200 AlreadyComputed answers,
    cache_hits == 200, no new processing entries."""
    store, demands, oracle, results, _, _ = failsafe_run
    before = store.stats()
    assert before.cache_hits == 0
    hits = 0
    for d in demands:
        outcome = store.deposit(
            Demand(signature=d.signature, kind=d.kind, state=Pending(),
                   payload=d.payload, issued_by=d.issued_by)
        )
        assert isinstance(outcome, AlreadyComputed)
        assert outcome.result == oracle[d.signature]
        hits += 1
    after = store.stats()
    assert hits == 200
    assert after.cache_hits == 200
    assert after.count("processing") == 0
    assert after.count("computed") == before.count("computed")
    report("memoization", "200 re-deposits -> 200 AlreadyComputed, cache_hits=200")


STORE_CONFIG_TEXT = "gipsy.GEE.multitier.wrapper.impl=store\n"
WORKER_CONFIG_TEXT = (
    "gipsy.GEE.multitier.wrapper.impl=worker\n"
    "net.work.function=checksum\n"
    "net.worker.poll.ms=2\n"
)
GENERATOR_CONFIG_TEXT = LISTING_DGT_CONFIG + "net.sim.poll.ms=1\n"


def test_registration_allocation_protocol():
    """GMT + 2 nodes -> node ids {1,2}; allocating 1 DST + 1 DGT + 2 DWT yields
    exactly the hand-derived registry; result signatures pair with requests."""
    manager = bootstrap_gmt(make_config([("net.gmt.heartbeat.seconds", "0.5")]))
    daemons = []
    try:
        for name in ("n1", "n2"):
            config = make_config(
                [("net.node.name", name), ("net.node.gmt.endpoint", str(manager.endpoint))]
            )
            daemon = NodeDaemon(config).start()
            daemon.wait_registered(timeout=15)
            daemons.append(daemon)
        assert [d.node_id for d in daemons] == [1, 2]

        manager.allocate(1, "DST", "dst.config", count=1, config_text=STORE_CONFIG_TEXT)
        manager.allocate(1, "DGT", "dgt.config", dst_index=1, count=1,
                         config_text=GENERATOR_CONFIG_TEXT)
        manager.allocate(2, "DWT", "dwt.config", dst_index=1, count=2,
                         config_text=WORKER_CONFIG_TEXT)

        snapshot = manager.snapshot()
        expected_nodes = {
            "1": {"name": "n1", "status": "registered"},
            "2": {"name": "n2", "status": "registered"},
        }
        for node_id, expected in expected_nodes.items():
            actual = snapshot["nodes"][node_id]
            assert actual["name"] == expected["name"]
            assert actual["status"] == expected["status"]
        expected_tiers = {
            "1:DST:1": {"tier_type": "DST", "node_id": 1, "dst_index": None,
                        "config_name": "dst.config", "status": "running"},
            "1:DGT:1": {"tier_type": "DGT", "node_id": 1, "dst_index": 1,
                        "config_name": "dgt.config", "status": "running"},
            "2:DWT:1": {"tier_type": "DWT", "node_id": 2, "dst_index": 1,
                        "config_name": "dwt.config", "status": "running"},
            "2:DWT:2": {"tier_type": "DWT", "node_id": 2, "dst_index": 1,
                        "config_name": "dwt.config", "status": "running"},
        }
        assert set(snapshot["tiers"].keys()) == set(expected_tiers.keys())
        for tier_id, expected in expected_tiers.items():
            actual = snapshot["tiers"][tier_id]
            for key, value in expected.items():
                assert actual[key] == value, f"{tier_id}.{key}: {actual[key]} != {value}"
        assert len(snapshot["dsts"]) == 2  # registration store + allocated DST

        allocation_exchanges = [e for e in manager.exchanges if e[0] == "allocate"]
        assert len(allocation_exchanges) == 3
        for _, request_sig, result_sig in allocation_exchanges:
            assert request_sig == result_sig
        report(
            "registration-allocation",
            f"node ids {{1,2}}, registry of {len(expected_tiers)} tiers matches, "
            f"{len(allocation_exchanges)} request/result signature pairs equal",
        )
    finally:
        for daemon in daemons:
            daemon.stop()
        manager.stop()


def test_listing_fidelity_mode2_run():
    """The verbatim sample generator config parses to 6 pairs and drives a
    mode-2 run to completion: exactly tester.number computed demands with
    nonzero latency samples."""
    config = parse_config(LISTING_DGT_CONFIG)
    assert len(config.pairs) == 6
    tester_number = config.get_int("gipsy.tests.GEE.simulator.tester.number")
    assert tester_number == 2
    assert config.get_int("gipsy.tests.GEE.simulator.demand.payload") == 32

    store_tier = instantiate_tier(
        parse_config(STORE_CONFIG_TEXT), TierId(1, TierType.DST, 1)
    )
    store_tier.start()
    worker = instantiate_tier(
        parse_config(WORKER_CONFIG_TEXT), TierId(1, TierType.DWT, 1), store_tier.endpoint
    )
    worker.start()
    generator = instantiate_tier(
        config.set("net.sim.poll.ms", "1"), TierId(1, TierType.DGT, 1), store_tier.endpoint
    )
    generator.start()
    try:
        generator_report = generator.evaluate()
        assert generator_report.mode == 2
        assert generator_report.computed == tester_number
        assert len(generator_report.latency_samples) == tester_number
        assert all(sample > 0 for sample in generator_report.latency_samples)
    finally:
        generator.stop()
        worker.stop()
        store_tier.stop()
    report(
        "listing-fidelity",
        f"6 pairs parsed; mode-2 run computed {generator_report.computed} demands, "
        f"latencies {[f'{s * 1000:.1f}ms' for s in generator_report.latency_samples]}",
    )


def _normalize_registry(snapshot):
    """Strip volatile fields (ephemeral ports, timestamps) for comparison."""
    nodes = {
        node_id: {"name": r["name"], "color": r["color"], "status": r["status"]}
        for node_id, r in snapshot["nodes"].items()
    }
    tiers = {
        tier_id: {
            "tier_type": r["tier_type"],
            "node_id": r["node_id"],
            "config_name": r["config_name"],
            "dst_index": r["dst_index"],
            "status": r["status"],
        }
        for tier_id, r in snapshot["tiers"].items()
    }
    return {"nodes": nodes, "tiers": tiers, "dst_count": len(snapshot["dsts"])}


def test_graph_lifecycle_end_to_end(tmp_path):
    """Reference topology: programmatic build, save/load equality, translation
    order, execute-plan with child node processes, then an evaluation run to
    completion; everything on localhost in under 2 minutes."""
    started = time.perf_counter()
    g = example_graph()

    text = save_graph(g)
    assert load_graph(text) == g

    commands = [render_command(c) for c in translate(g)]
    assert commands == [
        "start GMT gmt.config",
        "start node node1",
        "register node1",
        "allocate 1 DST dst.config 1",
        "allocate 1 DGT dgt.config 1 1",
        "allocate 1 DWT dwt.config 1 2",
    ]

    write_configs(tmp_path)
    (tmp_path / "net.graph").write_text(text)
    service = ManagementService(workdir=str(tmp_path), node_runner="process")
    try:
        service.load_graph_file(str(tmp_path / "net.graph"))
        outcome = service.execute_plan()
        assert outcome["ok"], outcome
        registry = service.manager.snapshot()
        assert sorted(registry["tiers"].keys()) == [
            "1:DGT:1", "1:DST:1", "1:DWT:1", "1:DWT:2",
        ]
        service.start_eval("1:DGT:1")
        generator = TierId.parse("1:DGT:1")
        deadline = time.monotonic() + 60
        while time.monotonic() < deadline:
            handle = service.manager.evaluations[generator]
            if handle.status == "done":
                break
            time.sleep(0.05)
        assert handle.status == "done" and handle.error is None
        assert handle.report["computed"] == 2
    finally:
        service.close()
    elapsed = time.perf_counter() - started
    assert elapsed < 120.0, f"scenario took {elapsed:.1f}s"
    report(
        "graph-lifecycle",
        f"roundtrip + translate + plan + evaluation in {elapsed:.1f}s "
        f"(child node process, localhost)",
    )


def test_cli_api_equivalence(tmp_path):
    """Bootstrapping the same graph via a CLI script and via execute-plan
    yields identical final registries (modulo ports/timestamps)."""
    g = example_graph()
    script_lines = [render_command(c) for c in translate(g)]

    plan_dir = tmp_path / "plan"
    plan_dir.mkdir()
    write_configs(plan_dir)
    plan_service = ManagementService(workdir=str(plan_dir), node_runner="process")
    plan_service.put_graph(save_graph(g))
    try:
        outcome = plan_service.execute_plan()
        assert outcome["ok"], outcome
        plan_registry = _normalize_registry(plan_service.manager.snapshot())
    finally:
        plan_service.close()

    cli_dir = tmp_path / "cli"
    cli_dir.mkdir()
    write_configs(cli_dir)
    (cli_dir / "net.graph").write_text(save_graph(g))
    cli_service = ManagementService(workdir=str(cli_dir), node_runner="process")
    api_server = ApiServer(cli_service, port=0).start()
    try:
        executor = RemoteExecutor(api_server.endpoint, graph_file=str(cli_dir / "net.graph"))
        out = io.StringIO()
        status = run_script(executor, script_lines, out=out)
        assert status == 0, out.getvalue()
        cli_registry = _normalize_registry(cli_service.manager.snapshot())
    finally:
        api_server.stop()
        cli_service.close()

    assert cli_registry == plan_registry
    report(
        "cli-api-equivalence",
        f"registries identical: {len(plan_registry['tiers'])} tiers, "
        f"{len(plan_registry['nodes'])} nodes, {plan_registry['dst_count']} stores",
    )
