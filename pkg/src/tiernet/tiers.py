"""Tier implementations and the configuration-driven tier factory.

Tier classes are chosen by a name -> constructor registry keyed on the
configuration's implementation key, so a config file fully determines what
gets instantiated. Three tier kinds run here: the store tier (a DemandStore
behind a StoreServer), the simulator generator with its four emission modes,
and the worker that grabs procedural demands and returns computed results.
"""

from __future__ import annotations

import logging
import random
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import transport
from .config import (
    KEY_IMPL,
    KEY_SIM_MODE,
    KEY_SIM_NUMBER,
    KEY_SIM_PARAMETER,
    KEY_SIM_PAYLOAD,
    Configuration,
    validate,
)
from .demand import (
    Demand,
    DemandKind,
    Pending,
    TierId,
    TierType,
    fnv1a64,
    make_signature,
    now_ms,
)
from .errors import ConfigError, FactoryError, TiernetError, TransportError
from .store import DemandStore
from .transport import Endpoint, Session, StoreServer

log = logging.getLogger(__name__)

DEFAULT_KEEPALIVE_SECONDS = 10.0
DEFAULT_WORKER_POLL_MS = 100
DEFAULT_GENERATOR_POLL_MS = 2

# Emission modes of the simulator generator.
MODE_CONCURRENT = 0  # emit everything, do not await results
MODE_STEPPED = 1  # emit per user step signal
MODE_RESPONSE_TIME = 2  # one at a time, record round-trip latency
MODE_SPACE_SCALABILITY = 3  # parallel streams


# --- work functions -----------------------------------------------------------


@dataclass(frozen=True)
class WorkFunction:
    """Named, deterministic payload transformation applied by workers."""

    name: str
    fn: Callable[[bytes], bytes]

    def __call__(self, payload: bytes) -> bytes:
        return self.fn(payload)


def checksum64(payload: bytes) -> bytes:
    return struct.pack(">Q", fnv1a64(payload))


def make_work_function(name: str, delay_ms: int = 5) -> WorkFunction:
    if name == "echo":
        return WorkFunction("echo", lambda p: bytes(p))
    if name == "checksum":
        return WorkFunction("checksum", checksum64)
    if name == "sleep-then-checksum":

        def slow(p: bytes) -> bytes:
            time.sleep(delay_ms / 1000.0)
            return checksum64(p)

        return WorkFunction("sleep-then-checksum", slow)
    raise FactoryError(f"unknown work function {name!r}")


WORK_FUNCTION_NAMES = ("echo", "checksum", "sleep-then-checksum")


def demand_payload(seed: int, index: int, size: int) -> bytes:
    """Deterministic pseudo-random payload for the index-th simulator demand."""
    if size <= 0:
        return b""
    return random.Random(f"{seed}:{index}").randbytes(size)


def simulator_signature(program_id: str, index: int):
    return make_signature(program_id, "sim", [("seq", index)])


# --- simulator parameters -----------------------------------------------------


@dataclass(frozen=True)
class SimulatorParams:
    mode: int
    tester_parameter: int
    instance_count: int
    payload_size_bytes: int
    max_demands: int
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (0, 1, 2, 3):
            raise ConfigError(f"simulator mode must be 0-3, got {self.mode}")
        if self.payload_size_bytes < 0:
            raise ConfigError("payload size must be >= 0")
        if self.max_demands < 1:
            raise ConfigError("max demands must be >= 1")

    @classmethod
    def from_config(cls, config: Configuration) -> "SimulatorParams":
        number = config.get_int(KEY_SIM_NUMBER, 1)
        return cls(
            mode=config.get_int(KEY_SIM_MODE, 0),
            tester_parameter=config.get_int(KEY_SIM_PARAMETER, 1),
            instance_count=number,
            payload_size_bytes=config.get_int(KEY_SIM_PAYLOAD, 32),
            max_demands=config.get_int("net.sim.max.demands", number),
            seed=config.get_int("net.sim.seed", 0),
        )


@dataclass
class GeneratorReport:
    mode: int
    requested: int
    program_id: str
    emitted: int = 0
    computed: int = 0
    latency_samples: list = field(default_factory=list)  # seconds, mode 2/3 only
    interruptions: int = 0
    started_ms: int = 0
    finished_ms: int = 0

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "requested": self.requested,
            "program_id": self.program_id,
            "emitted": self.emitted,
            "computed": self.computed,
            "latency_samples": list(self.latency_samples),
            "interruptions": self.interruptions,
            "started_ms": self.started_ms,
            "finished_ms": self.finished_ms,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorReport":
        return cls(**data)


# --- tier instances -----------------------------------------------------------

_STATUS_ORDER = ("created", "running", "stopping", "stopped")


class TierInstance:
    """Base runtime unit: owns an id, a config, and a created->running->
    stopping->stopped lifecycle. Subclasses run as independent threads."""

    tier_type: TierType

    def __init__(self, tier_id: TierId, config: Configuration, assigned_dst: Optional[Endpoint] = None):
        self.id = tier_id
        self.config = config
        self.assigned_dst = assigned_dst
        self._status = "created"
        self._status_lock = threading.Lock()

    @property
    def status(self) -> str:
        return self._status

    def _set_status(self, new: str) -> None:
        with self._status_lock:
            if _STATUS_ORDER.index(new) < _STATUS_ORDER.index(self._status):
                raise TiernetError(
                    f"tier {self.id}: cannot move from {self._status} to {new}"
                )
            self._status = new

    def start(self) -> None:
        self._set_status("running")

    def stop(self) -> None:
        if self._status in ("stopping", "stopped"):
            self._status = "stopped"
            return
        self._set_status("stopping")
        self._shutdown()
        self._set_status("stopped")

    def _shutdown(self) -> None:
        pass

    def _keepalive_interval(self) -> float:
        return self.config.get_float("net.keepalive.seconds", DEFAULT_KEEPALIVE_SECONDS)

    def _connect(self) -> Session:
        if self.assigned_dst is None:
            raise TiernetError(f"tier {self.id} has no assigned store endpoint")
        session = transport.connect(self.assigned_dst, self.id)
        return session


class StoreTier(TierInstance):
    """Hosts a DemandStore behind a listening StoreServer."""

    tier_type = TierType.DST

    def __init__(self, tier_id, config, assigned_dst=None):
        super().__init__(tier_id, config, assigned_dst)
        listen = config.get("net.store.listen", "127.0.0.1:0")
        self._listen = Endpoint.parse(listen)
        self.store = DemandStore(journal_path=config.get("net.store.journal"))
        self.server = StoreServer(
            self.store,
            host=self._listen.host,
            port=self._listen.port,
            heartbeat_seconds=config.get_float("net.store.heartbeat.seconds", 10.0),
            missed_beats=config.get_int("net.store.missed.beats", 3),
        )

    @property
    def endpoint(self) -> Endpoint:
        return self.server.endpoint

    def start(self) -> None:
        self.server.start()
        super().start()
        log.info("store tier %s listening on %s", self.id, self.endpoint)

    def _shutdown(self) -> None:
        self.server.stop()
        self.store.close()


class GeneratorTier(TierInstance):
    """Simulator demand generator; emission behaviour is set by `mode`."""

    tier_type = TierType.DGT

    def __init__(self, tier_id, config, assigned_dst=None):
        super().__init__(tier_id, config, assigned_dst)
        self.params = SimulatorParams.from_config(config)
        self._steps = threading.Semaphore(0)
        self._stop_flag = threading.Event()
        self._report_lock = threading.Lock()
        self._poll_s = config.get_int("net.sim.poll.ms", DEFAULT_GENERATOR_POLL_MS) / 1000.0
        self.report: Optional[GeneratorReport] = None

    def step(self, count: int = 1) -> None:
        """Release `count` step permits (mode 1)."""
        for _ in range(max(1, count)):
            self._steps.release()

    def evaluate(self, program_id: Optional[str] = None) -> GeneratorReport:
        """Run one full demand-driven evaluation; blocks until done or stopped."""
        params = self.params
        if program_id is None:
            program_id = self.config.get("net.sim.program") or f"sim-{self.id}-{now_ms()}"
        report = GeneratorReport(
            mode=params.mode,
            requested=params.max_demands,
            program_id=program_id,
            started_ms=now_ms(),
        )
        self.report = report
        session = self._connect_with_retry(report)
        try:
            if params.mode == MODE_CONCURRENT:
                self._run_concurrent(session, report)
            elif params.mode == MODE_STEPPED:
                self._run_stepped(session, report)
            elif params.mode == MODE_RESPONSE_TIME:
                self._run_sync(session, report, range(params.max_demands))
            elif params.mode == MODE_SPACE_SCALABILITY:
                self._run_streams(report)
        finally:
            report.finished_ms = now_ms()
            if session is not None and session.open:
                session.close()
        log.info(
            "generator %s finished: %d/%d computed, %d samples",
            self.id,
            report.computed,
            report.requested,
            len(report.latency_samples),
        )
        return report

    # mode 0: emit everything without awaiting results
    def _run_concurrent(self, session, report) -> None:
        for k in range(self.params.max_demands):
            if self._stop_flag.is_set():
                return
            session = self._deposit_with_retry(session, report, k)
            report.emitted += 1
        for k in range(report.emitted):
            sig = simulator_signature(report.program_id, k)
            if session.lookup(sig) is not None:
                report.computed += 1

    # mode 1: emit tester_parameter demands per user step signal
    def _run_stepped(self, session, report) -> None:
        session.start_keepalive(self._keepalive_interval())
        batch = max(1, self.params.tester_parameter)
        k = 0
        while k < self.params.max_demands and not self._stop_flag.is_set():
            if not self._steps.acquire(timeout=0.1):
                continue
            for _ in range(min(batch, self.params.max_demands - k)):
                session = self._deposit_with_retry(session, report, k)
                report.emitted += 1
                k += 1
        for j in range(report.emitted):
            sig = simulator_signature(report.program_id, j)
            if session.lookup(sig) is not None:
                report.computed += 1

    # mode 2: synchronous, one in-flight demand, per-demand round-trip latency
    def _run_sync(self, session, report, indices) -> None:
        for k in indices:
            if self._stop_flag.is_set():
                return
            t0 = time.perf_counter()
            session, result = self._emit_and_await(session, report, k)
            if result is None:
                return
            with self._report_lock:
                report.latency_samples.append(time.perf_counter() - t0)
                report.computed += 1

    # mode 3: tester_parameter parallel streams, each synchronous
    def _run_streams(self, report) -> None:
        streams = max(1, self.params.tester_parameter)
        shares = [range(s, self.params.max_demands, streams) for s in range(streams)]
        threads = []
        for share in shares:
            def run(indices=share):
                session = self._connect_with_retry(report)
                try:
                    self._run_sync(session, report, indices)
                finally:
                    if session is not None and session.open:
                        session.close()

            t = threading.Thread(target=run, daemon=True)
            t.start()
            threads.append(t)
        for t in threads:
            t.join()

    def _demand(self, program_id: str, k: int) -> Demand:
        return Demand(
            signature=simulator_signature(program_id, k),
            kind=DemandKind.PROCEDURAL,
            state=Pending(),
            payload=demand_payload(self.params.seed, k, self.params.payload_size_bytes),
            issued_by=self.id,
        )

    def _emit_and_await(self, session, report, k: int):
        session = self._deposit_with_retry(session, report, k)
        with self._report_lock:
            report.emitted += 1
        sig = simulator_signature(report.program_id, k)
        while not self._stop_flag.is_set():
            try:
                result = session.lookup(sig)
            except TransportError:
                with self._report_lock:
                    report.interruptions += 1
                session = self._connect_with_retry(report)
                if session is None:
                    return None, None
                continue
            if result is not None:
                return session, result
            time.sleep(self._poll_s)
        return session, None

    def _deposit_with_retry(self, session, report, k: int):
        demand = self._demand(report.program_id, k)
        while True:
            try:
                session.deposit(demand)
                return session
            except TransportError:
                with self._report_lock:
                    report.interruptions += 1
                session = self._connect_with_retry(report)
                if session is None:
                    raise TransportError("generator stopped during reconnect")

    def _connect_with_retry(self, report):
        delay = 0.05
        while not self._stop_flag.is_set():
            try:
                return self._connect()
            except TransportError:
                with self._report_lock:
                    report.interruptions += 1
                time.sleep(delay)
                delay = min(delay * 2, 2.0)
        return None

    def _shutdown(self) -> None:
        self._stop_flag.set()
        self._steps.release()


class WorkerTier(TierInstance):
    """Grabs procedural demands, applies its work function, returns results."""

    tier_type = TierType.DWT

    def __init__(self, tier_id, config, assigned_dst=None):
        super().__init__(tier_id, config, assigned_dst)
        name = config.get("net.work.function", "checksum")
        delay_ms = config.get_int("net.work.delay.ms", 5)
        self.work = make_work_function(name, delay_ms)
        self._poll_s = config.get_int("net.worker.poll.ms", DEFAULT_WORKER_POLL_MS) / 1000.0
        self._stop_flag = threading.Event()
        self._killed = False
        self._thread: Optional[threading.Thread] = None
        self._session: Optional[Session] = None
        self.processed = 0

    def start(self) -> None:
        super().start()
        self._thread = threading.Thread(
            target=self._loop, daemon=True, name=f"worker-{self.id}"
        )
        self._thread.start()

    def _loop(self) -> None:
        session = None
        delay = 0.05
        while not self._stop_flag.is_set():
            if session is None or not session.open:
                if self._killed:
                    return
                try:
                    session = self._connect()
                    self._session = session
                    delay = 0.05
                except TransportError:
                    time.sleep(delay)
                    delay = min(delay * 2, 2.0)
                    continue
            try:
                demand = session.grab({DemandKind.PROCEDURAL})
            except TiernetError:
                session = None
                continue
            if demand is None:
                time.sleep(self._poll_s)
                continue
            result = self.work(demand.payload)
            try:
                session.return_result(demand.signature, result)
                self.processed += 1
            except TransportError:
                session = None  # demand requeues server-side
            except TiernetError as e:
                log.info("worker %s result for %s rejected: %s", self.id, demand.signature, e)
        if session is not None:
            session.close()

    def kill(self) -> None:
        """Simulate abrupt failure: drop the socket mid-work, no cleanup."""
        self._killed = True
        self._stop_flag.set()
        session = self._session
        if session is not None:
            session.kill()

    def _shutdown(self) -> None:
        self._stop_flag.set()
        if self._thread is not None:
            self._thread.join(timeout=30)


# --- factory ------------------------------------------------------------------

# Registry mapping implementation names (as written in config files) to tier
# classes. The long dotted names keep legacy simulator configs instantiable.
TIER_IMPLEMENTATIONS = {
    "store": StoreTier,
    "sim-generator": GeneratorTier,
    "worker": WorkerTier,
    "gipsy.tests.GEE.simulator.DGTSimulator": GeneratorTier,
}

# Transport implementations selectable via the dispatcher key.
TRANSPORT_IMPLEMENTATIONS = {
    "tcp": "tcp",
    "gipsy.GEE.IDP.DemandGenerator.jini.rmi.JiniDemandDispatcher": "tcp",
}


def lookup_tier_impl(name: str):
    return TIER_IMPLEMENTATIONS.get(name)


def lookup_transport_impl(name: str):
    return TRANSPORT_IMPLEMENTATIONS.get(name)


def instantiate_tier(
    config: Configuration,
    tier_id: Optional[TierId] = None,
    assigned_dst: Optional[Endpoint] = None,
) -> TierInstance:
    """Build (but do not start) the tier the configuration names.

    The implementation key selects the class from the registry; the config is
    validated against that tier type's schema before construction.
    """
    from .schemas import schema_for  # late import: schemas reference registries

    impl_name = config.get(KEY_IMPL)
    if impl_name is None:
        raise FactoryError(f"{config.source_name}: missing implementation key {KEY_IMPL}")
    cls = lookup_tier_impl(impl_name.strip())
    if cls is None:
        raise FactoryError(f"{config.source_name}: unknown implementation {impl_name!r}")
    findings = [
        f for f in validate(config, schema_for(cls.tier_type)) if f.severity == "error"
    ]
    if findings:
        reasons = "; ".join(f"{f.key}: {f.reason}" for f in findings)
        raise ConfigError(f"{config.source_name}: invalid {cls.tier_type} config: {reasons}")
    if tier_id is None:
        tier_id = TierId(0, cls.tier_type, 0)
    return cls(tier_id, config, assigned_dst)
