"""The manager tier: bootstraps the registration store, assigns node ids and
store endpoints, orchestrates tier allocation/deallocation and evaluations,
and keeps the authoritative registry.

Registrations are served from a single service loop (management throughput is
not a bottleneck at desk scale). Requests addressed to nodes are deposited on
the registration store and their computed results awaited by polling the same
signature, so every observed result provably pairs with its request.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional

from . import protocol
from .config import Configuration, load_config, make_config, serialize_config, validate
from .demand import (
    Demand,
    DemandKind,
    DemandSignature,
    TierId,
    TierType,
    decode_system_body,
    now_ms,
)
from .errors import CommandError, ConfigError, TiernetError
from .schemas import GMT_SCHEMA
from .store import DemandStore
from .transport import Endpoint, StoreServer

log = logging.getLogger(__name__)

DEFAULT_ALLOCATION_TIMEOUT_S = 60.0
DEFAULT_REGISTRATION_TIMEOUT_S = 30.0
RESULT_POLL_S = 0.02


@dataclass
class NodeRecord:
    node_id: int
    name: str
    endpoint: str
    color: str
    status: str  # "registered" | "lost"
    registered_at: int

    def as_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "name": self.name,
            "endpoint": self.endpoint,
            "color": self.color,
            "status": self.status,
            "registered_at": self.registered_at,
        }


@dataclass
class TierRecord:
    tier_id: TierId
    config_name: str
    dst_index: Optional[int]  # None for DST tiers (they are stores themselves)
    endpoint: Optional[str]  # DST tiers only
    status: str  # "running" | "stopped"

    def as_dict(self) -> dict:
        return {
            "tier_id": str(self.tier_id),
            "tier_type": str(self.tier_id.tier_type),
            "node_id": self.tier_id.node_id,
            "config_name": self.config_name,
            "dst_index": self.dst_index,
            "endpoint": self.endpoint,
            "status": self.status,
        }


@dataclass
class EvaluationHandle:
    generator: TierId
    status: str = "idle"  # idle | running | done
    report: Optional[dict] = None
    error: Optional[str] = None

    def as_dict(self) -> dict:
        return {
            "generator": str(self.generator),
            "status": self.status,
            "report": self.report,
            "error": self.error,
        }


class InfoKeeper:
    """Registry of nodes, tiers, and store endpoints; node ids are strictly
    increasing from 1 and store indices are stable once assigned."""

    def __init__(self):
        self._lock = threading.Lock()
        self.nodes: dict = {}  # node_id -> NodeRecord
        self.tiers: dict = {}  # TierId -> TierRecord
        self.dsts: list = []  # index -> endpoint text (0 = registration store)
        self._next_node_id = 1

    def register_node(self, name: str, host: str, color: str) -> NodeRecord:
        with self._lock:
            record = NodeRecord(
                node_id=self._next_node_id,
                name=name,
                endpoint=f"{host}:0",
                color=color,
                status="registered",
                registered_at=now_ms(),
            )
            self._next_node_id += 1
            self.nodes[record.node_id] = record
            return record

    def node(self, node_id: int) -> Optional[NodeRecord]:
        with self._lock:
            return self.nodes.get(node_id)

    def node_by_name(self, name: str) -> Optional[NodeRecord]:
        with self._lock:
            for record in self.nodes.values():
                if record.name == name:
                    return record
            return None

    def set_node_status(self, node_id: int, status: str) -> bool:
        with self._lock:
            record = self.nodes.get(node_id)
            if record is None:
                return False
            record.status = status
            return True

    def add_dst(self, endpoint: str) -> int:
        with self._lock:
            self.dsts.append(endpoint)
            return len(self.dsts) - 1

    def dst_endpoint(self, index: int) -> Optional[str]:
        with self._lock:
            if 0 <= index < len(self.dsts):
                return self.dsts[index]
            return None

    def assigned_dst(self) -> str:
        """Store assigned at registration: latest computational store if one
        exists, otherwise the registration store."""
        with self._lock:
            return self.dsts[-1] if len(self.dsts) > 1 else self.dsts[0]

    def put_tier(self, record: TierRecord) -> None:
        with self._lock:
            self.tiers[record.tier_id] = record

    def tier(self, tier_id: TierId) -> Optional[TierRecord]:
        with self._lock:
            return self.tiers.get(tier_id)

    def remove_tier(self, tier_id: TierId) -> None:
        with self._lock:
            self.tiers.pop(tier_id, None)

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "nodes": {str(i): r.as_dict() for i, r in sorted(self.nodes.items())},
                "tiers": {str(t): r.as_dict() for t, r in sorted(self.tiers.items(), key=lambda kv: str(kv[0]))},
                "dsts": list(self.dsts),
            }


def registry_as_config(snapshot: dict) -> str:
    """Render a registry snapshot in the key-value config format (debugging)."""
    pairs = []
    for node_id, node in sorted(snapshot["nodes"].items(), key=lambda kv: int(kv[0])):
        for k, v in node.items():
            pairs.append((f"net.registry.node.{node_id}.{k}", str(v)))
    for tier_key, tier in snapshot["tiers"].items():
        safe = tier_key.replace(":", ".")
        for k, v in tier.items():
            pairs.append((f"net.registry.tier.{safe}.{k}", str(v)))
    for idx, endpoint in enumerate(snapshot["dsts"]):
        pairs.append((f"net.registry.dst.{idx}", endpoint))
    return serialize_config(make_config(pairs))


class Manager:
    def __init__(
        self,
        config: Optional[Configuration] = None,
        on_event: Optional[Callable[[str, str, str], None]] = None,
    ):
        config = config if config is not None else make_config([])
        findings = [f for f in validate(config, GMT_SCHEMA) if f.severity == "error"]
        if findings:
            reasons = "; ".join(f"{f.key}: {f.reason}" for f in findings)
            raise ConfigError(f"{config.source_name}: invalid manager config: {reasons}")
        self.config = config
        self.identity = protocol.manager_tier_id()
        self._on_event = on_event
        listen = Endpoint.parse(config.get("net.gmt.listen", "127.0.0.1:0"))
        self.store = DemandStore()
        self.server = StoreServer(
            self.store,
            host=listen.host,
            port=listen.port,
            heartbeat_seconds=config.get_float("net.gmt.heartbeat.seconds", 10.0),
            missed_beats=config.get_int("net.gmt.missed.beats", 3),
            on_tier_seen=self._tier_seen,
            on_tier_lost=self._tier_lost,
        )
        self.info = InfoKeeper()
        self.allocation_timeout = config.get_float(
            "net.gmt.allocation.timeout.seconds", DEFAULT_ALLOCATION_TIMEOUT_S
        )
        self.registration_timeout = config.get_float(
            "net.gmt.registration.timeout.seconds", DEFAULT_REGISTRATION_TIMEOUT_S
        )
        self.config_dirs = [config.get("net.config.dir") or "."]
        if config.source_name not in ("<memory>",):
            self.config_dirs.append(os.path.dirname(os.path.abspath(config.source_name)))
        self._seq = 0
        self._seq_lock = threading.Lock()
        self._stop_flag = threading.Event()
        self._service_thread: Optional[threading.Thread] = None
        self.evaluations: dict = {}  # TierId -> EvaluationHandle
        self.exchanges: list = []  # (identifier, request signature, result signature)

    # -- lifecycle ---------------------------------------------------------------

    def bootstrap(self) -> "Manager":
        """Start the registration store and the system-demand service loop."""
        self.server.start()
        self.store.connect_tier(self.identity)
        self.info.add_dst(str(self.endpoint))  # index 0
        self._service_thread = threading.Thread(
            target=self._service_loop, daemon=True, name="manager-service"
        )
        self._service_thread.start()
        self._event("info", f"manager bootstrapped; registration store on {self.endpoint}")
        return self

    @property
    def endpoint(self) -> Endpoint:
        return self.server.endpoint

    def stop(self) -> None:
        self._stop_flag.set()
        self.server.stop()
        if self._service_thread is not None:
            self._service_thread.join(timeout=10)
        self.store.close()

    # -- registration service ------------------------------------------------------

    def _service_loop(self) -> None:
        while not self._stop_flag.is_set():
            try:
                demand = self.store.grab(
                    self.identity,
                    {DemandKind.SYSTEM},
                    context_filter=[protocol.GMT_DIMENSION],
                )
            except TiernetError:
                return
            if demand is None:
                time.sleep(RESULT_POLL_S)
                continue
            self.process_registration(demand)

    def process_registration(self, demand: Demand) -> None:
        try:
            body = decode_system_body(demand.payload)
            if body["kind"] != "NodeRegistration":
                raise ValueError(f"unexpected system demand {body['kind']}")
            record = self.info.register_node(
                name=body.get("name", ""),
                host=body.get("host", "127.0.0.1"),
                color=body.get("color", ""),
            )
            result = {
                "kind": "RegistrationResult",
                "node_id": record.node_id,
                "dst_endpoint": self.info.assigned_dst(),
            }
            self._event(
                "info",
                f"node {record.name!r} registered: node_id={record.node_id} "
                f"assigned_dst={result['dst_endpoint']}",
            )
        except (ValueError, KeyError) as e:
            result = {"kind": "RegistrationResult", "error": f"malformed registration: {e}"}
            self._event("error", f"registration rejected: {e}")
        self.store.return_result(
            self.identity, demand.signature, json.dumps(result, sort_keys=True).encode("utf-8")
        )

    # -- node-addressed commands ----------------------------------------------------

    def _next_seq(self) -> int:
        with self._seq_lock:
            self._seq += 1
            return self._seq

    def _require_live_node(self, node_id: int) -> NodeRecord:
        record = self.info.node(node_id)
        if record is None:
            raise CommandError(f"unknown node {node_id}", code="unknown-node")
        if record.status != "registered":
            raise CommandError(f"node {node_id} ({record.name}) is {record.status}", code="node-lost")
        return record

    def _await_result(self, signature: DemandSignature, timeout: float) -> dict:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            result = self.store.lookup(signature)
            if result is not None:
                # The computed entry is the request demand itself; record the
                # pair so the request/result signature invariant is auditable.
                entry = self.store.entry(signature)
                self.exchanges.append(
                    (signature.identifier, signature, entry.demand.signature)
                )
                return json.loads(result.decode("utf-8"))
            if self._stop_flag.is_set():
                raise CommandError("manager stopping", code="stopping")
            time.sleep(RESULT_POLL_S)
        raise CommandError(
            f"request {signature} timed out after {timeout}s (left cancellable)",
            code="timeout",
        )

    def load_tier_config(self, config_name: str) -> Configuration:
        if os.path.isabs(config_name) and os.path.exists(config_name):
            return load_config(config_name)
        for base in self.config_dirs:
            path = os.path.join(base, config_name)
            if os.path.exists(path):
                return load_config(path, source_name=config_name)
        raise CommandError(f"config file {config_name!r} not found", code="config-not-found")

    def allocate(
        self,
        node_id: int,
        tier_type,
        config_name: str,
        dst_index: Optional[int] = None,
        count: int = 1,
        config_text: Optional[str] = None,
    ) -> list:
        """Allocate `count` tier instances on a registered node.

        DGT/DWT allocations name the store they bind to by index; DST
        allocations take no index and append their new endpoints to the store
        list in allocation order.
        """
        tier_type = TierType(tier_type)
        self._require_live_node(node_id)
        if count < 1:
            raise CommandError("count must be >= 1")
        if tier_type is TierType.GMT:
            raise CommandError("the manager tier is bootstrapped, not allocated")
        dst_endpoint = None
        if tier_type is TierType.DST:
            if dst_index is not None:
                raise CommandError("DST allocation takes no store index")
        else:
            if dst_index is None:
                raise CommandError(f"{tier_type} allocation requires a store index")
            dst_endpoint = self.info.dst_endpoint(dst_index)
            if dst_endpoint is None:
                raise CommandError(f"no store with index {dst_index}", code="unknown-dst")
        if config_text is None:
            config_text = serialize_config(self.load_tier_config(config_name))
        request = protocol.allocation_request(
            self._next_seq(),
            node_id,
            str(tier_type),
            config_name,
            config_text,
            count,
            dst_index,
            dst_endpoint,
            self.identity,
        )
        self.store.deposit(request)
        self._event(
            "info",
            f"allocation requested: node={node_id} type={tier_type} "
            f"config={config_name} dst_index={dst_index} count={count}",
        )
        result = self._await_result(request.signature, self.allocation_timeout)
        if "error" in result:
            raise CommandError(f"allocation failed: {result['error']}")
        registrations = result.get("registrations", [])
        for registration in registrations:
            if not registration.get("ok"):
                self._event("error", f"allocation outcome: {registration.get('error')}")
                continue
            tier_id = TierId.parse(registration["tier"])
            record = TierRecord(
                tier_id=tier_id,
                config_name=config_name,
                dst_index=dst_index,
                endpoint=registration.get("endpoint"),
                status="running",
            )
            if tier_type is TierType.DST:
                record.dst_index = None
                index = self.info.add_dst(registration["endpoint"])
                self._event(
                    "info",
                    f"store {tier_id} online at {registration['endpoint']} (index {index})",
                )
            else:
                self._event("info", f"tier {tier_id} allocated (store index {dst_index})")
            self.info.put_tier(record)
        return registrations

    def deallocate(self, node_id: int, tier_type, tier_ids) -> list:
        """Deallocate tiers by id; per-id outcomes pass through from the node."""
        tier_type = TierType(tier_type)
        self._require_live_node(node_id)
        full_ids = []
        for t in tier_ids:
            if isinstance(t, TierId):
                full_ids.append(t)
            else:
                try:
                    full_ids.append(TierId.parse(str(t)))
                except ValueError:
                    full_ids.append(TierId(node_id, tier_type, int(t)))
        request = protocol.deallocation_request(
            self._next_seq(), node_id, str(tier_type), full_ids, self.identity
        )
        self.store.deposit(request)
        self._event(
            "info",
            f"deallocation requested: node={node_id} type={tier_type} "
            f"tiers={[str(t) for t in full_ids]}",
        )
        result = self._await_result(request.signature, self.allocation_timeout)
        outcomes = result.get("outcomes", [])
        for outcome in outcomes:
            if outcome.get("ok"):
                self.info.remove_tier(TierId.parse(outcome["tier"]))
                self._event("info", f"tier {outcome['tier']} deallocated")
            else:
                self._event(
                    "warn", f"deallocation of {outcome.get('tier')}: {outcome.get('error')}"
                )
        return outcomes

    def start_evaluation(self, generator: TierId) -> EvaluationHandle:
        record = self.info.tier(generator)
        if record is None:
            raise CommandError(f"no allocated tier {generator}", code="unknown-tier")
        if generator.tier_type is not TierType.DGT:
            raise CommandError(f"{generator} is a {generator.tier_type}, not a generator")
        self._require_live_node(generator.node_id)
        handle = self.evaluations.get(generator)
        if handle is not None and handle.status == "running":
            raise CommandError(f"evaluation already running on {generator}", code="eval-running")
        handle = EvaluationHandle(generator=generator, status="running")
        self.evaluations[generator] = handle
        request = protocol.start_evaluation_demand(self._next_seq(), generator, self.identity)
        self.store.deposit(request)
        self._event("info", f"evaluation started on {generator}")

        def wait():
            try:
                result = self._await_result(request.signature, timeout=24 * 3600.0)
            except CommandError as e:
                handle.error = str(e)
                handle.status = "done"
                return
            if "error" in result:
                handle.error = result["error"]
                self._event("error", f"evaluation on {generator} failed: {result['error']}")
            else:
                handle.report = result.get("report")
                self._event(
                    "info",
                    f"evaluation on {generator} done: "
                    f"{handle.report.get('computed')}/{handle.report.get('requested')} computed",
                )
            handle.status = "done"

        threading.Thread(target=wait, daemon=True, name=f"eval-wait-{generator}").start()
        return handle

    def step_generator(self, generator: TierId, count: int = 1) -> dict:
        record = self.info.tier(generator)
        if record is None:
            raise CommandError(f"no allocated tier {generator}", code="unknown-tier")
        request = protocol.step_generator_demand(
            self._next_seq(), generator, count, self.identity
        )
        self.store.deposit(request)
        result = self._await_result(request.signature, timeout=30.0)
        if "error" in result:
            raise CommandError(f"step failed: {result['error']}")
        self._event("info", f"stepped generator {generator} by {count}")
        return result

    def stop_tier(self, tier: TierId) -> dict:
        self._require_live_node(tier.node_id)
        request = protocol.stop_tier_demand(self._next_seq(), tier, self.identity)
        self.store.deposit(request)
        result = self._await_result(request.signature, timeout=30.0)
        if "error" in result:
            raise CommandError(f"stop failed: {result['error']}")
        return result

    # -- views ------------------------------------------------------------------------

    def snapshot(self) -> dict:
        snap = self.info.snapshot()
        snap["evaluations"] = {
            str(t): h.as_dict() for t, h in sorted(self.evaluations.items(), key=lambda kv: str(kv[0]))
        }
        return snap

    # -- liveness ----------------------------------------------------------------------

    def node_session_live(self, node_id: int) -> bool:
        """True once the node's daemon holds a session under its assigned id.

        A node is fully joined only after it consumed its registration result
        and re-identified its store session; callers confirming registration
        must wait for this, or a daemon stopped in that window would leave a
        registry row no session closure can ever mark lost."""
        return self.server.has_session(protocol.daemon_tier_id(node_id))

    def _is_daemon(self, tier: TierId) -> bool:
        return tier.tier_type is TierType.GMT and tier.node_id > 0 and tier.local_index == 0

    def _tier_seen(self, tier: TierId) -> None:
        if self._is_daemon(tier):
            record = self.info.node(tier.node_id)
            if record is not None and record.status != "registered":
                self.info.set_node_status(tier.node_id, "registered")
                self._event("info", f"node {tier.node_id} ({record.name}) reconnected")

    def _tier_lost(self, tier: TierId) -> None:
        if self._is_daemon(tier):
            record = self.info.node(tier.node_id)
            if record is not None and record.status == "registered":
                self.info.set_node_status(tier.node_id, "lost")
                self._event("warn", f"node {tier.node_id} ({record.name}) lost")

    def _event(self, level: str, message: str) -> None:
        log.log(logging.WARNING if level in ("warn", "error") else logging.INFO, "%s", message)
        if self._on_event is not None:
            self._on_event("GMT", level, message)


def bootstrap_gmt(config: Optional[Configuration] = None, on_event=None) -> Manager:
    """Start a manager: registration store listening, empty registry."""
    return Manager(config, on_event=on_event).bootstrap()
