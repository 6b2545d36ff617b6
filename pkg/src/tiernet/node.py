"""The node daemon: one OS process hosting tier instances.

On start it registers with the manager by depositing a NodeRegistration
demand on the registration store and polling for the computed result, which
carries the assigned node id and store endpoint. It then serves system
demands addressed to its node id: tier allocation, deallocation, evaluation
start, generator steps, and tier stops.

Allocation and deallocation run serially in the service loop; evaluations run
in their own threads and post their reports back through a completion queue
so the single store session is never used concurrently. Results the daemon
has already computed are cached by signature: if the session drops and a
request it was serving gets requeued and re-grabbed, the cached result is
returned instead of executing the request twice.
"""

from __future__ import annotations

import json
import logging
import queue
import random
import threading
import time
from dataclasses import dataclass
from typing import Optional

from . import protocol, transport
from .config import Configuration, validate
from .demand import (
    Demand,
    DemandKind,
    TierId,
    TierType,
    decode_system_body,
)
from .errors import (
    CommandError,
    ConfigError,
    TiernetError,
    TransportError,
)
from .schemas import NODE_SCHEMA
from .tiers import GeneratorTier, StoreTier, instantiate_tier
from .transport import Endpoint, Session

log = logging.getLogger(__name__)

REGISTRATION_POLL_S = 0.05
SERVICE_POLL_S = 0.05
DEFAULT_REGISTRATION_TIMEOUT_S = 30.0


@dataclass
class NodeIdentity:
    name: str
    endpoint: Endpoint
    color: str = ""
    node_id: Optional[int] = None  # absent until registration completes


class NodeDaemon:
    def __init__(self, config: Configuration, gmt_endpoint: Optional[Endpoint] = None):
        findings = [f for f in validate(config, NODE_SCHEMA) if f.severity == "error"]
        if findings:
            reasons = "; ".join(f"{f.key}: {f.reason}" for f in findings)
            raise ConfigError(f"{config.source_name}: invalid node config: {reasons}")
        self.config = config
        name = config.get("net.node.name")
        host = config.get("net.node.host", "127.0.0.1")
        self.identity = NodeIdentity(
            name=name,
            endpoint=Endpoint(host, 0),
            color=config.get("net.node.color", ""),
        )
        hosts_gmt = config.get("net.node.hosts.gmt", "false").strip() == "true"
        raw_endpoint = config.get("net.node.gmt.endpoint")
        if gmt_endpoint is not None:
            self.gmt_endpoint = gmt_endpoint
        elif raw_endpoint is not None:
            self.gmt_endpoint = Endpoint.parse(raw_endpoint)
        elif hosts_gmt:
            self.gmt_endpoint = None
        else:
            raise ConfigError(
                f"{config.source_name}: net.node.gmt.endpoint required "
                "(or net.node.hosts.gmt=true)"
            )
        self.registration_timeout = config.get_float(
            "net.node.registration.timeout.seconds", DEFAULT_REGISTRATION_TIMEOUT_S
        )
        self.tiers: dict = {}  # TierId -> TierInstance
        self._index_counters: dict = {}  # TierType -> next local index
        self._session: Optional[Session] = None
        self._assigned_session: Optional[Session] = None
        self._stop_flag = threading.Event()
        self._registered = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._completions: "queue.Queue" = queue.Queue()
        self._done_results: dict = {}  # signature -> result bytes (re-grab cache)
        self._evaluating: set = set()

    # -- lifecycle -------------------------------------------------------------

    def start(self) -> "NodeDaemon":
        """Start the daemon: empty tier table, registration being attempted."""
        self._thread = threading.Thread(target=self._main, daemon=True, name="node-daemon")
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop_flag.set()
        for instance in list(self.tiers.values()):
            try:
                instance.stop()
            except TiernetError:
                log.exception("stopping tier %s failed", instance.id)
        for session in (self._session, self._assigned_session):
            if session is not None:
                session.close()
        if self._thread is not None:
            self._thread.join(timeout=30)

    @property
    def node_id(self) -> Optional[int]:
        return self.identity.node_id

    def wait_registered(self, timeout: float = 60.0) -> int:
        if not self._registered.wait(timeout):
            raise CommandError(f"node {self.identity.name} did not register within {timeout}s")
        return self.identity.node_id

    # -- registration ----------------------------------------------------------

    def register_once(self, timeout: Optional[float] = None) -> NodeIdentity:
        """One registration attempt against the configured registration store."""
        if self.gmt_endpoint is None:
            raise CommandError("node has no registration endpoint configured")
        timeout = timeout if timeout is not None else self.registration_timeout
        nonce = random.randrange(1, 2**31)
        me = protocol.unregistered_tier_id(nonce)
        session = transport.connect(self.gmt_endpoint, me)
        try:
            demand = protocol.registration_demand(
                self.identity.name,
                self.identity.endpoint.host,
                self.identity.color,
                nonce,
                me,
            )
            session.deposit(demand)
            deadline = time.monotonic() + timeout
            while time.monotonic() < deadline and not self._stop_flag.is_set():
                result = session.lookup(demand.signature)
                if result is not None:
                    body = json.loads(result.decode("utf-8"))
                    if "error" in body:
                        raise CommandError(f"registration rejected: {body['error']}")
                    self.identity.node_id = int(body["node_id"])
                    assigned = Endpoint.parse(body["dst_endpoint"])
                    session.rebind(protocol.daemon_tier_id(self.identity.node_id))
                    self._session = session
                    self._connect_assigned(assigned)
                    self._registered.set()
                    log.info(
                        "node %s registered: node_id=%d assigned_dst=%s",
                        self.identity.name,
                        self.identity.node_id,
                        assigned,
                    )
                    return self.identity
                time.sleep(REGISTRATION_POLL_S)
        except TransportError:
            session.close()
            raise
        session.close()
        raise CommandError(
            f"registration of node {self.identity.name} timed out after {timeout}s"
        )

    def _connect_assigned(self, assigned: Endpoint) -> None:
        # The assigned store is the node's default demand channel; the session
        # is kept alive for liveness but system demands stay on the
        # registration store.
        if assigned == self.gmt_endpoint:
            return
        try:
            me = protocol.daemon_tier_id(self.identity.node_id)
            self._assigned_session = transport.connect(assigned, me)
            self._assigned_session.start_keepalive(
                self.config.get_float("net.keepalive.seconds", 10.0)
            )
        except TransportError as e:
            log.warning("could not connect to assigned store %s: %s", assigned, e)

    # -- service loop ------------------------------------------------------------

    def _main(self) -> None:
        backoff = 0.1
        while not self._stop_flag.is_set():
            if not self._registered.is_set():
                try:
                    self.register_once()
                    backoff = 0.1
                except TiernetError as e:
                    log.warning("registration attempt failed: %s", e)
                    if self._stop_flag.wait(backoff):
                        return
                    backoff = min(backoff * 2, 5.0)
                    continue
            try:
                self._serve()
            except TransportError as e:
                log.warning("store session lost (%s); reconnecting", e)
                self._reconnect(backoff)
                backoff = min(backoff * 2, 5.0)

    def _reconnect(self, backoff: float) -> None:
        if self._stop_flag.wait(backoff):
            return
        try:
            me = protocol.daemon_tier_id(self.identity.node_id)
            self._session = transport.connect(self.gmt_endpoint, me)
        except TransportError:
            pass

    def _serve(self) -> None:
        session = self._session
        while not self._stop_flag.is_set():
            drained = self._drain_completions(session)
            demand = session.grab(
                {DemandKind.SYSTEM}, context_filter=[("node", self.identity.node_id)]
            )
            if demand is None:
                if not drained:
                    time.sleep(SERVICE_POLL_S)
                continue
            self._handle(session, demand)

    def _drain_completions(self, session: Session) -> bool:
        drained = False
        while True:
            try:
                signature, result = self._completions.get_nowait()
            except queue.Empty:
                return drained
            drained = True
            self._done_results[signature] = result
            try:
                session.return_result(signature, result)
            except TransportError:
                # put back; the reconnected session retries
                self._completions.put((signature, result))
                raise
            except TiernetError as e:
                log.info("completion for %s rejected (%s); cached for re-grab", signature, e)

    def _handle(self, session: Session, demand: Demand) -> None:
        cached = self._done_results.get(demand.signature)
        if cached is not None:
            session.return_result(demand.signature, cached)
            return
        try:
            body = decode_system_body(demand.payload)
        except ValueError as e:
            self._finish(session, demand, {"error": f"malformed system demand: {e}"})
            return
        kind = body["kind"]
        log.info("node %s serving %s", self.identity.name, kind)
        if kind == "TierAllocationRequest":
            self._finish(session, demand, self.serve_allocation(body))
        elif kind == "TierDeallocationRequest":
            self._finish(session, demand, self.serve_deallocation(body))
        elif kind == "StartEvaluation":
            self._start_evaluation(session, demand, body)
        elif kind == "StepGenerator":
            self._finish(session, demand, self._serve_step(body))
        elif kind == "StopTier":
            self._finish(session, demand, self._serve_stop(body))
        else:
            self._finish(session, demand, {"error": f"unsupported system demand {kind}"})

    def _finish(self, session: Session, demand: Demand, result: dict) -> None:
        raw = json.dumps(result, sort_keys=True).encode("utf-8")
        self._done_results[demand.signature] = raw
        try:
            session.return_result(demand.signature, raw)
        except TransportError:
            raise
        except TiernetError as e:
            log.info("result for %s rejected (%s); cached for re-grab", demand.signature, e)

    # -- handlers ------------------------------------------------------------------

    def serve_allocation(self, body: dict) -> dict:
        """Instantiate and start `count` tiers; per-instance outcomes."""
        from .config import parse_config

        registrations = []
        if int(body["node_id"]) != self.identity.node_id:
            return {"kind": "TierAllocationResult", "error": "wrong node", "registrations": []}
        dst = Endpoint.parse(body["dst_endpoint"]) if body.get("dst_endpoint") else None
        for _ in range(int(body["count"])):
            try:
                config = parse_config(body["config_text"], source_name=body["config_name"])
                requested = TierType(body["tier_type"])
                index = self._next_index(requested)
                tier_id = TierId(self.identity.node_id, requested, index)
                instance = instantiate_tier(config, tier_id, dst)
                if instance.tier_type != requested:
                    raise ConfigError(
                        f"config {body['config_name']} instantiates "
                        f"{instance.tier_type}, not {requested}"
                    )
                instance.start()
                self.tiers[tier_id] = instance
                registration = {
                    "ok": True,
                    "tier": str(tier_id),
                    "tier_type": str(requested),
                    "config_name": body["config_name"],
                }
                if isinstance(instance, StoreTier):
                    registration["endpoint"] = str(instance.endpoint)
                registrations.append(registration)
                log.info("allocated %s (%s)", tier_id, body["config_name"])
            except (TiernetError, ValueError) as e:
                registrations.append({"ok": False, "error": str(e)})
        return {
            "kind": "TierAllocationResult",
            "node_id": self.identity.node_id,
            "registrations": registrations,
        }

    def serve_deallocation(self, body: dict) -> dict:
        outcomes = []
        for text in body["tier_ids"]:
            try:
                tier_id = TierId.parse(text)
            except ValueError as e:
                outcomes.append({"tier": text, "ok": False, "error": str(e)})
                continue
            instance = self.tiers.get(tier_id)
            if instance is None:
                outcomes.append({"tier": text, "ok": False, "error": "not found"})
                continue
            try:
                instance.stop()
                del self.tiers[tier_id]
                outcomes.append({"tier": text, "ok": True})
                log.info("deallocated %s", tier_id)
            except TiernetError as e:
                outcomes.append({"tier": text, "ok": False, "error": str(e)})
        return {
            "kind": "TierDeallocationResult",
            "node_id": self.identity.node_id,
            "outcomes": outcomes,
        }

    def _start_evaluation(self, session: Session, demand: Demand, body: dict) -> None:
        try:
            generator = self._generator(body["generator"])
        except CommandError as e:
            self._finish(session, demand, {"error": str(e)})
            return
        if generator.id in self._evaluating:
            self._finish(session, demand, {"error": f"evaluation already running on {generator.id}"})
            return
        self._evaluating.add(generator.id)

        def run():
            try:
                report = generator.evaluate()
                result = {"report": report.as_dict()}
            except TiernetError as e:
                result = {"error": str(e)}
            finally:
                self._evaluating.discard(generator.id)
            self._completions.put(
                (demand.signature, json.dumps(result, sort_keys=True).encode("utf-8"))
            )

        threading.Thread(target=run, daemon=True, name=f"eval-{generator.id}").start()

    def _serve_step(self, body: dict) -> dict:
        try:
            generator = self._generator(body["generator"])
        except CommandError as e:
            return {"error": str(e)}
        generator.step(int(body.get("count", 1)))
        return {"ok": True}

    def _serve_stop(self, body: dict) -> dict:
        try:
            tier_id = TierId.parse(body["tier"])
        except ValueError as e:
            return {"error": str(e)}
        instance = self.tiers.get(tier_id)
        if instance is None:
            return {"error": f"tier {tier_id} not found"}
        instance.stop()
        return {"ok": True}

    def _generator(self, text: str) -> GeneratorTier:
        try:
            tier_id = TierId.parse(text)
        except ValueError as e:
            raise CommandError(str(e))
        instance = self.tiers.get(tier_id)
        if instance is None:
            raise CommandError(f"tier {tier_id} not found")
        if not isinstance(instance, GeneratorTier):
            raise CommandError(f"tier {tier_id} is a {instance.tier_type}, not a generator")
        return instance

    def _next_index(self, tier_type: TierType) -> int:
        index = self._index_counters.get(tier_type, 1)
        self._index_counters[tier_type] = index + 1
        return index
