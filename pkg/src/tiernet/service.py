"""The operator-facing engine: graph CRUD, lifecycle actions, status, and the
event log. The HTTP API and the CLI both drive this one class, so a scripted
bootstrap and an executed plan take exactly the same code paths.

The manager runs in-process; node daemons run as child processes by default
(their stdout is folded into the event log) or as in-process threads for
embedded use. Mutating actions are serialized through one lock."""

from __future__ import annotations

import json
import logging
import os
import random
import subprocess
import sys
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Optional

from . import transport
from .commands import (
    Allocate,
    Deallocate,
    Register,
    StartEval,
    StartGmt,
    StartNode,
    Step,
    render_command,
)
from .config import Configuration, load_config, make_config, save_config
from .demand import TierId, TierType, now_ms
from .errors import CommandError, GraphError, TiernetError
from .graph import (
    NetworkGraph,
    assign_visuals,
    graph_as_dict,
    graph_from_dict,
    load_graph,
    save_graph,
    translate,
    validate_graph,
)
from .manager import Manager, bootstrap_gmt
from .node import NodeDaemon
from .store import StoreStats
from .transport import Endpoint

log = logging.getLogger(__name__)

EVENT_RING_SIZE = 100_000
DEFAULT_REGISTER_WAIT_S = 30.0


@dataclass(frozen=True)
class ApiEvent:
    seq: int
    source: str  # "GMT" | "node:<name>" | "tier:<id>" | "system"
    level: str  # "info" | "warn" | "error"
    message: str
    timestamp: int

    def as_dict(self) -> dict:
        return {
            "seq": self.seq,
            "source": self.source,
            "level": self.level,
            "message": self.message,
            "timestamp": self.timestamp,
        }


class EventLog:
    """Append-only, gapless event ring with blocking reads after a sequence
    number. Readers that fall behind the ring are warned once and resume from
    the oldest retained event."""

    def __init__(self, maxlen: int = EVENT_RING_SIZE, sink_path=None):
        self._ring: deque = deque(maxlen=maxlen)
        self._cond = threading.Condition()
        self._seq = 0
        self._sink = open(sink_path, "a", encoding="utf-8") if sink_path else None

    def append(self, source: str, level: str, message: str) -> ApiEvent:
        with self._cond:
            self._seq += 1
            event = ApiEvent(self._seq, source, level, message, now_ms())
            self._ring.append(event)
            if self._sink is not None:
                self._sink.write(json.dumps(event.as_dict()) + "\n")
                self._sink.flush()
            self._cond.notify_all()
        return event

    @property
    def last_seq(self) -> int:
        with self._cond:
            return self._seq

    def events_after(self, seq: int, limit: Optional[int] = None) -> list:
        with self._cond:
            out = [e for e in self._ring if e.seq > seq]
        return out[:limit] if limit is not None else out

    def oldest_retained(self) -> int:
        with self._cond:
            return self._ring[0].seq if self._ring else self._seq + 1

    def wait_after(self, seq: int, timeout: float = 15.0) -> list:
        """Block until events with seq greater than `seq` exist (or timeout)."""
        deadline = time.monotonic() + timeout
        with self._cond:
            while self._seq <= seq:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return []
                self._cond.wait(remaining)
            return [e for e in self._ring if e.seq > seq]

    def close(self) -> None:
        if self._sink is not None:
            self._sink.close()
            self._sink = None


_LOG_LEVELS = {"DEBUG": "info", "INFO": "info", "WARNING": "warn", "ERROR": "error", "CRITICAL": "error"}


class NodeHandle:
    def __init__(self, name: str, mode: str, proc=None, daemon=None, config_path=None):
        self.name = name
        self.mode = mode  # "process" | "thread"
        self.proc = proc
        self.daemon = daemon
        self.config_path = config_path

    @property
    def running(self) -> bool:
        if self.mode == "process":
            return self.proc is not None and self.proc.poll() is None
        return self.daemon is not None and not self.daemon._stop_flag.is_set()

    def stop(self) -> None:
        if self.mode == "process" and self.proc is not None and self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait(timeout=10)
        elif self.mode == "thread" and self.daemon is not None:
            self.daemon.stop()


class ManagementService:
    def __init__(
        self,
        workdir: str = ".",
        node_runner: str = "process",
        event_sink_path=None,
    ):
        self.workdir = os.path.abspath(workdir)
        self.rundir = os.path.join(self.workdir, "run")
        self.node_runner = node_runner
        self.events = EventLog(sink_path=event_sink_path)
        self.graph: Optional[NetworkGraph] = None
        self.manager: Optional[Manager] = None
        self.nodes: dict = {}  # name -> NodeHandle
        self._confirmed_registrations: set = set()
        self._lock = threading.RLock()
        self._closed = False

    # -- graph ---------------------------------------------------------------------

    def put_graph(self, data) -> dict:
        """Accept a graph as a JSON document or saved-file text; last write wins."""
        if isinstance(data, str):
            graph = load_graph(data)
        elif isinstance(data, dict):
            graph = graph_from_dict(data)
        elif isinstance(data, NetworkGraph):
            graph = data
        else:
            raise GraphError(f"cannot load a graph from {type(data).__name__}")
        with self._lock:
            self.graph = graph
        self.events.append("system", "info", f"graph loaded: {len(graph.tiers)} tiers")
        return self.get_graph()

    def load_graph_file(self, path) -> dict:
        with open(path, "r", encoding="utf-8") as f:
            return self.put_graph(f.read())

    def get_graph(self) -> dict:
        with self._lock:
            graph = self.graph
        if graph is None:
            return {"graph": None, "visuals": None, "findings": []}
        return {
            "graph": graph_as_dict(graph),
            "visuals": assign_visuals(graph).as_dict(),
            "findings": [f.as_dict() for f in validate_graph(graph)],
        }

    def save_graph_text(self) -> str:
        with self._lock:
            if self.graph is None:
                raise GraphError("no graph loaded")
            return save_graph(self.graph)

    def validate(self) -> list:
        with self._lock:
            if self.graph is None:
                raise GraphError("no graph loaded")
            return [f.as_dict() for f in validate_graph(self.graph)]

    def translate_graph(self) -> list:
        with self._lock:
            if self.graph is None:
                raise GraphError("no graph loaded")
            return translate(self.graph)

    # -- manager -------------------------------------------------------------------

    def start_gmt(self, config_name: str) -> dict:
        with self._lock:
            if self.manager is not None:
                raise CommandError("manager already running", code="already-running")
            config = self._load_config(config_name)
            self.manager = bootstrap_gmt(config, on_event=self.events.append)
        return {"endpoint": str(self.manager.endpoint)}

    def _require_manager(self) -> Manager:
        if self.manager is None:
            raise CommandError("manager is not running", code="gmt-not-running")
        return self.manager

    def _load_config(self, config_name: str) -> Configuration:
        path = config_name
        if not os.path.isabs(path):
            path = os.path.join(self.workdir, config_name)
        if not os.path.exists(path):
            raise CommandError(f"config file {config_name!r} not found", code="config-not-found")
        return load_config(path, source_name=config_name)

    # -- nodes ---------------------------------------------------------------------

    def start_node(self, target: str) -> dict:
        """Start a node daemon for a graph node name, or from a config file."""
        with self._lock:
            manager = self._require_manager()
            graph_node = self.graph.node(target) if self.graph is not None else None
            if graph_node is not None:
                name = graph_node.name
                config = make_config(
                    [
                        ("net.node.name", name),
                        ("net.node.host", graph_node.host),
                        ("net.node.color", graph_node.color),
                        ("net.node.gmt.endpoint", str(manager.endpoint)),
                    ]
                )
                os.makedirs(self.rundir, exist_ok=True)
                config_path = os.path.join(self.rundir, f"{name}.config")
                save_config(config, config_path)
            else:
                config = self._load_config(target)
                name = config.get("net.node.name")
                if name is None:
                    raise CommandError(f"node config {target!r} misses net.node.name")
                if config.get("net.node.gmt.endpoint") is None:
                    config = config.set("net.node.gmt.endpoint", str(manager.endpoint))
                os.makedirs(self.rundir, exist_ok=True)
                config_path = os.path.join(self.rundir, f"{name}.config")
                save_config(config, config_path)
            handle = self.nodes.get(name)
            if handle is not None and handle.running:
                raise CommandError(f"node {name!r} already running", code="already-running")
            if self.node_runner == "process":
                handle = self._spawn_node_process(name, config_path)
            else:
                daemon = NodeDaemon(load_config(config_path)).start()
                handle = NodeHandle(name, "thread", daemon=daemon, config_path=config_path)
            self.nodes[name] = handle
        self.events.append("system", "info", f"node {name!r} started ({self.node_runner})")
        return {"name": name, "running": True}

    def _spawn_node_process(self, name: str, config_path: str) -> NodeHandle:
        env = dict(os.environ)
        src_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
        env["PYTHONPATH"] = src_dir + os.pathsep + env.get("PYTHONPATH", "")
        proc = subprocess.Popen(
            [sys.executable, "-m", "tiernet", "node", "--config", config_path],
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            text=True,
            env=env,
            cwd=self.workdir,
        )
        threading.Thread(
            target=self._pump_node_output, args=(name, proc), daemon=True
        ).start()
        return NodeHandle(name, "process", proc=proc, config_path=config_path)

    def _pump_node_output(self, name: str, proc) -> None:
        source = f"node:{name}"
        for line in proc.stdout:
            line = line.rstrip("\n")
            if not line:
                continue
            level = "info"
            first = line.split(" ", 1)[0]
            if first in _LOG_LEVELS:
                level = _LOG_LEVELS[first]
                line = line[len(first) + 1 :]
            self.events.append(source, level, line)
        code = proc.wait()
        self.events.append(source, "warn" if code else "info", f"node process exited ({code})")

    def stop_node(self, name: str) -> dict:
        with self._lock:
            handle = self.nodes.get(name)
            if handle is None:
                raise CommandError(f"unknown node {name!r}", code="unknown-node")
            was_running = handle.running
            handle.stop()
        self.events.append(
            "system", "info", f"node {name!r} stopped" if was_running else f"node {name!r} already stopped"
        )
        return {"name": name, "running": False}

    def register(self, name: str, timeout: float = DEFAULT_REGISTER_WAIT_S) -> dict:
        """Confirm the node's registration (daemons register on start).

        A second register for the same node is rejected with a structured
        error, matching the non-idempotent underlying operation."""
        manager = self._require_manager()
        with self._lock:
            if name in self._confirmed_registrations:
                raise CommandError(f"node {name!r} already registered", code="already-registered")
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            record = manager.info.node_by_name(name)
            if (
                record is not None
                and record.status == "registered"
                and manager.node_session_live(record.node_id)
            ):
                with self._lock:
                    self._confirmed_registrations.add(name)
                return record.as_dict()
            time.sleep(0.05)
        raise CommandError(f"node {name!r} did not register within {timeout}s", code="timeout")

    # -- tier lifecycle ---------------------------------------------------------------

    def allocate(self, node_id, tier_type, config_name, dst_index=None, count=1) -> list:
        manager = self._require_manager()
        config = self._load_config(config_name)
        from .config import serialize_config

        return manager.allocate(
            int(node_id),
            tier_type,
            config_name,
            dst_index=dst_index if dst_index is None else int(dst_index),
            count=int(count),
            config_text=serialize_config(config),
        )

    def deallocate(self, node_id, tier_type, tier_ids) -> list:
        manager = self._require_manager()
        return manager.deallocate(int(node_id), tier_type, tier_ids)

    def start_eval(self, tier) -> dict:
        manager = self._require_manager()
        tier = tier if isinstance(tier, TierId) else TierId.parse(str(tier))
        return manager.start_evaluation(tier).as_dict()

    def step(self, tier, count: int = 1) -> dict:
        manager = self._require_manager()
        tier = tier if isinstance(tier, TierId) else TierId.parse(str(tier))
        return manager.step_generator(tier, int(count))

    # -- plan execution -----------------------------------------------------------------

    def dispatch(self, command) -> object:
        """Execute one parsed Command against this service."""
        if isinstance(command, StartGmt):
            return self.start_gmt(command.config)
        if isinstance(command, StartNode):
            return self.start_node(command.target)
        if isinstance(command, Register):
            return self.register(command.node)
        if isinstance(command, Allocate):
            return self.allocate(
                command.node_id,
                command.tier_type,
                command.config,
                dst_index=command.dst_index,
                count=command.count,
            )
        if isinstance(command, Deallocate):
            return self.deallocate(command.node_id, command.tier_type, list(command.indices))
        if isinstance(command, StartEval):
            return self.start_eval(command.tier)
        if isinstance(command, Step):
            return self.step(command.tier, command.count)
        raise CommandError(f"cannot dispatch {command!r}")

    def execute_plan(self) -> dict:
        """Translate the loaded graph and run the commands in order, stopping
        at the first failure; components already started are left running."""
        commands = self.translate_graph()
        results = []
        for position, command in enumerate(commands):
            rendered = render_command(command)
            self.events.append("system", "info", f"plan[{position}]: {rendered}")
            try:
                outcome = self.dispatch(command)
                results.append({"position": position, "command": rendered, "ok": True,
                                "outcome": outcome})
            except TiernetError as e:
                self.events.append("system", "error", f"plan[{position}] failed: {e}")
                results.append(
                    {"position": position, "command": rendered, "ok": False, "error": str(e)}
                )
                return {"ok": False, "stopped_at": position, "results": results}
        return {"ok": True, "results": results}

    # -- status -----------------------------------------------------------------------

    def status(self) -> dict:
        """Registry snapshot plus live store probes; entities come only from
        the registry and the service's own node handles."""
        out = {
            "gmt": {"running": self.manager is not None},
            "nodes": {},
            "registry": None,
            "dsts": [],
            "events_seq": self.events.last_seq,
        }
        with self._lock:
            handles = dict(self.nodes)
        for name, handle in handles.items():
            out["nodes"][name] = {"running": handle.running, "mode": handle.mode}
        manager = self.manager
        if manager is None:
            return out
        out["gmt"]["endpoint"] = str(manager.endpoint)
        snapshot = manager.snapshot()
        out["registry"] = snapshot
        for index, endpoint in enumerate(snapshot["dsts"]):
            entry = {"index": index, "endpoint": endpoint, "stats": None}
            stats = self._probe_store(endpoint)
            if stats is not None:
                entry["stats"] = stats.as_dict()
            out["dsts"].append(entry)
        return out

    def _probe_store(self, endpoint: str) -> Optional[StoreStats]:
        probe = TierId(0, TierType.GMT, random.randrange(1 << 20, 1 << 30))
        try:
            session = transport.connect(Endpoint.parse(endpoint), probe, timeout=2.0)
        except TiernetError:
            return None
        try:
            return session.stats()
        except TiernetError:
            return None
        finally:
            session.close()

    # -- shutdown ------------------------------------------------------------------------

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
            handles = list(self.nodes.values())
        for handle in handles:
            try:
                handle.stop()
            except Exception:
                log.exception("stopping node %s failed", handle.name)
        if self.manager is not None:
            self.manager.stop()
        self.events.close()
