"""Command-line front end.

  tiernet node --config <file>          run a node daemon
  tiernet api [--port N] [--graph F]    run the management API service
  tiernet shell [--api H:P] [--script F] [--graph F]
                                        interactive/scripted management console

The shell speaks the management grammar (see commands.py). Without --api it
hosts the management service in-process, so `start GMT <config>` bootstraps
locally; with --api every command is sent to a running API service. Output
mirrors the event stream."""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading
import time

from .api import ApiClient, ApiServer
from .commands import (
    Allocate,
    Deallocate,
    Register,
    StartEval,
    StartGmt,
    StartNode,
    Step,
    USAGE,
    parse_command,
)
from .config import load_config
from .errors import TiernetError, UsageError
from .node import NodeDaemon
from .service import ManagementService

log = logging.getLogger(__name__)


class LocalExecutor:
    """Runs commands against an in-process management service."""

    def __init__(self, workdir: str, graph_file=None):
        self.service = ManagementService(workdir=workdir)
        if graph_file:
            self.service.load_graph_file(graph_file)

    def run(self, command):
        return self.service.dispatch(command)

    def events_after(self, seq: int) -> list:
        return [e.as_dict() for e in self.service.events.events_after(seq)]

    def status(self) -> dict:
        return self.service.status()

    def close(self) -> None:
        self.service.close()


class RemoteExecutor:
    """Runs commands against a management API service."""

    def __init__(self, endpoint: str, graph_file=None):
        self.client = ApiClient(endpoint)
        if graph_file:
            with open(graph_file, "r", encoding="utf-8") as f:
                self.client.put("/graph", f.read())

    def run(self, command):
        c = self.client
        if isinstance(command, StartGmt):
            return c.post("/gmt/start", {"config": command.config})
        if isinstance(command, StartNode):
            return c.post(f"/nodes/{command.target}/start")
        if isinstance(command, Register):
            return c.post(f"/nodes/{command.node}/register")
        if isinstance(command, Allocate):
            return c.post(
                "/allocate",
                {
                    "node_id": command.node_id,
                    "tier_type": str(command.tier_type),
                    "config": command.config,
                    "dst_index": command.dst_index,
                    "count": command.count,
                },
            )
        if isinstance(command, Deallocate):
            return c.post(
                "/deallocate",
                {
                    "node_id": command.node_id,
                    "tier_type": str(command.tier_type),
                    "tier_ids": list(command.indices),
                },
            )
        if isinstance(command, StartEval):
            return c.post("/eval/start", {"tier": str(command.tier)})
        if isinstance(command, Step):
            return c.post("/eval/step", {"tier": str(command.tier), "count": command.count})
        raise UsageError(f"cannot execute {command!r}")

    def events_after(self, seq: int) -> list:
        return self.client.events_after(seq)

    def status(self) -> dict:
        return self.client.status()

    def close(self) -> None:
        pass


def _print_events(executor, seq: int, out) -> int:
    try:
        events = executor.events_after(seq)
    except TiernetError:
        return seq
    for event in events:
        print(f"[{event['source']}] {event['level']}: {event['message']}", file=out)
        seq = max(seq, event["seq"])
    return seq


def run_script(executor, lines, keep_going: bool = False, out=sys.stdout) -> int:
    """Execute command lines in order; nonzero exit names the failing line."""
    status = 0
    seq = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        print(f"> {line}", file=out)
        try:
            command = parse_command(line)
            executor.run(command)
        except TiernetError as e:
            print(f"error at line {lineno}: {e}", file=out)
            status = 1
            seq = _print_events(executor, seq, out)
            if not keep_going:
                return status
            continue
        seq = _print_events(executor, seq, out)
    return status


def run_repl(executor, inp=sys.stdin, out=sys.stdout) -> int:
    print("management console; commands:", file=out)
    print(USAGE, file=out)
    print("plus: status | quit", file=out)
    seq = 0
    while True:
        print("> ", end="", file=out, flush=True)
        raw = inp.readline()
        if not raw:
            return 0
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line in ("quit", "exit"):
            return 0
        if line == "status":
            import json

            print(json.dumps(executor.status(), indent=2), file=out)
            continue
        try:
            command = parse_command(line)
            result = executor.run(command)
            if result:
                print(f"ok: {result}", file=out)
        except TiernetError as e:
            print(f"error: {e}", file=out)
        seq = _print_events(executor, seq, out)


def _cmd_node(args) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stdout
    )
    daemon = NodeDaemon(load_config(args.config))
    stop = threading.Event()

    def handle_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGTERM, handle_signal)
    signal.signal(signal.SIGINT, handle_signal)
    daemon.start()
    try:
        while not stop.is_set():
            time.sleep(0.2)
    finally:
        daemon.stop()
    return 0


def _cmd_api(args) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    service = ManagementService(workdir=args.workdir)
    if args.graph:
        service.load_graph_file(args.graph)
    server = ApiServer(service, port=args.port, ui_dir=args.ui)
    print(f"management API on http://{server.endpoint}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        service.close()
    return 0


def _cmd_shell(args) -> int:
    logging.basicConfig(level=logging.WARNING)
    if args.api:
        executor = RemoteExecutor(args.api, graph_file=args.graph)
    else:
        executor = LocalExecutor(args.workdir, graph_file=args.graph)
    try:
        if args.script:
            with open(args.script, "r", encoding="utf-8") as f:
                lines = f.readlines()
            return run_script(executor, lines, keep_going=args.keep_going)
        return run_repl(executor)
    finally:
        executor.close()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tiernet")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_node = sub.add_parser("node", help="run a node daemon")
    p_node.add_argument("--config", required=True, help="node configuration file")
    p_node.set_defaults(fn=_cmd_node)

    p_api = sub.add_parser("api", help="run the management API service")
    p_api.add_argument("--port", type=int, default=None, help="listen port (or TIERNET_PORT)")
    p_api.add_argument("--graph", default=None, help="graph file to load at startup")
    p_api.add_argument("--workdir", default=".", help="directory for configs and run files")
    p_api.add_argument("--ui", default=None, help="directory with the built UI bundle")
    p_api.set_defaults(fn=_cmd_api)

    p_shell = sub.add_parser("shell", help="management console (REPL or script)")
    p_shell.add_argument("--api", default=None, help="API endpoint host:port (default: in-process)")
    p_shell.add_argument("--script", default=None, help="command script to execute")
    p_shell.add_argument("--graph", default=None, help="graph file to load first")
    p_shell.add_argument("--keep-going", action="store_true", help="continue past errors")
    p_shell.add_argument("--workdir", default=".", help="directory for configs (in-process mode)")
    p_shell.set_defaults(fn=_cmd_shell)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except TiernetError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
