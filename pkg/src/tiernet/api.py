"""HTTP management API over the service layer, plus the JSON client the CLI
uses. Endpoints exchange the documented JSON mappings of the domain types:

    GET  /graph                     -> {graph, visuals, findings}
    PUT  /graph                     <- graph JSON document (or saved-file text)
    GET  /graph/file                -> saved key-value text form
    POST /graph/validate            -> {findings: [...]}
    POST /graph/translate           -> {commands: ["start GMT ...", ...]}
    POST /plan/execute              -> {ok, results[], stopped_at?}
    POST /gmt/start                 <- {config}
    POST /nodes/<name>/start        <- {} (graph node) or {config}
    POST /nodes/<name>/stop
    POST /nodes/<name>/register
    POST /allocate                  <- {node_id, tier_type, config, dst_index?, count}
    POST /deallocate                <- {node_id, tier_type, tier_ids[]}
    POST /eval/start                <- {tier}
    POST /eval/step                 <- {tier, count?}
    GET  /status
    GET  /events?from=N             -> server-sent events, seq > N
    GET  /events/list?from=N&limit=M-> {events: [...]} (polling form)

Errors use a structured body {code, message, detail} with a 4xx status.
The listen port comes from --port or the TIERNET_PORT environment variable.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import urllib.error
import urllib.parse
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .errors import CommandError, GraphError, TiernetError, UsageError
from .service import ManagementService

log = logging.getLogger(__name__)

_STATUS_FOR_CODE = {
    "unknown-node": 404,
    "unknown-tier": 404,
    "unknown-dst": 404,
    "not-found": 404,
    "config-not-found": 404,
    "already-running": 409,
    "already-registered": 409,
    "eval-running": 409,
    "timeout": 504,
}


class ApiServer:
    def __init__(
        self,
        service: ManagementService,
        host: str = "127.0.0.1",
        port: Optional[int] = None,
        ui_dir: Optional[str] = None,
    ):
        if port is None:
            port = int(os.environ.get("TIERNET_PORT", "0"))
        self.service = service
        self.ui_dir = ui_dir
        handler = _make_handler(self)
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True
        self._thread: Optional[threading.Thread] = None

    @property
    def endpoint(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "ApiServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        log.info("management API listening on %s", self.endpoint)
        return self

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()


def _make_handler(api: ApiServer):
    service = api.service

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("http: " + fmt, *args)

        # -- plumbing ------------------------------------------------------------

        def _send_json(self, payload, status: int = 200) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _send_error_body(self, code: str, message: str, status: int, detail=None) -> None:
            self._send_json(
                {"code": code, "message": message, "detail": detail or {}}, status=status
            )

        def _read_body(self):
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            if not raw:
                return {}
            content_type = (self.headers.get("Content-Type") or "").split(";")[0].strip()
            if content_type == "text/plain":
                return raw.decode("utf-8")
            try:
                return json.loads(raw.decode("utf-8"))
            except json.JSONDecodeError as e:
                raise GraphError(f"request body is not valid JSON: {e}")

        def _guarded(self, fn) -> None:
            try:
                fn()
            except (BrokenPipeError, ConnectionResetError):
                pass
            except UsageError as e:
                self._send_error_body("usage", str(e), 400)
            except GraphError as e:
                self._send_error_body("graph", str(e), 400)
            except CommandError as e:
                self._send_error_body(e.code, str(e), _STATUS_FOR_CODE.get(e.code, 400), e.detail)
            except TiernetError as e:
                self._send_error_body(e.code, str(e), 400)
            except Exception as e:  # surface crashes as structured 500s
                log.exception("unhandled API error")
                self._send_error_body("internal", str(e), 500)

        # -- methods ----------------------------------------------------------------

        def do_GET(self):
            self._guarded(self._get)

        def do_PUT(self):
            self._guarded(self._put)

        def do_POST(self):
            self._guarded(self._post)

        def _get(self):
            path, _, query = self.path.partition("?")
            params = urllib.parse.parse_qs(query)
            if path == "/graph":
                self._send_json(service.get_graph())
            elif path == "/graph/file":
                text = service.save_graph_text().encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "text/plain; charset=utf-8")
                self.send_header("Content-Length", str(len(text)))
                self.end_headers()
                self.wfile.write(text)
            elif path == "/status":
                self._send_json(service.status())
            elif path == "/events":
                self._stream_events(int(params.get("from", ["0"])[0]))
            elif path == "/events/list":
                seq = int(params.get("from", ["0"])[0])
                limit = int(params.get("limit", ["1000"])[0])
                events = service.events.events_after(seq, limit=limit)
                self._send_json({"events": [e.as_dict() for e in events]})
            elif path == "/" or path.startswith("/ui"):
                self._serve_static(path)
            else:
                self._send_error_body("not-found", f"no such path {path}", 404)

        def _put(self):
            if self.path == "/graph":
                self._send_json(service.put_graph(self._read_body()))
            else:
                self._send_error_body("not-found", f"no such path {self.path}", 404)

        def _post(self):
            path = self.path.split("?")[0]
            body = self._read_body()
            parts = [p for p in path.split("/") if p]
            if path == "/graph/validate":
                self._send_json({"findings": service.validate()})
            elif path == "/graph/translate":
                from .commands import render_command

                commands = service.translate_graph()
                self._send_json({"commands": [render_command(c) for c in commands]})
            elif path == "/plan/execute":
                self._send_json(service.execute_plan())
            elif path == "/gmt/start":
                self._send_json(service.start_gmt(body["config"]))
            elif len(parts) == 3 and parts[0] == "nodes":
                name, action = parts[1], parts[2]
                if action == "start":
                    target = body.get("config") if isinstance(body, dict) else None
                    self._send_json(service.start_node(target or name))
                elif action == "stop":
                    self._send_json(service.stop_node(name))
                elif action == "register":
                    self._send_json(service.register(name))
                else:
                    self._send_error_body("not-found", f"no such action {action}", 404)
            elif path == "/allocate":
                self._send_json(
                    service.allocate(
                        body["node_id"],
                        body["tier_type"],
                        body["config"],
                        dst_index=body.get("dst_index"),
                        count=body.get("count", 1),
                    )
                )
            elif path == "/deallocate":
                self._send_json(
                    service.deallocate(body["node_id"], body["tier_type"], body["tier_ids"])
                )
            elif path == "/eval/start":
                self._send_json(service.start_eval(body["tier"]))
            elif path == "/eval/step":
                self._send_json(service.step(body["tier"], body.get("count", 1)))
            else:
                self._send_error_body("not-found", f"no such path {path}", 404)

        # -- event stream --------------------------------------------------------------

        def _stream_events(self, from_seq: int) -> None:
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            last = from_seq
            oldest = service.events.oldest_retained()
            if from_seq + 1 < oldest:
                dropped = {
                    "seq": oldest - 1,
                    "source": "system",
                    "level": "warn",
                    "message": f"events {from_seq + 1}..{oldest - 1} dropped from ring",
                    "timestamp": 0,
                }
                self._write_event(dropped)
                last = oldest - 1
            try:
                while True:
                    batch = service.events.wait_after(last, timeout=10.0)
                    if not batch:
                        self.wfile.write(b": keepalive\n\n")
                        self.wfile.flush()
                        continue
                    for event in batch:
                        self._write_event(event.as_dict())
                        last = event.seq
            except (BrokenPipeError, ConnectionResetError, OSError):
                return

        def _write_event(self, event: dict) -> None:
            data = json.dumps(event)
            self.wfile.write(f"id: {event['seq']}\ndata: {data}\n\n".encode("utf-8"))
            self.wfile.flush()

        # -- static UI -------------------------------------------------------------------

        def _serve_static(self, path: str) -> None:
            if api.ui_dir is None:
                self._send_error_body("not-found", "no UI bundle configured", 404)
                return
            rel = path[len("/ui") :] if path.startswith("/ui") else path
            rel = rel.lstrip("/") or "index.html"
            full = os.path.normpath(os.path.join(api.ui_dir, rel))
            if not full.startswith(os.path.abspath(api.ui_dir)) or not os.path.isfile(full):
                self._send_error_body("not-found", f"no such file {rel}", 404)
                return
            types = {
                ".html": "text/html; charset=utf-8",
                ".js": "text/javascript",
                ".css": "text/css",
                ".map": "application/json",
                ".svg": "image/svg+xml",
            }
            content_type = types.get(os.path.splitext(full)[1], "application/octet-stream")
            with open(full, "rb") as f:
                data = f.read()
            self.send_response(200)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

    return Handler


class ApiClient:
    """Minimal JSON client for the endpoints above; raises CommandError with
    the server's structured code/message on 4xx/5xx."""

    def __init__(self, endpoint: str, timeout: float = 120.0):
        if "://" not in endpoint:
            endpoint = "http://" + endpoint
        self.base = endpoint.rstrip("/")
        self.timeout = timeout

    def _request(self, method: str, path: str, body=None):
        data = None
        headers = {}
        if body is not None:
            if isinstance(body, str):
                data = body.encode("utf-8")
                headers["Content-Type"] = "text/plain"
            else:
                data = json.dumps(body).encode("utf-8")
                headers["Content-Type"] = "application/json"
        req = urllib.request.Request(
            self.base + path, data=data, headers=headers, method=method
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                raw = resp.read()
        except urllib.error.HTTPError as e:
            raw = e.read()
            try:
                payload = json.loads(raw.decode("utf-8"))
                raise CommandError(
                    payload.get("message", str(e)),
                    code=payload.get("code", "http"),
                    detail=payload.get("detail"),
                ) from None
            except (ValueError, KeyError):
                raise CommandError(f"HTTP {e.code}: {raw[:200]!r}", code="http") from None
        except urllib.error.URLError as e:
            raise CommandError(f"cannot reach API at {self.base}: {e.reason}", code="connect")
        if not raw:
            return {}
        content = raw.decode("utf-8")
        try:
            return json.loads(content)
        except json.JSONDecodeError:
            return content

    def get(self, path: str):
        return self._request("GET", path)

    def put(self, path: str, body):
        return self._request("PUT", path, body)

    def post(self, path: str, body=None):
        return self._request("POST", path, body or {})

    def events_after(self, seq: int, limit: int = 1000) -> list:
        return self.get(f"/events/list?from={seq}&limit={limit}")["events"]

    def status(self) -> dict:
        return self.get("/status")
