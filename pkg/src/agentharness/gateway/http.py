"""JSON HTTP API over the harness.

Every endpoint is a thin stateless mapping onto module operations; the CLI
and the web UI converge on the same permission bridge through it. The event
stream is long-poll: GET /events?since=<seq> blocks until events newer than
the cursor exist (or the wait expires) and returns newline-delimited JSON.
"""

from __future__ import annotations

import json
import re
import threading
import time
import urllib.parse
from collections import deque
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from ..errors import (
    AlreadyResolvedError,
    AmbiguityError,
    HarnessError,
    InvalidStateError,
    InvalidVariantError,
    NotFoundError,
    ValidationError,
    WaitTimeoutError,
)
from ..memory import RetrievalQuery
from ..permbridge import Decision

EVENT_RING_SIZE = 1000


class EventRing:
    """Recent events with global sequence cursor for long-polling."""

    def __init__(self, bus, size: int = EVENT_RING_SIZE):
        self._events: deque = deque(maxlen=size)
        self._cond = threading.Condition()
        bus.subscribe(None, sink=self._push, buffer_size=1)

    def _push(self, event) -> None:
        with self._cond:
            self._events.append(event)
            self._cond.notify_all()

    def since(self, cursor: int, wait: float = 0.0) -> list:
        deadline = time.monotonic() + wait
        with self._cond:
            while True:
                fresh = [e for e in self._events if e.seq > cursor]
                if fresh or wait <= 0:
                    return fresh
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return []
                self._cond.wait(timeout=min(remaining, 1.0))


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


def _status_for(exc: Exception) -> int:
    if isinstance(exc, AlreadyResolvedError):
        return 409
    if isinstance(exc, (NotFoundError,)):
        return 404
    if isinstance(
        exc, (ValidationError, InvalidVariantError, AmbiguityError, ValueError, InvalidStateError)
    ):
        return 400
    if isinstance(exc, WaitTimeoutError):
        return 408
    return 500


def decision_from_json(body: dict) -> Decision:
    variant = body.get("variant")
    if variant == "approve":
        return Decision.approve()
    if variant == "deny":
        return Decision.deny(body.get("reason"))
    if variant == "modify":
        return Decision.modify(body.get("new_arguments") or {})
    if variant == "answer":
        return Decision.answer(body.get("text") or "")
    raise ApiError(400, f"unknown decision variant {variant!r}")


class GatewayServer:
    def __init__(self, harness, host: str = "127.0.0.1", port: int = 0, token: str = "",
                 static_dir: Path | None = None):
        self.harness = harness
        self.token = token
        self.ring = EventRing(harness.bus)
        self.static_dir = static_dir
        handler = self._make_handler()
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    @property
    def base_url(self) -> str:
        host = self.httpd.server_address[0]
        return f"http://{host}:{self.port}"

    def start(self) -> "GatewayServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    # -- routing --------------------------------------------------------------

    def handle(self, method: str, path: str, query: dict, body: dict) -> tuple[int, object]:
        h = self.harness
        if method == "GET" and path == "/agents":
            return 200, [
                {"name": a.name, "folder": a.folder, "channel": a.channel}
                for a in h.registry.list()
            ]
        if method == "POST" and path == "/agents":
            identity = h.registry.register(
                body["folder"],
                name=body.get("name"),
                channel=body.get("channel", "cli"),
                workspace=body.get("workspace"),
            )
            return 201, {"folder": identity.folder, "name": identity.name}
        if method == "GET" and path == "/approvals":
            return 200, [req.to_json() for req in h.bridge.list_pending()]
        match = re.fullmatch(r"/approvals/([^/]+)/resolve", path)
        if method == "POST" and match:
            h.bridge.resolve(match.group(1), decision_from_json(body))
            return 200, {"resolved": match.group(1)}
        match = re.fullmatch(r"/sessions/([^/]+)/turns", path)
        if method == "POST" and match:
            session = h.session(match.group(1))
            reply, events = session.submit_turn(body["text"])
            return 200, {
                "reply": reply,
                "session_id": session.id,
                "events": [json.loads(e.to_json()) for e in events],
            }
        match = re.fullmatch(r"/sessions/([^/]+)/context", path)
        if method == "GET" and match:
            session = h.session(match.group(1))
            return 200, {"session_id": session.id, "messages": session.context_snapshot()}
        if method == "GET" and path == "/events":
            since = int(query.get("since", ["0"])[0])
            wait = min(float(query.get("wait", ["0"])[0]), 55.0)
            events = self.ring.since(since, wait)
            ndjson = "\n".join(e.to_json() for e in events)
            return 200, ("application/x-ndjson", ndjson)
        if method == "GET" and path == "/hooks":
            return 200, [
                {
                    "hook_id": reg.hook_id,
                    "event": reg.event,
                    "capability": reg.capability,
                    "order": reg.order,
                }
                for reg in h.hooks.list()
            ]
        if method == "GET" and path == "/skills":
            return 200, [
                {
                    "skill_id": m.skill_id,
                    "name": m.name,
                    "description": m.description,
                    "active": m.active,
                }
                for m in h.skills.list_skills()
            ]
        match = re.fullmatch(r"/skills/([^/]+)/active", path)
        if method == "POST" and match:
            h.skills.set_skill_active(match.group(1), bool(body["active"]))
            return 200, {"skill_id": match.group(1), "active": bool(body["active"])}
        if method == "GET" and path == "/tasks":
            return 200, [j.to_json() for j in h.scheduler.list_jobs()]
        if method == "POST" and path == "/tasks":
            job_id = h.scheduler.register_job(body["mode"], body["schedule"], body["payload"])
            return 201, {"job_id": job_id}
        match = re.fullmatch(r"/tasks/([^/]+)/cancel", path)
        if method == "POST" and match:
            h.scheduler.cancel_job(match.group(1))
            return 200, {"cancelled": match.group(1)}
        if method == "POST" and path == "/tasks/run-now":
            fired = h.scheduler.run_due()
            return 200, [{"job_id": jid, "outcome": outcome} for jid, outcome in fired]
        if method == "GET" and path == "/memory/search":
            folder = query["agent"][0]
            memory = h.memory(folder)
            memory.index_sync()
            records = memory.hybrid_search(
                RetrievalQuery(
                    text=query["q"][0],
                    k=int(query.get("k", ["10"])[0]),
                    source_filter=query.get("source", ["all"])[0],
                )
            )
            return 200, [
                {
                    "doc_id": r.doc_id,
                    "source": r.source,
                    "file": r.file,
                    "date": r.date,
                    "chunk": r.chunk,
                    "merged_score": r.merged_score,
                }
                for r in records
            ]
        result = self._handle_wiki(method, path, query, body)
        if result is not None:
            return result
        result = self._handle_static(method, path)
        if result is not None:
            return result
        raise ApiError(404, f"no route {method} {path}")

    def _handle_wiki(self, method, path, query, body):
        h = self.harness
        match = re.fullmatch(r"/wiki/([^/]+)/(tree|entry|entries|write|move|organize|search|mkdir|sync)", path)
        if not match:
            return None
        folder, op = match.group(1), match.group(2)
        wiki = h.wiki(folder)
        if method == "GET" and op == "tree":
            return 200, wiki.inspect_tree()
        if method == "GET" and op == "entry":
            rel = query["path"][0]
            return 200, {"path": rel, "content": wiki.read_entry(rel).decode("utf-8", errors="replace")}
        if method == "POST" and op == "entries":
            dest = wiki.save_entry(
                body["title"], body["body"], body.get("tags"), body.get("category")
            )
            return 201, {"path": str(dest.relative_to(wiki.root))}
        if method == "POST" and op == "write":
            dest = wiki.write_entry(body["path"], body["content"].encode("utf-8"))
            return 200, {"path": str(dest.relative_to(wiki.root))}
        if method == "POST" and op == "move":
            dest = wiki.move_entry(body["src"], body["dst"])
            return 200, {"path": str(dest.relative_to(wiki.root))}
        if method == "POST" and op == "organize":
            dest = wiki.organize_file(body["source"], body["category"], body.get("tags"))
            return 200, {"path": str(dest.relative_to(wiki.root))}
        if method == "GET" and op == "search":
            hits = wiki.search(
                query=(query.get("q") or [None])[0],
                tags=query.get("tag"),
                k=int(query.get("k", ["10"])[0]),
            )
            return 200, [
                {"path": hit.path, "snippet": hit.snippet, "score": hit.score, "tags": list(hit.tags)}
                for hit in hits
            ]
        if method == "POST" and op == "mkdir":
            created = wiki.create_category(body["path"])
            return 201, {"path": str(created.relative_to(wiki.root))}
        if method == "POST" and op == "sync":
            return 200, {"files_synced": wiki.index_sync()}
        return None

    def _handle_static(self, method, path):
        if method != "GET" or self.static_dir is None:
            return None
        rel = "index.html" if path == "/" else path.lstrip("/")
        candidate = (self.static_dir / rel).resolve()
        root = self.static_dir.resolve()
        if root not in candidate.parents and candidate != root:
            return None
        if not candidate.is_file():
            return None
        kind = {
            ".html": "text/html",
            ".js": "text/javascript",
            ".css": "text/css",
        }.get(candidate.suffix, "application/octet-stream")
        return 200, (kind, candidate.read_text(encoding="utf-8"))

    # -- plumbing ------------------------------------------------------------------

    def _make_handler(self):
        gateway = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):
                pass

            def _authorized(self) -> bool:
                if not gateway.token:
                    return True
                header = self.headers.get("Authorization", "")
                return header == f"Bearer {gateway.token}"

            def _respond(self, status: int, payload: object) -> None:
                if isinstance(payload, tuple):
                    content_type, text = payload
                    data = text.encode("utf-8")
                else:
                    content_type = "application/json"
                    data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", content_type)
                self.send_header("Content-Length", str(len(data)))
                self.send_header("Access-Control-Allow-Origin", "*")
                self.end_headers()
                self.wfile.write(data)

            def _dispatch(self, method: str) -> None:
                if not self._authorized():
                    self._respond(401, {"error": "missing or bad bearer token"})
                    return
                parsed = urllib.parse.urlparse(self.path)
                query = urllib.parse.parse_qs(parsed.query)
                body = {}
                length = int(self.headers.get("Content-Length") or 0)
                if length:
                    try:
                        body = json.loads(self.rfile.read(length).decode("utf-8"))
                    except json.JSONDecodeError:
                        self._respond(400, {"error": "request body is not valid JSON"})
                        return
                try:
                    status, payload = gateway.handle(method, parsed.path, query, body)
                except ApiError as exc:
                    self._respond(exc.status, {"error": str(exc)})
                except KeyError as exc:
                    self._respond(400, {"error": f"missing field {exc}"})
                except HarnessError as exc:
                    self._respond(_status_for(exc), {"error": str(exc)})
                except ValueError as exc:
                    self._respond(400, {"error": str(exc)})
                else:
                    self._respond(status, payload)

            def do_GET(self):
                self._dispatch("GET")

            def do_POST(self):
                self._dispatch("POST")

            def do_OPTIONS(self):
                self.send_response(204)
                self.send_header("Access-Control-Allow-Origin", "*")
                self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
                self.send_header("Access-Control-Allow-Headers", "Content-Type, Authorization")
                self.send_header("Content-Length", "0")
                self.end_headers()

        return Handler
