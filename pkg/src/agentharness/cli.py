"""Command-line client for the harness daemon, plus `serve` to run one.

Every command except `serve` talks JSON to a running daemon, so approvals
issued here land on the same bridge as the web UI and programmatic clients.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import urllib.error
import urllib.parse
import urllib.request

from .errors import HarnessError
from .gateway.config import load_config
from .gateway.daemon import Daemon

DEFAULT_URL = os.environ.get("AGENTHARNESS_URL", "http://127.0.0.1:8420")


class ApiClient:
    def __init__(self, base_url: str, token: str = ""):
        self.base_url = base_url.rstrip("/")
        self.token = token or os.environ.get("AGENTHARNESS_TOKEN", "")

    def call(self, method: str, path: str, body: dict | None = None):
        url = self.base_url + path
        data = json.dumps(body).encode("utf-8") if body is not None else None
        req = urllib.request.Request(url, data=data, method=method)
        req.add_header("Content-Type", "application/json")
        if self.token:
            req.add_header("Authorization", f"Bearer {self.token}")
        try:
            with urllib.request.urlopen(req, timeout=600) as resp:
                raw = resp.read().decode("utf-8")
        except urllib.error.HTTPError as exc:
            raw = exc.read().decode("utf-8", errors="replace")
            try:
                message = json.loads(raw).get("error", raw)
            except json.JSONDecodeError:
                message = raw
            raise SystemExit(f"error ({exc.code}): {message}")
        except urllib.error.URLError as exc:
            raise SystemExit(f"cannot reach daemon at {self.base_url}: {exc.reason}")
        if not raw:
            return None
        try:
            return json.loads(raw)
        except json.JSONDecodeError:
            return raw


def _print(data) -> None:
    if isinstance(data, str):
        print(data)
    else:
        print(json.dumps(data, indent=2))


def _tags(value: str | None) -> list[str]:
    return [t.strip() for t in value.split(",") if t.strip()] if value else []


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="agentharness", description="agent harness daemon and client"
    )
    parser.add_argument("--url", default=DEFAULT_URL, help="daemon base url")
    parser.add_argument("--token", default="", help="bearer token")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the daemon")
    serve.add_argument("-c", "--config", default=None, help="config file path")

    agent = sub.add_parser("agent", help="manage agent identities")
    agent_sub = agent.add_subparsers(dest="action", required=True)
    add = agent_sub.add_parser("add")
    add.add_argument("folder")
    add.add_argument("--name")
    add.add_argument("--channel", default="cli")
    add.add_argument("--workspace")
    agent_sub.add_parser("list")

    turn = sub.add_parser("turn", help="submit one user turn to an agent")
    turn.add_argument("agent")
    turn.add_argument("text")
    turn.add_argument("--events", action="store_true", help="print the event trace too")

    approvals = sub.add_parser("approvals", help="inspect and resolve pending requests")
    appr_sub = approvals.add_subparsers(dest="action", required=True)
    appr_sub.add_parser("list")
    for action in ("approve", "deny"):
        p = appr_sub.add_parser(action)
        p.add_argument("request_id")
        if action == "deny":
            p.add_argument("--reason", default=None)
    modify = appr_sub.add_parser("modify")
    modify.add_argument("request_id")
    modify.add_argument("--args", required=True, help="replacement arguments as JSON")
    answer = appr_sub.add_parser("answer")
    answer.add_argument("request_id")
    answer.add_argument("text")

    wiki = sub.add_parser("wiki", help="knowledge corpus operations")
    wiki_sub = wiki.add_subparsers(dest="action", required=True)
    tree = wiki_sub.add_parser("tree")
    tree.add_argument("agent")
    save = wiki_sub.add_parser("save")
    save.add_argument("agent")
    save.add_argument("title")
    save.add_argument("body")
    save.add_argument("--tags")
    save.add_argument("--category")
    organize = wiki_sub.add_parser("organize")
    organize.add_argument("agent")
    organize.add_argument("source")
    organize.add_argument("category")
    organize.add_argument("--tags")
    search = wiki_sub.add_parser("search")
    search.add_argument("agent")
    search.add_argument("--query")
    search.add_argument("--tags")
    search.add_argument("-k", type=int, default=10)
    mkdir = wiki_sub.add_parser("mkdir")
    mkdir.add_argument("agent")
    mkdir.add_argument("path")
    sync = wiki_sub.add_parser("sync")
    sync.add_argument("agent")

    skills = sub.add_parser("skills", help="list and toggle skills")
    skills_sub = skills.add_subparsers(dest="action", required=True)
    skills_sub.add_parser("list")
    for action in ("enable", "disable"):
        p = skills_sub.add_parser(action)
        p.add_argument("skill_id")

    hooks = sub.add_parser("hooks", help="hook registrations")
    hooks_sub = hooks.add_subparsers(dest="action", required=True)
    hooks_sub.add_parser("list")

    task = sub.add_parser("task", help="scheduled jobs")
    task_sub = task.add_subparsers(dest="action", required=True)
    task_add = task_sub.add_parser("add")
    task_add.add_argument("--mode", required=True, choices=["notify", "script", "agent", "hybrid"])
    task_add.add_argument("--schedule", required=True, help="schedule as JSON")
    task_add.add_argument("--payload", required=True, help="payload as JSON")
    task_sub.add_parser("list")
    cancel = task_sub.add_parser("cancel")
    cancel.add_argument("job_id")
    task_sub.add_parser("run-now")

    events = sub.add_parser("events", help="fetch events past a cursor")
    events.add_argument("--since", type=int, default=0)
    events.add_argument("--wait", type=float, default=0.0)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        try:
            config = load_config(args.config)
            daemon = Daemon(config)
        except HarnessError as exc:
            print(f"startup error: {exc}", file=sys.stderr)
            return 1
        print(f"serving on {daemon.base_url} (data root {config.data_root})", flush=True)
        daemon.run_forever()
        return 0

    client = ApiClient(args.url, args.token)
    if args.command == "agent":
        if args.action == "add":
            _print(
                client.call(
                    "POST",
                    "/agents",
                    {
                        "folder": args.folder,
                        "name": args.name,
                        "channel": args.channel,
                        "workspace": args.workspace,
                    },
                )
            )
        else:
            _print(client.call("GET", "/agents"))
    elif args.command == "turn":
        result = client.call("POST", f"/sessions/{args.agent}/turns", {"text": args.text})
        print(result["reply"])
        if args.events:
            _print(result["events"])
    elif args.command == "approvals":
        if args.action == "list":
            _print(client.call("GET", "/approvals"))
        else:
            body = {"variant": args.action}
            if args.action == "deny":
                body["reason"] = args.reason
            elif args.action == "modify":
                body["variant"] = "modify"
                body["new_arguments"] = json.loads(args.args)
            elif args.action == "answer":
                body["variant"] = "answer"
                body["text"] = args.text
            _print(client.call("POST", f"/approvals/{args.request_id}/resolve", body))
    elif args.command == "wiki":
        agent = args.agent
        if args.action == "tree":
            _print(client.call("GET", f"/wiki/{agent}/tree"))
        elif args.action == "save":
            _print(
                client.call(
                    "POST",
                    f"/wiki/{agent}/entries",
                    {
                        "title": args.title,
                        "body": args.body,
                        "tags": _tags(args.tags),
                        "category": args.category,
                    },
                )
            )
        elif args.action == "organize":
            _print(
                client.call(
                    "POST",
                    f"/wiki/{agent}/organize",
                    {"source": args.source, "category": args.category, "tags": _tags(args.tags)},
                )
            )
        elif args.action == "search":
            query = []
            if args.query:
                query.append("q=" + urllib.parse.quote(args.query))
            for tag in _tags(args.tags):
                query.append("tag=" + urllib.parse.quote(tag))
            query.append(f"k={args.k}")
            _print(client.call("GET", f"/wiki/{agent}/search?" + "&".join(query)))
        elif args.action == "mkdir":
            _print(client.call("POST", f"/wiki/{agent}/mkdir", {"path": args.path}))
        elif args.action == "sync":
            _print(client.call("POST", f"/wiki/{agent}/sync", {}))
    elif args.command == "skills":
        if args.action == "list":
            _print(client.call("GET", "/skills"))
        else:
            _print(
                client.call(
                    "POST",
                    f"/skills/{args.skill_id}/active",
                    {"active": args.action == "enable"},
                )
            )
    elif args.command == "hooks":
        _print(client.call("GET", "/hooks"))
    elif args.command == "task":
        if args.action == "add":
            _print(
                client.call(
                    "POST",
                    "/tasks",
                    {
                        "mode": args.mode,
                        "schedule": json.loads(args.schedule),
                        "payload": json.loads(args.payload),
                    },
                )
            )
        elif args.action == "list":
            _print(client.call("GET", "/tasks"))
        elif args.action == "cancel":
            _print(client.call("POST", f"/tasks/{args.job_id}/cancel", {}))
        else:
            _print(client.call("POST", "/tasks/run-now", {}))
    elif args.command == "events":
        data = client.call("GET", f"/events?since={args.since}&wait={args.wait}")
        if data:
            print(data)
    return 0


if __name__ == "__main__":
    sys.exit(main())
