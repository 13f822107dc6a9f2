"""Acceptance suite: one test per release criterion, exact tolerances pinned.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS line per
criterion.
"""

import json
import math
import random
import re
import subprocess
import sys
import threading
import time
from datetime import date, timedelta
from pathlib import Path

import pytest

from agentharness.adapters import ScriptedAdapter
from agentharness.clock import FakeClock
from agentharness.context import PERSONA_HEADINGS
from agentharness.dispatch import DispatchBridge
from agentharness.events import EventBus
from agentharness.kernel import ContextLedger, Session, SessionConfig, SessionManager, should_compact
from agentharness.memory import HashEmbedding, MemoryManager, RetrievalQuery, merge_candidates
from agentharness.permbridge import Decision, PermissionBridge
from agentharness.schedtask import SCRIPT_PLACEHOLDER, TaskScheduler
from agentharness.wiki import WikiStore, parse_entry

SRC = str(Path(__file__).resolve().parents[1] / "src")


def ok(line: str) -> None:
    print(f"ACCEPTANCE PASS: {line}")


# ---------------------------------------------------------------------------
# 1. compaction boundary
# ---------------------------------------------------------------------------

def test_compaction_boundary_exact_for_200_random_limits():
    started = time.monotonic()
    rng = random.Random(1234)
    for _ in range(200):
        limit = rng.randint(16000, 3_000_000)
        config = SessionConfig(agent_id="x", context_limit=limit)
        edge = (3 * limit) // 4 - 8000
        below = ContextLedger()
        below.token_count = edge
        above = ContextLedger()
        above.token_count = edge + 1
        assert should_compact(below, config) is False, limit
        assert should_compact(above, config) is True, limit
    elapsed = time.monotonic() - started
    assert elapsed < 1.0, f"took {elapsed:.3f}s"
    ok(f"compaction boundary exact at floor(0.75*L)-8000 for 200 random limits ({elapsed:.3f}s)")


# ---------------------------------------------------------------------------
# 2. compaction mechanics
# ---------------------------------------------------------------------------

def _session(identity, adapter, clock, bus, limit=16000):
    return Session(
        config=SessionConfig(agent_id=identity.folder, context_limit=limit),
        identity=identity,
        adapter=adapter,
        bus=bus,
        clock=clock,
    )


def test_compaction_mechanics_success_and_fallback(registry, clock):
    identity = registry.register("compactor")
    bus = EventBus(clock=clock)
    sub = bus.subscribe({"compact:start", "compact:exec"})

    session = _session(identity, ScriptedAdapter(summary_text="a compact summary"), clock, bus)
    for _ in range(5):
        session.ledger.append("user", "x" * 16000)
    report = session.compact()
    events = sub.drain()
    assert [e.kind for e in events] == ["compact:start", "compact:exec"]
    assert report.mode == "summarized"
    assert report.tokens_after < report.tokens_before
    assert events[1].payload["tokens_after"] < events[1].payload["tokens_before"]
    newest_user = [m for m in session.ledger.messages if m.role == "user"][-1]
    for heading in PERSONA_HEADINGS:
        assert heading in newest_user.text

    failing = _session(identity, ScriptedAdapter(summary_fail=True), clock, bus, limit=16000)
    for _ in range(5):
        failing.ledger.append("user", "y" * 16000)
    report2 = failing.compact()
    assert report2.mode == "truncation_fallback"
    assert failing.ledger.recount() <= 0.5 * 16000
    newest_user2 = [m for m in failing.ledger.messages if m.role == "user"][-1]
    for heading in PERSONA_HEADINGS:
        assert heading in newest_user2.text
    ok("compaction mechanics: events + reminder re-injection + fallback bound")


# ---------------------------------------------------------------------------
# 3. hybrid scoring
# ---------------------------------------------------------------------------

def _oracle_bm25(corpus, query_words):
    docs = {d: re.findall(r"[0-9a-z_]+", t.lower()) for d, t in corpus.items()}
    n = len(docs)
    avgdl = sum(map(len, docs.values())) / n
    scores = {}
    for term in set(query_words):
        containing = [d for d, words in docs.items() if term in words]
        if not containing:
            continue
        idf = math.log(1 + (n - len(containing) + 0.5) / (len(containing) + 0.5))
        for d in containing:
            tf = docs[d].count(term)
            denom = tf + 1.2 * (0.25 + 0.75 * len(docs[d]) / avgdl)
            scores[d] = scores.get(d, 0.0) + idf * tf * 2.2 / denom
    return scores


def _oracle_minmax(raw):
    if not raw:
        return {}
    lo, hi = min(raw.values()), max(raw.values())
    return {k: 1.0 if hi == lo else (v - lo) / (hi - lo) for k, v in raw.items()}


def test_hybrid_scoring_formula_and_degradation(registry):
    # formula on a six-document fixture through the real pipeline
    clock = FakeClock()
    identity = registry.register("searcher")
    manager = MemoryManager(identity.data_dir, clock=clock, embedding=HashEmbedding(dim=48))
    fixture = [
        "solar inverters convert panel output",
        "inverters fail when capacitors age",
        "a grid tie inverter synchronizes phase",
        "battery storage smooths the solar curve",
        "capacitor esr rises with temperature",
        "entirely unrelated gardening notes",
    ]
    for text in fixture:
        manager.append_daily_log(text, clock.now())
        clock.advance(86_400)
    manager.index_sync()
    hits = manager.hybrid_search(RetrievalQuery(text="inverter capacitors solar", k=20))
    assert hits
    kinds = set()
    for r in hits:
        if r.vec_score is not None and r.fts_score is not None:
            assert abs(r.merged_score - (r.vec_score * 0.7 + r.fts_score * 0.3)) <= 1e-12
            kinds.add("both")
        elif r.vec_score is not None:
            assert abs(r.merged_score - r.vec_score * 0.7) <= 1e-12
            kinds.add("vec")
        else:
            assert abs(r.merged_score - r.fts_score * 0.7) <= 1e-12
            kinds.add("fts")
    assert "both" in kinds
    # stated coefficients on controlled component scores
    merged = merge_candidates({"A": 0.9, "B": 0.9}, {"A": 0.5, "C": 0.5})
    assert abs(merged["A"][2] - 0.78) <= 1e-12
    assert abs(merged["B"][2] - 0.63) <= 1e-12
    assert abs(merged["C"][2] - 0.35) <= 1e-12

    # level 2 against the independent BM25 oracle, 50-doc corpus
    rng = random.Random(9)
    vocab = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"]
    identity2 = registry.register("searcher2")
    clock2 = FakeClock()
    manager2 = MemoryManager(identity2.data_dir, clock=clock2)
    texts = [" ".join(rng.choices(vocab, k=rng.randint(3, 9))) for _ in range(50)]
    for text in texts:
        manager2.append_daily_log(text, clock2.now())
        clock2.advance(86_400)
    manager2.index_sync()
    query_words = ["alpha", "theta"]
    hits2 = manager2.hybrid_search(RetrievalQuery(text="alpha theta", k=100))
    corpus = {}
    for path, _ in manager2._corpus_files():
        paragraphs = [p.strip() for p in re.split(r"\n\s*\n", path.read_text()) if p.strip()]
        for seq, para in enumerate(paragraphs):
            corpus[f"{path}#{seq:03d}"] = para
    expected = sorted(
        ((d, s * 0.7) for d, s in _oracle_minmax(_oracle_bm25(corpus, query_words)).items()),
        key=lambda kv: (-kv[1], kv[0]),
    )
    assert [h.doc_id for h in hits2] == [d for d, _ in expected]
    for hit, (_, score) in zip(hits2, expected):
        assert abs(hit.merged_score - score) <= 1e-12

    # level 3 against the overlap oracle on the same corpus, indexes disabled
    manager3 = MemoryManager(identity2.data_dir, clock=clock2, keyword_enabled=False)
    hits3 = manager3.hybrid_search(RetrievalQuery(text="alpha theta", k=100))
    overlap_expected = []
    for doc_id, text in sorted(corpus.items()):
        overlap = len({"alpha", "theta"} & set(re.findall(r"[0-9a-z_]+", text.lower())))
        if overlap:
            overlap_expected.append((doc_id, float(overlap)))
    overlap_expected.sort(key=lambda kv: (-kv[1], kv[0]))
    assert [(h.doc_id, h.merged_score) for h in hits3] == overlap_expected
    ok("hybrid scoring: 0.7/0.3 merge to 1e-12; levels 2 and 3 match brute-force oracles")


# ---------------------------------------------------------------------------
# 4. retention
# ---------------------------------------------------------------------------

def test_retention_sixty_days_to_fifty_and_purged_from_search(registry, clock):
    identity = registry.register("keeper")
    manager = MemoryManager(identity.data_dir, clock=clock)
    today = date(2026, 8, 1)
    for offset in range(60):
        day = today - timedelta(days=offset)
        (manager.memory_dir / f"{day.isoformat()}.md").write_text(
            f"daylog entry for {day.isoformat()} marker{offset}\n", encoding="utf-8"
        )
        manager.mark_dirty(day.isoformat())
    manager.index_sync()
    removed = manager.enforce_retention(today)
    assert len(removed) == 10
    assert len(manager.log_files()) == 50
    removed_set = {str(p) for p in removed}
    hits = manager.hybrid_search(RetrievalQuery(text="daylog entry marker55", k=100))
    all_hits = manager.hybrid_search(RetrievalQuery(text="daylog entry", k=100))
    assert all_hits
    assert all(r.file not in removed_set for r in hits + all_hits)
    ok("retention: 60 -> exactly 50 files; zero post-retention hits from removed files")


# ---------------------------------------------------------------------------
# 5. dispatch correctness, 1000 randomized DAGs
# ---------------------------------------------------------------------------

class FastSim:
    """Event-driven world: the clock jumps along the 300 ms tick grid."""

    TICK = 0.3

    def __init__(self, state_path, registry, seed, collect=False):
        rng = random.Random(seed)
        self.clock = FakeClock(start=1_000_000.0)
        self.pending = []
        self.dispatched = []
        self.snapshots = []
        self.bridge = DispatchBridge(
            state_path, registry=registry, clock=self.clock, worker_submit=self._submit
        )
        if collect:
            self.bridge.store.write_hook = lambda s: self.snapshots.append(
                (s["revision"], json.dumps(s, sort_keys=True))
            )
        n = rng.randint(1, 12)
        self.tasks = []
        for i in range(n):
            deps = [f"t{j}" for j in range(i) if rng.random() < 0.3]
            self.tasks.append(
                {
                    "label": f"t{i}",
                    "agent_name": rng.choice(["w1", "w2", "boss"]),
                    "prompt": f"work {i}",
                    "depends_on": deps,
                    "timeout": rng.choice([2.0, 5.0, 10.0]),
                }
            )
        self.outcomes = {}
        for t in self.tasks:
            roll = rng.random()
            if roll < 0.15:
                self.outcomes[t["label"]] = ("hang",)
            elif roll < 0.3:
                self.outcomes[t["label"]] = ("error", "boom", rng.uniform(0.2, 3.0))
            else:
                self.outcomes[t["label"]] = ("done", f"r-{t['label']}", rng.uniform(0.2, 3.0))

    def _submit(self, folder, prompt, group_id, label):
        self.dispatched.append(label)
        outcome = self.outcomes[label]
        if outcome[0] != "hang":
            kind, value, latency = outcome
            self.pending.append((self.clock.now() + latency, folder, kind, value))

    def _next_instant(self):
        candidates = [due for due, *_ in self.pending]
        state = self.bridge.store.read()
        for g in state["groups"]:
            for t in g["tasks"]:
                if t["status"] == "processing" and t["timeout_at"] is not None:
                    candidates.append(t["timeout_at"])
        return min(candidates) if candidates else None

    def run(self):
        self.bridge.create_parent("boss", "goal", self.tasks)
        self.bridge.tick()
        for _ in range(10_000):
            groups = self.bridge.groups()
            if all(g.status == "done" for g in groups):
                return groups[0]
            target = self._next_instant()
            assert target is not None, "stuck with no future event"
            # land exactly on the next 300 ms grid point at or after target
            steps = max(1, math.ceil((target - self.clock.now()) / self.TICK))
            self.clock.advance(steps * self.TICK)
            now = self.clock.now()
            due = sorted(p for p in self.pending if p[0] <= now)
            self.pending = [p for p in self.pending if p[0] > now]
            for _, folder, kind, value in due:
                if kind == "done":
                    self.bridge.notify_reply(folder, value)
                else:
                    self.bridge.notify_error(folder, value)
            self.bridge.tick()
        raise AssertionError("no convergence")


def _oracle_fixpoint(tasks):
    status = {t["label"]: "registered" for t in tasks}
    dispatched = set()
    changed = True
    while changed:
        changed = False
        for t in tasks:
            if status[t["label"]] == "registered" and all(
                status[d] == "terminal" for d in t["depends_on"]
            ):
                dispatched.add(t["label"])
                status[t["label"]] = "terminal"
                changed = True
    return dispatched


def test_dispatch_correctness_1000_randomized_dags(tmp_path, registry):
    registry.register("boss")
    registry.register("w1")
    registry.register("w2")
    started = time.monotonic()
    for seed in range(1000):
        sim = FastSim(tmp_path / f"s{seed}.json", registry, seed)
        group = sim.run()
        by_label = {t.label: t for t in group.tasks}
        for task in group.tasks:
            assert task.terminal, (seed, task.label)
            for dep in task.depends_on:
                assert task.started_at >= by_label[dep].finished_at, (seed, task.label)
        assert group.status == "done"
        assert set(sim.dispatched) == _oracle_fixpoint(sim.tasks), seed
    # determinism: identical seeds -> identical revision/state sequences
    for seed in (7, 99, 512):
        a = FastSim(tmp_path / f"da{seed}.json", registry, seed, collect=True)
        a.run()
        b = FastSim(tmp_path / f"db{seed}.json", registry, seed, collect=True)
        b.run()
        norm = lambda snaps, path: [
            (rev, blob.replace(str(path), "STATE")) for rev, blob in snaps
        ]
        assert norm(a.snapshots, tmp_path / f"da{seed}.json") == norm(
            b.snapshots, tmp_path / f"db{seed}.json"
        )
    elapsed = time.monotonic() - started
    assert elapsed < 60.0, f"took {elapsed:.1f}s"
    ok(f"dispatch: 1000 randomized DAGs safe, oracle-equivalent, deterministic ({elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# 6. timeout + restore semantics
# ---------------------------------------------------------------------------

def test_timeout_and_restore_scripted_scenario(tmp_path, registry):
    registry.register("admin")
    registry.register("workerA")
    registry.register("workerB")
    clock = FakeClock(start=2_000_000.0)
    cwd = {"workerA": "/orig/A", "workerB": "/orig/B", "admin": "/admin/cwd"}
    trace = []
    bridge = DispatchBridge(
        tmp_path / "state.json",
        registry=registry,
        clock=clock,
        worker_submit=lambda f, p, g, l: trace.append(("submit", l, f)),
        get_admin_cwd=lambda f: cwd[f],
        set_worker_cwd=cwd.__setitem__,
    )
    bridge.create_parent(
        "admin",
        "scenario",
        [
            {"label": "t1", "agent_name": "workerA", "prompt": "slow", "timeout": 10.0},
            {"label": "t2", "agent_name": "workerB", "prompt": "after", "depends_on": ["t1"], "timeout": 50.0},
        ],
    )
    actions = bridge.tick()
    trace.extend(a for a in actions if a[0] != "dispatch")
    assert ("submit", "t1", "workerA") in trace
    assert cwd["workerA"] == "/admin/cwd"  # shared workspace applied
    t1_timeout_at = bridge.groups()[0].task("t1").timeout_at

    # (a) marked timeout exactly at timeout_at
    clock.advance(t1_timeout_at - clock.now())
    actions = bridge.tick()
    assert ("timeout", "g0001", "t1") in actions
    t1 = bridge.groups()[0].task("t1")
    assert t1.status == "timeout" and t1.finished_at == t1_timeout_at
    # worker A's assignment cleared; no reassignment happened -> that slot is free
    assert bridge.store.read()["worker_assignments"] == {"workerB": {"group_id": "g0001", "label": "t2"}}

    # (b) downstream dispatched despite upstream timeout (same tick)
    assert ("dispatch", "g0001", "t2") in actions

    # (c) cwd restored only when no reassignment occurred
    assert cwd["workerB"] == "/admin/cwd"
    bridge.notify_reply("workerB", "t2 done")
    assert cwd["workerB"] == "/orig/B"  # no new assignment -> restored
    group = bridge.groups()[0]
    assert group.status == "done"
    assert group.task("t2").status == "done" and group.task("t2").result == "t2 done"

    # consecutive assignment keeps the shared workspace (no intermediate revert)
    bridge2_state = tmp_path / "state2.json"
    cwd2 = {"workerA": "/orig/A", "admin": "/admin2"}
    bridge2 = DispatchBridge(
        bridge2_state,
        registry=registry,
        clock=clock,
        worker_submit=lambda f, p, g, l: None,
        get_admin_cwd=lambda f: cwd2[f],
        set_worker_cwd=cwd2.__setitem__,
    )
    bridge2.create_parent(
        "admin",
        "chain",
        [
            {"label": "a", "agent_name": "workerA", "prompt": "", "timeout": 30.0},
            {"label": "b", "agent_name": "workerA", "prompt": "", "depends_on": ["a"], "timeout": 30.0},
        ],
    )
    bridge2.tick()
    bridge2.notify_reply("workerA", "a done")  # b assigned in the same call
    assert cwd2["workerA"] == "/admin2"  # NOT restored while reassigned
    bridge2.notify_reply("workerA", "b done")
    assert cwd2["workerA"] == "/orig/A"

    # (d) startup recovery marks interrupted tasks error
    crash_state = tmp_path / "crash.json"
    bridge3 = DispatchBridge(
        crash_state, registry=registry, clock=clock, worker_submit=lambda *a: None,
        get_admin_cwd=lambda f: "", set_worker_cwd=lambda f, p: None,
    )
    bridge3.create_parent(
        "admin", "doomed", [{"label": "x", "agent_name": "workerA", "prompt": "", "timeout": 999.0}]
    )
    bridge3.tick()
    reborn = DispatchBridge(
        crash_state, registry=registry, clock=clock, worker_submit=lambda *a: None,
        get_admin_cwd=lambda f: "", set_worker_cwd=lambda f, p: None,
    )
    reborn.recover_on_startup()
    group = reborn.groups()[0]
    assert group.status == "done"
    assert group.task("x").status == "error" and group.task("x").error == "interrupted"
    ok("timeout + restore: exact boundary, terminal unblock, conditional restore, recovery")


# ---------------------------------------------------------------------------
# 7. bridge multiplexing + heartbeat liveness
# ---------------------------------------------------------------------------

def test_bridge_multiplexing_64_and_heartbeat_liveness(tmp_path, registry):
    with PermissionBridge() as bridge:
        n = 64
        results = {}
        threads = []
        for i in range(n):
            t = threading.Thread(
                target=lambda i=i: results.__setitem__(
                    i,
                    bridge.request_tool_permission(
                        type("S", (), {"id": f"s{i}", "agent_folder": "f", "touch": lambda self: None})(),
                        "tool",
                        {"i": i},
                    ),
                )
            )
            t.start()
            threads.append(t)
        while len(bridge.list_pending()) < n:
            time.sleep(0.001)
        pending = list(bridge.list_pending())
        random.Random(99).shuffle(pending)
        for req in pending:
            i = req.payload["args"]["i"]
            bridge.resolve(req.request_id, Decision.modify({"token": i * 7}))
        for t in threads:
            t.join(timeout=10)
        assert all(results[i].new_arguments == {"token": i * 7} for i in range(n))
        assert bridge.total_resumptions == bridge.total_first_resolutions == n

    # 35 simulated minutes of blocked dispatch_wait with 2-minute heartbeats
    identity = registry.register("longadmin")
    registry.register("slowworker")
    start_ts = 3_000_000.0
    finish_at = start_ts + 35 * 60
    state = {"delivered": False}

    class Driver(FakeClock):
        """Sleeping advances time, reaps idle sessions, and runs the world."""

        def sleep(self, seconds):
            self.advance(seconds)
            manager.reap_idle(self.now())
            if self.now() >= finish_at and not state["delivered"]:
                state["delivered"] = True
                dispatch.notify_reply("slowworker", "finally")
            dispatch.tick(self.now())

    driver = Driver(start=start_ts)
    bus = EventBus(clock=driver)
    with PermissionBridge(clock=driver) as bridge2:
        manager = SessionManager(driver, bridge=bridge2)
        session = manager.add(
            Session(
                config=SessionConfig(agent_id="longadmin", context_limit=16000),
                identity=identity,
                adapter=ScriptedAdapter(),
                bus=bus,
                clock=driver,
            )
        )
        dispatch = DispatchBridge(
            tmp_path / "hb.json",
            registry=registry,
            clock=driver,
            worker_submit=lambda *a: None,
            get_admin_cwd=lambda f: "",
            set_worker_cwd=lambda f, p: None,
            touch_session=lambda folder: manager.touch_agent(folder),
        )
        dispatch.create_parent(
            "longadmin",
            "long haul",
            [{"label": "slow", "agent_name": "slowworker", "prompt": "", "timeout": 2 * 3600.0}],
        )
        dispatch.tick()
        node = dispatch.dispatch_wait("g0001:slow", admin_folder="longadmin")
        assert node.status == "done"
        assert driver.now() - start_ts >= 35 * 60 - 1
        assert session.open, "session idled out despite heartbeats"
    ok("bridge: 64 random-order resolutions exact; 35-min wait survives via heartbeats")


# ---------------------------------------------------------------------------
# 8. scheduler modes
# ---------------------------------------------------------------------------

def test_scheduler_modes_token_proportionality_and_hybrid_substitution(tmp_path):
    clock = FakeClock(start=4_000_000.0)
    adapter_calls = []
    notifications = []
    sched = TaskScheduler(
        tmp_path / "jobs.json",
        clock=clock,
        channel_sink=lambda m, c: notifications.append((c, m)),
        agent_runner=lambda folder, prompt: adapter_calls.append(prompt) or f"reply({len(adapter_calls)})",
    )
    t0 = clock.now()
    sched.register_job("notify", {"kind": "once", "at": t0 + 10}, {"message": "n1", "channel": "cli"})
    sched.register_job("notify", {"kind": "cron", "spec": "*/30 * * * *"}, {"message": "n2", "channel": "cli"})
    sched.register_job("script", {"kind": "once", "at": t0 + 20}, {"command": "echo scripted"})
    sched.register_job("agent", {"kind": "once", "at": t0 + 30}, {"agent": "a", "prompt": "think"})
    sched.register_job(
        "hybrid",
        {"kind": "once", "at": t0 + 40},
        {"command": "printf 'metric=42'", "agent": "a", "template": f"interpret: {SCRIPT_PLACEHOLDER}!"},
    )
    sched.register_job(
        "hybrid",
        {"kind": "once", "at": t0 + 50},
        {"command": "exit 9", "agent": "a", "template": f"x {SCRIPT_PLACEHOLDER}"},
    )
    fired = []
    for _ in range(48):  # simulate a scripted day in 30-minute steps
        fired.extend(sched.run_due())
        clock.advance(1800)
    statuses = [o["status"] for _, o in fired]
    agent_or_hybrid_successes = statuses.count("replied")
    assert len(adapter_calls) == agent_or_hybrid_successes == 2
    assert statuses.count("failed_pre") == 1
    assert statuses.count("delivered") >= 1 + 40  # one-shot + recurring half-hourly
    assert "interpret: metric=42!" in adapter_calls  # stdout substituted verbatim
    ok("scheduler: adapter calls == agent/hybrid firings; notify/script zero; verbatim substitution")


# ---------------------------------------------------------------------------
# 9. wiki contracts
# ---------------------------------------------------------------------------

def test_wiki_contracts(tmp_path, registry, clock):
    rng = random.Random(77)
    store = WikiStore(tmp_path / "wiki", clock=clock, index_path=tmp_path / "ix" / "w.db")
    # body byte-identity over 500 random bodies, frontmatter-lookalikes included
    for i in range(500):
        flavor = rng.randrange(4)
        if flavor == 0:
            body = rng.randbytes(rng.randrange(0, 300))
        elif flavor == 1:
            body = b"---\n" + rng.randbytes(rng.randrange(0, 120)) + b"\n---\nsurprise\n"
        elif flavor == 2:
            body = "\n".join("line " + str(n) for n in range(rng.randrange(1, 9))).encode()
        else:
            body = ("tags: [fake]\r\nsource: body\n" * rng.randrange(1, 4)).encode()
        source = tmp_path / f"src{i}.md"
        source.write_bytes(body)
        dest = store.organize_file(source, f"cat{i % 7}", ["bulk"])
        _, out = parse_entry(dest.read_bytes())
        assert out == body, f"body changed for case {i}"

    # corpus separation on a mixed fixture
    identity = registry.register("separated")
    memory = MemoryManager(identity.data_dir, clock=clock)
    memory.append_daily_log("the turbine schedule overlaps vocabulary", clock.now())
    memory.index_sync()
    agent_wiki = WikiStore(
        identity.data_dir / "wiki", clock=clock, index_path=identity.data_dir / "index" / "wiki.db"
    )
    agent_wiki.save_entry("Turbine", "the turbine schedule overlaps vocabulary", ["t"], "cat")
    agent_wiki.index_sync()
    mem_hits = memory.hybrid_search(RetrievalQuery(text="turbine schedule", k=50))
    wiki_hits = agent_wiki.search(query="turbine schedule", k=50)
    assert mem_hits and wiki_hits
    wiki_root = str(agent_wiki.root)
    assert all(not r.file.startswith(wiki_root) for r in mem_hits)
    assert all(r.source == "memory" for r in mem_hits)
    mem_root = str(memory.memory_dir)
    assert all(not str((agent_wiki.root / h.path).resolve()).startswith(mem_root) for h in wiki_hits)

    # external edit visible to inspect_tree with no sync call
    outside = agent_wiki.root / "handmade" / "direct.md"
    outside.parent.mkdir(parents=True)
    outside.write_bytes(b"---\ntags: [raw]\nsource: user\ncreated: x\n---\ndirect edit\n")
    tree = agent_wiki.inspect_tree()
    handmade = next(c for c in tree["categories"] if c["name"] == "handmade")
    assert handmade["entries"][0]["name"] == "direct.md"
    assert handmade["entries"][0]["tags"] == ["raw"]
    ok("wiki: 500-body byte identity; corpus separation; external edits live in the tree")


# ---------------------------------------------------------------------------
# 10. end-to-end: CLI suspend in one process, approve from another
# ---------------------------------------------------------------------------

def test_end_to_end_cli_approval_across_processes(tmp_path):
    from agentharness.gateway.config import load_config
    from agentharness.gateway.daemon import Daemon

    program = [
        {"kind": "tool_call", "tool": "send_invoice", "args": {"amount": 12}, "rationale": "month end"},
        {"kind": "reply", "text": "invoice sent, all done"},
    ]
    program_path = tmp_path / "program.json"
    program_path.write_text(json.dumps(program))
    config_path = tmp_path / "e2e.conf"
    config_path.write_text(
        f"""
[core]
data_root = {tmp_path / 'root'}
adapter = scripted:{program_path}
context_limit = 32000

[http]
host = 127.0.0.1
port = 0

[tools]
stub_external = send_invoice
""",
        encoding="utf-8",
    )
    daemon = Daemon(load_config(config_path)).start()
    env = {"PATH": "/usr/bin:/bin", "PYTHONPATH": SRC}

    def cli(*args, **kw):
        return subprocess.run(
            [sys.executable, "-m", "agentharness.cli", "--url", daemon.base_url, *args],
            capture_output=True,
            text=True,
            timeout=30,
            env=env,
            **kw,
        )

    try:
        assert cli("agent", "add", "biller").returncode == 0
        turn = subprocess.Popen(
            [sys.executable, "-m", "agentharness.cli", "--url", daemon.base_url,
             "turn", "biller", "send the invoice"],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, env=env,
        )
        rid = None
        deadline = time.monotonic() + 15
        while rid is None and time.monotonic() < deadline:
            rows = json.loads(cli("approvals", "list").stdout or "[]")
            if rows:
                assert rows[0]["payload"]["tool"] == "send_invoice"
                assert rows[0]["payload"]["args"] == {"amount": 12}
                rid = rows[0]["request_id"]
            else:
                time.sleep(0.05)
        assert rid is not None, "turn never suspended on the external tool"
        assert cli("approvals", "approve", rid).returncode == 0
        out, err = turn.communicate(timeout=15)
        assert turn.returncode == 0, err
        assert out.strip() == "invoice sent, all done"
    finally:
        daemon.stop()
    ok("end-to-end: CLI turn suspended, second-process CLI approval resumed it")
