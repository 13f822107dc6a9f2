"""Time-triggered jobs routed to the cheapest sufficient execution primitive.

Four modes: notify delivers a pre-authored message (zero model calls),
script runs a deterministic command (zero model calls), agent submits a
prompt to a full agent turn, hybrid runs the script first and substitutes
its stdout into the agent prompt — skipping the agent entirely when the
script fails, so tokens are never spent interpreting a broken precondition.
"""

from __future__ import annotations

import itertools
import json
import re
import subprocess
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

from .clock import WallClock
from .errors import NotFoundError, ValidationError

MODES = ("notify", "script", "agent", "hybrid")
SCRIPT_PLACEHOLDER = "{script_output}"
SCRIPT_TIMEOUT = 300.0
OUTPUT_CAP = 64 * 1024


# -- cron ----------------------------------------------------------------------

_FIELD_RANGES = ((0, 59), (0, 23), (1, 31), (1, 12), (0, 6))


def _parse_field(spec: str, low: int, high: int) -> tuple[frozenset[int], bool]:
    """One cron field to a value set; second element marks a bare '*'."""
    if spec == "*":
        return frozenset(range(low, high + 1)), True
    values: set[int] = set()
    for part in spec.split(","):
        step = 1
        if "/" in part:
            part, step_s = part.split("/", 1)
            step = int(step_s)
            if step <= 0:
                raise ValidationError(f"cron step must be positive in {spec!r}")
        if part == "*":
            lo, hi = low, high
        elif "-" in part:
            lo_s, hi_s = part.split("-", 1)
            lo, hi = int(lo_s), int(hi_s)
        else:
            lo = hi = int(part)
        if lo < low or hi > high or lo > hi:
            raise ValidationError(f"cron field {spec!r} out of range {low}-{high}")
        values.update(range(lo, hi + 1, step))
    return frozenset(values), False


@dataclass(frozen=True)
class CronSpec:
    minutes: frozenset[int]
    hours: frozenset[int]
    days: frozenset[int]
    months: frozenset[int]
    weekdays: frozenset[int]
    dom_is_star: bool
    dow_is_star: bool

    @classmethod
    def parse(cls, text: str) -> "CronSpec":
        fields = text.split()
        if len(fields) != 5:
            raise ValidationError(f"cron spec needs five fields, got {text!r}")
        fields[4] = re.sub(r"\b7\b", "0", fields[4])  # 7 is a Sunday alias
        parsed = []
        stars = []
        for raw, (low, high) in zip(fields, _FIELD_RANGES):
            try:
                values, is_star = _parse_field(raw, low, high)
            except ValueError as exc:
                raise ValidationError(f"bad cron field {raw!r}: {exc}") from exc
            parsed.append(values)
            stars.append(is_star)
        return cls(
            minutes=parsed[0],
            hours=parsed[1],
            days=parsed[2],
            months=parsed[3],
            weekdays=parsed[4],
            dom_is_star=stars[2],
            dow_is_star=stars[4],
        )

    def _day_matches(self, moment: datetime) -> bool:
        dom_ok = moment.day in self.days
        dow_ok = (moment.weekday() + 1) % 7 in self.weekdays  # cron: 0 = Sunday
        if self.dom_is_star and self.dow_is_star:
            return True
        if self.dom_is_star:
            return dow_ok
        if self.dow_is_star:
            return dom_ok
        return dom_ok or dow_ok  # both restricted: classic cron OR

    def next_after(self, ts: float) -> float:
        """Epoch seconds of the first matching minute strictly after ts (UTC)."""
        moment = datetime.fromtimestamp(ts, tz=timezone.utc).replace(
            second=0, microsecond=0
        ) + timedelta(minutes=1)
        for _ in range(366 * 24 * 60 * 4):
            if (
                moment.month in self.months
                and self._day_matches(moment)
                and moment.hour in self.hours
                and moment.minute in self.minutes
            ):
                return moment.timestamp()
            moment += timedelta(minutes=1)
        raise ValidationError("cron spec never matches within four years")


# -- jobs ------------------------------------------------------------------------


@dataclass
class ScheduledJob:
    job_id: str
    mode: str
    schedule: dict  # {"kind": "once", "at": ts} | {"kind": "cron", "spec": "..."}
    payload: dict
    enabled: bool = True
    next_due: float | None = None
    fired_instants: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "job_id": self.job_id,
            "mode": self.mode,
            "schedule": self.schedule,
            "payload": self.payload,
            "enabled": self.enabled,
            "next_due": self.next_due,
            "fired_instants": self.fired_instants[-16:],
        }

    @classmethod
    def from_json(cls, row: dict) -> "ScheduledJob":
        return cls(
            job_id=row["job_id"],
            mode=row["mode"],
            schedule=row["schedule"],
            payload=row["payload"],
            enabled=row.get("enabled", True),
            next_due=row.get("next_due"),
            fired_instants=list(row.get("fired_instants") or []),
        )


def validate_job(mode: str, schedule: dict, payload: dict) -> None:
    if mode not in MODES:
        raise ValidationError(f"unknown job mode {mode!r}")
    kind = schedule.get("kind")
    if kind == "once":
        if not isinstance(schedule.get("at"), (int, float)):
            raise ValidationError("one-shot schedule needs a numeric 'at' timestamp")
    elif kind == "cron":
        CronSpec.parse(str(schedule.get("spec", "")))
    else:
        raise ValidationError(f"schedule kind must be 'once' or 'cron', got {kind!r}")
    required = {
        "notify": ("message", "channel"),
        "script": ("command",),
        "agent": ("agent", "prompt"),
        "hybrid": ("command", "agent", "template"),
    }[mode]
    missing = [key for key in required if key not in payload]
    if missing:
        raise ValidationError(f"{mode} payload missing {missing}")
    if mode == "hybrid":
        template = str(payload["template"])
        if template.count(SCRIPT_PLACEHOLDER) != 1:
            raise ValidationError(
                f"hybrid template must contain {SCRIPT_PLACEHOLDER} exactly once"
            )


def run_script(payload: dict, timeout: float = SCRIPT_TIMEOUT) -> tuple[int, str]:
    """Run the command line, return (exit_code, stdout capped at 64 KiB)."""
    env = None
    if payload.get("env"):
        import os

        env = {**os.environ, **{str(k): str(v) for k, v in payload["env"].items()}}
    try:
        proc = subprocess.run(
            payload["command"],
            shell=True,
            cwd=payload.get("workdir") or None,
            env=env,
            capture_output=True,
            timeout=timeout,
        )
    except subprocess.TimeoutExpired:
        return 124, ""
    out = proc.stdout.decode("utf-8", errors="replace")
    return proc.returncode, out[:OUTPUT_CAP]


class TaskScheduler:
    """Job store plus the run_due pass; persisted as one JSON file."""

    def __init__(
        self,
        store_path: Path | str,
        clock=None,
        channel_sink=None,
        agent_runner=None,
        script_runner=run_script,
    ):
        self.path = Path(store_path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.clock = clock or WallClock()
        self.channel_sink = channel_sink or (lambda message, channel: print(f"[{channel}] {message}"))
        self.agent_runner = agent_runner or (lambda folder, prompt: "")
        self.script_runner = script_runner
        self._lock = threading.RLock()
        self._seq = itertools.count(1)
        self._firing_locks: dict[str, threading.Lock] = {}

    # -- store ------------------------------------------------------------

    def _load(self) -> dict[str, ScheduledJob]:
        if not self.path.exists():
            return {}
        rows = json.loads(self.path.read_text(encoding="utf-8"))
        return {row["job_id"]: ScheduledJob.from_json(row) for row in rows}

    def _save(self, jobs: dict[str, ScheduledJob]) -> None:
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps([j.to_json() for j in jobs.values()], indent=1), encoding="utf-8"
        )
        tmp.replace(self.path)

    def register_job(self, mode: str, schedule: dict, payload: dict, job_id: str | None = None) -> str:
        validate_job(mode, schedule, payload)
        with self._lock:
            jobs = self._load()
            if job_id is None:
                job_id = f"job-{len(jobs) + 1}-{next(self._seq)}"
            if job_id in jobs:
                raise ValidationError(f"job id {job_id!r} already exists")
            job = ScheduledJob(job_id=job_id, mode=mode, schedule=schedule, payload=payload)
            if schedule["kind"] == "once":
                job.next_due = float(schedule["at"])
            else:
                job.next_due = CronSpec.parse(schedule["spec"]).next_after(self.clock.now())
            jobs[job_id] = job
            self._save(jobs)
        return job_id

    def cancel_job(self, job_id: str) -> None:
        with self._lock:
            jobs = self._load()
            if job_id not in jobs:
                raise NotFoundError(f"no job {job_id!r}")
            del jobs[job_id]
            self._save(jobs)

    def list_jobs(self) -> list[ScheduledJob]:
        with self._lock:
            return sorted(self._load().values(), key=lambda j: j.job_id)

    # -- firing ---------------------------------------------------------------

    def run_due(self, now: float | None = None) -> list[tuple[str, dict]]:
        """Fire every enabled job due at `now`; at most once per due instant."""
        now = self.clock.now() if now is None else now
        fired: list[tuple[str, dict]] = []
        with self._lock:
            jobs = self._load()
            due: list[tuple[ScheduledJob, float]] = []
            for job in jobs.values():
                if not job.enabled or job.next_due is None or job.next_due > now:
                    continue
                instant = job.next_due
                if instant in job.fired_instants:
                    continue
                job.fired_instants.append(instant)
                if job.schedule["kind"] == "once":
                    job.enabled = False
                    job.next_due = None
                else:
                    job.next_due = CronSpec.parse(job.schedule["spec"]).next_after(now)
                due.append((job, instant))
            self._save(jobs)
        for job, instant in due:
            lock = self._firing_locks.setdefault(job.job_id, threading.Lock())
            with lock:
                outcome = self._execute(job)
            fired.append((job.job_id, outcome))
        return fired

    def _execute(self, job: ScheduledJob) -> dict:
        payload = job.payload
        if job.mode == "notify":
            self.channel_sink(payload["message"], payload["channel"])
            return {"status": "delivered", "channel": payload["channel"]}
        if job.mode == "script":
            code, out = self.script_runner(payload)
            if code != 0:
                return {"status": "failed", "exit_code": code}
            return {"status": "ok", "exit_code": 0, "output": out}
        if job.mode == "agent":
            reply = self.agent_runner(payload["agent"], payload["prompt"])
            return {"status": "replied", "reply": reply}
        # hybrid: script first; agent phase is skipped when the script fails
        code, out = self.script_runner(payload)
        if code != 0:
            return {"status": "failed_pre", "exit_code": code}
        prompt = str(payload["template"]).replace(SCRIPT_PLACEHOLDER, out)
        reply = self.agent_runner(payload["agent"], prompt)
        return {"status": "replied", "reply": reply, "script_output": out}
