"""Job scheduler and alarm manager.

Periodic jobs are clamped to the platform floor. One-shot jobs with a
minimum latency have no floor, which is what makes job chaining work as a
sub-floor periodic scheduler.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Callable, Union

from .context import ExecContext
from .errors import (AppStopped, ConflictingSpec, MissingBootPermission, NotRunning,
                     TimeRegression, UnknownApp)

if TYPE_CHECKING:
    from .simulation import Simulation

Payload = Union[str, Callable]

PENDING = "pending"
WAITING = "constrained-waiting"
RUNNING = "running"
DONE = "done"
CANCELLED = "cancelled"


@dataclass(frozen=True)
class JobSpec:
    app_id: str
    payload: Payload
    periodic_ms: int | None = None
    minimum_latency_ms: int | None = None
    override_deadline_ms: int | None = None
    requires_charging: bool = False
    requires_battery_not_low: bool = False
    requires_device_idle: bool = False
    required_network: str | None = None
    persisted: bool = False


@dataclass
class JobRecord:
    job_id: int
    spec: JobSpec
    state: str = PENDING
    next_due: int = 0
    period_ms: int | None = None
    deadline_at: int | None = None
    wait_reason: str | None = None
    runs: int = 0
    parent: int | None = None
    _due_event: int | None = None
    _deadline_event: int | None = None


def unmet_constraints(spec: JobSpec, state) -> list[str]:
    unmet = []
    if spec.requires_charging and not state.charging:
        unmet.append("charging")
    if spec.requires_battery_not_low and not state.is_battery_not_low():
        unmet.append("battery-not-low")
    if spec.requires_device_idle and not state.idle:
        unmet.append("device-idle")
    if not state.network_satisfies(spec.required_network):
        unmet.append("network")
    return unmet


class JobScheduler:
    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.jobs: dict[int, JobRecord] = {}
        self._ids = itertools.count(1)

    def _payload(self, payload: Payload) -> Callable:
        return payload if callable(payload) else self.sim.payloads[payload]

    def schedule_job(self, spec: JobSpec, *, parent: int | None = None) -> int:
        sim = self.sim
        if spec.app_id not in sim.lifecycle.apps:
            raise UnknownApp(spec.app_id)
        if sim.kernel.is_stopped(spec.app_id):
            raise AppStopped(spec.app_id)
        if spec.periodic_ms is not None and spec.minimum_latency_ms is not None:
            raise ConflictingSpec("periodic and minimum latency are mutually exclusive")
        if spec.persisted and not sim.permissions.holds(spec.app_id, "boot-completed"):
            sim.trace.emit(spec.app_id, "job-rejected", "job", "missing-boot-permission")
            raise MissingBootPermission(spec.app_id)
        for name in ("periodic_ms", "minimum_latency_ms", "override_deadline_ms"):
            value = getattr(spec, name)
            if value is not None and value < 0:
                raise ConflictingSpec(f"{name} must be >= 0")

        now = sim.kernel.now
        rec = JobRecord(next(self._ids), spec, parent=parent)
        if spec.periodic_ms is not None:
            floor = sim.device.version.periodic_floor_ms
            rec.period_ms = max(spec.periodic_ms, floor)
            delay = rec.period_ms
        else:
            delay = spec.minimum_latency_ms or 0
        if spec.override_deadline_ms is not None and spec.override_deadline_ms < delay:
            raise ConflictingSpec("override deadline earlier than the first due time")
        self.jobs[rec.job_id] = rec
        sim.trace.emit(spec.app_id, "job-scheduled", f"job:{rec.job_id}",
                       due_in_ms=delay, periodic_ms=rec.period_ms, parent=parent,
                       deadline_ms=spec.override_deadline_ms)
        if rec.period_ms is not None and rec.period_ms != spec.periodic_ms:
            sim.trace.emit(spec.app_id, "job-clamped", f"job:{rec.job_id}",
                           requested_ms=spec.periodic_ms, effective_ms=rec.period_ms)
        self._arm(rec, now + delay)
        return rec.job_id

    def _arm(self, rec: JobRecord, due: int) -> None:
        k = self.sim.kernel
        rec.state = PENDING
        rec.next_due = due
        rec._due_event = k.schedule_event(due, "job-due", self._on_due,
                                          owner=rec.spec.app_id, job_id=rec.job_id)
        if rec.spec.override_deadline_ms is not None:
            rec.deadline_at = k.now + rec.spec.override_deadline_ms
            rec._deadline_event = k.schedule_event(rec.deadline_at, "job-deadline", self._on_due,
                                                   owner=rec.spec.app_id, job_id=rec.job_id)

    def _disarm(self, rec: JobRecord) -> None:
        for ev in (rec._due_event, rec._deadline_event):
            if ev is not None:
                self.sim.kernel.cancel_event(ev)
        rec._due_event = rec._deadline_event = None

    def _on_due(self, ev) -> None:
        rec = self.jobs[ev.data["job_id"]]
        if ev.kind == "job-due":
            rec._due_event = None
        else:
            rec._deadline_event = None
        if rec.state in (PENDING, WAITING) and rec.next_due <= self.sim.kernel.now:
            self._try_run(rec)

    def _wait(self, rec: JobRecord, reason: str) -> None:
        if rec.state != WAITING or rec.wait_reason != reason:
            self.sim.trace.emit(rec.spec.app_id, "job-deferred", f"job:{rec.job_id}", reason)
        rec.state = WAITING
        rec.wait_reason = reason

    def _try_run(self, rec: JobRecord) -> bool:
        sim = self.sim
        if not sim.device.deferrable_work_allowed():
            self._wait(rec, "doze")
            return False
        unmet = unmet_constraints(rec.spec, sim.device.state)
        deadline_passed = rec.deadline_at is not None and sim.kernel.now >= rec.deadline_at
        if unmet and not deadline_passed:
            self._wait(rec, ",".join(unmet))
            return False
        self._run(rec, forced=bool(unmet))
        return True

    def _run(self, rec: JobRecord, forced: bool) -> None:
        sim = self.sim
        self._disarm(rec)
        rec.state = RUNNING
        rec.wait_reason = None
        rec.runs += 1
        sim.trace.emit(rec.spec.app_id, "job-forced" if forced else "job-fired",
                       f"job:{rec.job_id}", visibility=sim.lifecycle.visibility_for(rec.spec.app_id),
                       run=rec.runs)
        try:
            self._payload(rec.spec.payload)(ExecContext.scheduler(rec.spec.app_id, rec.job_id), rec)
        finally:
            if rec.state == RUNNING:
                if rec.period_ms is not None and not sim.kernel.is_stopped(rec.spec.app_id):
                    self._arm(rec, sim.kernel.now + rec.period_ms)
                else:
                    rec.state = DONE

    def fire_due_jobs(self, now: int | None = None) -> int:
        """Try every due pending or waiting job, oldest first."""
        now = self.sim.kernel.now if now is None else now
        fired = 0
        for job_id in sorted(self.jobs):
            rec = self.jobs[job_id]
            if rec.state in (PENDING, WAITING) and rec.next_due <= now:
                fired += self._try_run(rec)
        return fired

    def chain_next(self, job_id: int, delay_ms: int) -> int:
        rec = self.jobs.get(job_id)
        if rec is None or rec.state != RUNNING:
            raise NotRunning(f"job {job_id} is not running")
        deadline = rec.spec.override_deadline_ms
        spec = replace(rec.spec, periodic_ms=None, minimum_latency_ms=delay_ms,
                       override_deadline_ms=deadline if deadline is not None and deadline >= delay_ms else None)
        return self.schedule_job(spec, parent=job_id)

    def cancel_job(self, job_id: int) -> bool:
        rec = self.jobs.get(job_id)
        if rec is None or rec.state in (DONE, CANCELLED):
            return False
        self._disarm(rec)
        rec.state = CANCELLED
        self.sim.trace.emit(rec.spec.app_id, "job-cancelled", f"job:{job_id}")
        return True

    def cancel_app(self, app_id: str) -> int:
        return sum(self.cancel_job(j) for j in sorted(self.jobs) if self.jobs[j].spec.app_id == app_id)

    def live_jobs(self, app_id: str | None = None) -> list[JobRecord]:
        return [r for r in self.jobs.values()
                if r.state in (PENDING, WAITING, RUNNING) and (app_id is None or r.spec.app_id == app_id)]

    def on_reboot(self) -> int:
        survivors = 0
        now = self.sim.kernel.now
        for job_id in sorted(self.jobs):
            rec = self.jobs[job_id]
            if rec.state not in (PENDING, WAITING):
                continue
            self._disarm(rec)
            if rec.spec.persisted:
                survivors += 1
                rec.wait_reason = None
                self._arm(rec, max(rec.next_due, now))
            else:
                rec.state = CANCELLED
        return survivors


@dataclass(frozen=True)
class AlarmSpec:
    app_id: str
    fire_at: int
    payload: Payload
    repeat_ms: int | None = None
    allow_while_idle: bool = False


@dataclass
class AlarmRecord:
    alarm_id: int
    spec: AlarmSpec
    next_fire: int
    state: str = PENDING
    fired: int = 0
    _event: int | None = None


class AlarmManager:
    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.alarms: dict[int, AlarmRecord] = {}
        self._ids = itertools.count(1)

    def set_alarm(self, spec: AlarmSpec) -> int:
        sim = self.sim
        if spec.app_id not in sim.lifecycle.apps:
            raise UnknownApp(spec.app_id)
        if spec.fire_at < sim.kernel.now:
            raise TimeRegression(f"alarm at {spec.fire_at} < now {sim.kernel.now}")
        if spec.repeat_ms is not None and spec.repeat_ms <= 0:
            raise ConflictingSpec("repeat_ms must be > 0")
        rec = AlarmRecord(next(self._ids), spec, spec.fire_at)
        self.alarms[rec.alarm_id] = rec
        sim.trace.emit(spec.app_id, "alarm-set", f"alarm:{rec.alarm_id}",
                       fire_at=spec.fire_at, repeat_ms=spec.repeat_ms)
        self._arm(rec)
        return rec.alarm_id

    def _arm(self, rec: AlarmRecord) -> None:
        rec.state = PENDING
        rec._event = self.sim.kernel.schedule_event(rec.next_fire, "alarm-due", self._on_due,
                                                    owner=rec.spec.app_id, alarm_id=rec.alarm_id)

    def cancel_alarm(self, alarm_id: int) -> bool:
        rec = self.alarms.get(alarm_id)
        if rec is None or rec.state not in (PENDING, WAITING):
            return False
        if rec._event is not None:
            self.sim.kernel.cancel_event(rec._event)
        rec.state = CANCELLED
        self.sim.trace.emit(rec.spec.app_id, "alarm-cancelled", f"alarm:{alarm_id}")
        return True

    def _on_due(self, ev) -> None:
        rec = self.alarms[ev.data["alarm_id"]]
        rec._event = None
        if rec.state != PENDING:
            return
        if not rec.spec.allow_while_idle and not self.sim.device.deferrable_work_allowed():
            rec.state = WAITING
            self.sim.trace.emit(rec.spec.app_id, "alarm-deferred", f"alarm:{rec.alarm_id}", "doze")
            return
        self._fire(rec)

    def _fire(self, rec: AlarmRecord) -> None:
        sim = self.sim
        now = sim.kernel.now
        rec.fired += 1
        rec.state = RUNNING
        sim.trace.emit(rec.spec.app_id, "alarm-fired", f"alarm:{rec.alarm_id}",
                       visibility=sim.lifecycle.visibility_for(rec.spec.app_id), run=rec.fired)
        try:
            payload = rec.spec.payload
            payload = payload if callable(payload) else sim.payloads[payload]
            payload(ExecContext.scheduler(rec.spec.app_id), rec)
        finally:
            if rec.state == RUNNING:
                if rec.spec.repeat_ms is not None and not sim.kernel.is_stopped(rec.spec.app_id):
                    nxt = rec.next_fire + rec.spec.repeat_ms
                    rec.next_fire = nxt if nxt > now else now + rec.spec.repeat_ms
                    self._arm(rec)
                else:
                    rec.state = DONE

    def release_deferred(self) -> int:
        released = 0
        for alarm_id in sorted(self.alarms):
            rec = self.alarms[alarm_id]
            if rec.state == WAITING:
                self._fire(rec)
                released += 1
        return released

    def cancel_app(self, app_id: str) -> int:
        return sum(self.cancel_alarm(a) for a in sorted(self.alarms)
                   if self.alarms[a].spec.app_id == app_id)

    def on_reboot(self) -> int:
        cleared = 0
        for alarm_id in sorted(self.alarms):
            rec = self.alarms[alarm_id]
            if rec.state in (PENDING, WAITING):
                if rec._event is not None:
                    self.sim.kernel.cancel_event(rec._event)
                rec.state = CANCELLED
                cleared += 1
        return cleared
