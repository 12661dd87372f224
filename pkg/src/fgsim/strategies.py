"""Attacker payloads: chained jobs that each spawn a short foreground service.

Every cycle starts a foreground service with decoy notification content,
runs the configured actions while the service is up, schedules the service
stop ``fgs_budget_ms`` later, and re-arms itself with a fresh minimum-latency
job. Failures of individual actions are counted, never allowed to break the
chain.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .errors import SimError
from .lifecycle import FOREGROUNDED
from .schedulers import AlarmSpec, JobSpec

if TYPE_CHECKING:
    from .context import ExecContext
    from .simulation import Simulation

ACTION_KINDS = ("capture-image", "mic-toggle", "mic-start", "mic-stop", "location-burst",
                "list-files", "upload", "exfil-next")
CONSTRAINT_KEYS = ("requires_charging", "requires_battery_not_low", "requires_device_idle",
                   "required_network", "persisted", "override_deadline_ms")
DEFAULT_BUDGET_MS = 4000
DECOY = {"title": "Updating", "text": "Checking for updates"}


@dataclass(frozen=True)
class Action:
    kind: str
    cadence_ms: int | None = None
    duration_ms: int | None = None
    path: str | None = None
    max_bytes: int | None = None
    cycles: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in ACTION_KINDS:
            raise ValueError(f"unknown action {self.kind!r}")
        if self.kind == "location-burst" and (self.cadence_ms is None or self.cadence_ms <= 0):
            raise ValueError("location-burst needs cadence_ms > 0")
        if self.kind == "upload" and not self.path:
            raise ValueError("upload needs a path")

    def runs_in(self, cycle: int) -> bool:
        return self.cycles is None or cycle in self.cycles


@dataclass(frozen=True)
class StrategySpec:
    name: str
    app_id: str
    actions: tuple[Action, ...]
    chain_delay_ms: int = 60_000
    fgs_budget_ms: int = DEFAULT_BUDGET_MS
    start_at_ms: int = 0
    declared_type: str | None = None
    notification: dict = field(default_factory=lambda: dict(DECOY))
    constraints: dict = field(default_factory=dict)
    via: str = "job"
    max_cycles: int | None = None

    def __post_init__(self):
        if not self.actions:
            raise ValueError("a strategy needs at least one action")
        if self.fgs_budget_ms < 0 or self.chain_delay_ms < 0 or self.start_at_ms < 0:
            raise ValueError("durations must be >= 0")
        if self.via not in ("job", "alarm"):
            raise ValueError(f"unknown scheduler {self.via!r}")
        unknown = set(self.constraints) - set(CONSTRAINT_KEYS)
        if unknown:
            raise ValueError(f"unknown constraints {sorted(unknown)}")


@dataclass
class StrategyRunStats:
    cycles_executed: int = 0
    notifications_leaked: int = 0
    data_items: Counter = field(default_factory=Counter)
    errors: Counter = field(default_factory=Counter)
    recording_ms: int = 0
    bytes_uploaded: int = 0

    @property
    def items_collected(self) -> int:
        return sum(self.data_items.values())

    def merge(self, other: "StrategyRunStats") -> None:
        self.cycles_executed += other.cycles_executed
        self.notifications_leaked += other.notifications_leaked
        self.data_items.update(other.data_items)
        self.errors.update(other.errors)
        self.recording_ms += other.recording_ms
        self.bytes_uploaded += other.bytes_uploaded

    def to_dict(self) -> dict:
        return {
            "cycles_executed": self.cycles_executed,
            "notifications_leaked": self.notifications_leaked,
            "data_items": dict(sorted(self.data_items.items())),
            "items_collected": self.items_collected,
            "errors": dict(sorted(self.errors.items())),
            "recording_ms": self.recording_ms,
            "bytes_uploaded": self.bytes_uploaded,
        }


class Strategy:
    def __init__(self, sim: "Simulation", spec: StrategySpec):
        self.sim = sim
        self.spec = spec
        self.stats = StrategyRunStats()
        self.service_ids: set[int] = set()
        self.session_id: int | None = None
        self.exfiltrated: set[str] = set()
        sim.lifecycle.listeners.append(self._on_notification)

    def install(self) -> None:
        self.sim.kernel.schedule_event(self.spec.start_at_ms, "strategy-step", self._arm_first,
                                       owner=self.spec.app_id, strategy=self.spec.name)

    def _job_spec(self, delay: int) -> JobSpec:
        return JobSpec(self.spec.app_id, self._on_fire, minimum_latency_ms=delay,
                       **self.spec.constraints)

    def _arm_first(self, ev) -> None:
        delay = self.spec.chain_delay_ms
        if self.spec.via == "alarm":
            self.sim.alarms.set_alarm(AlarmSpec(self.spec.app_id, self.sim.kernel.now + delay,
                                                self._on_fire))
        else:
            self.sim.jobs.schedule_job(self._job_spec(delay))

    def _on_notification(self, svc, notification) -> None:
        if svc.service_id in self.service_ids and notification.visibility == "visible":
            self.stats.notifications_leaked += 1

    def _on_fire(self, ctx: "ExecContext", record) -> None:
        self.invisible_fgs_cycle(ctx, record)

    def invisible_fgs_cycle(self, ctx: "ExecContext", record=None) -> StrategyRunStats:
        sim, spec = self.sim, self.spec
        delta = StrategyRunStats(cycles_executed=1)
        cycle = self.stats.cycles_executed
        try:
            sid = sim.lifecycle.start_foreground_service(spec.app_id, spec.notification,
                                                         spec.declared_type)
        except SimError as exc:
            delta.errors[exc.code] += 1
        else:
            self.service_ids.add(sid)
            fctx = sim.lifecycle.services[sid].context
            for action in spec.actions:
                if not action.runs_in(cycle):
                    continue
                try:
                    self._perform(action, fctx, delta)
                except SimError as exc:
                    delta.errors[exc.code] += 1
                except FileNotFoundError:
                    delta.errors["file-not-found"] += 1
            sim.kernel.schedule_in(spec.fgs_budget_ms, "service-stop", self._stop,
                                   owner=spec.app_id, service_id=sid)
        self.stats.merge(delta)
        if spec.max_cycles is None or self.stats.cycles_executed < spec.max_cycles:
            self._chain(record)
        return delta

    def _chain(self, record) -> None:
        sim, spec = self.sim, self.spec
        if spec.via == "alarm":
            sim.alarms.set_alarm(AlarmSpec(spec.app_id, sim.kernel.now + spec.chain_delay_ms,
                                           self._on_fire))
        else:
            sim.jobs.chain_next(record.job_id, spec.chain_delay_ms)

    def _stop(self, ev) -> None:
        svc = self.sim.lifecycle.services[ev.data["service_id"]]
        if svc.state == FOREGROUNDED:
            self.sim.lifecycle.stop_foreground(svc.service_id, remove_notification=True)

    def _perform(self, action: Action, fctx: "ExecContext", delta: StrategyRunStats) -> None:
        sim, app = self.sim, self.spec.app_id
        kind = action.kind
        if kind == "capture-image":
            lease = sim.camera.acquire_camera(app, fctx)
            try:
                if sim.camera.capture_image(lease) == "ok":
                    delta.data_items["images"] += 1
                else:
                    delta.errors["black-frame"] += 1
            finally:
                sim.camera.release(lease)
        elif kind in ("mic-start", "mic-stop", "mic-toggle"):
            recording = self.session_id is not None
            if kind == "mic-start" or (kind == "mic-toggle" and not recording):
                if not recording:
                    self.session_id = sim.media.mic_start(app, fctx).session_id
            elif recording:
                duration = sim.media.mic_stop(self.session_id)
                self.session_id = None
                delta.data_items["recordings"] += 1
                delta.recording_ms += duration
        elif kind == "location-burst":
            duration = action.duration_ms if action.duration_ms is not None else self.spec.fgs_budget_ms
            sim.location.request_location_updates(app, fctx, action.cadence_ms, duration,
                                                  on_update=self._on_location)
        elif kind == "list-files":
            sim.storage.list_external_files(app, fctx)
            delta.data_items["file-lists"] += 1
        elif kind == "upload":
            self._upload(action.path, fctx, delta)
        elif kind == "exfil-next":
            for f in sim.storage.list_external_files(app, fctx):
                if f.path in self.exfiltrated:
                    continue
                if action.max_bytes is not None and f.size_bytes > action.max_bytes:
                    continue
                self._upload(f.path, fctx, delta)
                break

    def _upload(self, path: str, fctx, delta: StrategyRunStats) -> None:
        result = self.sim.storage.upload_file(self.spec.app_id, fctx, path, self.spec.fgs_budget_ms)
        delta.bytes_uploaded += result.bytes_sent
        if result.complete:
            self.exfiltrated.add(path)
            delta.data_items["uploads"] += 1
        else:
            delta.errors["partial-upload"] += 1

    def _on_location(self, sub) -> None:
        self.stats.data_items["locations"] += 1


# preset builders

def camera_spy(app_id: str, **kw) -> StrategySpec:
    return StrategySpec(kw.pop("name", "camera-spy"), app_id, (Action("capture-image"),), **kw)


def mic_long_record_strategy(app_id: str, start_cycle: int, stop_cycle: int, **kw) -> StrategySpec:
    """Start recording in one cycle and stop it in a later one.

    The recording belongs to the media server, so its length is the gap
    between the two cycles, not the foreground service's lifetime.
    """
    if stop_cycle < start_cycle or start_cycle < 0:
        raise ValueError("need 0 <= start_cycle <= stop_cycle")
    actions = (Action("mic-start", cycles=(start_cycle,)), Action("mic-stop", cycles=(stop_cycle,)))
    return StrategySpec(kw.pop("name", "mic-spy"), app_id, actions, **kw)


def location_tracking_strategy(app_id: str, cadence_ms: int, **kw) -> StrategySpec:
    kw.setdefault("declared_type", "location")
    return StrategySpec(kw.pop("name", "location-spy"), app_id,
                        (Action("location-burst", cadence_ms=cadence_ms),), **kw)


def file_exfil_strategy(app_id: str, max_bytes: int | None = None, **kw) -> StrategySpec:
    return StrategySpec(kw.pop("name", "exfil"), app_id,
                        (Action("exfil-next", max_bytes=max_bytes),), **kw)
