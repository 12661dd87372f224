"""One simulated phone: wires the kernel, device, OS services and agents."""

from __future__ import annotations

from dataclasses import dataclass, field

from .device import (BatteryOptimizer, Device, DeviceProfile, DeviceState, PlatformVersion,
                     VERSIONS)
from .kernel import Kernel
from .lifecycle import FOREGROUND, Lifecycle
from .monitor import Monitor, MonitorConfig, build_report
from .permissions import PermissionManager, RevocationPolicy
from .schedulers import AlarmManager, JobScheduler
from .sensors import (BACKGROUND_LOCATION_CAP, Camera, ExternalStorage, LocationManager,
                      MediaServer, StoredFile)
from .strategies import Strategy, StrategySpec
from .trace import TraceLog

REVOCATION_SWEEP_MS = 60_000


@dataclass
class RunResult:
    trace: TraceLog
    report: dict
    strategies: dict
    violations: list[str] = field(default_factory=list)

    @property
    def items_collected(self) -> int:
        return sum(s["items_collected"] for s in self.strategies.values())

    def summary(self) -> dict:
        findings = [f for app in self.report["apps"].values() for f in app["findings"]]
        return {
            "cycles": sum(s["cycles_executed"] for s in self.strategies.values()),
            "leaks": sum(s["notifications_leaked"] for s in self.strategies.values()),
            "items_collected": self.items_collected,
            "collected": {name: s["data_items"] for name, s in self.strategies.items()},
            "findings": len(findings),
            "abusive_findings": sum(f["severity"] == "abusive" for f in findings),
            "violations": list(self.violations),
        }


class Simulation:
    def __init__(self, version: str | PlatformVersion = "pie", profile: DeviceProfile | None = None,
                 seed: int = 0, *, device: dict | None = None,
                 policy: RevocationPolicy | None = None,
                 monitor_config: MonitorConfig | None = None, mitigation: bool = False,
                 files=(), bandwidth: dict | None = None,
                 background_location_cap: int = BACKGROUND_LOCATION_CAP,
                 scenario_name: str | None = None):
        if isinstance(version, str):
            version = VERSIONS[version]
        profile = profile or DeviceProfile()
        self.seed = seed
        self.mitigation = mitigation
        self.kernel = Kernel(seed)
        monitor_config = monitor_config or MonitorConfig()
        self.trace = TraceLog(lambda: self.kernel.now, {
            "seed": seed, "scenario": scenario_name, "version": version.name,
            "profile": profile.name, "monitor": monitor_config.to_dict(),
            "mitigation": mitigation,
        })
        self.payloads: dict = {}
        self.device = Device(self, DeviceState(profile=profile, version=version, **(device or {})))
        self.permissions = PermissionManager(self, policy)
        self.lifecycle = Lifecycle(self)
        self.camera = Camera(self)
        self.media = MediaServer(self)
        self.location = LocationManager(self, background_location_cap)
        self.storage = ExternalStorage(self, files, bandwidth)
        self.jobs = JobScheduler(self)
        self.alarms = AlarmManager(self)
        self.battery = BatteryOptimizer(self, profile.battery_optimization_budget)
        self.monitor = Monitor(monitor_config)
        self.trace.listeners.append(self.monitor.ingest)
        self.strategies: list[Strategy] = []
        self._clock_violations: list[str] = []
        self._last_fire = 0
        self.kernel.observers.append(self._watch_clock)
        if mitigation:
            self.kernel.schedule_event(monitor_config.window_ms, "monitor-tick", self._monitor_tick)
        if self.permissions.policy.mode != "off":
            self.kernel.schedule_event(0, "revocation-sweep", self._sweep)

    @property
    def now(self) -> int:
        return self.kernel.now

    def _watch_clock(self, ev) -> None:
        if ev.fire_at < self._last_fire:
            self._clock_violations.append(f"event {ev.seq} at {ev.fire_at} < {self._last_fire}")
        self._last_fire = ev.fire_at

    # setup

    def install_app(self, app_id: str, grants: dict | None = None, ui_visible: bool = False) -> None:
        self.lifecycle.install_app(app_id, ui_visible)
        for permission, level in (grants or {}).items():
            self.permissions.grant(app_id, permission, level)

    def add_file(self, path: str, size_bytes: int, location_metadata: bool = False) -> None:
        self.storage.add_file(StoredFile(path, size_bytes, location_metadata))

    def add_strategy(self, spec: StrategySpec) -> Strategy:
        strategy = Strategy(self, spec)
        self.strategies.append(strategy)
        strategy.install()
        return strategy

    def at(self, t: int, kind: str, fn, *args, **kwargs) -> int:
        """Schedule a plain callback, e.g. a scripted device or user change."""
        return self.kernel.schedule_event(t, kind, lambda ev: fn(*args, **kwargs))

    # system behaviour

    def reevaluate_constraints(self) -> None:
        self.jobs.fire_due_jobs()
        if self.device.deferrable_work_allowed():
            self.alarms.release_deferred()

    def stop_app(self, app_id: str, reason: str = "user") -> None:
        self.trace.emit("system", "app-stopped", app_id, reason, visibility="visible")
        self.lifecycle.kill_app(app_id)
        self.camera.release_app(app_id)
        self.location.end_app(app_id)
        self.jobs.cancel_app(app_id)
        self.alarms.cancel_app(app_id)
        self.kernel.stop_owner(app_id)

    def reenable_app(self, app_id: str) -> None:
        self.kernel.restart_owner(app_id)
        self.trace.emit("system", "app-reenabled", app_id, visibility="visible")

    def reboot(self) -> int:
        for app_id in sorted(self.lifecycle.apps):
            self.lifecycle.kill_app(app_id)
            self.location.end_app(app_id)
            self.lifecycle.set_ui_visible(app_id, False)
        if self.camera.lease is not None:
            self.camera.release(self.camera.lease)
        for s in self.media.open_sessions():
            self.media.mic_stop(s.session_id, reason="reboot")
        alarms = self.alarms.on_reboot()
        survivors = self.jobs.on_reboot()
        self.trace.emit("system", "reboot", "device", surviving_jobs=survivors,
                        cleared_alarms=alarms)
        return survivors

    def _monitor_tick(self, ev) -> None:
        for finding in self.monitor.close_until(self.kernel.now):
            if finding.severity != "abusive":
                continue
            for permission in self.monitor.permissions_to_revoke(finding):
                self.permissions.revoke(finding.app_id, permission, policy="monitor")
        self.kernel.schedule_in(self.monitor.config.window_ms, "monitor-tick", self._monitor_tick)

    def _sweep(self, ev) -> None:
        self.permissions.apply_revocation_policy()
        self.kernel.schedule_in(REVOCATION_SWEEP_MS, "revocation-sweep", self._sweep)

    # running

    def run(self, horizon_ms: int) -> RunResult:
        self.trace.header["horizon_ms"] = horizon_ms
        self.kernel.run_until(horizon_ms)
        self.kernel.advance_to(horizon_ms)
        for s in self.media.open_sessions():
            self.trace.emit("media-server", "recording-open", "microphone",
                            session=s.session_id, app=s.app_id, started_at=s.started_at)
        self.trace.emit("system", "run-end", "", horizon_ms=horizon_ms)
        return RunResult(self.trace, self.report(), self.strategy_stats(), self.check_invariants())

    def report(self) -> dict:
        return build_report(self.trace.header, self.trace.records)

    def strategy_stats(self) -> dict:
        out = {}
        for s in self.strategies:
            out[f"{s.spec.app_id}/{s.spec.name}"] = s.stats.to_dict()
        return out

    def check_invariants(self) -> list[str]:
        problems = list(self._clock_violations)
        keys = [(r.t, r.seq) for r in self.trace.records]
        if any(a >= b for a, b in zip(keys, keys[1:])):
            problems.append("trace records not strictly ordered")
        leases = sorted(self.camera.history, key=lambda l: (l.acquired_at, l.lease_id))
        for a, b in zip(leases, leases[1:]):
            end = a.released_at if a.released_at is not None else self.kernel.now + 1
            if b.acquired_at < end:
                problems.append(f"camera leases {a.lease_id} and {b.lease_id} overlap")
        grace = self.device.profile.notification_grace_ms
        for svc in self.lifecycle.services.values():
            if svc.kind != FOREGROUND or svc.stopped_at is None:
                continue
            posted = svc.notification_id is not None
            if posted != (svc.stopped_at - svc.started_at >= grace):
                problems.append(f"service {svc.service_id} notification/runtime mismatch")
        return problems
