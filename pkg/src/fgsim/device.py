"""Phone model: platform restrictions, vendor profile, power/network state."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .simulation import Simulation
    from .trace import TraceRecord

PERIODIC_FLOOR_MS = 15 * 60 * 1000
DEFAULT_GRACE_MS = 5000
BATTERY_LOW_PCT = 15
NETWORKS = ("none", "cellular", "wifi")


@dataclass(frozen=True)
class PlatformVersion:
    name: str
    bg_service_restriction: bool
    bg_sensor_restriction: bool
    while_in_use_location: bool
    periodic_floor_ms: int = PERIODIC_FLOOR_MS


OREO = PlatformVersion("oreo", True, False, False)
PIE = PlatformVersion("pie", True, True, False)
TEN = PlatformVersion("ten", True, True, True)
VERSIONS = {v.name: v for v in (OREO, PIE, TEN)}


@dataclass(frozen=True)
class BatteryBudget:
    max_sensor_actions: int = 30
    max_fgs_runtime_ms: int = 90_000
    window_ms: int = 60 * 60 * 1000

    def __post_init__(self):
        if min(self.max_sensor_actions, self.max_fgs_runtime_ms, self.window_ms) <= 0:
            raise ValueError("battery budget values must be positive")


@dataclass(frozen=True)
class DeviceProfile:
    name: str = "default"
    notification_grace_ms: int = DEFAULT_GRACE_MS
    black_image_probability: float = 0.0
    location_icon_always_visible: bool = False
    doze_maintenance_interval_ms: int = 15 * 60 * 1000
    battery_optimization_budget: BatteryBudget | None = field(default_factory=BatteryBudget)

    def __post_init__(self):
        if self.notification_grace_ms <= 0:
            raise ValueError("notification_grace_ms must be > 0")
        if not 0.0 <= self.black_image_probability <= 1.0:
            raise ValueError("black_image_probability must be in [0, 1]")
        if self.doze_maintenance_interval_ms <= 0:
            raise ValueError("doze_maintenance_interval_ms must be > 0")


# Tested handsets carry no published per-device timings, so they share the defaults.
PROFILES = {
    p.name: p for p in (
        DeviceProfile(),
        DeviceProfile(name="galaxy-s9plus"),
        DeviceProfile(name="galaxy-a50"),
        DeviceProfile(name="huawei-p-smart"),
    )
}


@dataclass
class DeviceState:
    battery_pct: int = 100
    charging: bool = False
    network: str = "wifi"
    idle: bool = False
    screen_on: bool = True
    profile: DeviceProfile = field(default_factory=DeviceProfile)
    version: PlatformVersion = PIE

    def __post_init__(self):
        if not 0 <= self.battery_pct <= 100:
            raise ValueError("battery_pct must be in [0, 100]")
        if self.network not in NETWORKS:
            raise ValueError(f"unknown network {self.network!r}")
        if self.idle and self.screen_on:
            raise ValueError("device cannot be idle with the screen on")

    def is_battery_not_low(self) -> bool:
        return self.battery_pct > BATTERY_LOW_PCT

    def network_satisfies(self, required: str | None) -> bool:
        if required is None:
            return True
        if required == "any":
            return self.network != "none"
        if required in ("unmetered", "wifi"):
            return self.network == "wifi"
        return self.network == required


class Device:
    def __init__(self, sim: "Simulation", state: DeviceState):
        self.sim = sim
        self.state = state
        self.in_maintenance = False
        self._maintenance_event: int | None = None

    @property
    def version(self) -> PlatformVersion:
        return self.state.version

    @property
    def profile(self) -> DeviceProfile:
        return self.state.profile

    def is_battery_not_low(self) -> bool:
        return self.state.is_battery_not_low()

    def deferrable_work_allowed(self) -> bool:
        return not self.state.idle or self.in_maintenance

    def apply_device_change(self, *, charging: bool | None = None, network: str | None = None,
                            idle: bool | None = None, battery_delta: int | None = None,
                            screen_on: bool | None = None) -> DeviceState:
        st = self.state
        trace = self.sim.trace
        if network is not None and network not in NETWORKS:
            raise ValueError(f"unknown network {network!r}")
        if idle and screen_on:
            raise ValueError("idle and screen_on are mutually exclusive")
        if charging is not None and charging != st.charging:
            st.charging = charging
            trace.emit("device", "device-change", "charging", str(charging).lower())
        if network is not None and network != st.network:
            st.network = network
            trace.emit("device", "device-change", "network", network)
        if battery_delta:
            want = st.battery_pct + battery_delta
            st.battery_pct = min(100, max(0, want))
            trace.emit("device", "device-change", "battery", str(st.battery_pct))
            if want != st.battery_pct:
                trace.emit("device", "battery-range", "battery", "clamped", requested=want)
        if screen_on is True and st.idle:
            idle = False
        if idle is not None and idle != st.idle:
            if idle:
                screen_on = False
            st.idle = idle
            trace.emit("device", "device-change", "idle", str(idle).lower())
            if idle:
                self._schedule_maintenance()
            elif self._maintenance_event is not None:
                self.sim.kernel.cancel_event(self._maintenance_event)
                self._maintenance_event = None
        if screen_on is not None and screen_on != st.screen_on:
            st.screen_on = screen_on
            trace.emit("device", "device-change", "screen", "on" if screen_on else "off")
        self.sim.kernel.schedule_event(self.sim.kernel.now, "constraint-reeval",
                                       lambda ev: self.sim.reevaluate_constraints())
        return st

    def _schedule_maintenance(self) -> None:
        self._maintenance_event = self.sim.kernel.schedule_in(
            self.profile.doze_maintenance_interval_ms, "doze-maintenance", self._maintenance)

    def _maintenance(self, ev) -> None:
        self._maintenance_event = None
        self.sim.trace.emit("device", "doze-maintenance")
        self.in_maintenance = True
        try:
            self.sim.reevaluate_constraints()
        finally:
            self.in_maintenance = False
        if self.state.idle:
            self._schedule_maintenance()


# Battery optimization

NONE = "none"
NOTIFY_USER = "notify-user"
STOP_APP = "stop-app"

SENSOR_ACTIONS = ("sensor-acquire", "recording-start", "location-update", "upload")


@dataclass
class WindowStats:
    sensor_actions: int = 0
    fgs_runtime_ms: int = 0


def battery_verdict(stats: WindowStats, budget: BatteryBudget | None) -> str:
    """Escalate with how far the heavier of the two usage figures overshoots.

    Within budget is ``none``; up to twice the budget notifies the user;
    beyond that the app is stopped.
    """
    if budget is None:
        return NONE
    load = max(stats.sensor_actions / budget.max_sensor_actions,
               stats.fgs_runtime_ms / budget.max_fgs_runtime_ms)
    if load <= 1.0:
        return NONE
    if load <= 2.0:
        return NOTIFY_USER
    return STOP_APP


class BatteryOptimizer:
    """Accumulates per-app usage from the trace and issues verdicts per window."""

    def __init__(self, sim: "Simulation", budget: BatteryBudget | None):
        self.sim = sim
        self.budget = budget
        self.window_start = 0
        self.stats: dict[str, WindowStats] = defaultdict(WindowStats)
        self.verdicts: list[tuple[int, str, str]] = []
        if budget is not None:
            sim.trace.listeners.append(self.observe)
            sim.kernel.schedule_event(budget.window_ms, "battery-check", self._tick)

    def observe(self, rec: "TraceRecord") -> None:
        if rec.action in SENSOR_ACTIONS and rec.outcome in ("ok", "complete", "partial"):
            self.stats[rec.actor].sensor_actions += 1
        elif rec.action == "service-stop" and rec.data.get("kind") == "foreground":
            started = max(rec.data["started_at"], self.window_start)
            self.stats[rec.actor].fgs_runtime_ms += rec.t - started

    def _tick(self, ev) -> None:
        now = self.sim.kernel.now
        # live foreground services count toward the closing window too
        for svc in self.sim.lifecycle.live_foreground_services():
            self.stats[svc.app_id].fgs_runtime_ms += now - max(svc.started_at, self.window_start)
        snapshot = {app: self.stats[app] for app in sorted(self.stats)}
        self.stats = defaultdict(WindowStats)
        # later stop records are clipped to the new window start, so no double count
        self.window_start = now
        for app, st in snapshot.items():
            self.check_battery_optimization(app, st)
        self.sim.kernel.schedule_in(self.budget.window_ms, "battery-check", self._tick)

    def check_battery_optimization(self, app: str, window_stats: WindowStats) -> str:
        verdict = battery_verdict(window_stats, self.budget)
        if verdict == NONE or app not in self.sim.lifecycle.apps:
            return verdict
        self.verdicts.append((self.sim.kernel.now, app, verdict))
        self.sim.trace.emit("battery-optimizer", "battery-verdict", app, verdict,
                            visibility="visible",
                            sensor_actions=window_stats.sensor_actions,
                            fgs_runtime_ms=window_stats.fgs_runtime_ms)
        if verdict == STOP_APP:
            self.sim.stop_app(app, reason="battery-optimization")
        return verdict
