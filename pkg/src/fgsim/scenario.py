"""Scenario files: YAML in, validated :class:`Scenario` out.

Validation collects every problem it finds, each tagged with the line of the
offending node, and raises them together as one ValidationError.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .device import PROFILES, VERSIONS, BatteryBudget, DeviceProfile, PlatformVersion
from .errors import IllegalLevel, ParseError, ValidationError
from .monitor import MonitorConfig
from .permissions import RevocationPolicy, validate_level
from .sensors import BACKGROUND_LOCATION_CAP, DEFAULT_BANDWIDTH, StoredFile
from .simulation import Simulation
from .strategies import CONSTRAINT_KEYS, Action, StrategySpec

PRESETS = ("camera-spy", "mic-spy", "location-spy", "exfil", "combined")
TOP_KEYS = {"name", "version", "profile", "seed", "horizon_ms", "device", "bandwidth", "apps",
            "storage", "timeline", "strategies", "monitor", "mitigation", "revocation",
            "background_location_cap", "description"}
DEVICE_CHANGES = ("charging", "network", "idle", "battery_delta", "screen_on")
TIMELINE_KINDS = DEVICE_CHANGES + ("camera_hold", "reboot", "ui", "notifications", "stop_app",
                                   "revoke")


@dataclass
class AppSpec:
    app_id: str
    grants: dict = field(default_factory=dict)
    ui_visible: bool = False
    ui: list = field(default_factory=list)          # [(t, visible)]


@dataclass
class Scenario:
    name: str
    version: PlatformVersion
    profile: DeviceProfile
    horizon_ms: int
    seed: int = 0
    apps: list[AppSpec] = field(default_factory=list)
    device: dict = field(default_factory=dict)
    files: list[StoredFile] = field(default_factory=list)
    bandwidth: dict = field(default_factory=lambda: dict(DEFAULT_BANDWIDTH))
    timeline: list[dict] = field(default_factory=list)
    strategies: list[StrategySpec] = field(default_factory=list)
    monitor: MonitorConfig = field(default_factory=MonitorConfig)
    mitigation: bool = False
    revocation: RevocationPolicy = field(default_factory=RevocationPolicy)
    background_location_cap: int = BACKGROUND_LOCATION_CAP

    def build(self, *, seed: int | None = None, mitigation: bool | None = None) -> Simulation:
        sim = Simulation(self.version, self.profile, self.seed if seed is None else seed,
                         device=self.device, policy=self.revocation, monitor_config=self.monitor,
                         mitigation=self.mitigation if mitigation is None else mitigation,
                         files=self.files, bandwidth=self.bandwidth,
                         background_location_cap=self.background_location_cap,
                         scenario_name=self.name)
        for app in self.apps:
            sim.install_app(app.app_id, app.grants, app.ui_visible)
            for t, visible in app.ui:
                sim.at(t, "ui-change", sim.lifecycle.set_ui_visible, app.app_id, visible)
        for entry in self.timeline:
            _schedule_change(sim, entry)
        for spec in self.strategies:
            sim.add_strategy(spec)
        return sim

    def run(self, **kw):
        return self.build(**kw).run(self.horizon_ms)


def _schedule_change(sim: Simulation, entry: dict) -> None:
    t = entry["at"]
    change = {k: v for k, v in entry.items() if k != "at"}
    device = {k: v for k, v in change.items() if k in DEVICE_CHANGES}
    if device:
        sim.at(t, "device-change", sim.device.apply_device_change, **device)
    if "camera_hold" in change:
        hold = change["camera_hold"]
        sim.at(t, "sensor-op", _try_hold, sim, hold.get("holder", "face-unlock"), hold.get("duration_ms"))
    if change.get("reboot"):
        sim.at(t, "reboot", sim.reboot)
    if "ui" in change:
        sim.at(t, "ui-change", sim.lifecycle.set_ui_visible, change["ui"]["app"], change["ui"]["visible"])
    if "notifications" in change:
        n = change["notifications"]
        fn = sim.lifecycle.user_enable_notifications if n["enabled"] else sim.lifecycle.user_disable_notifications
        sim.at(t, "user-action", fn, n["app"])
    if "stop_app" in change:
        sim.at(t, "user-action", sim.stop_app, change["stop_app"], "user")
    if "revoke" in change:
        r = change["revoke"]
        sim.at(t, "user-action", sim.permissions.revoke, r["app"], r["permission"], "user")


def _try_hold(sim: Simulation, holder: str, duration_ms) -> None:
    from .errors import SensorBusy
    try:
        sim.camera.hold(holder, duration_ms)
    except SensorBusy:
        sim.trace.emit(holder, "sensor-deny", "camera", "sensor-busy")


# YAML with line numbers

def _compose(text: str, source: str):
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ParseError(f"{source}: {exc}") from exc
    if node is None:
        raise ParseError(f"{source}: empty scenario")
    return node


def _plain(node, path=(), lines=None):
    """Convert a composed node to Python values, remembering each path's line."""
    lines = {} if lines is None else lines
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = _plain(k, path, {})[0]
            out[key] = _plain(v, path + (key,), lines)[0]
        return out, lines
    if isinstance(node, yaml.SequenceNode):
        return [_plain(v, path + (i,), lines)[0] for i, v in enumerate(node.value)], lines
    return _SCALARS.construct_object(node, deep=True), lines


_SCALARS = yaml.SafeLoader("")


class _Checker:
    def __init__(self, lines: dict, source: str):
        self.lines = lines
        self.source = source
        self.errors: list[str] = []

    def err(self, path, msg: str) -> None:
        p = tuple(path)
        while p and p not in self.lines:
            p = p[:-1]
        line = self.lines.get(p, 1)
        where = ".".join(str(x) for x in path) or "<root>"
        self.errors.append(f"{self.source}:{line}: {where}: {msg}")

    def int_(self, value, path, minimum=0, allow_none=False):
        if value is None and allow_none:
            return None
        if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
            self.err(path, f"expected integer >= {minimum}, got {value!r}")
            return None
        return value

    def bool_(self, value, path):
        if not isinstance(value, bool):
            self.err(path, f"expected true/false, got {value!r}")
            return False
        return value

    def mapping(self, value, path) -> dict:
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.err(path, "expected a mapping")
            return {}
        return value


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    raw, lines = _plain(_compose(text, source))
    if not isinstance(raw, dict):
        raise ParseError(f"{source}: top level must be a mapping")
    c = _Checker(lines, source)
    for key in sorted(set(raw) - TOP_KEYS, key=str):
        c.err((key,), "unknown key")

    version = VERSIONS.get(raw.get("version", "pie"))
    if version is None:
        c.err(("version",), f"unknown version {raw.get('version')!r}; expected one of {sorted(VERSIONS)}")
        version = VERSIONS["pie"]
    profile = _profile(raw.get("profile", "default"), c)
    horizon = c.int_(raw.get("horizon_ms"), ("horizon_ms",), minimum=1) or 1
    seed = c.int_(raw.get("seed", 0), ("seed",)) or 0

    device = c.mapping(raw.get("device"), ("device",))
    for k in sorted(set(device) - {"battery_pct", "charging", "network", "idle", "screen_on"}):
        c.err(("device", k), "unknown device field")
    if device.get("network", "wifi") not in ("none", "cellular", "wifi"):
        c.err(("device", "network"), f"unknown network {device.get('network')!r}")
    if "battery_pct" in device:
        pct = c.int_(device["battery_pct"], ("device", "battery_pct"))
        if pct is not None and pct > 100:
            c.err(("device", "battery_pct"), "must be within 0..100")
    if device.get("idle") and device.get("screen_on", True):
        device = {**device, "screen_on": False}

    apps = _apps(raw.get("apps") or [], c)
    app_ids = {a.app_id for a in apps}
    files = _files(raw.get("storage") or [], c)
    timeline = _timeline(raw.get("timeline") or [], c, app_ids)
    strategies = _strategies(raw.get("strategies") or [], c, app_ids)

    try:
        monitor = MonitorConfig(**c.mapping(raw.get("monitor"), ("monitor",)))
    except (TypeError, ValueError) as exc:
        c.err(("monitor",), str(exc))
        monitor = MonitorConfig()
    rev = c.mapping(raw.get("revocation"), ("revocation",))
    try:
        revocation = RevocationPolicy(rev.get("mode", "off"), rev.get("ttl_ms"))
    except ValueError as exc:
        c.err(("revocation",), str(exc))
        revocation = RevocationPolicy()
    bandwidth = {**DEFAULT_BANDWIDTH}
    for k, v in c.mapping(raw.get("bandwidth"), ("bandwidth",)).items():
        if k not in DEFAULT_BANDWIDTH:
            c.err(("bandwidth", k), "unknown network")
        elif c.int_(v, ("bandwidth", k)) is not None:
            bandwidth[k] = v
    cap = c.int_(raw.get("background_location_cap", BACKGROUND_LOCATION_CAP),
                 ("background_location_cap",), minimum=1) or BACKGROUND_LOCATION_CAP
    mitigation = raw.get("mitigation", False)
    if mitigation in ("on", "off"):
        mitigation = mitigation == "on"
    mitigation = c.bool_(mitigation, ("mitigation",))

    if c.errors:
        raise ValidationError(c.errors)
    return Scenario(name=str(raw.get("name", Path(source).stem)), version=version, profile=profile,
                    horizon_ms=horizon, seed=seed, apps=apps, device=device, files=files,
                    bandwidth=bandwidth, timeline=timeline, strategies=strategies,
                    monitor=monitor, mitigation=mitigation, revocation=revocation,
                    background_location_cap=cap)


def _profile(value, c: _Checker) -> DeviceProfile:
    if isinstance(value, str):
        if value not in PROFILES:
            c.err(("profile",), f"unknown profile {value!r}; expected one of {sorted(PROFILES)}")
            return DeviceProfile()
        return PROFILES[value]
    value = dict(c.mapping(value, ("profile",)))
    base = PROFILES.get(value.pop("base", "default"), DeviceProfile())
    if "battery_optimization_budget" in value:
        budget = value["battery_optimization_budget"]
        try:
            value["battery_optimization_budget"] = None if budget is None else BatteryBudget(**budget)
        except (TypeError, ValueError) as exc:
            c.err(("profile", "battery_optimization_budget"), str(exc))
            value.pop("battery_optimization_budget")
    try:
        return dataclasses.replace(base, **value)
    except (TypeError, ValueError) as exc:
        c.err(("profile",), str(exc))
        return DeviceProfile()


def _apps(items, c: _Checker) -> list[AppSpec]:
    apps, seen = [], set()
    for i, item in enumerate(items):
        path = ("apps", i)
        item = c.mapping(item, path)
        app_id = item.get("id")
        if not isinstance(app_id, str) or not app_id:
            c.err(path + ("id",), "app id required")
            continue
        if app_id in seen:
            c.err(path + ("id",), f"duplicate app {app_id!r}")
        seen.add(app_id)
        grants = c.mapping(item.get("grants"), path + ("grants",))
        for perm, level in grants.items():
            try:
                validate_level(perm, "granted" if level == "all-the-time" else level)
            except IllegalLevel as exc:
                c.err(path + ("grants", perm), str(exc))
        grants = {p: ("granted" if lv == "all-the-time" else lv) for p, lv in grants.items()}
        ui = []
        for j, step in enumerate(item.get("ui") or []):
            step = c.mapping(step, path + ("ui", j))
            t = c.int_(step.get("at"), path + ("ui", j, "at"))
            if t is not None:
                ui.append((t, c.bool_(step.get("visible"), path + ("ui", j, "visible"))))
        apps.append(AppSpec(app_id, grants, c.bool_(item.get("ui_visible", False), path + ("ui_visible",)), ui))
    return apps


def _files(items, c: _Checker) -> list[StoredFile]:
    files = []
    for i, item in enumerate(items):
        item = c.mapping(item, ("storage", i))
        size = c.int_(item.get("size_bytes"), ("storage", i, "size_bytes"))
        if not item.get("path"):
            c.err(("storage", i, "path"), "path required")
        elif size is not None:
            files.append(StoredFile(str(item["path"]), size, bool(item.get("location_metadata", False))))
    return files


def _timeline(items, c: _Checker, app_ids: set) -> list[dict]:
    out = []
    for i, item in enumerate(items):
        path = ("timeline", i)
        item = c.mapping(item, path)
        t = c.int_(item.get("at"), path + ("at",))
        kinds = [k for k in item if k != "at"]
        if not kinds:
            c.err(path, "empty timeline entry")
        for k in kinds:
            if k not in TIMELINE_KINDS:
                c.err(path + (k,), f"unknown change; expected one of {list(TIMELINE_KINDS)}")
        for k in ("charging", "idle", "screen_on", "reboot"):
            if k in item:
                c.bool_(item[k], path + (k,))
        if "network" in item and item["network"] not in ("none", "cellular", "wifi"):
            c.err(path + ("network",), f"unknown network {item['network']!r}")
        if "battery_delta" in item and (isinstance(item["battery_delta"], bool)
                                        or not isinstance(item["battery_delta"], int)):
            c.err(path + ("battery_delta",), "expected an integer")
        if item.get("idle") and item.get("screen_on"):
            c.err(path, "idle and screen_on are mutually exclusive")
        for k in ("ui", "notifications", "revoke"):
            if k in item and c.mapping(item[k], path + (k,)).get("app") not in app_ids:
                c.err(path + (k, "app"), f"undeclared app {c.mapping(item[k], path).get('app')!r}")
        if "stop_app" in item and item["stop_app"] not in app_ids:
            c.err(path + ("stop_app",), f"undeclared app {item['stop_app']!r}")
        if t is not None:
            out.append(dict(item))
    return out


def _action(item, path, c: _Checker) -> Action | None:
    if isinstance(item, str):
        item = {"kind": item}
    item = dict(c.mapping(item, path))
    if "cycles" in item and item["cycles"] is not None:
        item["cycles"] = tuple(item["cycles"])
    try:
        return Action(**item)
    except (TypeError, ValueError) as exc:
        c.err(path, str(exc))
        return None


def _strategies(items, c: _Checker, app_ids: set) -> list[StrategySpec]:
    out = []
    for i, item in enumerate(items):
        path = ("strategies", i)
        item = dict(c.mapping(item, path))
        app = item.pop("app", None)
        if app not in app_ids:
            c.err(path + ("app",), f"strategy references undeclared app {app!r}")
            continue
        actions = [_action(a, path + ("actions", j), c) for j, a in enumerate(item.pop("actions", []) or [])]
        if any(a is None for a in actions):
            continue
        constraints = c.mapping(item.pop("constraints", None), path + ("constraints",))
        for k in constraints:
            if k not in CONSTRAINT_KEYS:
                c.err(path + ("constraints", k), "unknown constraint")
        try:
            out.append(StrategySpec(app_id=app, actions=tuple(actions), constraints=dict(constraints),
                                    name=item.pop("name", f"strategy-{i}"), **item))
        except (TypeError, ValueError) as exc:
            c.err(path, str(exc))
    return out


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ParseError(f"unknown preset {name!r}; expected one of {list(PRESETS)}")
    return resources.files("fgsim").joinpath("presets", f"{name}.yaml").read_text(encoding="utf-8")


def load_scenario(path_or_preset) -> Scenario:
    """Load a scenario file, or a bundled preset when given a preset name."""
    if str(path_or_preset) in PRESETS and not Path(path_or_preset).exists():
        return parse_scenario(preset_text(str(path_or_preset)), f"preset:{path_or_preset}")
    path = Path(path_or_preset)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return parse_scenario(text, str(path))
