"""Permission-usage monitor over the audit trace.

The monitor only ever sees trace records, so a live run and a replay of the
written trace reach the same findings. Windows are fixed, half-open slices
``[k*window_ms, (k+1)*window_ms)`` shared by every app.

The rules are one reading of "suspicious permission access"; the thresholds
are configuration, not measured values.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field

from .errors import OutOfOrder
from .trace import TraceRecord

REPORT_SCHEMA = "fgsim-report/1"
COUNTERS = ("fgs-starts", "invisible-fgs-starts", "sensor-accesses-while-ui-hidden",
            "uploads", "location-updates")
RULES = ("invisible-fgs-chain", "hidden-sensor-access", "exfil-volume", "dormant-spike")
SEVERITIES = ("info", "suspicious", "abusive")

# trace resource -> permission it exercises
_PERMISSION_OF = {"camera": "camera", "microphone": "record-audio", "location": "location"}


@dataclass(frozen=True)
class MonitorConfig:
    window_ms: int = 15 * 60 * 1000
    fgs_suspicious: int = 3
    fgs_abusive: int = 10
    hidden_suspicious: int = 3
    hidden_abusive: int = 10
    exfil_suspicious_bytes: int = 5_000_000
    exfil_abusive_bytes: int = 50_000_000
    dormant_windows: int = 4
    dormant_spike: int = 3

    def __post_init__(self):
        if self.window_ms <= 0:
            raise ValueError("window_ms must be > 0")
        for lo, hi in (("fgs_suspicious", "fgs_abusive"), ("hidden_suspicious", "hidden_abusive"),
                       ("exfil_suspicious_bytes", "exfil_abusive_bytes")):
            if not 0 < getattr(self, lo) <= getattr(self, hi):
                raise ValueError(f"need 0 < {lo} <= {hi}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class UsageWindow:
    app_id: str
    start: int
    end: int
    counts: Counter = field(default_factory=Counter)
    invisible_fgs: list = field(default_factory=list)
    hidden_episodes: dict = field(default_factory=dict)
    hidden_upload_bytes: int = 0
    upload_refs: list = field(default_factory=list)
    permissions_used: set = field(default_factory=set)
    accesses: int = 0

    @property
    def index(self) -> int:
        return self.start // (self.end - self.start)

    def counters(self) -> dict:
        return {name: self.counts[name] for name in COUNTERS}


@dataclass(frozen=True)
class Finding:
    app_id: str
    rule: str
    severity: str
    window: tuple[int, int]
    evidence: tuple[tuple[int, int], ...]
    value: int

    def to_dict(self) -> dict:
        return {"app": self.app_id, "rule": self.rule, "severity": self.severity,
                "window": list(self.window), "value": self.value,
                "evidence": [list(e) for e in self.evidence]}


def _grade(value: int, suspicious: int, abusive: int) -> str | None:
    if value >= abusive:
        return "abusive"
    if value >= suspicious:
        return "suspicious"
    return None


class Monitor:
    def __init__(self, config: MonitorConfig | None = None):
        self.config = config or MonitorConfig()
        self.apps: dict[str, int] = {}               # app -> install window index
        self.windows: dict[tuple[str, int], UsageWindow] = {}
        self.history: dict[str, list[int]] = {}      # app -> accesses per closed window
        self.findings: list[Finding] = []
        self.closed: list[UsageWindow] = []
        self.revocations: dict[str, list[dict]] = {}
        self.verdicts: dict[str, list[dict]] = {}
        self.recordings: dict[int, dict] = {}
        self._live_fgs: dict[int, dict] = {}
        self._current = 0
        self._last: tuple[int, int] | None = None
        self._unacted: list[Finding] = []

    # ingestion

    def _window(self, app: str, idx: int) -> UsageWindow:
        key = (app, idx)
        if key not in self.windows:
            w = self.config.window_ms
            self.windows[key] = UsageWindow(app, idx * w, (idx + 1) * w)
        return self.windows[key]

    def _close_through(self, idx: int) -> None:
        """Close every window with index below ``idx``."""
        while self._current < idx:
            for app in sorted(self.apps):
                if self.apps[app] > self._current:
                    continue
                window = self.windows.pop((app, self._current), None) or self._window_stub(app)
                found = self.evaluate(window)
                self.history.setdefault(app, []).append(window.accesses)
                self.closed.append(window)
                self.findings.extend(found)
                self._unacted.extend(found)
            self._current += 1

    def _window_stub(self, app: str) -> UsageWindow:
        w = self.config.window_ms
        return UsageWindow(app, self._current * w, (self._current + 1) * w)

    def ingest(self, rec: TraceRecord) -> None:
        key = (rec.t, rec.seq)
        if self._last is not None and key <= self._last:
            raise OutOfOrder(f"record {key} after {self._last}")
        self._last = key
        idx = rec.t // self.config.window_ms
        self._close_through(idx)

        if rec.action == "app-install":
            self.apps.setdefault(rec.actor, idx)
            return
        if rec.action == "permission-revoked":
            app = rec.data.get("app")
            if app in self.apps:
                self.revocations.setdefault(app, []).append(
                    {"t": rec.t, "permission": rec.resource, "policy": rec.outcome})
            return
        if rec.action == "battery-verdict":
            if rec.resource in self.apps:
                self.verdicts.setdefault(rec.resource, []).append({"t": rec.t, "verdict": rec.outcome})
            return
        app = rec.actor
        if app not in self.apps:
            return
        win = self._window(app, idx)
        action, data = rec.action, rec.data
        hidden = rec.visibility == "hidden"

        if action == "service-start" and data.get("kind") == "foreground":
            win.counts["fgs-starts"] += 1
            self._live_fgs[data["service_id"]] = {"posted": False}
        elif action == "notification-posted":
            if data.get("service_id") in self._live_fgs:
                self._live_fgs[data["service_id"]]["posted"] = True
        elif action == "service-stop" and data.get("kind") == "foreground":
            state = self._live_fgs.pop(data["service_id"], None)
            if state is not None and not state["posted"]:
                win.counts["invisible-fgs-starts"] += 1
                win.invisible_fgs.append(key)
        elif action in ("sensor-acquire", "recording-start", "location-update"):
            win.accesses += 1
            win.permissions_used.add(_PERMISSION_OF[rec.resource])
            if action == "location-update":
                win.counts["location-updates"] += 1
            if hidden:
                win.counts["sensor-accesses-while-ui-hidden"] += 1
                win.hidden_episodes.setdefault(data.get("ctx", ""), []).append(key)
            if action == "recording-start" and "session" in data:
                self.recordings[data["session"]] = {"app": app, "session": data["session"],
                                                    "started_at": rec.t}
        elif action == "recording-stop":
            self.recordings.pop(data.get("session"), None)
        elif action in ("file-list", "file-read"):
            win.accesses += 1
            win.permissions_used.add("file-storage")
        elif action == "upload":
            win.counts["uploads"] += 1
            win.permissions_used.add("file-storage")
            if hidden:
                win.hidden_upload_bytes += data.get("bytes", 0)
                win.upload_refs.append(key)

    def close_until(self, t: int) -> list[Finding]:
        """Close windows that end at or before ``t``; return findings not yet acted on."""
        self._close_through(t // self.config.window_ms)
        found, self._unacted = self._unacted, []
        return found

    def finish(self, horizon: int) -> None:
        """Close every window that intersects ``[0, horizon]``."""
        self._close_through(horizon // self.config.window_ms + 1)

    # evaluation

    def evaluate(self, window: UsageWindow) -> list[Finding]:
        cfg = self.config
        span = (window.start, window.end)
        out = []
        n = len(window.invisible_fgs)
        sev = _grade(n, cfg.fgs_suspicious, cfg.fgs_abusive)
        if sev:
            out.append(Finding(window.app_id, "invisible-fgs-chain", sev, span,
                               tuple(window.invisible_fgs), n))
        episodes = len(window.hidden_episodes)
        sev = _grade(episodes, cfg.hidden_suspicious, cfg.hidden_abusive)
        if sev:
            refs = tuple(sorted(refs[0] for refs in window.hidden_episodes.values()))
            out.append(Finding(window.app_id, "hidden-sensor-access", sev, span, refs, episodes))
        sev = _grade(window.hidden_upload_bytes, cfg.exfil_suspicious_bytes, cfg.exfil_abusive_bytes)
        if sev:
            out.append(Finding(window.app_id, "exfil-volume", sev, span,
                               tuple(window.upload_refs), window.hidden_upload_bytes))
        past = self.history.get(window.app_id, [])
        if (episodes >= cfg.dormant_spike and len(past) >= cfg.dormant_windows
                and not any(past[-cfg.dormant_windows:])):
            refs = tuple(sorted(refs[0] for refs in window.hidden_episodes.values()))
            out.append(Finding(window.app_id, "dormant-spike", "suspicious", span, refs, episodes))
        return out

    def permissions_to_revoke(self, finding: Finding) -> list[str]:
        for w in reversed(self.closed):
            if w.app_id == finding.app_id and (w.start, w.end) == finding.window:
                return sorted(w.permissions_used)
        return []

    # reporting

    def recommended_action(self, app: str) -> dict:
        mine = [f for f in self.findings if f.app_id == app]
        abusive = [f for f in mine if f.severity == "abusive"]
        if abusive:
            perms = sorted({p for f in abusive for p in self.permissions_to_revoke(f)})
            if perms:
                return {"action": "revoke", "permissions": perms}
            return {"action": "notify-user"}
        if any(f.severity == "suspicious" for f in mine):
            return {"action": "notify-user"}
        return {"action": "none"}

    def report(self, header: dict | None = None, warnings: list[str] | None = None) -> dict:
        header = header or {}
        apps = {}
        for app in sorted(self.apps):
            windows = [w for w in self.closed if w.app_id == app]
            totals = Counter()
            for w in windows:
                totals.update(w.counts)
            apps[app] = {
                "counters": {name: totals[name] for name in COUNTERS},
                "windows": [{"start": w.start, "end": w.end, "counters": w.counters()}
                            for w in windows if any(w.counts.values())],
                "findings": [f.to_dict() for f in self.findings if f.app_id == app],
                "open_recordings": [r for s, r in sorted(self.recordings.items()) if r["app"] == app],
                "revocations": self.revocations.get(app, []),
                "battery_verdicts": self.verdicts.get(app, []),
                "recommended_action": self.recommended_action(app),
            }
        return {
            "schema": REPORT_SCHEMA,
            "scenario": header.get("scenario"),
            "seed": header.get("seed"),
            "horizon_ms": header.get("horizon_ms"),
            "monitor": self.config.to_dict(),
            "apps": apps,
            "warnings": list(warnings or []),
        }


def monitor_config_from(header: dict) -> MonitorConfig:
    return MonitorConfig(**header.get("monitor", {}))


def build_report(header: dict, records: list[TraceRecord], warnings: list[str] | None = None) -> dict:
    """Recompute the monitor report from a trace alone."""
    mon = Monitor(monitor_config_from(header))
    for rec in records:
        mon.ingest(rec)
    horizon = header.get("horizon_ms")
    if horizon is None:
        horizon = records[-1].t if records else 0
    if records and records[-1].action != "run-end":
        # truncated: only close the windows the prefix actually reached
        horizon = records[-1].t
    mon.finish(horizon)
    return mon.report(header, warnings)


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
