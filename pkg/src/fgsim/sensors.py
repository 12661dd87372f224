"""Camera, microphone, location and external-storage models."""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

from .context import BACKGROUND_SERVICE, FOREGROUND_SERVICE, SCHEDULER, UI, ExecContext
from .errors import (IllegalState, MissingServiceType, NoNetwork, PermissionDenied,
                     SensorBusy, StaleLease, UnknownSession)

if TYPE_CHECKING:
    from .simulation import Simulation

MEDIA_SERVER = "media-server"
HOUR_MS = 60 * 60 * 1000
BACKGROUND_LOCATION_CAP = 4  # deliveries per rolling hour
DEFAULT_BANDWIDTH = {"wifi": 2000, "cellular": 500, "none": 0}  # bytes per ms


def _require_live(sim: "Simulation", ctx: ExecContext, what: str) -> None:
    if not sim.lifecycle.is_live(ctx):
        sim.trace.emit(ctx.app_id, "sensor-deny", what, "illegal-state",
                       visibility=sim.lifecycle.visibility_for(ctx.app_id), ctx=ctx.tag)
        raise IllegalState(f"{what}: context {ctx.tag} is not live")


def _require_unrestricted(sim: "Simulation", ctx: ExecContext, what: str) -> None:
    """Pie and later refuse camera/microphone to code without a visible foreground."""
    _require_live(sim, ctx, what)
    if ctx.kind in (SCHEDULER, BACKGROUND_SERVICE) and sim.device.version.bg_sensor_restriction:
        sim.trace.emit(ctx.app_id, "sensor-deny", what, "illegal-state",
                       visibility=sim.lifecycle.visibility_for(ctx.app_id), ctx=ctx.tag)
        raise IllegalState(f"{what} from {ctx.kind} on {sim.device.version.name}")


def _require_permission(sim: "Simulation", ctx: ExecContext, permission: str, what: str) -> None:
    decision = sim.permissions.check_access(ctx.app_id, permission, ctx)
    if not decision:
        sim.trace.emit(ctx.app_id, "sensor-deny", what, "permission-denied",
                       visibility=sim.lifecycle.visibility_for(ctx.app_id),
                       ctx=ctx.tag, reason=decision.reason)
        raise PermissionDenied(f"{ctx.app_id}: {permission} {decision.reason}",
                               reason=decision.reason)


@dataclass
class SensorLease:
    lease_id: int
    sensor: str
    holder: str
    acquired_at: int
    ctx: ExecContext | None = None
    released_at: int | None = None

    @property
    def live(self) -> bool:
        return self.released_at is None


class Camera:
    """Exclusive camera: at most one live lease at any time."""

    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.lease: SensorLease | None = None
        self.history: list[SensorLease] = []
        self._ids = itertools.count(1)

    def _grant(self, holder: str, ctx: ExecContext | None) -> SensorLease:
        lease = SensorLease(next(self._ids), "camera", holder, self.sim.kernel.now, ctx)
        self.lease = lease
        self.history.append(lease)
        return lease

    def acquire_camera(self, app: str, ctx: ExecContext) -> SensorLease:
        sim = self.sim
        _require_unrestricted(sim, ctx, "camera")
        _require_permission(sim, ctx, "camera", "camera")
        if self.lease is not None:
            sim.trace.emit(app, "sensor-deny", "camera", "sensor-busy",
                           visibility=sim.lifecycle.visibility_for(app),
                           ctx=ctx.tag, holder=self.lease.holder)
            raise SensorBusy(f"camera held by {self.lease.holder}")
        lease = self._grant(app, ctx)
        sim.trace.emit(app, "sensor-acquire", "camera", visibility=sim.lifecycle.visibility_for(app),
                       ctx=ctx.tag, lease=lease.lease_id)
        return lease

    def hold(self, holder: str, duration_ms: int | None = None) -> SensorLease:
        """A system actor (face unlock, the user's camera app) takes the camera."""
        if self.lease is not None:
            raise SensorBusy(f"camera held by {self.lease.holder}")
        lease = self._grant(holder, None)
        self.sim.trace.emit(holder, "sensor-acquire", "camera", visibility="visible",
                            lease=lease.lease_id)
        if duration_ms is not None:
            self.sim.kernel.schedule_in(duration_ms, "sensor-release", lambda ev: self.release(lease))
        return lease

    def release(self, lease: SensorLease) -> bool:
        if not lease.live:
            return False
        lease.released_at = self.sim.kernel.now
        if self.lease is lease:
            self.lease = None
        self.sim.trace.emit(lease.holder, "sensor-release", "camera", lease=lease.lease_id)
        return True

    def capture_image(self, lease: SensorLease) -> str:
        sim = self.sim
        if not lease.live or self.lease is not lease:
            raise StaleLease(f"lease {lease.lease_id}")
        p = sim.device.profile.black_image_probability
        result = "black-frame" if sim.kernel.rng.random() < p else "ok"
        sim.trace.emit(lease.holder, "image-captured", "camera", result,
                       visibility=sim.lifecycle.visibility_for(lease.holder),
                       ctx=lease.ctx.tag if lease.ctx else "", lease=lease.lease_id)
        return result

    def release_app(self, app: str) -> None:
        if self.lease is not None and self.lease.holder == app:
            self.release(self.lease)


@dataclass
class RecordingSession:
    session_id: int
    app_id: str
    started_at: int
    stopped_at: int | None = None
    owner: str = MEDIA_SERVER

    @property
    def open(self) -> bool:
        return self.stopped_at is None

    @property
    def duration_ms(self) -> int | None:
        return None if self.stopped_at is None else self.stopped_at - self.started_at


class MediaServer:
    """Owns recording sessions, so they outlive the service that started them."""

    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.sessions: dict[int, RecordingSession] = {}
        self._ids = itertools.count(1)

    def mic_start(self, app: str, ctx: ExecContext) -> RecordingSession:
        sim = self.sim
        _require_unrestricted(sim, ctx, "microphone")
        _require_permission(sim, ctx, "record-audio", "microphone")
        s = RecordingSession(next(self._ids), app, sim.kernel.now)
        self.sessions[s.session_id] = s
        sim.trace.emit(app, "recording-start", "microphone",
                       visibility=sim.lifecycle.visibility_for(app),
                       ctx=ctx.tag, session=s.session_id, owner=MEDIA_SERVER)
        return s

    def mic_stop(self, session_id: int, reason: str = "app") -> int:
        s = self.sessions.get(session_id)
        if s is None or not s.open:
            raise UnknownSession(f"no open session {session_id}")
        s.stopped_at = self.sim.kernel.now
        self.sim.trace.emit(s.app_id, "recording-stop", "microphone",
                            visibility=self.sim.lifecycle.visibility_for(s.app_id),
                            session=s.session_id, duration_ms=s.duration_ms, reason=reason,
                            owner=MEDIA_SERVER)
        return s.duration_ms

    def open_sessions(self) -> list[RecordingSession]:
        return [s for s in self.sessions.values() if s.open]


FG_TYPED = "foreground-service-typed-location"


@dataclass
class LocationSubscription:
    sub_id: int
    app_id: str
    context: str
    cadence_ms: int
    granted_level: str
    started_at: int
    ends_at: int | None
    ctx: ExecContext
    effective_cadence_ms: int = 0
    delivered: int = 0
    denied: int = 0
    active: bool = True
    on_update: Callable | None = None

    @property
    def tag(self) -> str:
        return self.ctx.tag if self.context != "background" else f"locsub:{self.sub_id}"


class LocationManager:
    def __init__(self, sim: "Simulation", background_cap_per_hour: int = BACKGROUND_LOCATION_CAP):
        if background_cap_per_hour <= 0:
            raise ValueError("background cap must be positive")
        self.sim = sim
        self.background_cap = background_cap_per_hour
        self.subscriptions: dict[int, LocationSubscription] = {}
        self._bg_deliveries: dict[str, deque] = {}
        self._ids = itertools.count(1)

    def _context_label(self, ctx: ExecContext) -> str:
        if ctx.is_location_typed:
            return FG_TYPED
        if ctx.kind == FOREGROUND_SERVICE:
            return "foreground-service"
        if ctx.kind == UI:
            return "ui"
        return "background"

    def request_location_updates(self, app: str, ctx: ExecContext, cadence_ms: int,
                                 duration_ms: int | None = None,
                                 on_update: Callable | None = None) -> int:
        sim = self.sim
        if cadence_ms <= 0:
            raise ValueError("cadence_ms must be > 0")
        _require_live(sim, ctx, "location")
        if not sim.permissions.holds(app, "location"):
            sim.trace.emit(app, "sensor-deny", "location", "permission-denied",
                           visibility=sim.lifecycle.visibility_for(app), ctx=ctx.tag)
            raise PermissionDenied(f"{app}: location not granted")
        if (ctx.kind == FOREGROUND_SERVICE and sim.device.version.while_in_use_location
                and not ctx.is_location_typed):
            sim.trace.emit(app, "sensor-deny", "location", "missing-service-type",
                           visibility=sim.lifecycle.visibility_for(app), ctx=ctx.tag)
            raise MissingServiceType(f"service {ctx.service_id} lacks the location type")
        label = self._context_label(ctx)
        now = sim.kernel.now
        sub = LocationSubscription(
            next(self._ids), app, label, cadence_ms, sim.permissions.level(app, "location"),
            now, None if duration_ms is None else now + duration_ms, ctx, on_update=on_update)
        if label == "background":
            sub.effective_cadence_ms = max(cadence_ms, math.ceil(HOUR_MS / self.background_cap))
        else:
            sub.effective_cadence_ms = cadence_ms
        self.subscriptions[sub.sub_id] = sub
        sim.trace.emit(app, "location-subscribe", "location",
                       visibility=sim.lifecycle.visibility_for(app), ctx=sub.tag,
                       context=label, cadence_ms=cadence_ms,
                       effective_cadence_ms=sub.effective_cadence_ms)
        self._schedule(sub, now)
        return sub.sub_id

    def _schedule(self, sub: LocationSubscription, at: int) -> None:
        if sub.ends_at is not None and at >= sub.ends_at:
            self._end(sub)
            return
        self.sim.kernel.schedule_event(at, "location-delivery", self._deliver,
                                       owner=sub.app_id, sub_id=sub.sub_id)

    def _end(self, sub: LocationSubscription) -> None:
        if sub.active:
            sub.active = False
            self.sim.trace.emit(sub.app_id, "location-unsubscribe", "location", ctx=sub.tag,
                                delivered=sub.delivered)

    def remove_updates(self, sub_id: int) -> bool:
        sub = self.subscriptions.get(sub_id)
        if sub is None or not sub.active:
            return False
        self._end(sub)
        return True

    def _background_budget_left(self, app: str) -> bool:
        now = self.sim.kernel.now
        window = self._bg_deliveries.setdefault(app, deque())
        while window and window[0] <= now - HOUR_MS:
            window.popleft()
        return len(window) < self.background_cap

    def _deliver(self, ev) -> None:
        sim = self.sim
        sub = self.subscriptions[ev.data["sub_id"]]
        if not sub.active:
            return
        if sub.ctx.kind != SCHEDULER and not sim.lifecycle.is_live(sub.ctx):
            self._end(sub)
            return
        background = sub.context == "background"
        if background and not self._background_budget_left(sub.app_id):
            sim.trace.emit(sub.app_id, "location-throttled", "location", ctx=sub.tag)
        elif sim.permissions.check_access(sub.app_id, "location", sub.ctx):
            sub.delivered += 1
            if background:
                self._bg_deliveries[sub.app_id].append(sim.kernel.now)
            sim.trace.emit(sub.app_id, "location-update", "location",
                           visibility=sim.lifecycle.visibility_for(sub.app_id),
                           ctx=sub.tag, context=sub.context,
                           icon="always" if sim.device.profile.location_icon_always_visible else "on-access")
            if sub.on_update is not None:
                sub.on_update(sub)
        else:
            sub.denied += 1
        self._schedule(sub, sim.kernel.now + sub.effective_cadence_ms)

    def end_app(self, app: str) -> None:
        for sub in self.subscriptions.values():
            if sub.app_id == app:
                self._end(sub)


@dataclass(frozen=True)
class StoredFile:
    path: str
    size_bytes: int
    location_metadata: bool = False


@dataclass(frozen=True)
class UploadResult:
    path: str
    size_bytes: int
    bytes_sent: int

    @property
    def complete(self) -> bool:
        return self.bytes_sent >= self.size_bytes

    @property
    def status(self) -> str:
        return "complete" if self.complete else "partial"


class ExternalStorage:
    def __init__(self, sim: "Simulation", files=(), bandwidth: dict | None = None):
        self.sim = sim
        self.files: dict[str, StoredFile] = {f.path: f for f in files}
        self.bandwidth = {**DEFAULT_BANDWIDTH, **(bandwidth or {})}

    def add_file(self, f: StoredFile) -> None:
        if f.size_bytes < 0:
            raise ValueError("size_bytes must be >= 0")
        self.files[f.path] = f

    def list_external_files(self, app: str, ctx: ExecContext) -> list[StoredFile]:
        sim = self.sim
        _require_live(sim, ctx, "storage")
        _require_permission(sim, ctx, "file-storage", "storage")
        listing = [self.files[p] for p in sorted(self.files)]
        sim.trace.emit(app, "file-list", "storage", visibility=sim.lifecycle.visibility_for(app),
                       ctx=ctx.tag, count=len(listing))
        return listing

    def transfer_bytes(self, size_bytes: int, window_ms: int, network: str | None = None) -> int:
        network = self.sim.device.state.network if network is None else network
        return min(size_bytes, self.bandwidth.get(network, 0) * max(window_ms, 0))

    def upload_file(self, app: str, ctx: ExecContext, path: str, window_ms: int) -> UploadResult:
        sim = self.sim
        if ctx.kind not in (UI, FOREGROUND_SERVICE, BACKGROUND_SERVICE):
            sim.trace.emit(app, "sensor-deny", "network", "illegal-state",
                           visibility=sim.lifecycle.visibility_for(app), ctx=ctx.tag)
            raise IllegalState("uploads need a live service context")
        _require_live(sim, ctx, "network")
        _require_permission(sim, ctx, "file-storage", f"storage:{path}")
        if path not in self.files:
            raise FileNotFoundError(path)
        if sim.device.state.network == "none":
            sim.trace.emit(app, "sensor-deny", "network", "no-network",
                           visibility=sim.lifecycle.visibility_for(app), ctx=ctx.tag)
            raise NoNetwork(app)
        f = self.files[path]
        result = UploadResult(path, f.size_bytes, self.transfer_bytes(f.size_bytes, window_ms))
        vis = sim.lifecycle.visibility_for(app)
        sim.trace.emit(app, "file-read", f"storage:{path}", visibility=vis, ctx=ctx.tag,
                       size_bytes=f.size_bytes, location_metadata=f.location_metadata)
        sim.trace.emit(app, "upload", f"storage:{path}", result.status, visibility=vis,
                       ctx=ctx.tag, bytes=result.bytes_sent, size_bytes=f.size_bytes)
        return result
