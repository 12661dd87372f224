"""Service lifecycle state machine and notification manager.

A foreground service arms a grace timer when it starts. If the service is
still foregrounded when the timer fires, its sticky notification is posted;
a service stopped earlier never produces a notification at all.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

from .context import BACKGROUND_SERVICE, FOREGROUND_SERVICE, SCHEDULER, UI, ExecContext
from .errors import AppStopped, IllegalState, NotForegrounded, UnknownApp

if TYPE_CHECKING:
    from .simulation import Simulation

BACKGROUND = "background"
FOREGROUND = "foreground"

CREATED, STARTED, FOREGROUNDED, STOPPED = "created", "started", "foregrounded", "stopped"
TRANSITIONS = {
    CREATED: {STARTED},
    STARTED: {FOREGROUNDED, STOPPED},
    FOREGROUNDED: {STOPPED},
    STOPPED: set(),
}


@dataclass
class NotificationRecord:
    notification_id: int
    app_id: str
    service_id: int | None
    posted_at: int
    sticky: bool = True
    content: dict = field(default_factory=dict)
    visibility: str = "visible"
    removed: bool = False


@dataclass
class ServiceRecord:
    service_id: int
    app_id: str
    kind: str
    declared_type: str | None = None
    state: str = CREATED
    started_at: int = 0
    grace_deadline: int | None = None
    sticky: bool = True
    content: dict = field(default_factory=dict)
    notification_id: int | None = None
    stopped_at: int | None = None
    _grace_event: int | None = field(default=None, repr=False)

    def move(self, new_state: str) -> None:
        if new_state not in TRANSITIONS[self.state]:
            raise IllegalState(f"service {self.service_id}: {self.state} -> {new_state}")
        self.state = new_state

    @property
    def context(self) -> ExecContext:
        kind = FOREGROUND_SERVICE if self.kind == FOREGROUND else BACKGROUND_SERVICE
        return ExecContext(kind, self.app_id, self.service_id, self.declared_type)


@dataclass
class AppUiState:
    app_id: str
    ui_visible: bool = False
    notifications_enabled: bool = True


@dataclass(frozen=True)
class StopReport:
    service_id: int
    was_visible: bool
    runtime_ms: int


class Lifecycle:
    def __init__(self, sim: "Simulation"):
        self.sim = sim
        self.apps: dict[str, AppUiState] = {}
        self.services: dict[int, ServiceRecord] = {}
        self.notifications: dict[int, NotificationRecord] = {}
        self.listeners: list[Callable[[ServiceRecord, NotificationRecord], None]] = []
        self._service_ids = itertools.count(1)
        self._notification_ids = itertools.count(1)

    # apps and UI

    def install_app(self, app_id: str, ui_visible: bool = False) -> AppUiState:
        self.apps[app_id] = AppUiState(app_id, ui_visible)
        self.sim.trace.emit(app_id, "app-install", app_id,
                            visibility="visible" if ui_visible else "hidden")
        return self.apps[app_id]

    def _app(self, app_id: str) -> AppUiState:
        try:
            return self.apps[app_id]
        except KeyError:
            raise UnknownApp(app_id) from None

    def ui_visible(self, app_id: str) -> bool:
        app = self.apps.get(app_id)
        return app is not None and app.ui_visible

    def set_ui_visible(self, app_id: str, visible: bool) -> None:
        app = self._app(app_id)
        if app.ui_visible == visible:
            return
        app.ui_visible = visible
        self.sim.trace.emit(app_id, "ui-change", app_id,
                            visibility="visible" if visible else "hidden")
        if visible:
            # the user picked up the phone
            self.sim.device.apply_device_change(screen_on=True)

    def visibility_for(self, app_id: str) -> str:
        """What the user can currently see of ``app_id``: its UI or a live notification."""
        if self.ui_visible(app_id):
            return "visible"
        for n in self.notifications.values():
            if n.app_id == app_id and not n.removed and n.visibility == "visible":
                return "visible"
        return "hidden"

    def is_live(self, ctx: ExecContext) -> bool:
        if ctx.kind == UI:
            return self.ui_visible(ctx.app_id)
        if ctx.kind == SCHEDULER:
            return not self.sim.kernel.is_stopped(ctx.app_id)
        svc = self.services.get(ctx.service_id)
        want = FOREGROUNDED if ctx.kind == FOREGROUND_SERVICE else STARTED
        return svc is not None and svc.state == want

    def live_foreground_services(self) -> list[ServiceRecord]:
        return [s for s in self.services.values() if s.state == FOREGROUNDED]

    def _check_runnable(self, app_id: str) -> AppUiState:
        app = self._app(app_id)
        if self.sim.kernel.is_stopped(app_id):
            raise AppStopped(app_id)
        return app

    def _new_service(self, app_id: str, kind: str, declared_type=None, sticky=True,
                     content=None) -> ServiceRecord:
        svc = ServiceRecord(next(self._service_ids), app_id, kind, declared_type,
                            started_at=self.sim.kernel.now, sticky=sticky,
                            content=dict(content or {}))
        self.services[svc.service_id] = svc
        svc.move(STARTED)
        return svc

    # background services

    def start_background_service(self, app_id: str, ctx: str = SCHEDULER) -> int:
        app = self._check_runnable(app_id)
        if self.sim.device.version.bg_service_restriction and not app.ui_visible:
            self.sim.trace.emit(app_id, "illegal-state", "background-service", "rejected",
                                visibility="hidden", caller=ctx)
            raise IllegalState(f"{app_id}: background service start with UI closed")
        svc = self._new_service(app_id, BACKGROUND)
        self.sim.trace.emit(app_id, "service-start", f"service:{svc.service_id}",
                            visibility=self.visibility_for(app_id),
                            service_id=svc.service_id, kind=BACKGROUND, caller=ctx)
        return svc.service_id

    def stop_service(self, service_id: int) -> StopReport:
        svc = self.services[service_id]
        if svc.kind == FOREGROUND:
            return self.stop_foreground(service_id, True)
        if svc.state != STARTED:
            raise IllegalState(f"service {service_id} is {svc.state}")
        return self._finish(svc, was_visible=False)

    # foreground services

    def start_foreground_service(self, app_id: str, content: dict | None = None,
                                 declared_type: str | None = None, sticky: bool = True) -> int:
        self._check_runnable(app_id)
        now = self.sim.kernel.now
        svc = self._new_service(app_id, FOREGROUND, declared_type, sticky, content)
        svc.move(FOREGROUNDED)
        svc.grace_deadline = now + self.sim.device.profile.notification_grace_ms
        svc._grace_event = self.sim.kernel.schedule_event(
            svc.grace_deadline, "notification-grace-expiry", self._grace_expired,
            owner=app_id, service_id=svc.service_id)
        self.sim.trace.emit(app_id, "service-start", f"service:{svc.service_id}",
                            visibility="hidden", service_id=svc.service_id, kind=FOREGROUND,
                            declared_type=declared_type, grace_deadline=svc.grace_deadline)
        return svc.service_id

    def _grace_expired(self, ev) -> None:
        svc = self.services[ev.data["service_id"]]
        if svc.state == FOREGROUNDED and svc.notification_id is None:
            self._post(svc)

    def _post(self, svc: ServiceRecord) -> NotificationRecord:
        app = self.apps[svc.app_id]
        visibility = "visible" if app.notifications_enabled else "suppressed"
        n = NotificationRecord(next(self._notification_ids), svc.app_id, svc.service_id,
                               self.sim.kernel.now, svc.sticky, svc.content, visibility)
        self.notifications[n.notification_id] = n
        svc.notification_id = n.notification_id
        svc.grace_deadline = None
        if svc._grace_event is not None:
            self.sim.kernel.cancel_event(svc._grace_event)
            svc._grace_event = None
        action = "notification-posted" if visibility == "visible" else "notification-suppressed"
        self.sim.trace.emit(svc.app_id, action, f"notification:{n.notification_id}",
                            visibility=visibility, service_id=svc.service_id,
                            sticky=svc.sticky, **{f"content_{k}": v for k, v in svc.content.items()})
        for fn in self.listeners:
            fn(svc, n)
        return n

    def stop_foreground(self, service_id: int, remove_notification: bool = True) -> StopReport:
        svc = self.services.get(service_id)
        if svc is None or svc.state != FOREGROUNDED:
            raise NotForegrounded(f"service {service_id}")
        if svc.grace_deadline is not None and self.sim.kernel.now >= svc.grace_deadline:
            # stopping exactly at the deadline loses the race
            self._post(svc)
        if svc._grace_event is not None:
            self.sim.kernel.cancel_event(svc._grace_event)
            svc._grace_event = None
        svc.grace_deadline = None
        n = self.notifications.get(svc.notification_id) if svc.notification_id else None
        was_visible = n is not None and n.visibility == "visible"
        if n is not None and remove_notification and not n.removed:
            n.removed = True
            self.sim.trace.emit(svc.app_id, "notification-removed",
                                f"notification:{n.notification_id}", visibility=n.visibility,
                                service_id=svc.service_id)
        return self._finish(svc, was_visible)

    def _finish(self, svc: ServiceRecord, was_visible: bool) -> StopReport:
        now = self.sim.kernel.now
        svc.move(STOPPED)
        svc.stopped_at = now
        if svc.kind == FOREGROUND:
            n = self.notifications.get(svc.notification_id) if svc.notification_id else None
            visibility = "hidden" if n is None else n.visibility
        else:
            visibility = "hidden"
        self.sim.trace.emit(svc.app_id, "service-stop", f"service:{svc.service_id}",
                            visibility=visibility, service_id=svc.service_id, kind=svc.kind,
                            started_at=svc.started_at, notification_id=svc.notification_id)
        return StopReport(svc.service_id, was_visible, now - svc.started_at)

    def kill_app(self, app_id: str) -> list[StopReport]:
        return [self.stop_service(s.service_id) for s in list(self.services.values())
                if s.app_id == app_id and s.state in (STARTED, FOREGROUNDED)]

    # notifications

    def app_cancel_notification(self, app_id: str, notification_id: int) -> bool:
        n = self.notifications.get(notification_id)
        if n is None or n.app_id != app_id:
            return False
        svc = self.services.get(n.service_id) if n.service_id is not None else None
        if n.sticky and svc is not None and svc.state == FOREGROUNDED:
            self.sim.trace.emit(app_id, "notification-cancel", f"notification:{notification_id}",
                                "refused", visibility=n.visibility)
            return False
        if not n.removed:
            n.removed = True
            self.sim.trace.emit(app_id, "notification-removed", f"notification:{notification_id}",
                                visibility=n.visibility)
        return True

    def user_disable_notifications(self, app_id: str) -> None:
        app = self._app(app_id)
        if app.notifications_enabled:
            app.notifications_enabled = False
            self.sim.trace.emit("user", "notifications-disabled", app_id, visibility="visible")

    def user_enable_notifications(self, app_id: str) -> None:
        app = self._app(app_id)
        if not app.notifications_enabled:
            app.notifications_enabled = True
            self.sim.trace.emit("user", "notifications-enabled", app_id, visibility="visible")
