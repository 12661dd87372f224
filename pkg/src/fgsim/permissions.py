"""Runtime permissions, context rules and revocation policies."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

from .context import FOREGROUND_SERVICE, UI, ExecContext
from .errors import IllegalLevel

if TYPE_CHECKING:
    from .simulation import Simulation

PERMISSIONS = ("camera", "record-audio", "location", "file-storage", "boot-completed")
DANGEROUS = ("camera", "record-audio", "location", "file-storage")
LEVELS = ("granted", "while-in-use", "one-time", "time-boxed", "denied")
POLICY_MODES = ("off", "auto-unused", "one-time-default", "time-boxed-default")

# deny reasons
NOT_GRANTED = "not-granted"
EXPIRED = "expired"
CONSUMED = "consumed"
WRONG_CONTEXT = "wrong-context"


@dataclass
class PermissionGrant:
    app_id: str
    permission: str
    level: str
    granted_at: int
    expiry: int | None = None
    last_used_at: int | None = None
    consumed: bool = False

    @property
    def idle_since(self) -> int:
        return self.granted_at if self.last_used_at is None else self.last_used_at


@dataclass(frozen=True)
class RevocationPolicy:
    mode: str = "off"
    ttl_ms: int | None = None

    def __post_init__(self):
        if self.mode not in POLICY_MODES:
            raise ValueError(f"unknown revocation mode {self.mode!r}")
        if self.mode in ("auto-unused", "time-boxed-default"):
            if self.ttl_ms is None or self.ttl_ms <= 0:
                raise ValueError(f"{self.mode} needs ttl_ms > 0")


@dataclass(frozen=True)
class AccessDecision:
    allowed: bool
    reason: str | None = None

    def __bool__(self):
        return self.allowed


def validate_level(permission: str, level: str) -> None:
    if permission not in PERMISSIONS:
        raise IllegalLevel(f"unknown permission {permission!r}")
    if level not in LEVELS:
        raise IllegalLevel(f"unknown level {level!r}")
    if level == "while-in-use" and permission != "location":
        raise IllegalLevel(f"while-in-use is only valid for location, not {permission}")


class PermissionManager:
    def __init__(self, sim: "Simulation", policy: RevocationPolicy | None = None):
        self.sim = sim
        self.policy = policy or RevocationPolicy()
        self.grants: dict[tuple[str, str], PermissionGrant] = {}

    def grant(self, app: str, permission: str, level: str = "granted",
              expiry: int | None = None) -> PermissionGrant:
        validate_level(permission, level)
        now = self.sim.kernel.now
        if permission in DANGEROUS and level == "granted":
            if self.policy.mode == "one-time-default":
                level = "one-time"
            elif self.policy.mode == "time-boxed-default":
                level, expiry = "time-boxed", now + self.policy.ttl_ms
        if level == "time-boxed" and (expiry is None or expiry <= now):
            raise IllegalLevel("time-boxed grant needs an expiry after the grant time")
        g = PermissionGrant(app, permission, level, now, expiry if level == "time-boxed" else None)
        self.grants[app, permission] = g
        self.sim.trace.emit("permission-manager", "permission-grant", permission, level,
                            app=app, expiry=g.expiry)
        return g

    def revoke(self, app: str, permission: str, policy: str = "user") -> bool:
        g = self.grants.get((app, permission))
        if g is None or g.level == "denied":
            return False
        g.level = "denied"
        self.sim.trace.emit("permission-manager", "permission-revoked", permission, policy, app=app)
        return True

    def holds(self, app: str, permission: str) -> bool:
        """Side-effect free: does the app hold any live grant for ``permission``?"""
        g = self.grants.get((app, permission))
        return g is not None and self._deny_reason(g, None) in (None, WRONG_CONTEXT)

    def level(self, app: str, permission: str) -> str:
        g = self.grants.get((app, permission))
        return "denied" if g is None else g.level

    def _foreground_for_location(self, ctx: ExecContext) -> bool:
        if ctx.kind == UI:
            return self.sim.lifecycle.ui_visible(ctx.app_id)
        if ctx.kind == FOREGROUND_SERVICE:
            # ten ties while-in-use to the declared service type; earlier versions accept any FGS
            return ctx.is_location_typed or not self.sim.device.version.while_in_use_location
        return False

    def _deny_reason(self, g: PermissionGrant, ctx: ExecContext | None) -> str | None:
        now = self.sim.kernel.now
        if g.level == "denied":
            return NOT_GRANTED
        if g.level == "time-boxed" and now >= g.expiry:
            return EXPIRED
        if g.level == "one-time" and g.consumed:
            return CONSUMED
        if g.level == "while-in-use" and (ctx is None or not self._foreground_for_location(ctx)):
            return WRONG_CONTEXT
        return None

    def check_access(self, app: str, permission: str, ctx: ExecContext) -> AccessDecision:
        g = self.grants.get((app, permission))
        reason = NOT_GRANTED if g is None else self._deny_reason(g, ctx)
        if reason is None:
            g.last_used_at = self.sim.kernel.now
            if g.level == "one-time":
                g.consumed = True
            decision = AccessDecision(True)
        else:
            decision = AccessDecision(False, reason)
        self.sim.trace.emit(app, "permission-check", permission,
                            "allow" if decision else f"deny:{reason}", ctx=ctx.tag)
        return decision

    def apply_revocation_policy(self, now: int | None = None) -> list[tuple[str, str]]:
        now = self.sim.kernel.now if now is None else now
        revoked = []
        if self.policy.mode == "off":
            # expired time-boxed grants still deny at check time
            return revoked
        for key in list(self.grants):
            g = self.grants[key]
            if g.level == "denied":
                continue
            if g.level == "time-boxed" and now >= g.expiry:
                why = "time-boxed"
            elif (self.policy.mode == "auto-unused" and g.permission in DANGEROUS
                  and now - g.idle_since > self.policy.ttl_ms):
                why = "auto-unused"
            else:
                continue
            self.revoke(*key, policy=why)
            revoked.append(key)
        return revoked
