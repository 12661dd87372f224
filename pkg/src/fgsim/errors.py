"""Error types raised by the simulator.

Every error carries a short ``code`` that matches the names used in trace
records and in strategy error counters.
"""

from __future__ import annotations


class SimError(Exception):
    code = "sim-error"

    def __init__(self, message: str = "", **info):
        super().__init__(message or self.code)
        self.info = info


class TimeRegression(SimError):
    code = "time-regression"


class IllegalState(SimError):
    code = "illegal-state"


class UnknownApp(SimError):
    code = "unknown-app"


class AppStopped(SimError):
    code = "app-stopped"


class NotForegrounded(SimError):
    code = "not-foregrounded"


class ConflictingSpec(SimError):
    code = "conflicting-spec"


class MissingBootPermission(SimError):
    code = "missing-boot-permission"


class NotRunning(SimError):
    code = "not-running"


class SensorBusy(SimError):
    code = "sensor-busy"


class PermissionDenied(SimError):
    code = "permission-denied"


class StaleLease(SimError):
    code = "stale-lease"


class UnknownSession(SimError):
    code = "unknown-session"


class MissingServiceType(SimError):
    code = "missing-service-type"


class NoNetwork(SimError):
    code = "no-network"


class IllegalLevel(SimError):
    code = "illegal-level"


class OutOfOrder(SimError):
    code = "out-of-order"


class ParseError(SimError):
    code = "parse-error"


class ValidationError(SimError):
    code = "validation-error"

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)
