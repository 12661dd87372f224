"""Execution contexts: who is running code when a restricted API is called."""

from __future__ import annotations

from dataclasses import dataclass

UI = "ui"
SCHEDULER = "scheduler"
BACKGROUND_SERVICE = "background-service"
FOREGROUND_SERVICE = "foreground-service"
CONTEXT_KINDS = (UI, SCHEDULER, BACKGROUND_SERVICE, FOREGROUND_SERVICE)


@dataclass(frozen=True)
class ExecContext:
    kind: str
    app_id: str
    service_id: int | None = None
    service_type: str | None = None
    job_id: int | None = None

    @classmethod
    def ui(cls, app_id: str) -> "ExecContext":
        return cls(UI, app_id)

    @classmethod
    def scheduler(cls, app_id: str, job_id: int | None = None) -> "ExecContext":
        return cls(SCHEDULER, app_id, job_id=job_id)

    @property
    def is_foreground_service(self) -> bool:
        return self.kind == FOREGROUND_SERVICE

    @property
    def is_location_typed(self) -> bool:
        return self.kind == FOREGROUND_SERVICE and self.service_type == "location"

    @property
    def tag(self) -> str:
        """Stable identifier of the executing unit, used as trace evidence."""
        if self.service_id is not None:
            return f"svc:{self.service_id}"
        if self.job_id is not None:
            return f"job:{self.job_id}"
        return self.kind
