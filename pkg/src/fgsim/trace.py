"""Append-only audit trace and its line-delimited JSON encoding.

File layout: one header object on the first line, then one record per line.
Field order is fixed so traces diff cleanly and golden files stay stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .errors import OutOfOrder, ParseError

SCHEMA = "fgsim-trace/1"
VISIBILITIES = ("visible", "hidden", "suppressed", "n/a")
RECORD_FIELDS = ("t", "seq", "actor", "action", "resource", "outcome", "visibility", "data")


@dataclass(frozen=True)
class TraceRecord:
    t: int
    seq: int
    actor: str
    action: str
    resource: str = ""
    outcome: str = "ok"
    visibility: str = "n/a"
    data: dict = field(default_factory=dict)

    @property
    def ref(self) -> list[int]:
        return [self.t, self.seq]

    def to_json(self) -> str:
        obj = {name: getattr(self, name) for name in RECORD_FIELDS}
        obj["data"] = dict(sorted(self.data.items()))
        return json.dumps(obj, separators=(",", ":"))

    @classmethod
    def from_dict(cls, obj: dict) -> "TraceRecord":
        try:
            rec = cls(**{name: obj[name] for name in RECORD_FIELDS})
        except (KeyError, TypeError) as exc:
            raise ParseError(f"bad record: {exc}") from exc
        if rec.visibility not in VISIBILITIES:
            raise ParseError(f"bad visibility {rec.visibility!r}")
        return rec


class TraceLog:
    def __init__(self, clock: Callable[[], int], header: dict | None = None):
        self._clock = clock
        self.header = {"schema": SCHEMA, **(header or {})}
        self.records: list[TraceRecord] = []
        self.listeners: list[Callable[[TraceRecord], None]] = []

    def emit(self, actor: str, action: str, resource: str = "", outcome: str = "ok",
             visibility: str = "n/a", **data) -> TraceRecord:
        rec = TraceRecord(self._clock(), len(self.records), actor, action,
                          resource, outcome, visibility, data)
        self.records.append(rec)
        for fn in self.listeners:
            fn(rec)
        return rec

    def select(self, action: str | None = None, actor: str | None = None) -> list[TraceRecord]:
        return [r for r in self.records
                if (action is None or r.action == action)
                and (actor is None or r.actor == actor)]

    def dumps(self) -> str:
        lines = [json.dumps(self.header, sort_keys=True, separators=(",", ":"))]
        lines.extend(r.to_json() for r in self.records)
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())


def parse_trace(lines: Iterable[str]) -> tuple[dict, list[TraceRecord], list[str]]:
    """Parse a trace, returning ``(header, records, warnings)``.

    An unparseable final line is treated as truncation: the prefix is kept
    and a warning is returned. Anything malformed earlier is a ParseError.
    """
    lines = [ln for ln in (l.rstrip("\n") for l in lines) if ln.strip()]
    if not lines:
        raise ParseError("empty trace")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"line 1: bad header: {exc}") from exc
    if not isinstance(header, dict) or header.get("schema") != SCHEMA:
        raise ParseError(f"line 1: expected schema {SCHEMA}")

    warnings: list[str] = []
    records: list[TraceRecord] = []
    last = None
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = TraceRecord.from_dict(json.loads(line))
        except (json.JSONDecodeError, ParseError) as exc:
            if lineno == len(lines):
                warnings.append(f"trace truncated at line {lineno}")
                break
            raise ParseError(f"line {lineno}: {exc}") from exc
        key = (rec.t, rec.seq)
        if last is not None and key <= last:
            raise OutOfOrder(f"line {lineno}: record {key} after {last}")
        last = key
        records.append(rec)
    if not records or records[-1].action != "run-end":
        if not warnings:
            warnings.append("trace truncated: no run-end record")
    return header, records, warnings


def read_trace(path) -> tuple[dict, list[TraceRecord], list[str]]:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh)
