import json

import pytest

from fgsim.errors import OutOfOrder, ParseError
from fgsim.trace import SCHEMA, TraceLog, TraceRecord, parse_trace


def _log():
    now = [0]
    log = TraceLog(lambda: now[0], {"seed": 1})
    log.emit("a", "x", "r", data_b=2, data_a=1)
    now[0] = 10
    log.emit("a", "y", visibility="hidden")
    log.emit("system", "run-end")
    return log


def test_header_and_records_round_trip():
    log = _log()
    text = log.dumps()
    lines = text.splitlines()
    assert json.loads(lines[0]) == {"schema": SCHEMA, "seed": 1}
    header, records, warnings = parse_trace(text.splitlines(True))
    assert header["seed"] == 1
    assert records == log.records
    assert warnings == []


def test_record_encoding_is_stable():
    rec = TraceRecord(5, 0, "a", "x", data={"z": 1, "a": 2})
    assert rec.to_json() == ('{"t":5,"seq":0,"actor":"a","action":"x","resource":"",'
                             '"outcome":"ok","visibility":"n/a","data":{"a":2,"z":1}}')


def test_seq_is_global_and_increasing():
    log = _log()
    assert [r.seq for r in log.records] == [0, 1, 2]
    assert [r.t for r in log.records] == [0, 10, 10]


def test_truncated_last_line_keeps_prefix_with_warning():
    lines = _log().dumps().splitlines()
    cut = lines[:-1] + [lines[-1][:15]]
    header, records, warnings = parse_trace(cut)
    assert len(records) == 2
    assert warnings and "truncated" in warnings[0]


def test_missing_run_end_warns():
    lines = _log().dumps().splitlines()[:-1]
    _, records, warnings = parse_trace(lines)
    assert len(records) == 2 and warnings


def test_malformed_middle_line_is_an_error():
    lines = _log().dumps().splitlines()
    lines[1] = "{nope"
    with pytest.raises(ParseError):
        parse_trace(lines)


def test_out_of_order_records_are_rejected():
    lines = _log().dumps().splitlines()
    lines[1], lines[2] = lines[2], lines[1]
    with pytest.raises(OutOfOrder):
        parse_trace(lines)


def test_bad_header_and_visibility():
    with pytest.raises(ParseError):
        parse_trace(['{"schema": "other"}'])
    with pytest.raises(ParseError):
        parse_trace([])
    bad = json.loads(TraceRecord(0, 0, "a", "x").to_json())
    bad["visibility"] = "maybe"
    with pytest.raises(ParseError):
        parse_trace([json.dumps({"schema": SCHEMA}), json.dumps(bad), "{}"])
