"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Expected values come from tests/oracle.py or from arithmetic written out
next to the assertion, never from a previous simulator run.
"""

import dataclasses
import random
import time

import pytest

from conftest import ACCEPTANCE_LINES, make_sim
from oracle import (ReferenceExecutor, chain_run_times, location_delivery_times,
                    periodic_run_times, random_scenario)
from fgsim import Simulation
from fgsim.context import ExecContext
from fgsim.device import PROFILES
from fgsim.errors import IllegalState
from fgsim.scenario import load_scenario
from fgsim.schedulers import AlarmSpec, JobSpec
from fgsim.strategies import mic_long_record_strategy

HOUR = 3_600_000


def verdict(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_01_invisibility_threshold():
    started = time.perf_counter()
    mismatches = []
    for duration in range(0, 10_001, 100):
        sim = Simulation("pie", PROFILES["default"])
        sim.install_app("app")
        sid = sim.lifecycle.start_foreground_service("app")
        reports = []
        sim.at(duration, "stop", lambda: reports.append(sim.lifecycle.stop_foreground(sid)))
        sim.run(duration)
        posted = bool(sim.trace.select("notification-posted"))
        expected = duration >= 5000
        if posted != expected or reports[0].was_visible != expected:
            mismatches.append(duration)
    elapsed = time.perf_counter() - started
    verdict(1, "invisibility threshold", not mismatches and elapsed < 1.0,
            f"101 durations, mismatches={mismatches}, {elapsed:.3f}s")


def test_02_periodic_floor():
    sim = make_sim()
    sim.install_app("app")
    runs = []
    sim.jobs.schedule_job(JobSpec("app", lambda ctx, rec: runs.append(sim.now), periodic_ms=60_000))
    sim.run(2 * HOUR)
    expected = periodic_run_times(60_000, 2 * HOUR)      # 900 s, 1800 s, ... 7200 s -> 8
    gaps = [b - a for a, b in zip(runs, runs[1:])]
    ok = runs == expected and len(runs) <= 9 and min(gaps) >= 900_000
    verdict(2, "periodic floor", ok, f"{len(runs)} executions, min gap {min(gaps)} ms")


def test_03_chain_bypass():
    # default profile, battery optimizer included
    sim = Simulation("pie", PROFILES["default"])
    sim.install_app("app")
    started = []

    def payload(ctx, rec):
        sid = sim.lifecycle.start_foreground_service("app")
        started.append(sid)
        sim.kernel.schedule_in(4000, "stop", lambda ev: sim.lifecycle.stop_foreground(sid),
                               owner="app")
        sim.jobs.chain_next(rec.job_id, 60_000)

    sim.jobs.schedule_job(JobSpec("app", payload, minimum_latency_ms=60_000))
    result = sim.run(HOUR)
    expected = len(chain_run_times(60_000, HOUR))          # 60
    fired = len(sim.trace.select("job-fired"))
    illegal = sim.trace.select("illegal-state")
    ok = abs(fired - expected) <= 1 and len(started) == fired and not illegal \
        and not result.violations
    verdict(3, "chain bypass", ok,
            f"{fired} executions (oracle {expected}), {len(started)} FGS starts, "
            f"{len(illegal)} illegal-state")


CONTEXTS = ("ui", "scheduler", "background-service", "foreground-service")
# camera outcome per version and context
EXPECTED_CAMERA = {
    "oreo": {"ui": "allow", "scheduler": "allow", "background-service": "allow",
             "foreground-service": "allow"},
    "pie": {"ui": "allow", "scheduler": "illegal-state", "background-service": "illegal-state",
            "foreground-service": "allow"},
    "ten": {"ui": "allow", "scheduler": "illegal-state", "background-service": "illegal-state",
            "foreground-service": "allow"},
}


def _camera_outcome(version: str, kind: str) -> str:
    sim = make_sim(version)
    sim.install_app("app", {"camera": "granted"}, ui_visible=True)
    if kind == "ui":
        ctx = ExecContext.ui("app")
    elif kind == "scheduler":
        ctx = ExecContext.scheduler("app", 1)
    elif kind == "background-service":
        # started while the UI is open, used after it closes
        ctx = sim.lifecycle.services[sim.lifecycle.start_background_service("app")].context
    else:
        ctx = sim.lifecycle.services[sim.lifecycle.start_foreground_service("app")].context
    if kind != "ui":
        sim.lifecycle.set_ui_visible("app", False)
    try:
        sim.camera.release(sim.camera.acquire_camera("app", ctx))
    except IllegalState:
        return "illegal-state"
    return "allow"


def test_04_sensor_restriction_matrix():
    got = {v: {k: _camera_outcome(v, k) for k in CONTEXTS} for v in EXPECTED_CAMERA}
    bad = [(v, k, got[v][k]) for v in got for k in CONTEXTS if got[v][k] != EXPECTED_CAMERA[v][k]]
    verdict(4, "sensor restriction matrix", not bad, f"3x4 cells, mismatches={bad}")


def test_05_media_server_decoupling():
    sim = make_sim()
    sim.install_app("app", {"record-audio": "granted"})
    strat = sim.add_strategy(mic_long_record_strategy("app", 0, 5, fgs_budget_ms=4000,
                                                      chain_delay_ms=60_000))
    sim.run(10 * 60_000)
    stops = sim.trace.select("recording-stop")
    expected = (5 - 0) * 60_000          # cycles five chain delays apart
    durations = [r.data["duration_ms"] for r in stops]
    first_fgs_invisible = not sim.trace.select("notification-posted")
    ok = durations == [expected] and strat.stats.recording_ms == expected and first_fgs_invisible
    verdict(5, "media-server decoupling", ok, f"recording {durations} ms, expected {expected}")


def test_06_android10_location_gate():
    sim = make_sim("ten")
    sim.install_app("app", {"location": "while-in-use"})
    # background: a subscription from plain scheduler code
    bg = sim.location.request_location_updates("app", ExecContext.scheduler("app", 1), 1000)
    # location-typed foreground service kept up for 60 s, 1 s cadence
    sid = sim.lifecycle.start_foreground_service("app", declared_type="location")
    fctx = sim.lifecycle.services[sid].context
    fg = sim.location.request_location_updates("app", fctx, 1000, duration_ms=60_000)
    sim.at(60_000, "stop", sim.lifecycle.stop_foreground, sid)
    sim.run(HOUR)
    subs = sim.location.subscriptions
    fg_times = [r.t for r in sim.trace.select("location-update") if r.data["ctx"] == fctx.tag]
    expected = location_delivery_times(0, 1000, 60_000)     # 0, 1000, ..., 59000
    ok = subs[bg].delivered == 0 and fg_times == expected and subs[fg].delivered == 60
    verdict(6, "android 10 location gate", ok,
            f"background {subs[bg].delivered} updates, typed FGS {len(fg_times)} "
            f"(oracle {len(expected)})")


def test_07_background_location_cap():
    sim = make_sim("pie")
    sim.install_app("app", {"location": "granted"})
    sim.location.request_location_updates("app", ExecContext.scheduler("app", 1), 1000)
    sim.run(2 * HOUR)
    times = [r.t for r in sim.trace.select("location-update")]
    first_hour = [t for t in times if t < HOUR]
    cap = sim.location.background_cap
    worst = max(sum(1 for u in times if t <= u < t + HOUR) for t in times)
    ok = cap == 4 and len(first_hour) <= cap and worst <= cap
    verdict(7, "background location cap", ok,
            f"{len(first_hour)} updates in first hour, max {worst} in any rolling hour, cap {cap}")


def test_08_determinism():
    diffs = []
    for name in ("camera-spy", "mic-spy", "location-spy", "exfil", "combined"):
        scenario = load_scenario(name)
        a = scenario.run().trace.dumps()
        b = scenario.run().trace.dumps()
        if a != b:
            diffs.append(name)
    verdict(8, "determinism", not diffs, f"5 presets run twice, differing={diffs}")


def _windows_oracle(delay, budget, horizon, window):
    """Invisible FGS per window, counted at the stop time of each cycle."""
    counts = {}
    for t in chain_run_times(delay, horizon):
        stop = t + budget
        if stop <= horizon:
            counts[stop // window] = counts.get(stop // window, 0) + 1
    return counts


def test_09_detector_efficacy_and_blind_spot():
    combined = load_scenario("combined")
    report = combined.run().report
    findings = report["apps"]["spyware"]["findings"]
    chain = [f for f in findings if f["rule"] == "invisible-fgs-chain"]
    # first window holds cycles at 60 s .. 840 s, i.e. 14 stops before 900 s
    oracle = _windows_oracle(60_000, 4000, combined.horizon_ms, 900_000)
    first = next(f for f in chain if f["window"] == [0, 900_000])
    abusive = first["severity"] == "abusive" and first["value"] == oracle[0] >= 10

    strat = dataclasses.replace(combined.strategies[0], chain_delay_ms=2 * HOUR)
    sparse = dataclasses.replace(combined, strategies=[strat], horizon_ms=6 * HOUR)
    sparse_report = sparse.run().report
    sparse_findings = sparse_report["apps"]["spyware"]["findings"]
    # one cycle per 2 h puts at most 1 invisible FGS in any 15 min window: 1 < 3
    sparse_oracle = _windows_oracle(2 * HOUR, 4000, sparse.horizon_ms, 900_000)
    ok = abusive and not sparse_findings and max(sparse_oracle.values()) < 3
    verdict(9, "detector efficacy and blind spot", ok,
            f"combined first window {first['value']} invisible FGS -> {first['severity']}; "
            f"sparse variant {len(sparse_findings)} findings")


def test_10_mitigation_value():
    scenario = load_scenario("combined")
    off = scenario.run(mitigation=False)
    on = scenario.run(mitigation=True)
    revoked = on.report["apps"]["spyware"]["revocations"]
    ok = on.items_collected < off.items_collected and revoked
    verdict(10, "mitigation value", ok,
            f"items collected off={off.items_collected} on={on.items_collected}, "
            f"{len(revoked)} revocations")


def _simulate(items, horizon):
    sim = make_sim("pie")
    sim.install_app("a")
    actions = []
    alarm_ids = []

    def recorder(label):
        return lambda ctx, rec: actions.append((sim.now, label))

    def chainer(label, delay, remaining):
        left = [remaining - 1]

        def payload(ctx, rec):
            actions.append((sim.now, label))
            if left[0] > 0:
                left[0] -= 1
                sim.jobs.chain_next(rec.job_id, delay)
        return payload

    for it in items:
        if it.kind == "latency":
            sim.jobs.schedule_job(JobSpec("a", recorder(it.label), minimum_latency_ms=it.at))
        elif it.kind == "periodic":
            sim.jobs.schedule_job(JobSpec("a", recorder(it.label), periodic_ms=it.arg))
        elif it.kind == "chain":
            sim.jobs.schedule_job(JobSpec("a", chainer(it.label, it.at, it.arg),
                                          minimum_latency_ms=it.at))
        elif it.kind == "charging-job":
            sim.jobs.schedule_job(JobSpec("a", recorder(it.label), minimum_latency_ms=it.at,
                                          requires_charging=True, override_deadline_ms=it.arg))
        elif it.kind == "alarm":
            alarm_ids.append(sim.alarms.set_alarm(AlarmSpec("a", it.at, recorder(it.label),
                                                            repeat_ms=it.arg)))
        elif it.kind == "charge":
            sim.at(it.at, "device-change", sim.device.apply_device_change, charging=it.flag)
        elif it.kind == "cancel":
            sim.at(it.at, "cancel", sim.alarms.cancel_alarm, alarm_ids[it.arg])
    sim.run(horizon)
    return actions


def test_11_oracle_cross_check():
    horizon = 2 * HOUR
    started = time.perf_counter()
    mismatched, total = [], 0
    for i in range(50):
        items = random_scenario(random.Random(i))
        ref = ReferenceExecutor(horizon)
        ref.load(items)
        expected = ref.run()
        got = _simulate(items, horizon)
        total += len(expected)
        if got != expected:
            mismatched.append(i)
    elapsed = time.perf_counter() - started
    verdict(11, "oracle cross-check", not mismatched and elapsed < 10.0,
            f"50 scenarios, {total} actions, mismatched={mismatched}, {elapsed:.2f}s")
