import pytest

from conftest import make_sim
from oracle import chain_run_times
from fgsim.strategies import (Action, StrategySpec, camera_spy, file_exfil_strategy,
                              location_tracking_strategy, mic_long_record_strategy)

HOUR = 3_600_000
MB = 1_000_000
ALL = {"camera": "granted", "record-audio": "granted", "location": "granted",
       "file-storage": "granted"}


def _sim(version="pie", **kw):
    sim = make_sim(version, **kw)
    sim.install_app("spy", ALL)
    return sim


def test_camera_spy_cycles_stay_invisible():
    sim = _sim()
    strat = sim.add_strategy(camera_spy("spy"))
    result = sim.run(HOUR)
    n = len(chain_run_times(60_000, HOUR))
    assert strat.stats.cycles_executed == n
    assert strat.stats.data_items["images"] == n
    assert strat.stats.notifications_leaked == 0
    assert not sim.trace.select("notification-posted")
    assert not sim.trace.select("illegal-state")
    assert result.violations == []


def test_budget_past_grace_leaks_every_cycle():
    sim = _sim()
    strat = sim.add_strategy(camera_spy("spy", fgs_budget_ms=6000))
    sim.run(10 * 60_000)
    # the cycle at 600 s would post at 605 s, past the horizon; the 9 earlier ones posted
    assert strat.stats.cycles_executed == 10
    assert strat.stats.notifications_leaked == 9
    assert len(sim.trace.select("notification-posted")) == 9


def test_mic_recording_spans_cycles():
    sim = _sim()
    strat = sim.add_strategy(mic_long_record_strategy("spy", 2, 7))
    sim.run(HOUR)
    assert strat.stats.recording_ms == (7 - 2) * 60_000
    assert strat.stats.data_items["recordings"] == 1
    with pytest.raises(ValueError):
        mic_long_record_strategy("spy", 3, 1)


def test_same_cycle_recording_is_shorter_than_budget():
    sim = _sim()
    strat = sim.add_strategy(mic_long_record_strategy("spy", 0, 0))
    sim.run(5 * 60_000)
    assert strat.stats.recording_ms < strat.spec.fgs_budget_ms


def test_location_tracking_on_ten():
    sim = _sim("ten")
    sim.permissions.grant("spy", "location", "while-in-use")
    strat = sim.add_strategy(location_tracking_strategy("spy", 1000))
    sim.run(10 * 60_000 + 4000)
    # 4 s service at 1 s cadence: 4 fixes per cycle, 10 cycles
    assert strat.stats.data_items["locations"] == 40


def test_untyped_location_strategy_fails_on_ten_but_keeps_chaining():
    sim = _sim("ten")
    sim.permissions.grant("spy", "location", "while-in-use")
    strat = sim.add_strategy(location_tracking_strategy("spy", 1000, declared_type=None))
    sim.run(10 * 60_000)
    assert strat.stats.cycles_executed == 10
    assert strat.stats.errors["missing-service-type"] == 10
    assert strat.stats.items_collected == 0


def test_exfil_skips_large_files_and_counts_partials():
    sim = _sim(device={"network": "cellular"})
    for path, size in [("/a", 1 * MB), ("/b", 3 * MB), ("/big", 100 * MB)]:
        sim.add_file(path, size)
    strat = sim.add_strategy(file_exfil_strategy("spy", max_bytes=5 * MB))
    sim.run(5 * 60_000)
    # cellular 500 B/ms x 4000 ms = 2 MB per cycle: /a completes, /b never fits
    assert strat.stats.data_items["uploads"] == 1
    assert strat.stats.errors["partial-upload"] == 4
    assert not any(r.resource == "storage:/big" for r in sim.trace.select("upload"))


def test_alarm_driven_chain():
    sim = _sim()
    strat = sim.add_strategy(camera_spy("spy", via="alarm"))
    sim.run(HOUR)
    assert strat.stats.cycles_executed == 60
    assert len(sim.trace.select("alarm-fired")) == 60


def test_max_cycles_and_stop_app():
    sim = _sim()
    strat = sim.add_strategy(camera_spy("spy", max_cycles=3))
    sim.run(HOUR)
    assert strat.stats.cycles_executed == 3

    sim = _sim()
    strat = sim.add_strategy(camera_spy("spy"))
    sim.at(10 * 60_000 + 1, "kill", sim.stop_app, "spy")
    sim.run(HOUR)
    assert strat.stats.cycles_executed == 10


def test_denied_permission_counts_errors_only():
    sim = _sim()
    sim.permissions.revoke("spy", "camera")
    strat = sim.add_strategy(camera_spy("spy"))
    sim.run(5 * 60_000)
    assert strat.stats.cycles_executed == 5
    assert strat.stats.errors["permission-denied"] == 5


def test_constraints_pass_through_to_jobs():
    sim = _sim()
    strat = sim.add_strategy(camera_spy("spy", constraints={"requires_charging": True}))
    sim.at(30 * 60_000, "plug", sim.device.apply_device_change, charging=True)
    sim.run(HOUR)
    # first due at 60 s, held until 30 min, then one per minute through 60 min
    assert strat.stats.cycles_executed == 1 + 30


def test_spec_validation():
    with pytest.raises(ValueError):
        StrategySpec("s", "spy", ())
    with pytest.raises(ValueError):
        Action("teleport")
    with pytest.raises(ValueError):
        Action("location-burst")
    with pytest.raises(ValueError):
        StrategySpec("s", "spy", (Action("capture-image"),), constraints={"moon": True})
    with pytest.raises(ValueError):
        StrategySpec("s", "spy", (Action("capture-image"),), via="carrier-pigeon")
