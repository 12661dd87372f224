import pytest

from fgsim.errors import OutOfOrder
from fgsim.monitor import Monitor, MonitorConfig, build_report
from fgsim.scenario import load_scenario
from fgsim.trace import TraceRecord, parse_trace

W = 900_000


class Feed:
    """Builds a record stream by hand."""

    def __init__(self, config=None):
        self.mon = Monitor(config or MonitorConfig())
        self.seq = 0
        self.add(0, "app", "app-install", "app")

    def add(self, t, actor, action, resource="", outcome="ok", visibility="n/a", **data):
        rec = TraceRecord(t, self.seq, actor, action, resource, outcome, visibility, data)
        self.seq += 1
        self.mon.ingest(rec)
        return rec

    def invisible_fgs(self, t, sid):
        self.add(t, "app", "service-start", visibility="hidden", service_id=sid, kind="foreground")
        return self.add(t + 4000, "app", "service-stop", visibility="hidden", service_id=sid,
                        kind="foreground")

    def findings(self, horizon):
        self.mon.finish(horizon)
        return [(f.rule, f.severity, f.window[0], f.value) for f in self.mon.findings]


@pytest.mark.parametrize("n,severity", [(2, None), (3, "suspicious"), (9, "suspicious"),
                                        (10, "abusive")])
def test_invisible_fgs_thresholds(n, severity):
    feed = Feed()
    for i in range(n):
        feed.invisible_fgs(i * 60_000, i)
    got = feed.findings(W - 1)
    assert got == ([] if severity is None else [("invisible-fgs-chain", severity, 0, n)])


def test_posted_notification_means_not_invisible():
    feed = Feed()
    for i in range(5):
        feed.add(i * 60_000, "app", "service-start", service_id=i, kind="foreground")
        feed.add(i * 60_000 + 5000, "app", "notification-posted", visibility="visible", service_id=i)
        feed.add(i * 60_000 + 6000, "app", "service-stop", visibility="visible", service_id=i,
                 kind="foreground")
    assert feed.findings(W - 1) == []


def test_windows_are_half_open():
    feed = Feed()
    for i in range(2):
        feed.add(W - 4000 + i, "app", "service-start", visibility="hidden", service_id=i,
                 kind="foreground")
    for i in range(2):                               # stops at W-1 and W
        feed.add(W - 1 + i, "app", "service-stop", visibility="hidden", service_id=i,
                 kind="foreground")
    feed.invisible_fgs(W + 10, 9)
    feed.mon.finish(2 * W - 1)
    closed = {(w.start, len(w.invisible_fgs)) for w in feed.mon.closed}
    assert closed == {(0, 1), (W, 2)}


def test_evidence_lies_inside_the_window():
    feed = Feed()
    refs = [feed.invisible_fgs(i * 60_000, i).ref for i in range(12)]
    feed.mon.finish(W - 1)
    (finding,) = feed.mon.findings
    assert [list(e) for e in finding.evidence] == refs
    assert all(finding.window[0] <= t < finding.window[1] for t, _ in finding.evidence)


def _hidden_access(feed, t, ctx, resource="camera", action="sensor-acquire"):
    feed.add(t, "app", action, resource, visibility="hidden", ctx=ctx)


@pytest.mark.parametrize("episodes,severity", [(1, None), (3, "suspicious"), (10, "abusive")])
def test_hidden_sensor_access_counts_episodes(episodes, severity):
    feed = Feed()
    for i in range(episodes):
        for k in range(5):        # many accesses inside one service are one episode
            _hidden_access(feed, i * 60_000 + k, f"svc:{i}", "location", "location-update")
    got = [f for f in feed.findings(W - 1) if f[0] == "hidden-sensor-access"]
    assert got == ([] if severity is None else [("hidden-sensor-access", severity, 0, episodes)])


def test_visible_access_is_not_hidden():
    feed = Feed()
    for i in range(12):
        feed.add(i * 1000, "app", "sensor-acquire", "camera", visibility="visible", ctx=f"svc:{i}")
    assert feed.findings(W - 1) == []


@pytest.mark.parametrize("total,severity", [(4_999_999, None), (5_000_000, "suspicious"),
                                            (50_000_000, "abusive")])
def test_exfil_volume(total, severity):
    feed = Feed()
    feed.add(1000, "app", "upload", "storage:/x", "complete", "hidden", bytes=total)
    feed.add(2000, "app", "upload", "storage:/y", "complete", "visible", bytes=10**9)
    got = feed.findings(W - 1)
    assert got == ([] if severity is None else [("exfil-volume", severity, 0, total)])


def test_dormant_spike():
    feed = Feed()
    for i in range(3):
        _hidden_access(feed, 4 * W + i, f"svc:{i}")
    got = feed.findings(5 * W - 1)
    assert ("dormant-spike", "suspicious", 4 * W, 3) in got
    # three quiet windows are not enough
    feed = Feed()
    for i in range(3):
        _hidden_access(feed, 3 * W + i, f"svc:{i}")
    assert not [f for f in feed.findings(4 * W - 1) if f[0] == "dormant-spike"]


def test_out_of_order_ingest_is_rejected():
    feed = Feed()
    feed.add(100, "app", "x")
    with pytest.raises(OutOfOrder):
        feed.mon.ingest(TraceRecord(50, 99, "app", "y"))


def test_permissions_to_revoke_come_from_the_window():
    feed = Feed(MonitorConfig(hidden_abusive=3))
    _hidden_access(feed, 1, "svc:1", "camera")
    for i in (2, 3):
        feed.add(i, "app", "recording-start", "microphone", visibility="hidden", ctx=f"svc:{i}",
                 session=i)
    feed.mon.finish(W - 1)
    (finding,) = feed.mon.findings
    assert feed.mon.permissions_to_revoke(finding) == ["camera", "record-audio"]
    assert feed.mon.recommended_action("app") == {"action": "revoke",
                                                  "permissions": ["camera", "record-audio"]}


def test_config_validation():
    with pytest.raises(ValueError):
        MonitorConfig(fgs_suspicious=5, fgs_abusive=4)
    with pytest.raises(ValueError):
        MonitorConfig(window_ms=0)


def test_replay_report_equals_live_report():
    result = load_scenario("combined").run()
    header, records, warnings = parse_trace(result.trace.dumps().splitlines())
    assert warnings == []
    assert build_report(header, records, warnings) == result.report


def test_truncated_trace_reports_the_prefix_only():
    result = load_scenario("combined").run()
    lines = result.trace.dumps().splitlines()
    cut = len(lines) // 3
    header, records, warnings = parse_trace(lines[:cut] + [lines[cut][:20]])
    report = build_report(header, records, warnings)
    assert report["warnings"]
    last = records[-1].t
    for app in report["apps"].values():
        assert all(w["start"] <= last for w in app["windows"])
