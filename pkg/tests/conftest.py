import pytest

from fgsim import DeviceProfile, Simulation

ACCEPTANCE_LINES: list[str] = []


def make_sim(version="pie", *, grace=5000, budget=None, black=0.0, seed=0, **kw) -> Simulation:
    """A simulation with the battery optimizer off unless a budget is given."""
    profile = DeviceProfile(notification_grace_ms=grace, black_image_probability=black,
                            battery_optimization_budget=budget)
    return Simulation(version, profile, seed, **kw)


@pytest.fixture
def sim():
    s = make_sim()
    s.install_app("app", {"camera": "granted", "record-audio": "granted",
                          "location": "granted", "file-storage": "granted"})
    return s


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
