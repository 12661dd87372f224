"""Discrete-event model of mobile background execution and invisible foreground services."""

from .device import DeviceProfile, PlatformVersion, VERSIONS
from .kernel import Kernel, SimEvent
from .monitor import Monitor, MonitorConfig
from .permissions import RevocationPolicy
from .simulation import RunResult, Simulation
from .strategies import Action, StrategySpec

__version__ = "0.1.0"

__all__ = ["Action", "DeviceProfile", "Kernel", "Monitor", "MonitorConfig", "PlatformVersion",
           "RevocationPolicy", "RunResult", "SimEvent", "Simulation", "StrategySpec", "VERSIONS"]
