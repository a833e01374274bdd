"""Grid-clustered MANET survivability simulator.

The library entry points most callers need are re-exported here; the
submodules hold the rest.
"""

from gridsurv.engine import Simulation, run
from gridsurv.errors import ConfigError, DomainError, InvariantViolation, TraceParseError
from gridsurv.metrics import MetricsReport, collect_metrics
from gridsurv.scenario import Scenario, parse_scenario, scenario_from_text

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DomainError",
    "InvariantViolation",
    "MetricsReport",
    "Scenario",
    "Simulation",
    "TraceParseError",
    "collect_metrics",
    "parse_scenario",
    "run",
    "scenario_from_text",
]
