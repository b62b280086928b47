"""Disruption-simulation harness: scenarios, simulator, presets and reports."""

from .cost import SuiteCost, suite_cost
from .presets import PRESETS, preset
from .report import report
from .scenario import Contact, Scenario, Traffic, load_scenario, scenario_from_dict
from .sim import Counters, EventTrace, Metrics, TraceRecord, final_dispositions, run

__all__ = [
    "PRESETS", "preset", "report", "Contact", "Scenario", "Traffic", "load_scenario",
    "scenario_from_dict", "Counters", "EventTrace", "Metrics", "TraceRecord",
    "final_dispositions", "run", "SuiteCost", "suite_cost",
]
