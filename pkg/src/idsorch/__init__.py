"""Network-wide orchestration of host-based IDS agents, with a deterministic
discrete-event harness for exercising it."""

from .agent import Agent, ModuleChain
from .model import (
    Action,
    Alert,
    AlertCondition,
    AlertKind,
    BuildMode,
    DeploymentPlan,
    FlowKey,
    HostPolicy,
    Label,
    ModuleKind,
    ModuleSpec,
    TimelineEvent,
    ValidationError,
    Verdict,
    validate,
)
from .orchestrator import AlertDatabase, BuildLatencyModel, ConfigError, Orchestrator, ResponseRule
from .simnet import Scenario, run_scenario, scenario_library

__version__ = "0.1.0"

__all__ = [
    "Action", "Agent", "Alert", "AlertCondition", "AlertDatabase", "AlertKind",
    "BuildLatencyModel", "BuildMode", "ConfigError", "DeploymentPlan", "FlowKey",
    "HostPolicy", "Label", "ModuleChain", "ModuleKind", "ModuleSpec", "Orchestrator",
    "ResponseRule", "Scenario", "TimelineEvent", "ValidationError", "Verdict",
    "run_scenario", "scenario_library", "validate",
]
