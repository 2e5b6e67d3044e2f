"""Discrete-event simulator for malleable HPC workloads."""

from .appmodel import (AppModel, CostModelParams, default_apps, resize_cost,
                       scheduling_overhead, step_time)
from .dmr import (DmrRequest, RedistributionPlan, check_status, icheck_status,
                  inhibitor_gate, plan_expand, plan_resize, plan_shrink)
from .metrics import RunSummary, audit_trace, gain_report, utilization
from .rms import Action, ActionKind, ActionReason, ResourceManager
from .simcore import Clock, Event, EventKind, EventQueue, Simulation
from .workload import (JobDescriptor, WorkloadParams, as_fixed,
                       generate_workload, parse_workload, serialize_workload)

__all__ = [
    "Action", "ActionKind", "ActionReason", "AppModel", "Clock",
    "CostModelParams", "DmrRequest", "Event", "EventKind", "EventQueue",
    "JobDescriptor", "RedistributionPlan", "ResourceManager", "RunSummary",
    "Simulation", "WorkloadParams", "as_fixed", "audit_trace", "check_status",
    "default_apps", "gain_report", "generate_workload", "icheck_status",
    "inhibitor_gate", "parse_workload", "plan_expand", "plan_resize",
    "plan_shrink", "resize_cost", "scheduling_overhead", "serialize_workload",
    "step_time", "utilization",
]

__version__ = "0.1.0"
