"""hibernate-flow: workflow execution that survives intrusion windows.

On an intrusion flag the engine encrypts the ongoing activity's data
partitions in place (writes buffer in an overlay cache) and migrates the
upcoming activities' partitions into per-activity dimensions; on recovery
everything migrates back. A deterministic drill harness injects flags and
attacker probes and grades availability, confidentiality, and integrity
against a baseline run.
"""

from .chameleon import ChameleonKey, OverlayCache, derive_key, xor_keystream
from .engine import (
    Engine,
    Event,
    ExternalRead,
    FlagKind,
    Phase,
    ReadRaw,
    RunReport,
    ScheduledEvent,
    WriteGarbage,
    run,
    validate_log,
)
from .errors import HibernateFlowError
from .harness import Findings, Scenario, SeedRecord, baseline, run_scenario, sweep
from .hibernation import DimensionPlan, plan_dimensions
from .model import (
    Activity,
    GetOp,
    PutOp,
    WorkflowProcess,
    footprint,
    parse_workflow,
    serialize_workflow,
    upcoming_partitions,
)
from .scenario import demo_scenario, load_scenario, scenario_from_dict
from .store import Caller, PartitionStatus, Store, StoreSnapshot, WriteOutcome

__version__ = "0.1.0"

__all__ = [
    "Activity",
    "Caller",
    "ChameleonKey",
    "DimensionPlan",
    "Engine",
    "Event",
    "ExternalRead",
    "Findings",
    "FlagKind",
    "GetOp",
    "HibernateFlowError",
    "OverlayCache",
    "PartitionStatus",
    "Phase",
    "PutOp",
    "ReadRaw",
    "RunReport",
    "Scenario",
    "ScheduledEvent",
    "SeedRecord",
    "Store",
    "StoreSnapshot",
    "WorkflowProcess",
    "WriteGarbage",
    "WriteOutcome",
    "baseline",
    "demo_scenario",
    "derive_key",
    "footprint",
    "load_scenario",
    "parse_workflow",
    "plan_dimensions",
    "run",
    "run_scenario",
    "scenario_from_dict",
    "serialize_workflow",
    "sweep",
    "upcoming_partitions",
    "validate_log",
    "xor_keystream",
]
