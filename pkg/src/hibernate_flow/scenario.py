"""Scenario documents: the JSON format the CLI consumes.

A scenario bundles a workflow, its initial data (with sentinel markers for
leak scanning), an injected-event schedule, and a probe catalog. Documents
are schema-validated strictly: unknown keys are rejected.
"""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema

from .engine import (
    ExternalRead,
    FlagKind,
    Probe,
    ReadRaw,
    ScheduledEvent,
    WriteGarbage,
)
from .errors import ParseError
from .harness import Scenario, SeedRecord
from .model import parse_workflow

_GET_OP = {
    "type": "object",
    "additionalProperties": False,
    "required": ["op", "partition", "table", "key", "reg"],
    "properties": {
        "op": {"const": "GET"},
        "partition": {"type": "string"},
        "table": {"type": "string"},
        "key": {"type": "string"},
        "reg": {"type": "string"},
    },
}

_PUT_OP = {
    "type": "object",
    "additionalProperties": False,
    "required": ["op", "partition", "table", "key", "value"],
    "properties": {
        "op": {"const": "PUT"},
        "partition": {"type": "string"},
        "table": {"type": "string"},
        "key": {"type": "string"},
        "value": {
            "oneOf": [
                {"type": "string"},
                {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "minProperties": 1,
                        "maxProperties": 1,
                        "properties": {
                            "lit": {"type": "string"},
                            "reg": {"type": "string"},
                        },
                    },
                },
            ]
        },
    },
}

_PROBE = {
    "oneOf": [
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "partition"],
            "properties": {
                "kind": {"const": "read_raw"},
                "partition": {"type": "string"},
            },
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "partition", "table", "key"],
            "properties": {
                "kind": {"const": "external_read"},
                "partition": {"type": "string"},
                "table": {"type": "string"},
                "key": {"type": "string"},
            },
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "partition", "table", "key", "data"],
            "properties": {
                "kind": {"const": "write_garbage"},
                "partition": {"type": "string"},
                "table": {"type": "string"},
                "key": {"type": "string"},
                "data": {"type": "string"},
            },
        },
    ]
}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "seed", "workflow", "initial_data"],
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "transform": {"type": "string"},
        "workflow": {
            "type": "object",
            "additionalProperties": False,
            "required": ["id", "activities"],
            "properties": {
                "id": {"type": "string"},
                "activities": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["id"],
                        "properties": {
                            "id": {"type": "string"},
                            "reads": {"type": "array", "items": {"type": "string"}},
                            "writes": {"type": "array", "items": {"type": "string"}},
                            "script": {
                                "type": "array",
                                "items": {"oneOf": [_GET_OP, _PUT_OP]},
                            },
                        },
                    },
                },
            },
        },
        "initial_data": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["partition", "table", "key", "value"],
                "properties": {
                    "partition": {"type": "string"},
                    "table": {"type": "string"},
                    "key": {"type": "string"},
                    "value": {"type": "string"},
                    "sentinel": {"type": "boolean"},
                },
            },
        },
        "schedule": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["activity", "step", "event"],
                "properties": {
                    "activity": {"type": "integer", "minimum": 0},
                    "step": {"type": "integer", "minimum": 0},
                    "event": {"enum": ["intrusion", "recovery", "probe"]},
                    "probe": {"type": "integer", "minimum": 0},
                },
            },
        },
        "probes": {"type": "array", "items": _PROBE},
    },
}


def _build_probe(raw: dict) -> Probe:
    kind = raw["kind"]
    if kind == "read_raw":
        return ReadRaw(partition=raw["partition"])
    if kind == "external_read":
        return ExternalRead(
            partition=raw["partition"],
            table=raw["table"],
            key=raw["key"].encode("utf-8"),
        )
    return WriteGarbage(
        partition=raw["partition"],
        table=raw["table"],
        key=raw["key"].encode("utf-8"),
        data=raw["data"].encode("utf-8"),
    )


def scenario_from_dict(doc: dict) -> Scenario:
    """Validate a parsed document against the schema and build the Scenario."""
    try:
        jsonschema.validate(doc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ParseError(f"scenario schema violation: {exc.message}") from exc

    workflow = parse_workflow(doc["workflow"])
    records = [
        SeedRecord(
            partition=raw["partition"],
            table=raw["table"],
            key=raw["key"].encode("utf-8"),
            value=raw["value"].encode("utf-8"),
            sentinel=raw.get("sentinel", False),
        )
        for raw in doc["initial_data"]
    ]
    probes = [_build_probe(raw) for raw in doc.get("probes", [])]

    schedule = []
    for raw in doc.get("schedule", []):
        kind = FlagKind(raw["event"])
        probe = None
        if kind is FlagKind.PROBE:
            index = raw.get("probe")
            if index is None:
                raise ParseError("schedule probe entry missing 'probe' index")
            if index >= len(probes):
                raise ParseError(f"schedule references unknown probe #{index}")
            probe = probes[index]
        schedule.append(
            ScheduledEvent(
                activity=raw["activity"], step=raw["step"], kind=kind, probe=probe
            )
        )

    scenario = Scenario(
        name=doc["name"],
        seed=doc["seed"],
        workflow=workflow,
        initial_data=records,
        schedule=schedule,
        probes=probes,
        transform=doc.get("transform", "xor-keystream"),
    )
    scenario.validate()
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read scenario file: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"scenario is not valid JSON: {exc}") from exc
    return scenario_from_dict(doc)


def demo_scenario() -> dict:
    """Bundled order-processing drill: five activities over four partitions,
    sentinels in every partition, one mid-run intrusion with recovery."""
    return {
        "name": "order-pipeline-drill",
        "seed": 0,
        "transform": "xor-keystream",
        "workflow": {
            "id": "order_pipeline",
            "activities": [
                {
                    "id": "intake",
                    "reads": ["p_orders"],
                    "writes": ["p_orders"],
                    "script": [
                        {"op": "GET", "partition": "p_orders", "table": "orders", "key": "o1", "reg": "amt"},
                        {"op": "PUT", "partition": "p_orders", "table": "orders", "key": "o1", "value": [{"reg": "amt"}, {"lit": ":checked"}]},
                        {"op": "PUT", "partition": "p_orders", "table": "meta", "key": "note", "value": "intake-done"},
                        {"op": "GET", "partition": "p_orders", "table": "orders", "key": "o2", "reg": "o2"},
                    ],
                },
                {
                    "id": "reserve",
                    "reads": ["p_orders"],
                    "writes": ["p_inventory"],
                    "script": [
                        {"op": "GET", "partition": "p_orders", "table": "orders", "key": "o1", "reg": "amt"},
                        {"op": "PUT", "partition": "p_inventory", "table": "stock", "key": "reserved", "value": [{"reg": "amt"}]},
                        {"op": "PUT", "partition": "p_inventory", "table": "meta", "key": "note", "value": "reserved"},
                    ],
                },
                {
                    "id": "bill",
                    "reads": ["p_inventory"],
                    "writes": ["p_billing"],
                    "script": [
                        {"op": "GET", "partition": "p_inventory", "table": "stock", "key": "reserved", "reg": "res"},
                        {"op": "PUT", "partition": "p_billing", "table": "invoices", "key": "inv1", "value": [{"reg": "res"}, {"lit": ":billed"}]},
                        {"op": "GET", "partition": "p_inventory", "table": "stock", "key": "widget", "reg": "w"},
                        {"op": "PUT", "partition": "p_billing", "table": "invoices", "key": "inv2", "value": [{"reg": "w"}]},
                        {"op": "PUT", "partition": "p_billing", "table": "ledger", "key": "total", "value": "updated"},
                    ],
                },
                {
                    "id": "audit",
                    "reads": ["p_billing"],
                    "writes": ["p_audit"],
                    "script": [
                        {"op": "GET", "partition": "p_billing", "table": "invoices", "key": "inv1", "reg": "i1"},
                        {"op": "PUT", "partition": "p_audit", "table": "trail", "key": "entry1", "value": [{"lit": "billed:"}, {"reg": "i1"}]},
                        {"op": "PUT", "partition": "p_audit", "table": "trail", "key": "counter", "value": "1"},
                    ],
                },
                {
                    "id": "close",
                    "reads": ["p_audit"],
                    "writes": ["p_orders"],
                    "script": [
                        {"op": "GET", "partition": "p_audit", "table": "trail", "key": "entry1", "reg": "e"},
                        {"op": "PUT", "partition": "p_orders", "table": "meta", "key": "closed", "value": [{"lit": "closed:"}, {"reg": "e"}]},
                        {"op": "PUT", "partition": "p_orders", "table": "orders", "key": "o2", "value": "archived"},
                        {"op": "PUT", "partition": "p_orders", "table": "meta", "key": "note", "value": "done"},
                    ],
                },
            ],
        },
        "initial_data": [
            {"partition": "p_orders", "table": "orders", "key": "o1", "value": "100"},
            {"partition": "p_orders", "table": "orders", "key": "o2", "value": "250"},
            {"partition": "p_orders", "table": "orders", "key": "o3", "value": "75"},
            {"partition": "p_orders", "table": "orders", "key": "o4", "value": "410"},
            {"partition": "p_orders", "table": "orders", "key": "o5", "value": "88"},
            {"partition": "p_orders", "table": "meta", "key": "note", "value": "fresh"},
            {"partition": "p_orders", "table": "meta", "key": "canary", "value": "SENTINEL-ORD-7f3a9c", "sentinel": True},
            {"partition": "p_inventory", "table": "stock", "key": "widget", "value": "500"},
            {"partition": "p_inventory", "table": "stock", "key": "gadget", "value": "120"},
            {"partition": "p_inventory", "table": "stock", "key": "bolt", "value": "999"},
            {"partition": "p_inventory", "table": "stock", "key": "nut", "value": "42"},
            {"partition": "p_inventory", "table": "stock", "key": "reserved", "value": "0"},
            {"partition": "p_inventory", "table": "meta", "key": "canary", "value": "SENTINEL-INV-2b8d41", "sentinel": True},
            {"partition": "p_billing", "table": "invoices", "key": "inv1", "value": "open"},
            {"partition": "p_billing", "table": "invoices", "key": "inv2", "value": "open2"},
            {"partition": "p_billing", "table": "invoices", "key": "inv3", "value": "open3"},
            {"partition": "p_billing", "table": "ledger", "key": "total", "value": "0"},
            {"partition": "p_billing", "table": "meta", "key": "canary", "value": "SENTINEL-BIL-9e51f0", "sentinel": True},
            {"partition": "p_audit", "table": "trail", "key": "start", "value": "init"},
            {"partition": "p_audit", "table": "trail", "key": "counter", "value": "0"},
            {"partition": "p_audit", "table": "trail", "key": "archived", "value": "none"},
            {"partition": "p_audit", "table": "meta", "key": "canary", "value": "SENTINEL-AUD-c473e2", "sentinel": True},
        ],
        "probes": [
            {"kind": "read_raw", "partition": "p_orders"},
            {"kind": "external_read", "partition": "p_orders", "table": "meta", "key": "canary"},
            {"kind": "write_garbage", "partition": "p_orders", "table": "orders", "key": "o1", "data": "xxx-garbage"},
            {"kind": "read_raw", "partition": "p_inventory"},
            {"kind": "external_read", "partition": "p_inventory", "table": "meta", "key": "canary"},
        ],
        "schedule": [
            {"activity": 0, "step": 0, "event": "probe", "probe": 0},
            {"activity": 0, "step": 0, "event": "probe", "probe": 1},
            {"activity": 1, "step": 1, "event": "intrusion"},
            {"activity": 1, "step": 1, "event": "probe", "probe": 0},
            {"activity": 1, "step": 1, "event": "probe", "probe": 1},
            {"activity": 1, "step": 1, "event": "probe", "probe": 2},
            {"activity": 1, "step": 1, "event": "probe", "probe": 3},
            {"activity": 2, "step": 0, "event": "probe", "probe": 4},
            {"activity": 3, "step": 1, "event": "recovery"},
        ],
    }
