"""Persisted experiment records: canonical JSON plus one CSV per accuracy table.

A record file is written once; saving over an existing record is refused so
that a record, once on disk, is never silently replaced.
"""

import hashlib
import json
import os
import secrets
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import SchemaError
from .protocols.tables import EvalTable

SCHEMA = "srdefense-record"
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ExperimentRecord:
    run_id: str
    timestamp: str
    command: str
    fingerprint: str
    seed: int
    attacks: list  # AttackSpec.to_dict() entries
    defense: dict
    tables: dict  # name -> EvalTable
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self):
        return {
            "schema": SCHEMA,
            "schema_version": self.schema_version,
            "run_id": self.run_id,
            "timestamp": self.timestamp,
            "command": self.command,
            "fingerprint": self.fingerprint,
            "seed": self.seed,
            "attacks": self.attacks,
            "defense": self.defense,
            "tables": {name: t.to_dict() for name, t in self.tables.items()},
            "config": self.config,
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != SCHEMA:
            raise SchemaError("not an experiment record")
        if d.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(f"record schema version {d.get('schema_version')}, expected {SCHEMA_VERSION}")
        return cls(
            run_id=d["run_id"],
            timestamp=d["timestamp"],
            command=d["command"],
            fingerprint=d["fingerprint"],
            seed=d["seed"],
            attacks=d["attacks"],
            defense=d["defense"],
            tables={name: EvalTable.from_dict(t) for name, t in d["tables"].items()},
            config=d.get("config", {}),
            extra=d.get("extra", {}),
            schema_version=d["schema_version"],
        )


def new_record(command, fingerprint, seed, attacks, defense, tables, config=None, extra=None):
    now = datetime.now(timezone.utc)
    run_id = f"{command}-{now.strftime('%Y%m%dT%H%M%S')}-{secrets.token_hex(3)}"
    return ExperimentRecord(
        run_id, now.isoformat(timespec="seconds"), command, fingerprint, int(seed),
        list(attacks), dict(defense), dict(tables), dict(config or {}), dict(extra or {}),
    )


def serialize(record):
    """Canonical byte form: sorted keys, fixed indentation, trailing newline."""
    return (json.dumps(record.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n").encode()


def _atomic_write(path, data):
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def table_path(path, name):
    path = Path(path)
    return path.with_name(f"{path.stem}.{name}.csv")


def save_record(record, path):
    """Write ``path`` (JSON) and ``<stem>.<table>.csv`` next to it; returns the JSON path."""
    path = Path(path)
    if path.exists():
        raise FileExistsError(f"{path} already exists; records are write-once")
    path.parent.mkdir(parents=True, exist_ok=True)
    for name, table in record.tables.items():
        _atomic_write(table_path(path, name), table.to_csv().encode())
    _atomic_write(path, serialize(record))
    return path


def load_record(path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON") from exc
    return ExperimentRecord.from_dict(data)


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
