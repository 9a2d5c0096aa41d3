"""JSON Lines run logs.

A log is one ``header`` record, then ``monitor`` and ``checkpoint`` events in
the order they happened, then one ``summary`` record. Every record carries
the schema version; readers refuse any other version.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    pass


@dataclass
class RunLog:
    config: dict
    seed: int
    events: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    loss_history: np.ndarray | None = None
    params: dict | None = None

    @property
    def checkpoints(self) -> list[dict]:
        return [e for e in self.events if e["type"] == "checkpoint"]

    @property
    def monitors(self) -> list[dict]:
        return [e for e in self.events if e["type"] == "monitor"]

    def returns(self) -> np.ndarray:
        return np.array([e["return"] for e in self.checkpoints])

    def effective_ranks(self) -> tuple[np.ndarray, np.ndarray]:
        mons = self.monitors
        return np.array([m["step"] for m in mons]), np.array([m["effective_rank"] for m in mons])

    @property
    def latent_dim(self) -> int:
        return int(self.config["net"]["latent_dim"])

    def env_key(self) -> str:
        env = self.config["env"]
        return ";".join(f"{k}={env[k]}" for k in sorted(env))


def _dump(record: dict) -> str:
    return json.dumps({"schema": SCHEMA_VERSION, **record}, sort_keys=True, allow_nan=False)


def records(log: RunLog):
    yield {"type": "header", "seed": log.seed, "config": log.config}
    yield from log.events
    yield {"type": "summary", **log.summary}


def write_runlog(path, log: RunLog) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records(log):
            fh.write(_dump(record) + "\n")


def read_runlog(path) -> RunLog:
    path = Path(path)
    header, events, summary = None, [], None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
            version = record.pop("schema", None)
            if version != SCHEMA_VERSION:
                raise SchemaError(
                    f"{path}:{lineno}: schema version {version!r}, expected {SCHEMA_VERSION}"
                )
            kind = record.get("type")
            if kind == "header":
                header = record
            elif kind == "summary":
                summary = record
            elif kind in ("monitor", "checkpoint"):
                events.append(record)
            else:
                raise SchemaError(f"{path}:{lineno}: unknown record type {kind!r}")
    if header is None or summary is None:
        raise SchemaError(f"{path}: missing header or summary record")
    summary.pop("type")
    return RunLog(header["config"], header["seed"], events, summary)
