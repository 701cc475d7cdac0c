"""Line-delimited metrics records, one per epoch.

Each line is a self-contained JSON object carrying the schema version;
readers reject unknown major versions.  Floats are written with
round-trip precision (Python repr), so a parse -> serialize cycle is
lossless.  Wall-clock timing is deliberately not serialized: metrics
files must be byte-identical across reruns of the same (config, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .bound import BoundReport
from .losses import LossBreakdown

SCHEMA_VERSION = "1.0"
SCHEMA_MAJOR = 1


class MetricsSchemaError(ValueError):
    """A metrics file uses an unsupported schema version."""


@dataclass
class MetricsRecord:
    epoch: int
    target_accuracy: float | None
    class_weights: list[float]
    losses: LossBreakdown | None
    bound: BoundReport | None
    wall_clock_s: float | None = None  # in-memory only, never serialized

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "epoch": int(self.epoch),
            "target_accuracy": None if self.target_accuracy is None
            else float(self.target_accuracy),
            "class_weights": [float(v) for v in self.class_weights],
            "losses": None if self.losses is None else self.losses.to_dict(),
            "bound": None if self.bound is None else self.bound.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "MetricsRecord":
        major = int(str(d.get("schema", "0")).split(".")[0])
        if major != SCHEMA_MAJOR:
            raise MetricsSchemaError(f"unsupported metrics schema {d.get('schema')!r}")
        return MetricsRecord(
            epoch=int(d["epoch"]),
            target_accuracy=d["target_accuracy"],
            class_weights=list(d["class_weights"]),
            losses=None if d["losses"] is None else LossBreakdown.from_dict(d["losses"]),
            bound=None if d["bound"] is None else BoundReport.from_dict(d["bound"]),
        )


def to_json_line(record: MetricsRecord) -> str:
    return json.dumps(record.to_dict(), sort_keys=True, separators=(",", ":"))


def write_metrics(path, records: list[MetricsRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(to_json_line(rec))
            fh.write("\n")


def read_metrics(path) -> list[MetricsRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(MetricsRecord.from_dict(json.loads(line)))
            except MetricsSchemaError:
                raise
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: bad metrics record: {exc}") from None
    return records
