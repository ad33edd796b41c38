"""Result rows and their CSV serialisation.

Floats are written with ``repr`` so a file read back reproduces every value
bit-for-bit; together with fixed row ordering this makes output files
byte-identical across reruns.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence


@dataclass(frozen=True)
class RunRecord:
    """One checkpoint of one (scheme, seed) run: an index (step or episode) plus named metrics."""

    seed: int
    step: int
    scheme: str
    metrics: Mapping[str, float]

    def to_row(self, index_name: str = "step", with_scheme: bool = True) -> dict[str, object]:
        row: dict[str, object] = {"seed": self.seed, index_name: self.step}
        if with_scheme:
            row["scheme"] = self.scheme
        row.update(self.metrics)
        return row

    @classmethod
    def from_row(
        cls, row: Mapping[str, str], index_name: str = "step", scheme: str | None = None
    ) -> "RunRecord":
        fixed = {"seed", index_name, "scheme"}
        metrics = {k: float(v) for k, v in row.items() if k not in fixed}
        return cls(
            seed=int(row["seed"]),
            step=int(row[index_name]),
            scheme=row.get("scheme", scheme or ""),
            metrics=metrics,
        )


def format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_csv(header: Sequence[str], rows: Iterable[Mapping[str, object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        missing = [h for h in header if h not in row]
        if missing:
            raise KeyError(f"row is missing columns {missing}")
        writer.writerow([format_value(row[h]) for h in header])
    return buf.getvalue()


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Mapping[str, object]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_csv(header, rows), encoding="utf-8", newline="")
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        return list(reader.fieldnames or []), rows
