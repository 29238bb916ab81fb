from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from diffusion.flows import EnergyTerms
from utils import format_float

COLUMNS = ("iter", "energy", "dirichlet", "casimir", "max_norm", "equiv_residual", "ms")


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    energy: float
    dirichlet: float
    casimir: float
    max_norm: float
    equiv_residual: Optional[float] = None
    ms: float = 0.0

    @classmethod
    def from_terms(cls, iteration: int, terms: EnergyTerms, max_norm: float, equiv_residual=None, ms: float = 0.0) -> "TraceRecord":
        return cls(iteration, terms.total, terms.dirichlet, terms.casimir, max_norm, equiv_residual, ms)

    def row(self) -> list[str]:
        residual = "" if self.equiv_residual is None else format_float(self.equiv_residual)
        return [
            str(self.iteration),
            format_float(self.energy),
            format_float(self.dirichlet),
            format_float(self.casimir),
            format_float(self.max_norm),
            residual,
            f"{self.ms:.3f}",
        ]


class TraceWriter:
    """CSV trace, one row per iteration, header first."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._file, lineterminator="\n")
        self._writer.writerow(COLUMNS)
        self.records: list[TraceRecord] = []

    def write(self, record: TraceRecord) -> None:
        self._writer.writerow(record.row())
        self.records.append(record)

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_trace(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
