"""Verification reports and CSV/JSON emission.

CSV files use '.' decimals, UTF-8, a header row, and 17 significant digits
(full double precision, so values round-trip exactly).  JSON documents carry
a schema_version.  All writes are atomic: a temp file in the target
directory is renamed over the destination.
"""

from __future__ import annotations

import json
import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

__all__ = ["VerificationReport", "ReportRow", "write_csv", "write_json", "atomic_write", "format_float"]

SCHEMA_VERSION = 1


def format_float(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def atomic_write(path: str, text: str) -> None:
    """Write text to path via a same-directory temp file and rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_emit_")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, columns: dict) -> None:
    """Emit a table of equal-length columns (dict preserves column order)."""
    names = list(columns)
    arrays = [np.atleast_1d(np.asarray(columns[n])) for n in names]
    lengths = {a.shape[0] for a in arrays}
    if len(lengths) > 1:
        raise ValueError(f"ragged columns: lengths {sorted(lengths)}")
    lines = [",".join(names)]
    n_rows = lengths.pop() if lengths else 0
    for i in range(n_rows):
        lines.append(",".join(format_float(a[i]) if a.dtype.kind in "fcib" else str(a[i]) for a in arrays))
    atomic_write(path, "\n".join(lines) + "\n")


def write_json(path: str, payload: dict) -> None:
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(payload)
    atomic_write(path, json.dumps(doc, indent=1, sort_keys=False) + "\n")


@dataclass
class ReportRow:
    identity: str
    lhs: float
    rhs: float
    residual: float
    tolerance: float
    passed: bool
    oracle: str

    @classmethod
    def from_check(cls, check, oracle: str | None = None) -> "ReportRow":
        return cls(
            identity=check.identity,
            lhs=float(check.lhs),
            rhs=float(check.rhs),
            residual=float(check.residual),
            tolerance=float(check.tolerance),
            passed=bool(check.passed),
            oracle=oracle if oracle is not None else check.oracle,
        )

    def as_dict(self) -> dict:
        return {
            "identity": self.identity,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "residual": self.residual,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "oracle": self.oracle,
        }


@dataclass
class VerificationReport:
    """A list of checked identities with the run's environment fingerprint."""

    rows: list = field(default_factory=list)
    fingerprint: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def add(self, identity, lhs, rhs, tolerance, oracle) -> ReportRow:
        row = ReportRow(identity, float(lhs), float(rhs), abs(float(lhs) - float(rhs)), float(tolerance), abs(float(lhs) - float(rhs)) < float(tolerance), oracle)
        self.rows.append(row)
        return row

    def add_check(self, check, oracle: str | None = None) -> ReportRow:
        row = ReportRow.from_check(check, oracle)
        self.rows.append(row)
        return row

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "fingerprint": self.fingerprint,
            "wall_time": self.wall_time,
            "checks": [r.as_dict() for r in self.rows],
        }

    def print_lines(self, out=None) -> None:
        import sys

        out = out or sys.stdout
        for r in self.rows:
            mark = "PASS" if r.passed else "FAIL"
            print(f"[{mark}] {r.identity}: residual {r.residual:.3e} (tol {r.tolerance:g}; oracle: {r.oracle})", file=out)


class Stopwatch:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
