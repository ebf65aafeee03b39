"""Error measures against an analytic optimum and the metrics table."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields

import numpy as np

from .hjb import mean_abs_hamiltonian  # noqa: F401  (re-exported metric)

CSV_HEADER = ["iter", "phase", "L_c", "L_a", "mean_abs_H", "max_H", "e_pi", "e_pi_abs",
              "e_V", "e_V_abs", "C", "wall_s"]


def _normalised_error(approx, exact) -> tuple[float, float]:
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    if exact.size == 0:
        raise ValueError("empty test set")
    span = float(np.max(exact) - np.min(exact))
    if span == 0.0:
        raise ValueError("optimum is constant over the test set; error is undefined")
    diff = (approx - exact) / span
    return float(np.mean(diff)), float(np.mean(np.abs(diff)))


def policy_error(policy, oracle_policy, test_set) -> tuple[float, float]:
    """Signed and absolute mean policy error, normalised by the optimum's range."""
    X = np.atleast_2d(test_set)
    return _normalised_error(policy(X), oracle_policy(X))


def value_error(value, oracle_value, test_set) -> tuple[float, float]:
    """Signed and absolute mean value error, normalised by the optimum's range."""
    X = np.atleast_2d(test_set)
    return _normalised_error(value(X), oracle_value(X))


@dataclass
class MetricsRow:
    iter: int
    phase: str
    L_c: float | None = None
    L_a: float | None = None
    mean_abs_H: float | None = None
    max_H: float | None = None
    e_pi: float | None = None
    e_pi_abs: float | None = None
    e_V: float | None = None
    e_V_abs: float | None = None
    C: float | None = None
    wall_s: float | None = None

    def as_csv_fields(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append("" if v is None else (repr(float(v)) if isinstance(v, float) else str(v)))
        return out


def metrics_csv(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow(row.as_csv_fields())
    return buf.getvalue()


def read_metrics_csv(text: str) -> list[MetricsRow]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        kw = {}
        for f in fields(MetricsRow):
            raw = rec[f.name]
            if f.name == "iter":
                kw[f.name] = int(raw)
            elif f.name == "phase":
                kw[f.name] = raw
            else:
                kw[f.name] = None if raw == "" else float(raw)
        rows.append(MetricsRow(**kw))
    return rows
