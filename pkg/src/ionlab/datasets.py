"""FringeDataset: per-point shot counts plus a JSON metadata sidecar."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sequencer import CONTROL, ROLE_NAMES, TEST

CSV_COLUMNS = ("role", "scan_value", "shots", "ups", "wall_clock_start")
ROLE_CODES = {v: k for k, v in ROLE_NAMES.items()}


class DatasetFormatError(ValueError):
    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


def atomic_write(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sidecar_path(csv_path):
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.name + ".json")


@dataclass
class FringeDataset:
    role: np.ndarray
    scan_value: np.ndarray
    shots: np.ndarray
    ups: np.ndarray
    wall_clock_start: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.role = np.asarray(self.role, dtype=np.int8)
        self.scan_value = np.asarray(self.scan_value, dtype=float)
        self.shots = np.asarray(self.shots, dtype=np.int64)
        self.ups = np.asarray(self.ups, dtype=np.int64)
        self.wall_clock_start = np.asarray(self.wall_clock_start, dtype=float)
        if np.any(self.ups < 0) or np.any(self.ups > self.shots):
            raise ValueError("need 0 <= ups <= shots")

    def __len__(self):
        return self.role.size

    def select(self, role):
        m = self.role == role
        return self.scan_value[m], self.shots[m], self.ups[m]

    @property
    def has_control(self):
        return bool(np.any(self.role == CONTROL))

    @classmethod
    def from_shots(cls, plan, result, metadata=None):
        """Aggregate shot outcomes per (point, role), ordered by first shot."""
        key = plan.point.astype(np.int64) * 2 + plan.role
        _, first, inv = np.unique(key, return_index=True, return_inverse=True)
        order = np.argsort(first)
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        row, first = rank[inv], first[order]
        shots = np.bincount(row, weights=result.valid, minlength=first.size).astype(np.int64)
        ups = np.bincount(row, weights=result.valid & result.observed_up,
                          minlength=first.size).astype(np.int64)
        md = dict(metadata or {})
        md.setdefault("wall_clock_duration", plan.total_duration)
        md.setdefault("scan_variable", plan.variable)
        return cls(plan.role[first], plan.scan_value[first], shots, ups, plan.wall_clock_start[first], md)

    def to_csv_bytes(self) -> bytes:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i in range(len(self)):
            w.writerow([ROLE_NAMES[int(self.role[i])], repr(float(self.scan_value[i])),
                        int(self.shots[i]), int(self.ups[i]), repr(float(self.wall_clock_start[i]))])
        return buf.getvalue().encode()

    def metadata_bytes(self) -> bytes:
        return (json.dumps(self.metadata, sort_keys=True, indent=2) + "\n").encode()

    def write(self, path):
        atomic_write(path, self.to_csv_bytes())
        atomic_write(sidecar_path(path), self.metadata_bytes())

    @classmethod
    def read(cls, path, require_metadata=False):
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        meta_file = sidecar_path(path)
        if meta_file.exists():
            metadata = json.loads(meta_file.read_text(encoding="utf-8"))
        elif require_metadata:
            raise FileNotFoundError(meta_file)
        else:
            metadata = {}
        return cls.parse_csv(text, metadata)

    @classmethod
    def parse_csv(cls, text, metadata=None):
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(c.strip() for c in rows[0]) != CSV_COLUMNS:
            raise DatasetFormatError(1, f"header must be {','.join(CSV_COLUMNS)}")
        cols = {k: [] for k in CSV_COLUMNS}
        for i, r in enumerate(rows[1:], start=2):
            if not r:
                continue
            if len(r) != len(CSV_COLUMNS):
                raise DatasetFormatError(i, f"expected {len(CSV_COLUMNS)} fields, got {len(r)}")
            role = r[0].strip()
            if role not in ROLE_CODES:
                raise DatasetFormatError(i, f"unknown role {role!r}")
            try:
                x, shots, ups, t0 = float(r[1]), int(r[2]), int(r[3]), float(r[4])
            except ValueError as exc:
                raise DatasetFormatError(i, str(exc)) from None
            if shots < 0 or not 0 <= ups <= shots:
                raise DatasetFormatError(i, "need 0 <= ups <= shots")
            cols["role"].append(ROLE_CODES[role])
            cols["scan_value"].append(x)
            cols["shots"].append(shots)
            cols["ups"].append(ups)
            cols["wall_clock_start"].append(t0)
        return cls(*(cols[k] for k in CSV_COLUMNS), metadata=dict(metadata or {}))


__all__ = ["FringeDataset", "DatasetFormatError", "CONTROL", "TEST", "atomic_write", "sidecar_path"]
