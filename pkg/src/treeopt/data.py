"""Observation datasets and their CSV representation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] == 0 or X.size == 0:
            raise ValueError("dataset must contain at least one row")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} targets")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset values must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def append(self, x, f) -> Dataset:
        return Dataset(np.vstack([self.X, np.asarray(x, float)[None, :]]), np.append(self.y, f))


def format_float(v: float) -> str:
    """Shortest string that round-trips the binary64 value."""
    return repr(float(v))


def read_csv(path) -> Dataset:
    """Read ``header + rows``: feature columns first, target in the last column."""
    text = Path(path).read_text()
    return parse_csv(text, source=str(path))


def parse_csv(text: str, source: str = "<csv>") -> Dataset:
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataFormatError(f"{source}: missing header row")
    header, body = rows[0], rows[1:]
    if len(header) < 2:
        raise DataFormatError(f"{source}: need at least one feature and one target column")
    if not body:
        raise DataFormatError(f"{source}: no data rows")
    values = []
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataFormatError(f"{source}: row {lineno} has {len(row)} fields, expected {len(header)}")
        try:
            parsed = [float(c) for c in row]
        except ValueError as exc:
            raise DataFormatError(f"{source}: row {lineno}: {exc}") from None
        if not all(np.isfinite(parsed)):
            raise DataFormatError(f"{source}: row {lineno} contains a non-finite value")
        values.append(parsed)
    arr = np.array(values)
    return Dataset(arr[:, :-1], arr[:, -1])


def csv_header(dim: int) -> list[str]:
    return [f"x_{i}" for i in range(dim)] + ["y"]


def write_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(dataset.dim))
        for x, f in zip(dataset.X, dataset.y):
            w.writerow([format_float(v) for v in x] + [format_float(f)])
