"""CSV persistence with shortest round-trip floats (``repr`` of binary64)."""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path

import numpy as np

from .errors import UsageError


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows) -> Path:
    """rows: iterable of dicts keyed by ``columns`` or of sequences in column order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(c) for c in columns]
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path):
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def trajectory_columns(K: int, M: int):
    return ["step", "t"] + [f"u_{k}" for k in range(1, K + 1)] + [f"dW_{l}" for l in range(1, M + 1)]


def write_trajectory(path, u: np.ndarray, dW: np.ndarray, dt: float) -> Path:
    """u (N_t+1, K) sine coefficients, dW (N_t, M); the final row has empty increments."""
    N_t, M = dW.shape
    rows = []
    for j in range(N_t + 1):
        inc = list(dW[j]) if j < N_t else [None] * M
        rows.append([j, j * dt] + list(u[j]) + inc)
    return write_csv(path, trajectory_columns(u.shape[1], M), rows)


def read_increments(path, K: int, M: int) -> np.ndarray:
    header, rows = read_csv(path)
    if header != trajectory_columns(K, M):
        raise UsageError(f"{path}: trajectory header does not match K={K}, M={M}")
    try:
        return np.array([[float(v) for v in row[2 + K :]] for row in rows[:-1]])
    except ValueError as exc:
        raise UsageError(f"{path}: malformed increment") from exc
