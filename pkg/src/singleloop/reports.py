"""JSON and CSV serialization of certificates, trajectories and reports."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import is_dataclass
from pathlib import Path

import numpy as np

from .solver import Trajectory

TRAJECTORY_COLUMNS = ("k", "omega_err", "v_err", "approx_grad_norm", "lower_grad_norm", "upper_evals", "lower_evals")


def json_ready(obj):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values.

    Infinities become the strings ``"inf"``/``"-inf"``; NaN becomes ``null``.
    """
    if isinstance(obj, dict):
        return {str(k): json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return json_ready(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if hasattr(obj, "to_dict"):
        return json_ready(obj.to_dict())
    if is_dataclass(obj):
        return json_ready(vars(obj))
    return obj


def parse_float(value) -> float:
    """Inverse of :func:`json_ready` for a single number."""
    if value is None:
        return math.nan
    if value == "inf":
        return math.inf
    if value == "-inf":
        return -math.inf
    return float(value)


def write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(json_ready(payload), indent=2, allow_nan=False) + "\n")
    return path


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_trajectory_csv(path, traj: Trajectory) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    nan = np.full(len(traj), math.nan)
    omega_err = traj.omega_err if traj.has_errors else nan
    v_err = traj.v_err if traj.has_errors else nan
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for i in range(len(traj)):
            writer.writerow([
                int(traj.steps[i]),
                _fmt(omega_err[i]),
                _fmt(v_err[i]),
                _fmt(traj.approx_grad_norm[i]),
                _fmt(traj.lower_grad_norm[i]),
                int(traj.upper_evals[i]),
                int(traj.lower_evals[i]),
            ])
    return path


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != TRAJECTORY_COLUMNS:
            raise ValueError(f"unexpected trajectory columns {header}")
        rows = list(reader)
    cols = list(zip(*rows)) if rows else [()] * len(TRAJECTORY_COLUMNS)
    out = {}
    for name, col in zip(TRAJECTORY_COLUMNS, cols):
        dtype = int if name in ("k", "upper_evals", "lower_evals") else float
        out[name] = np.array([dtype(x) for x in col], dtype=dtype)
    return out
