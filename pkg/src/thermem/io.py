"""File formats: trajectory CSV, JSON manifests, EM trace CSV, theta files.

Trajectory CSV schema (header mandatory): one row per time step with columns
    t, T_1..T_n (full state) or y_1..y_ny (measurements), P_1..P_nP
Traces are one row per EM iteration: iter, loglik, theta_rel_change,
q_residual, then the named theta components and constraint parameters.
"""

from __future__ import annotations

import json
import os

import numpy as np

from thermem.errors import ThermemError
from thermem.estimation import EmTrace
from thermem.model import Trajectory


class DataFormatError(ThermemError):
    """A data file failed to parse; message names the offending location."""


def _ensure_dir(path):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)


def write_trajectory_csv(path, traj: Trajectory, full_state: bool = False):
    """Write measurements (default) or the full state alongside the inputs."""
    _ensure_dir(path)
    if full_state:
        if traj.T is None:
            raise ValueError("trajectory has no full state to write")
        block = traj.T
        labels = [f"T_{i + 1}" for i in range(block.shape[1])]
    else:
        block = traj.y
        labels = [f"y_{i + 1}" for i in range(block.shape[1])]
    P = traj.P
    header = ",".join(["t"] + labels + [f"P_{i + 1}" for i in range(P.shape[1])])
    t = np.arange(block.shape[0])[:, None]
    data = np.hstack([t, block, P])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.12g")


def write_states_csv(path, X, P=None):
    """Dump a state-mean sequence (e.g. smoothed means) in the T-block schema."""
    X = np.asarray(X, dtype=np.float64)
    P = np.zeros((X.shape[0], 0)) if P is None else np.asarray(P, dtype=np.float64)[: X.shape[0]]
    traj = Trajectory(P=P, y=X, T=X)
    write_trajectory_csv(path, traj, full_state=True)


def read_trajectory_csv(path) -> Trajectory:
    """Read a trajectory CSV; column names decide y- vs T-block."""
    with open(path, "r") as fh:
        header = fh.readline().strip()
    names = header.split(",")
    if not names or names[0] != "t":
        raise DataFormatError(f"{path}: first column must be 't', got header {header!r}")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    if data.shape[1] != len(names):
        raise DataFormatError(
            f"{path}: header names {len(names)} columns, rows carry {data.shape[1]}"
        )
    y_cols = [i for i, nm in enumerate(names) if nm.startswith("y_")]
    T_cols = [i for i, nm in enumerate(names) if nm.startswith("T_")]
    P_cols = [i for i, nm in enumerate(names) if nm.startswith("P_")]
    if not y_cols and not T_cols:
        raise DataFormatError(f"{path}: expected y_* or T_* columns, got {names}")
    P = data[:, P_cols]
    if T_cols:
        T = data[:, T_cols]
        return Trajectory(P=P, y=T.copy(), T=T)
    return Trajectory(P=P, y=data[:, y_cols], T=None)


def write_manifest(path, manifest: dict):
    _ensure_dir(path)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, default=_jsonify)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path, "r") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: {exc}") from exc


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj)!r}")


def write_trace_csv(path, trace: EmTrace):
    _ensure_dir(path)
    theta = np.asarray(trace.theta)
    cparams = np.asarray(trace.constraint_params)
    header = ",".join(
        ["iter", "loglik", "theta_rel_change", "q_residual"]
        + list(trace.theta_names)
        + list(trace.constraint_names)
    )
    rows = np.column_stack(
        [
            np.arange(1, len(trace) + 1),
            np.asarray(trace.loglik),
            np.asarray(trace.theta_rel_change),
            np.asarray(trace.q_residual),
            theta,
            cparams,
        ]
    )
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.12g")


def read_trace_csv(path):
    """Returns (column_names, data array) of a trace file."""
    with open(path, "r") as fh:
        names = fh.readline().strip().split(",")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    if data.size and data.shape[1] != len(names):
        raise DataFormatError(f"{path}: column count mismatch with header")
    return names, data


def write_theta_json(path, theta, theta_names=()):
    _ensure_dir(path)
    payload = {
        "k": theta.k.tolist(),
        "z": theta.z.tolist(),
        "dtau": theta.dtau,
    }
    if theta_names:
        payload["names"] = list(theta_names)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def read_theta_json(path):
    from thermem.model import ThetaParams

    with open(path, "r") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: {exc}") from exc
    return ThetaParams(k=payload["k"], z=payload["z"], dtau=payload.get("dtau", 1.0))


def write_constraint_json(path, constraint):
    _ensure_dir(path)
    payload = {"kind": constraint.kind, "n": constraint.n}
    if constraint.kind == "scalar_identity":
        payload["q"] = constraint.q
    elif constraint.kind == "diagonal":
        payload["q_vec"] = constraint.q_vec.tolist()
    else:
        payload["alpha"] = constraint.alpha
        payload["beta"] = constraint.beta
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
