from __future__ import annotations

"""
Trajectory CSV files.

One file per run, comma-separated, header row, LF line endings, every
float written with 17 significant digits so reloading reproduces the
in-memory values.

Column order::

    ES:     t, theta_hat_1..n, theta_1..n, g_j_1..n, eta_j, g_h_1..n, eta_h, J_hat, h_hat, J, h
    exact:  t, theta_1..n, J, h[, V1][, V]
"""

import csv
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from ..core.integrator import Trajectory

logger = logging.getLogger(__name__)

__all__ = [
    "FLOAT_FORMAT",
    "trajectory_columns",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "write_trajectories",
]

FLOAT_FORMAT = "%.17g"
ES_SCALARS = ("J_hat", "h_hat", "J", "h")
EXACT_SCALARS = ("J", "h", "V1", "V")

PathLike = Union[str, Path]


def _labels(prefix: str, n: int) -> List[str]:
    return [f"{prefix}_{i}" for i in range(1, n + 1)]


def trajectory_columns(traj: Trajectory) -> Tuple[List[str], np.ndarray]:
    """Header and ``(S, columns)`` value block in file order."""
    n = traj.dim
    t = traj.times[:, None]
    if traj.system == "es":
        for name in ("theta",) + ES_SCALARS:
            traj.column(name)
        x = traj.states
        header = (
            ["t"]
            + _labels("theta_hat", n)
            + _labels("theta", n)
            + _labels("g_j", n)
            + ["eta_j"]
            + _labels("g_h", n)
            + ["eta_h"]
            + list(ES_SCALARS)
        )
        blocks = [t, x[:, :n], traj.column("theta"), x[:, n:]]
        blocks += [traj.column(name)[:, None] for name in ES_SCALARS]
    else:
        scalars = [name for name in EXACT_SCALARS if name in traj.derived]
        for name in ("J", "h"):
            traj.column(name)
        header = ["t"] + _labels("theta", n) + scalars
        blocks = [t, traj.states] + [traj.column(name)[:, None] for name in scalars]
    return header, np.hstack(blocks)


def write_trajectory_csv(traj: Trajectory, path: PathLike) -> Path:
    header, values = trajectory_columns(traj)
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in values:
            writer.writerow([FLOAT_FORMAT % v for v in row])
    return out


def write_trajectories(
    trajectories: Sequence[Trajectory], directory: PathLike, prefix: str
) -> List[Path]:
    """Write ``<prefix>_0000.csv``, ``<prefix>_0001.csv`` ... in run order."""
    root = Path(directory)
    paths = [
        write_trajectory_csv(traj, root / f"{prefix}_{i:04d}.csv")
        for i, traj in enumerate(trajectories)
    ]
    logger.info("wrote %d trajectory files to %s", len(paths), root)
    return paths


def read_trajectory_csv(path: PathLike) -> Trajectory:
    """
    Rebuild a `Trajectory` from a file written by `write_trajectory_csv`.

    The system is recognised from the header (``theta_hat_*`` columns mean ES).
    """
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(header))
    index = {name: i for i, name in enumerate(header)}
    if header[0] != "t":
        raise ValueError(f"{path}: first column must be 't', got {header[0]!r}")

    def block(prefix: str) -> np.ndarray:
        cols = [index[name] for name in header if name.rsplit("_", 1)[0] == prefix
                and name.rsplit("_", 1)[-1].isdigit()]
        return data[:, cols]

    derived: Dict[str, np.ndarray] = {}
    if any(name.startswith("theta_hat_") for name in header):
        theta_hat = block("theta_hat")
        n = theta_hat.shape[1]
        states = np.hstack(
            [
                theta_hat,
                block("g_j"),
                data[:, [index["eta_j"]]],
                block("g_h"),
                data[:, [index["eta_h"]]],
            ]
        )
        derived["theta"] = block("theta")
        scalars: Sequence[str] = ES_SCALARS
        system = "es"
    else:
        states = block("theta")
        n = states.shape[1]
        scalars = EXACT_SCALARS
        system = "exact"
    for name in scalars:
        if name in index:
            derived[name] = data[:, index[name]]
    return Trajectory(
        times=data[:, 0], states=states, system=system, dim=n, derived=derived
    )
