#!/usr/bin/env python3
"""
CSV emission for trajectories and Monte Carlo series (plot data only).

  trajectory:  t, y0_1..y0_p, then per follower i: y{i}_1..y{i}_p, err{i}_sq, err{i}_1..err{i}_p
  mse series:  t, mse_1, se_1, ..., mse_N, se_N

Values are written with %.17g so a rerun with the same seed is byte-identical.
"""

from typing import List, Tuple

import numpy as np


FMT = "%.17g"


def trajectory_table(record) -> Tuple[List[str], np.ndarray]:
    p = record.C0.shape[0]
    cols = ["t"] + [f"y0_{k}" for k in range(1, p + 1)]
    blocks = [record.times[:, None], record.y0()]
    for i in range(1, record.n_followers + 1):
        cols += [f"y{i}_{k}" for k in range(1, p + 1)]
        cols.append(f"err{i}_sq")
        cols += [f"err{i}_{k}" for k in range(1, p + 1)]
        blocks += [record.y(i), record.err_sq(i)[:, None], record.tracking_error(i)]
    return cols, np.hstack(blocks)

def write_trajectory_csv(record, path: str) -> None:
    cols, table = trajectory_table(record)
    np.savetxt(path, table, fmt=FMT, delimiter=",", header=",".join(cols), comments="")

def write_mse_csv(series, path: str) -> None:
    cols = ["t"]
    blocks = [series.times[:, None]]
    for i in range(series.n_followers):
        cols += [f"mse_{i + 1}", f"se_{i + 1}"]
        blocks += [series.mean[:, i:i + 1], series.se[:, i:i + 1]]
    np.savetxt(path, np.hstack(blocks), fmt=FMT, delimiter=",", header=",".join(cols), comments="")

def read_mse_csv(path: str) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(times, mean (T,N), se (T,N)) from a file written by write_mse_csv."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1::2], data[:, 2::2]
