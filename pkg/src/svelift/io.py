"""CSV emission with lossless 17-significant-digit formatting."""

from __future__ import annotations

import hashlib
import math
from pathlib import Path

import numpy as np

from .see_sim import PathEnsemble

FMT = "%.17g"


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return FMT % v


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def write_table(path, header, columns) -> Path:
    """Write equal-length numeric columns."""
    arr = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, arr, fmt=FMT, delimiter=",")
    return path


def write_ensemble(path, ens: PathEnsemble, dump_state: bool = False) -> Path:
    """Long format ``path_id,t,X_1..X_n`` (plus ``Y_j_k`` node values with ``dump_state``)."""
    P, S1, n = ens.X.shape
    cols = [np.repeat(ens.path_ids, S1), np.tile(ens.t, P)]
    header = ["path_id", "t"] + [f"X_{k + 1}" for k in range(n)]
    cols += [ens.X[:, :, k].ravel() for k in range(n)]
    if dump_state:
        if ens.Y is None:
            raise ValueError("state dump needs an ensemble simulated with keep_state")
        N = ens.Y.shape[2]
        for j in range(N):
            for k in range(n):
                header.append(f"Y_{j + 1}_{k + 1}")
                cols.append(ens.Y[:, :, j, k].ravel())
    return write_table(path, header, cols)


def read_ensemble(path) -> PathEnsemble:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header[:2] != ["path_id", "t"]:
        raise ValueError(f"{path}: not an ensemble CSV")
    n = sum(1 for h in header if h.startswith("X_"))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    ids = data[:, 0].astype(int)
    uniq = np.unique(ids)
    S1 = data.shape[0] // uniq.size
    if S1 * uniq.size != data.shape[0]:
        raise ValueError(f"{path}: paths have unequal lengths")
    order = np.lexsort((data[:, 1], ids))
    data = data[order]
    t = data[:S1, 1]
    X = data[:, 2:2 + n].reshape(uniq.size, S1, n)
    return PathEnsemble(t, X, uniq, label=path.stem)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
