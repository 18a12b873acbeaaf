"""
CSV exchange format for paths and trajectories: header `t,x_1,...,x_n`, one
row per knot, floats at 17 significant digits.
"""
import logging
from pathlib import Path
from typing import Union

import numpy as np

from wflab.core.exceptions import InvalidStateError
from wflab.ldp.action import PathGrid

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def format_float(value: float) -> str:
    return FLOAT_FORMAT % value


def path_header(n: int) -> str:
    return ",".join(["t"] + [f"x_{i}" for i in range(1, n + 1)])


def write_path_csv(path: PathGrid, target: Union[str, Path]) -> Path:
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    table = np.column_stack([path.times, path.knots])
    np.savetxt(target, table, fmt=FLOAT_FORMAT, delimiter=",", header=path_header(path.n), comments="")
    logger.debug(f"wrote {path.M + 1} knots to {target}")
    return target


def read_path_csv(source: Union[str, Path]) -> PathGrid:
    source = Path(source)
    with source.open() as fh:
        header = fh.readline().strip()
    columns = header.split(",")
    if len(columns) < 3 or columns != path_header(len(columns) - 1).split(","):
        raise InvalidStateError(f"{source}: expected header 't,x_1,...,x_n', got {header!r}")
    table = np.loadtxt(source, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[1] != len(columns):
        raise InvalidStateError(f"{source}: rows have {table.shape[1]} columns, header has {len(columns)}")
    return PathGrid(table[:, 0], table[:, 1:])
