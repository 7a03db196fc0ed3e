"""
Utility helpers for the coupling app: recipe loading, CSV emission and the
surface CSV format.

Surface CSV: the header row is ``time`` followed by the level grid, each row
is one time slice (first cell the time, then the values).
"""

import json
import os
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from coupling.constants import CSV_FLOAT_FORMAT
from coupling.exceptions import InvalidSurfaceError, ModelSpecError


def load_config(path) -> dict:
    """Read a JSON recipe. Missing or malformed files name the path."""
    path = Path(path)
    if not path.is_file():
        raise ModelSpecError(f"Config file not found: {path}")
    try:
        with path.open(encoding="utf-8") as handle:
            config = json.load(handle)
    except json.JSONDecodeError as exc:
        raise ModelSpecError(f"Config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ModelSpecError(f"Config file {path} must hold a JSON object.")
    return config


def format_level(value: float) -> str:
    return CSV_FLOAT_FORMAT % value


def frame_to_csv_text(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")


def write_csv_atomic(frame: pd.DataFrame, path) -> Path:
    """Write ``frame`` to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(frame_to_csv_text(frame))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


# ---------------------------------------------------------------------------
# Surface CSV
# ---------------------------------------------------------------------------

def grid_frame(time_grid, level_grid, values) -> pd.DataFrame:
    frame = pd.DataFrame(np.asarray(values, dtype=float), columns=[format_level(x) for x in level_grid])
    frame.insert(0, "time", np.asarray(time_grid, dtype=float))
    return frame


def surface_frame(surface) -> pd.DataFrame:
    return grid_frame(surface.time_grid, surface.level_grid, surface.values)


def read_grid_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(time_grid, level_grid, values) from a surface-format CSV."""
    path = Path(path)
    if not path.is_file():
        raise InvalidSurfaceError(f"Surface file not found: {path}")
    frame = pd.read_csv(path)
    if frame.columns[0] != "time" or frame.shape[1] < 2:
        raise InvalidSurfaceError(f"Surface file {path} must start with a 'time' column and hold levels.")
    try:
        levels = np.array([float(column) for column in frame.columns[1:]])
    except ValueError as exc:
        raise InvalidSurfaceError(f"Surface file {path} has a non-numeric level header: {exc}") from exc
    return (
        frame["time"].to_numpy(dtype=float),
        levels,
        frame.iloc[:, 1:].to_numpy(dtype=float),
    )
