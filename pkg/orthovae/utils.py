"""
Utility functions for the orthovae package.

This module provides common helpers used throughout the package, including
array validation, file input/output, formatting and timing.
"""

import csv
import json
import logging
import math
import os
import time
from functools import wraps
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from orthovae.config import METRIC_PRECISION
from orthovae.errors import ShapeError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


# ============================================================================
# Array Validation
# ============================================================================

def validate_finite(array: np.ndarray, name: str = "array") -> None:
    """
    Ensure every entry of an array is finite.

    Args:
        array: Array to check
        name: Name used in the error message

    Raises:
        ValueError: If any entry is NaN or infinite
    """
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite entries")


def as_matrix(m: Any, name: str = "matrix") -> np.ndarray:
    """
    Convert input to a finite 2-D float64 array.

    Args:
        m: Array-like with two dimensions
        name: Name used in error messages

    Returns:
        A float64 copy-free view when possible

    Raises:
        ShapeError: If the input is not 2-D or has an empty dimension
        ValueError: If the input has non-finite entries

    Example:
        >>> as_matrix([[1, 2], [3, 4]]).shape
        (2, 2)
    """
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and column")
    validate_finite(arr, name)
    return arr


def as_vector(v: Any, length: Optional[int] = None, name: str = "vector") -> np.ndarray:
    """
    Convert input to a finite 1-D float64 array of an optional length.

    Args:
        v: Array-like with one dimension
        length: Expected number of entries (unchecked if None)
        name: Name used in error messages

    Returns:
        1-D float64 array

    Raises:
        ShapeError: If the input is not 1-D or has the wrong length
    """
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise ShapeError(f"{name} must have length {length}, got {arr.shape[0]}")
    validate_finite(arr, name)
    return arr


def make_rng(seed: Union[int, np.random.Generator, None]) -> np.random.Generator:
    """
    Build a numpy Generator from a seed, or pass an existing one through.

    Args:
        seed: Integer seed, Generator, or None for fresh entropy

    Returns:
        numpy Generator
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ============================================================================
# File System Utilities
# ============================================================================

def ensure_directory_exists(path: PathLike) -> Path:
    """
    Create directory if it doesn't exist.

    Args:
        path: Path to directory to create

    Returns:
        The directory as a Path

    Example:
        >>> ensure_directory_exists("runs/synth_lin")
    """
    os.makedirs(path, exist_ok=True)
    return Path(path)


def write_json(data: Dict[str, Any], path: PathLike) -> Path:
    """
    Write a dictionary as indented, key-sorted JSON.

    Sorted keys make files byte-identical for identical content.

    Args:
        data: JSON-serializable dictionary
        path: Output file

    Returns:
        The written path
    """
    path = Path(path)
    ensure_directory_exists(path.parent)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.debug(f"Wrote {path}")
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    """Read a JSON file into a dictionary."""
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_csv_rows(
    rows: Iterable[Dict[str, Any]],
    path: PathLike,
    fieldnames: Sequence[str],
    append: bool = False,
) -> Path:
    """
    Write dictionaries as CSV rows, adding the header for new files.

    Args:
        rows: Row dictionaries keyed by fieldnames
        path: Output file
        fieldnames: Column order
        append: Append to an existing file instead of overwriting

    Returns:
        The written path
    """
    path = Path(path)
    ensure_directory_exists(path.parent)
    write_header = not (append and path.exists())
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fieldnames))
        if write_header:
            writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def read_csv_rows(path: PathLike) -> List[Dict[str, str]]:
    """Read a CSV file with header into a list of dictionaries."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ============================================================================
# Formatting Utilities
# ============================================================================

def format_time(seconds: float) -> str:
    """
    Compact duration for training logs.

    Below a minute the seconds keep two decimals; longer runs are shown as
    whole minutes and seconds, or hours and minutes.

    Raises:
        ValueError: If seconds is negative

    Example:
        >>> format_time(0.42)
        '0.42s'
        >>> format_time(125)
        '2m 05s'
    """
    if seconds < 0:
        raise ValueError(f"Duration must be non-negative, got {seconds}")
    if seconds < 60:
        return f"{seconds:.2f}s"
    minutes, secs = divmod(int(round(seconds)), 60)
    if minutes < 60:
        return f"{minutes}m {secs:02d}s"
    hours, minutes = divmod(minutes, 60)
    return f"{hours}h {minutes:02d}m"


def format_mean_std(mean: float, std: float, precision: int = METRIC_PRECISION) -> str:
    """
    Format a metric aggregate as "mean ± std".

    Example:
        >>> format_mean_std(0.987, 0.012)
        '0.99 ± 0.01'
    """
    if mean is None or (isinstance(mean, float) and math.isnan(mean)):
        return "n/a"
    return f"{mean:.{precision}f} ± {std:.{precision}f}"


# ============================================================================
# Timing
# ============================================================================

def measure_time(func):
    """
    Log the wall-clock duration of a call at INFO level.

    Example:
        >>> @measure_time
        ... def train():
        ...     ...
    """

    @wraps(func)
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        result = func(*args, **kwargs)
        elapsed = time.perf_counter() - start
        logging.getLogger(func.__module__).info(
            f"{func.__name__} finished in {format_time(elapsed)}"
        )
        return result

    return wrapper
