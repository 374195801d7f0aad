"""
Unit tests for orthovae.utils module.
"""

import math

import numpy as np
import pytest

from orthovae.errors import ShapeError
from orthovae.utils import (
    as_matrix,
    as_vector,
    format_mean_std,
    format_time,
    make_rng,
    read_csv_rows,
    read_json,
    validate_finite,
    write_csv_rows,
    write_json,
)


class TestArrayValidation:
    """Test array conversion and validation helpers."""

    def test_as_matrix_accepts_nested_lists(self):
        """Nested lists become float64 matrices."""
        m = as_matrix([[1, 2], [3, 4]])
        assert m.dtype == np.float64
        assert m.shape == (2, 2)

    def test_as_matrix_rejects_vector(self):
        """A 1-D input is not a matrix."""
        with pytest.raises(ShapeError):
            as_matrix([1.0, 2.0])

    def test_as_matrix_rejects_nan(self):
        """Non-finite entries raise ValueError."""
        with pytest.raises(ValueError):
            as_matrix([[1.0, float("nan")]])

    def test_as_vector_checks_length(self):
        """Wrong length raises ShapeError."""
        with pytest.raises(ShapeError):
            as_vector([1.0, 2.0], length=3)

    def test_validate_finite_inf(self):
        """Infinity is rejected."""
        with pytest.raises(ValueError):
            validate_finite(np.array([0.0, np.inf]))

    def test_make_rng_passes_generator_through(self):
        """An existing generator is returned unchanged."""
        gen = np.random.default_rng(0)
        assert make_rng(gen) is gen

    def test_make_rng_seed_reproducible(self):
        """Same integer seed gives the same stream."""
        assert make_rng(7).random() == make_rng(7).random()


class TestFileHelpers:
    """Test JSON and CSV helpers."""

    def test_json_sorted_and_readable(self, tmp_path):
        """JSON files are key-sorted and read back equal."""
        path = write_json({"b": 1, "a": [1.5, None]}, tmp_path / "sub" / "x.json")
        text = path.read_text()
        assert text.index('"a"') < text.index('"b"')
        assert read_json(path) == {"a": [1.5, None], "b": 1}

    def test_csv_append_keeps_single_header(self, tmp_path):
        """Appending rows does not repeat the header."""
        path = tmp_path / "rows.csv"
        write_csv_rows([{"x": 1, "y": 2}], path, ("x", "y"))
        write_csv_rows([{"x": 3, "y": None}], path, ("x", "y"), append=True)
        rows = read_csv_rows(path)
        assert rows == [{"x": "1", "y": "2"}, {"x": "3", "y": ""}]


class TestFormatting:
    """Test formatting helpers."""

    def test_format_time_units(self):
        """Seconds, minutes and hours are chosen by magnitude."""
        assert format_time(0.42) == "0.42s"
        assert format_time(45) == "45.00s"
        assert format_time(125) == "2m 05s"
        assert format_time(7200) == "2h 00m"
        assert format_time(3599.6) == "1h 00m"

    def test_format_time_rejects_negative(self):
        """Negative durations are rejected."""
        with pytest.raises(ValueError):
            format_time(-1.0)

    def test_format_mean_std(self):
        """Mean and std are rounded to the display precision."""
        assert format_mean_std(0.987, 0.012) == "0.99 ± 0.01"

    def test_format_mean_std_missing(self):
        """NaN or None means are shown as n/a."""
        assert format_mean_std(math.nan, 0.0) == "n/a"
        assert format_mean_std(None, 0.0) == "n/a"
