"""Tests for deterministic result writers."""

import json
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from src.config import apply_overrides, config_hash, get_lab_config
from src.reporting import to_jsonable, write_bytes, write_csv, write_json


@pytest.fixture
def config():
    """Configuration with one recorded override."""
    return apply_overrides(get_lab_config(), {"run.seed": 4})


class TestJsonable:
    """Test value conversion."""

    def test_fraction(self):
        """Fractions keep their exact text."""
        assert to_jsonable(Fraction(1, 21)) == "1/21"

    def test_numpy(self):
        """Numpy scalars and arrays become plain Python values."""
        converted = to_jsonable({"a": np.arange(3), "b": np.float64(0.5), "c": np.bool_(True)})
        assert converted == {"a": [0, 1, 2], "b": 0.5, "c": True}
        assert type(converted["a"][0]) is int

    def test_nested(self):
        """Tuples, paths and keys are converted recursively."""
        assert to_jsonable({1: (Fraction(1, 2), Path("x"))}) == {"1": ["1/2", "x"]}


class TestWriters:
    """Test JSON, CSV and binary output."""

    def test_json_meta(self, tmp_path, config):
        """JSON documents carry the config hash, seed and overrides."""
        path = write_json(tmp_path / "sub" / "out.json", {"value": Fraction(3, 10)}, config)
        document = json.loads(path.read_text())
        assert document["meta"] == {"config_hash": config_hash(config), "overrides": {"run.seed": 4}, "seed": 4}
        assert document["data"] == {"value": "3/10"}

    def test_json_is_deterministic(self, tmp_path, config):
        """Key order does not change the bytes."""
        a = write_json(tmp_path / "a.json", {"b": 1, "a": 2}, config)
        b = write_json(tmp_path / "b.json", {"a": 2, "b": 1}, config)
        assert a.read_bytes() == b.read_bytes()

    def test_csv_header(self, tmp_path, config):
        """CSV starts with the metadata comment, then the header."""
        path = write_csv(tmp_path / "out.csv", ["r", "N"], [(0.5, Fraction(6, 5))], config)
        lines = path.read_text().splitlines()
        assert lines[0].startswith(f"# config_hash={config_hash(config)} seed=4")
        assert lines[1] == "r,N"
        assert lines[2] == "0.5,6/5"

    def test_bytes(self, tmp_path):
        """Binary payloads are written unchanged."""
        path = write_bytes(tmp_path / "x.bin", b"\x00\x01")
        assert path.read_bytes() == b"\x00\x01"


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
