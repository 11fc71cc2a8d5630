"""Tests for the critlab command line."""

import json

import pytest
from click.testing import CliRunner

from src.cli import cli


@pytest.fixture
def run(tmp_path, monkeypatch):
    """Invoke the CLI inside a temporary directory."""
    monkeypatch.chdir(tmp_path)
    runner = CliRunner()

    def invoke(*args):
        return runner.invoke(cli, ["--out", str(tmp_path / "results"), *args], obj={})

    return invoke


class TestCommands:
    """Test command exit codes and output."""

    def test_basis(self, run, tmp_path):
        """Basis command succeeds and writes its JSON."""
        result = run("basis", "3", "2")
        assert result.exit_code == 0
        assert "✓" in result.output
        assert "Elements: 5" in result.output
        document = json.loads((tmp_path / "results" / "basis_n3_d2.json").read_text())
        assert document["data"]["dimension"] == 5

    def test_count2d(self, run):
        """Planar critical points are counted."""
        result = run("count2d", "re-z3-3z")
        assert result.exit_code == 0
        assert "Critical points (with multiplicity): 2" in result.output

    def test_cover_table(self, run):
        """Cover prints its per-level table."""
        result = run("cover", "re-z2", "--lam", "1", "--r", "1/16")
        assert result.exit_code == 0
        assert "terminal balls: 1" in result.output

    def test_unknown_source(self, run):
        """Errors exit with status 1."""
        result = run("count2d", "nope")
        assert result.exit_code == 1
        assert "✗" in result.output

    def test_seed_is_recorded(self, tmp_path, monkeypatch):
        """Global options reach the written metadata."""
        monkeypatch.chdir(tmp_path)
        result = CliRunner().invoke(
            cli, ["--seed", "3", "--out", str(tmp_path / "seeded"), "basis", "2", "1"], obj={}
        )
        assert result.exit_code == 0
        document = json.loads((tmp_path / "seeded" / "basis_n2_d1.json").read_text())
        assert document["meta"]["seed"] == 3

    def test_version(self, run):
        """Version command prints the package version."""
        result = run("version")
        assert result.exit_code == 0
        assert "v0.1.0" in result.output


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
