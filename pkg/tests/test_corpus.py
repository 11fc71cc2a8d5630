"""Tests for test-function generators and presets."""

import json
from fractions import Fraction

import pytest

from src.corpus import (
    corpus,
    holomorphic_derivative_example,
    preset_expansion,
    random_expansion,
    resolve_source,
)
from src.errors import ConfigurationError
from src.frequency import freq
from src.poly import is_harmonic, variable


class TestPresets:
    """Test named presets."""

    def test_linear(self):
        """x1 is a pure degree-1 expansion."""
        e = preset_expansion("x1", n=3)
        assert e.degrees == [1]
        assert e.components[1] == variable(3, 0)

    def test_cubic_minus_linear(self):
        """Re(z^3 - 3z) has degrees 1 and 3."""
        e = preset_expansion("re-z3-3z")
        assert e.degrees == [1, 3]
        assert e.components[1] == -3 * variable(2, 0)

    def test_embedded_square(self):
        """Re(z^2) embeds in the (x1, x2)-plane of R^3."""
        e = preset_expansion("re-z2", n=3)
        assert e.n == 3
        assert freq(e, Fraction(1)) == 2

    def test_degree_argument(self):
        """pure:D carries its degree."""
        assert preset_expansion("pure:4").degrees == [4]

    def test_unknown_preset(self):
        """Unknown names and missing degrees are configuration errors."""
        with pytest.raises(ConfigurationError):
            preset_expansion("nope")
        with pytest.raises(ConfigurationError):
            preset_expansion("pure:x")

    def test_json_source(self, tmp_path):
        """SOURCE may be a JSON expansion file."""
        e = preset_expansion("two-term:2")
        path = tmp_path / "u.json"
        path.write_text(json.dumps(e.to_json()))
        assert resolve_source(str(path)).components == e.components


class TestRandom:
    """Test seeded random expansions."""

    def test_seeded(self):
        """Same seed, same expansion."""
        a = random_expansion(2, 4, seed=3)
        b = random_expansion(2, 4, seed=3)
        assert a.components == b.components

    def test_components_harmonic(self):
        """Every component is harmonic and homogeneous."""
        e = random_expansion(3, 3, seed=1, degree_min=1)
        for k, q in e.components.items():
            assert is_harmonic(q)
            assert q.is_homogeneous(k)

    def test_corpus(self):
        """Corpus entries are nonconstant."""
        items = corpus(2, 3, 3, seed=0)
        assert len(items) == 3
        assert all(not e.is_constant() for e in items)


class TestHolomorphic:
    """Test expansions built from prescribed critical points."""

    def test_derivative_example(self):
        """F' = (z - 1)(z + 1) gives Re(z^3/3 - z)."""
        e = holomorphic_derivative_example([(1, 0), (-1, 0)])
        assert e.degrees == [1, 3]
        assert e.components[1] == -variable(2, 0)
        assert e.components[3].coefficient((3, 0)) == Fraction(1, 3)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
