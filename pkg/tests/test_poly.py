"""Tests for exact polynomial arithmetic."""

from fractions import Fraction

import pytest

from src.errors import DimensionMismatchError, PreconditionError
from src.poly import (
    ExactPoly,
    constant,
    embed,
    evaluate,
    from_json,
    gradient,
    graded_parts,
    homogeneous_part,
    inner,
    is_harmonic,
    laplacian,
    monomials,
    norm_sq,
    partial,
    radius_squared,
    shift,
    sphere_average_monomial,
    to_json,
    variable,
)


@pytest.fixture
def xy():
    """Coordinate functions in the plane."""
    return variable(2, 0), variable(2, 1)


class TestArithmetic:
    """Test ring operations and canonical form."""

    def test_zero_coefficients_dropped(self, xy):
        """Cancelling terms leave the zero polynomial."""
        x, y = xy
        p = x * y - y * x
        assert p.is_zero()
        assert p.degree == -1

    def test_product_and_degree(self, xy):
        """(x + y)^2 expands with binomial coefficients."""
        x, y = xy
        p = (x + y) * (x + y)
        assert p.coefficient((1, 1)) == 2
        assert p.coefficient((2, 0)) == 1
        assert p.degree == 2
        assert p.is_homogeneous(2)

    def test_rational_scalars(self, xy):
        """Division keeps exact rationals."""
        x, _ = xy
        p = x / 3
        assert p.coefficient((1, 0)) == Fraction(1, 3)

    def test_floats_refused(self, xy):
        """Floats never enter exact arithmetic."""
        x, _ = xy
        with pytest.raises(PreconditionError):
            x * 0.5

    def test_dimension_mismatch(self):
        """Polynomials in different dimensions do not mix."""
        with pytest.raises(DimensionMismatchError):
            variable(2, 0) + variable(3, 0)

    def test_leading_coefficient(self, xy):
        """Leading term is the x1-heaviest of top degree."""
        x, y = xy
        p = 3 * x * x - 5 * y * y + x
        assert p.leading_coefficient() == 3

    def test_monomial_order(self):
        """Monomials of a degree start with x1^d."""
        assert monomials(2, 2) == ((2, 0), (1, 1), (0, 2))
        assert len(monomials(3, 2)) == 6

    def test_graded_parts(self, xy):
        """Homogeneous parts are keyed by degree."""
        x, y = xy
        parts = graded_parts(1 + x + x * y)
        assert sorted(parts) == [0, 1, 2]
        assert parts[2] == x * y
        assert homogeneous_part(1 + x + x * y, 1) == x
        assert homogeneous_part(x, 3).is_zero()


class TestCalculus:
    """Test exact derivatives."""

    def test_partial_along_axis(self, xy):
        """d/dx of x^2 y is 2xy."""
        x, y = xy
        assert partial(x * x * y, 0) == 2 * x * y

    def test_partial_along_direction(self, xy):
        """Directional derivative is the weighted sum of partials."""
        x, y = xy
        p = x * x + y * y
        assert partial(p, [Fraction(1, 2), 1]) == x + 2 * y

    def test_gradient(self, xy):
        """Gradient of xy is (y, x)."""
        x, y = xy
        assert gradient(x * y) == [y, x]

    def test_laplacian_of_radius(self):
        """Laplacian of |x|^2 in R^n is 2n."""
        assert laplacian(radius_squared(3)) == constant(3, 6)

    def test_harmonic(self, xy):
        """x^2 - y^2 is harmonic; x^2 is not."""
        x, y = xy
        assert is_harmonic(x * x - y * y)
        assert not is_harmonic(x * x)


class TestSphereIntegrals:
    """Test closed-form sphere averages."""

    def test_odd_monomial_vanishes(self):
        """Odd exponents average to zero."""
        assert sphere_average_monomial((1, 2, 0)) == 0

    def test_quadratic_average(self):
        """x1^2 averages to 1/n."""
        assert sphere_average_monomial((2, 0, 0)) == Fraction(1, 3)
        assert sphere_average_monomial((2, 0)) == Fraction(1, 2)

    def test_quartic_average(self):
        """x1^4 averages to 3/(n(n+2))."""
        assert sphere_average_monomial((4, 0)) == Fraction(3, 8)
        assert sphere_average_monomial((2, 2)) == Fraction(1, 8)

    def test_norm_of_real_part(self, xy):
        """Re(z^2) = x^2 - y^2 has sphere-mean square 1/2."""
        x, y = xy
        assert norm_sq(x * x - y * y) == Fraction(1, 2)

    def test_orthogonality(self, xy):
        """Distinct harmonic degrees are orthogonal."""
        x, y = xy
        assert inner(x, x * x - y * y) == 0
        assert inner(x * y, x * x - y * y) == 0


class TestEvaluation:
    """Test evaluation, shifting and JSON."""

    def test_evaluate(self, xy):
        """Evaluation is exact at rational points."""
        x, y = xy
        assert evaluate(x * x + y, [Fraction(1, 2), 3]) == Fraction(13, 4)

    def test_shift(self, xy):
        """shift(p, a)(y) equals p(a + y)."""
        x, y = xy
        p = x * x * y - y * y * y
        a = [Fraction(1, 3), -2]
        q = shift(p, a)
        point = [Fraction(2, 5), Fraction(-1, 7)]
        moved = [a[0] + point[0], a[1] + point[1]]
        assert evaluate(q, point) == evaluate(p, moved)

    def test_embed(self):
        """Planar polynomial lifted into R^3 keeps its coefficients."""
        x = variable(2, 0)
        lifted = embed(x * x, 3, [0, 2])
        assert lifted.coefficient((2, 0, 0)) == 1
        assert lifted.n == 3

    def test_json(self, xy):
        """JSON keeps exact rationals as strings."""
        x, y = xy
        p = x * Fraction(2, 3) - y
        data = to_json(p)
        assert {"alpha": [1, 0], "num": "2", "den": "3"} in data["terms"]
        assert from_json(data) == p

    def test_bad_exponent(self):
        """Negative exponents are rejected."""
        with pytest.raises(PreconditionError):
            ExactPoly(2, {(-1, 0): 1})


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
