"""Tests for critical radii, effective sets, volumes and planar critical points."""

from fractions import Fraction

import numpy as np
import pytest

from src.config import GeometryConfig
from src.corpus import holomorphic_derivative_example, preset_expansion
from src.errors import PreconditionError
from src.fields import ExpansionField
from src.frequency import Expansion
from src.geometry import (
    SetMask,
    build_mask,
    critical_points_2d,
    critical_radius,
    d_critical_radius,
    effective_critical_set,
    effective_nodal_set,
    effective_singular_set,
    fit_scaling_exponent,
    frequency_inclusion_check,
    frequency_set,
    minkowski_volume,
    nodal_nondegeneracy_check,
)
from src.poly import constant, variable

R = 1 / 16


@pytest.fixture
def linear():
    """u = x1 in the plane."""
    return ExpansionField(preset_expansion("x1"))


@pytest.fixture
def saddle():
    """u = Re(z^2)."""
    return ExpansionField(preset_expansion("re-z2"))


def separated_roots(seed, count_range=(2, 6), radius=0.35, separation=0.1):
    """Seeded rational points in B(0, radius), pairwise at least ``separation`` apart."""
    rng = np.random.default_rng(seed)
    count = int(rng.integers(*count_range))
    roots = []
    while len(roots) < count:
        x, y = rng.uniform(-radius, radius, size=2)
        if x * x + y * y > radius * radius:
            continue
        if all((x - float(a)) ** 2 + (y - float(b)) ** 2 >= separation ** 2 for a, b in roots):
            roots.append((Fraction(x).limit_denominator(200), Fraction(y).limit_denominator(200)))
    return roots


def grid_minima(field, half_width, h):
    """Interior grid points where |grad u|^2 < h^2 is no larger than its eight neighbours, merged within 5h."""
    axis = np.arange(-half_width, half_width + h / 2, h)
    xs, ys = np.meshgrid(axis, axis, indexing="ij")
    points = np.stack([xs.reshape(-1), ys.reshape(-1)], axis=1)
    g = np.sum(field.gradient(points) ** 2, axis=1).reshape(xs.shape)
    inner = g[1:-1, 1:-1]
    is_min = inner < h * h
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx or dy:
                is_min &= inner <= g[1 + dx:g.shape[0] - 1 + dx, 1 + dy:g.shape[1] - 1 + dy]
    found = []
    for i, j in np.argwhere(is_min):
        z = np.array([axis[i + 1], axis[j + 1]])
        if all(np.linalg.norm(z - w) > 5 * h for w in found):
            found.append(z)
    return found


class TestCriticalRadius:
    """Test critical radii."""

    def test_origin_of_saddle(self, saddle):
        """N(0, s) = 2 at every scale, so the radius is zero."""
        assert critical_radius(saddle, [0.0, 0.0], 0.5) == 0.0

    def test_far_point(self, saddle):
        """Far from the saddle N < 3/2 up to r0."""
        assert critical_radius(saddle, [0.5, 0.0], 0.5) == 0.5

    def test_bisection(self, saddle):
        """At (0.1, 0) the crossing is at s = 0.2."""
        assert critical_radius(saddle, [0.1, 0.0], 0.5) == pytest.approx(0.2, rel=1e-3)

    def test_d_critical_radius(self, saddle):
        """Degree-2 bound holds at every scale for Re(z^2)."""
        assert d_critical_radius(saddle, [0.0, 0.0], 2, 0.1, 0.5) == 0.5


class TestEffectiveSets:
    """Test effective critical, singular and nodal masks."""

    def test_linear_has_no_critical_cells(self, linear):
        """x1 has empty effective critical set."""
        assert effective_critical_set(linear, R).count == 0

    def test_saddle_critical_cells(self, saddle):
        """Re(z^2) marks the origin and nothing beyond 2.25 r."""
        mask = effective_critical_set(saddle, R)
        centers = mask.centers()
        assert mask.count >= 1
        assert np.any(np.all(np.abs(centers) < 1e-12, axis=1))
        assert np.all(np.linalg.norm(centers, axis=1) <= 2.25 * R)

    def test_singular(self, linear, saddle):
        """Regular linear functions have no singular cells; the saddle does."""
        assert effective_singular_set(linear, R).count == 0
        assert effective_singular_set(saddle, R).count >= 1

    def test_nodal_strip(self, linear):
        """Nodal cells of x1 lie within 2r of the line x1 = 0."""
        mask = effective_nodal_set(linear, R)
        assert mask.count > 0
        assert np.all(np.abs(mask.centers()[:, 0]) < 2 * R)

    def test_frequency_set(self, linear, saddle):
        """N >= 3/2 never holds for x1 and holds at the saddle point."""
        assert frequency_set(linear, R).count == 0
        assert frequency_set(saddle, R).count >= 1

    def test_unknown_kind(self, linear):
        """Unknown mask kinds are refused."""
        with pytest.raises(PreconditionError):
            build_mask(linear, R, "bogus")

    def test_mask_json(self, saddle):
        """Mask bitsets keep their membership."""
        mask = build_mask(saddle, R, "critical")
        restored = SetMask.from_json(mask.to_json())
        assert np.array_equal(restored.members, mask.members)
        assert restored.spacing == mask.spacing

    def test_inclusion(self, saddle):
        """Critical cells have critical radius bounded by a multiple of r."""
        report = frequency_inclusion_check(saddle, R, constant=8.0)
        assert report.members >= 1
        assert report.holds

    @pytest.mark.parametrize("source", ["re-z2", "pure:3"])
    def test_inclusion_chain(self, source):
        """Critical points lie in C_r and C_r lies in C_2r on the coarser common grid."""
        field = ExpansionField(preset_expansion(source))
        fine = effective_critical_set(field, R)
        coarse = effective_critical_set(field, 2 * R)
        for mask in (fine, coarse):
            assert np.any(np.all(np.abs(mask.centers()) < 1e-12, axis=1))
        shared = 0
        for x in fine.centers():
            index = (x - coarse.origin) / coarse.spacing
            if np.allclose(index, np.round(index), atol=1e-9):
                assert coarse.members[tuple(np.round(index).astype(int))]
                shared += 1
        assert shared > 0

    def test_slabs_match_single_pass(self, saddle):
        """Tiny slabs give the same mask as one pass over the lattice."""
        whole = effective_critical_set(saddle, R)
        sliced = effective_critical_set(saddle, R, config=GeometryConfig(slab_points=50))
        assert np.array_equal(whole.members, sliced.members)

    def test_three_dimensional_mask(self):
        """In n=3 the saddle's critical cells hug the x3-axis."""
        field = ExpansionField(preset_expansion("re-z2", n=3))
        mask = effective_critical_set(field, 1 / 8, config=GeometryConfig(slab_points=20000))
        centers = mask.centers()
        assert mask.count > 0
        assert np.all(np.linalg.norm(centers[:, :2], axis=1) <= 2.25 / 8)
        assert np.ptp(centers[:, 2]) > 0.5


class TestVolumes:
    """Test Minkowski volumes and exponent fits."""

    def test_single_cell(self):
        """One member cell with r equal to the spacing covers five cells."""
        members = np.zeros((5, 5), bool)
        members[2, 2] = True
        mask = SetMask(kind="critical", radius=0.1, spacing=0.1, origin=np.array([-0.2, -0.2]), members=members)
        assert minkowski_volume(mask, 0.1) == pytest.approx(0.05)

    def test_empty_members(self):
        """No members, zero volume."""
        mask = SetMask(kind="critical", radius=0.1, spacing=0.1, origin=np.zeros(2), members=np.zeros((3, 3), bool))
        assert minkowski_volume(mask, 0.1) == 0.0

    def test_fit(self):
        """Exact power law recovers its exponent."""
        rs = [1 / 8, 1 / 16, 1 / 32]
        fit = fit_scaling_exponent(rs, [r ** 1.5 for r in rs])
        assert fit.slope == pytest.approx(1.5)
        assert fit.r2 == pytest.approx(1.0)

    def test_fit_needs_two_points(self):
        """Zero volumes are dropped before fitting."""
        with pytest.raises(PreconditionError):
            fit_scaling_exponent([0.1, 0.2], [0.0, 1.0])

    def test_resolution_stability(self, saddle):
        """Halving the grid spacing barely moves the saddle's Minkowski volume."""
        coarse = minkowski_volume(effective_critical_set(saddle, R), R)
        fine_config = GeometryConfig(cells_per_radius=8, lattice_per_radius=16)
        fine = minkowski_volume(effective_critical_set(saddle, R, config=fine_config), R)
        assert abs(fine - coarse) / coarse < 0.1

    def test_saddle_volume_scales_as_r_squared(self, saddle):
        """Vol(C_r)/r^2 for Re(z^2) stays within a factor 2 over 2^-4 ... 2^-8."""
        config = GeometryConfig(half_width=0.25)
        radii = [2.0 ** -k for k in range(4, 9)]
        normalized = [minkowski_volume(effective_critical_set(saddle, r, config=config), r) / r ** 2 for r in radii]
        assert min(normalized) > 0
        assert max(normalized) / min(normalized) < 2
        assert fit_scaling_exponent(radii, [v * r ** 2 for v, r in zip(normalized, radii)]).slope == pytest.approx(
            2.0, abs=0.1
        )


class TestPlanarCriticalPoints:
    """Test critical points via the holomorphic derivative."""

    def test_cubic_minus_linear(self):
        """Re(z^3 - 3z) has simple critical points at -1 and 1."""
        points = critical_points_2d(preset_expansion("re-z3-3z"))
        assert [(round(p.x, 9), round(p.y, 9), p.multiplicity) for p in points] == [(-1.0, 0.0, 1), (1.0, 0.0, 1)]

    def test_pure_degree(self):
        """Re(z^4) has one critical point of multiplicity 3 at the origin."""
        points = critical_points_2d(preset_expansion("pure:4"))
        assert len(points) == 1
        assert points[0].multiplicity == 3
        assert (points[0].x, points[0].y) == (0.0, 0.0)

    def test_prescribed_roots_and_radius(self):
        """Prescribed zeros of F' are recovered; the radius filter drops far ones."""
        e = holomorphic_derivative_example([(Fraction(1, 2), Fraction(1, 2)), (Fraction(-1, 2), 0)])
        points = critical_points_2d(e)
        assert len(points) == 2
        assert points[0].x == pytest.approx(-0.5)
        assert points[1].y == pytest.approx(0.5)
        assert len(critical_points_2d(e, radius=0.6)) == 1

    def test_requires_plane(self):
        """Only planar expansions have a holomorphic representation."""
        with pytest.raises(PreconditionError):
            critical_points_2d(preset_expansion("re-z2", n=3))

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_grid_scan(self, seed):
        """Critical points agree with the minima of |grad u|^2 on a fine grid."""
        roots = separated_roots(seed)
        e = holomorphic_derivative_example(roots)
        points = critical_points_2d(e)
        assert len(points) == len(roots)
        located = np.array([[p.x, p.y] for p in points])
        exact = np.array([[float(a), float(b)] for a, b in roots])
        for z in exact:
            assert np.min(np.linalg.norm(located - z, axis=1)) < 1e-6

        h = 1 / 400
        minima = grid_minima(ExpansionField(e), 0.45, h)
        assert len(minima) == len(roots)
        for z in minima:
            assert np.min(np.linalg.norm(located - z, axis=1)) < 2 * h


class TestNodalNondegeneracy:
    """Test the two nodal branches."""

    def test_small_frequency_branch(self):
        """A dominant constant keeps u(0)^2 above h(1)/2."""
        e = Expansion.from_components(2, {0: constant(2, 1), 1: variable(2, 0) / 10})
        report = nodal_nondegeneracy_check(e, 0.1)
        assert report.small_frequency
        assert report.holds

    def test_pinched_branch(self):
        """A linear function changes sign exactly across its plane."""
        report = nodal_nondegeneracy_check(preset_expansion("x1"), 0.1)
        assert report.pinched
        assert report.sign_violations == 0
        assert report.holds

    def test_neither_branch(self):
        """Pure quadratics satisfy neither hypothesis."""
        with pytest.raises(PreconditionError):
            nodal_nondegeneracy_check(preset_expansion("re-z2"), 0.1)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
