"""Tests for the degree-descending covering."""

from fractions import Fraction

import numpy as np
import pytest

from src.config import CoveringConfig
from src.corpus import holomorphic_derivative_example, preset_expansion
from src.covering import (
    CoverReport,
    ScaleBall,
    alignment_failures,
    cover_good_scale,
    excluded_targets,
    fit_log_growth,
    fitted_plane,
    frequency_drops,
    is_good_scale,
    level_limit,
    partition_good_bad,
    r_prime,
    recursive_cover,
    tangent_subspace,
    target_points,
    vitali,
)
from src.errors import PreconditionError
from src.fields import ExpansionField
from src.geometry import critical_radii

R = 1 / 16
EPS = CoveringConfig().eps


@pytest.fixture
def saddle():
    """u = Re(z^2); S_r is the disc of radius r/2."""
    return ExpansionField(preset_expansion("re-z2"))


@pytest.fixture
def four_points():
    """Re F with F' vanishing at four points inside B(0, 1/2)."""
    roots = [(Fraction(1, 4), 0), (Fraction(-1, 4), 0), (0, Fraction(1, 4)), (Fraction(1, 5), Fraction(1, 5))]
    return ExpansionField(holomorphic_derivative_example(roots))


@pytest.fixture
def saddle3():
    """x1^2 - x2^2 in R^3; its critical set is the x3-axis."""
    return ExpansionField(preset_expansion("re-z2", n=3))


def unsettled(report, targets):
    """Targets outside every terminal and excluded ball."""
    settled = np.zeros(len(targets), dtype=bool)
    for ball in report.terminal + report.excluded:
        settled |= ball.contains(targets)
    return int((~settled).sum())


class TestPrimitives:
    """Test good-scale tests, radii and subfamilies."""

    def test_good_scale(self, saddle):
        """Re(z^2) has frequency at most 2 everywhere."""
        assert is_good_scale(saddle, [0.0, 0.0], 0.5, 2, 0.05)
        assert not is_good_scale(saddle, [0.0, 0.0], 0.5, 1, 0.05)

    def test_r_prime(self, saddle):
        """Crossing is zero at the saddle and capped far from it."""
        crossing, rx = r_prime(saddle, np.array([[0.0, 0.0], [0.1, 0.0]]), 2, 0.05, R, top=0.5)
        assert crossing[0] == 0.0
        assert rx[0] == R
        assert crossing[1] == 0.5
        assert rx[1] == 0.5

    def test_partition(self):
        """A big ball next to a much smaller one is bad."""
        good, bad = partition_good_bad(np.array([[0.0, 0.0], [0.1, 0.0]]), np.array([1.0, 0.01]))
        assert list(good) == [False, True]
        assert list(bad) == [True, False]

    def test_partition_empty(self):
        """No points, no labels."""
        good, bad = partition_good_bad(np.zeros((0, 2)), np.zeros(0))
        assert len(good) == 0 and len(bad) == 0

    def test_vitali(self):
        """Largest ball first; ties broken by center order."""
        centers = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
        assert vitali(centers, np.array([1.0, 0.5, 0.5])) == [0, 2]

    def test_vitali_covers_with_dilation(self):
        """Kept balls are disjoint and their 5x dilations hold every center."""
        rng = np.random.default_rng(3)
        centers = rng.uniform(-1, 1, size=(100, 2))
        radii = rng.uniform(0.01, 0.2, size=100)
        kept = vitali(centers, radii)
        for a in kept:
            for b in kept:
                if a < b:
                    assert np.linalg.norm(centers[a] - centers[b]) >= radii[a] + radii[b]
        for x in centers:
            assert any(np.linalg.norm(x - centers[k]) <= 5 * radii[k] for k in kept)

    def test_ball_validation(self):
        """Balls need a positive radius and degree at least one."""
        with pytest.raises(ValueError):
            ScaleBall(center=(0.0, 0.0), radius=0.0, degree=1)
        with pytest.raises(ValueError):
            ScaleBall(center=(0.0, 0.0), radius=1.0, degree=0)

    def test_targets(self, saddle):
        """Targets lie in the disc of radius r/2."""
        targets = target_points(saddle, [0.0, 0.0], 0.5, R)
        assert len(targets) == 13
        assert np.all(np.linalg.norm(targets, axis=1) <= R / 2 + 1e-12)

    def test_frequency_drops(self, saddle):
        """Around the saddle N stays 2; far from it a small ball drops below 1 + eps."""
        targets = target_points(saddle, [0.0, 0.0], 0.5, R)
        assert not frequency_drops(saddle, np.zeros(2), 0.25, 2, EPS, targets)
        assert frequency_drops(saddle, np.array([0.4, 0.0]), 0.01, 2, EPS, targets)

    def test_level_limit(self):
        """The guard grows with d* and with log2(radius / r)."""
        assert level_limit(2, 0.5, 1 / 16) == 2 * (3 + 6 + 2) + 1
        assert level_limit(3, 0.5, 1 / 16) > level_limit(2, 0.5, 1 / 16)


class TestGoodScaleStep:
    """Test one covering step."""

    def test_children_cover_targets(self, four_points):
        """The planar single ball is used only when it covers every target of the ball."""
        targets = target_points(four_points, [0.0, 0.0], 0.5, 1 / 32)
        root = ScaleBall(center=(0.0, 0.0), radius=0.5, degree=5)
        step = cover_good_scale(four_points, root, 5, 1 / 32, EPS, targets)
        assert len(step.children) > 1
        covered = np.zeros(len(targets), dtype=bool)
        for child in step.children:
            covered |= child.contains(targets)
        assert covered.all()

    def test_degree_drops_only_after_frequency_drop(self, four_points):
        """A child labelled d - 1 has N <= d - 1 + eps on its targets; a child keeping d is at most half as wide."""
        r = 1 / 32
        targets = target_points(four_points, [0.0, 0.0], 0.5, r)
        root = ScaleBall(center=(0.0, 0.0), radius=0.5, degree=5)
        step = cover_good_scale(four_points, root, 5, r, EPS, targets, CoveringConfig(improved_2d=False))
        assert step.children
        for child in step.children:
            if child.status == "terminal-r":
                continue
            inside = np.vstack([np.asarray(child.center)[None, :], targets[child.contains(targets)]])
            dropped = bool(np.all(four_points.frequency(inside, child.radius) <= 4 + EPS))
            if child.degree == 4:
                assert dropped
            else:
                assert child.degree == 5
                assert not dropped
                assert child.radius <= 0.25 + 1e-12

    def test_linear_step_is_empty(self):
        """Degree one balls have nothing left to refine."""
        field = ExpansionField(preset_expansion("x1"))
        ball = ScaleBall(center=(0.0, 0.0), radius=0.5, degree=1)
        assert cover_good_scale(field, ball, 1, R, EPS, np.zeros((1, 2))).children == []


class TestAlignment:
    """Test subfamily alignment and the exclusion off the invariant plane."""

    def test_tangent_subspace_is_axis(self, saddle3):
        """The tangent quadratic of x1^2 - x2^2 is invariant along x3 at every point."""
        report = tangent_subspace(saddle3, [0.03, 0.0, 0.1], 2)
        assert report.dimension == 1
        assert abs(report.subspace[0, 2]) == pytest.approx(1.0, abs=1e-9)

    def test_tangent_subspace_needs_degree_two(self):
        """A linear function has no tangent polynomial of degree >= 2."""
        assert tangent_subspace(ExpansionField(preset_expansion("x1", n=3)), [0.0, 0.0, 0.0], 3) is None

    def test_fitted_plane(self):
        """Centers on a line fit that line."""
        centers = np.array([[0.0, 0.0, t] for t in (-0.2, 0.0, 0.1, 0.3)])
        plane = fitted_plane(centers, 1)
        assert abs(plane[0, 2]) == pytest.approx(1.0)
        assert fitted_plane(centers[:, :2], 0).shape == (0, 2)

    def test_aligned_family(self, saddle3):
        """Centers along the axis pass; a center far off the axis fails."""
        on_axis = np.array([[0.0, 0.0, t] for t in (-0.3, -0.1, 0.1, 0.3)])
        failures, subspace = alignment_failures(saddle3, on_axis, 2, R)
        assert failures == 0
        assert subspace.shape == (1, 3)
        off_axis = np.vstack([on_axis, [[0.3, 0.0, 0.0]]])
        failures, _ = alignment_failures(saddle3, off_axis, 2, R)
        assert failures > 0

    def test_single_center(self, saddle3):
        """A family of one has nothing to align."""
        assert alignment_failures(saddle3, np.zeros((1, 3)), 2, R) == (0, None)

    def test_exclusion(self, saddle3):
        """Points off the axis beyond 5 r_i with a large critical radius are cleared."""
        candidates = np.array([[0.1, 0.0, 0.0], [0.0, 0.0, 0.1], [0.02, 0.0, 0.0]])
        cleared = excluded_targets(
            saddle3,
            anchors=np.zeros((1, 3)),
            anchor_radii=np.array([0.01]),
            subspace=np.array([[0.0, 0.0, 1.0]]),
            candidates=candidates,
            small=0.5,
            d=2,
            r=R,
            t=0.5,
            config=CoveringConfig(),
        )
        assert list(cleared) == [True, False, False]
        radii = critical_radii(saddle3, candidates[:1], 0.5)
        assert radii[0] > CoveringConfig().tau ** 2 * R

    def test_axis_cover_is_aligned(self, saddle3):
        """With every ball small, the n=3 saddle cover keeps its centers on the axis tube."""
        config = CoveringConfig(small_ball_exponent=-1.0)
        report = recursive_cover(saddle3, 1.0, R, radius=0.25, config=config)
        assert report.escapes == 0
        assert report.alignment_failures == 0
        centers = np.array([b.center for b in report.terminal])
        assert np.all(np.linalg.norm(centers[:, :2], axis=1) <= R / 2)


class TestRecursiveCover:
    """Test full covering runs."""

    def test_saddle_improved(self, saddle):
        """In the plane one terminal ball at the saddle covers S_r."""
        report = recursive_cover(saddle, 1.0, R)
        assert report.d_star == 2
        assert report.terminal_count == 1
        assert report.escapes == 0
        assert report.required_shrink is None
        assert report.terminal[0].center == (0.0, 0.0)
        assert report.table() == [(0, 1, 0, 2, 1.0), (1, 1, 1, 0, 1.0)]

    def test_saddle_general_path(self, saddle):
        """Without the planar shortcut every target still ends in a terminal ball."""
        config = CoveringConfig(improved_2d=False)
        report = recursive_cover(saddle, 1.0, R, config=config)
        targets = target_points(saddle, [0.0, 0.0], 0.5, R)
        assert unsettled(report, targets) == 0
        assert report.escapes == 0
        assert len(report.levels) <= level_limit(report.d_star, 0.5, R)

    @pytest.mark.parametrize("improved", [True, False])
    def test_four_critical_points(self, four_points, improved):
        """Several critical points in one ball: every target lands in a terminal ball."""
        r = 1 / 32
        config = CoveringConfig(improved_2d=improved)
        report = recursive_cover(four_points, 2.5, r, config=config)
        targets = target_points(four_points, [0.0, 0.0], 0.5, r)
        assert report.target_count == len(targets) > 0
        assert report.escapes == 0
        assert unsettled(report, targets) == 0
        for point in [(0.25, 0.0), (-0.25, 0.0), (0.0, 0.25), (0.2, 0.2)]:
            assert any(b.contains(np.array([point]))[0] for b in report.terminal)

    @pytest.mark.parametrize(
        "source,n,lam,r",
        [
            ("pure:3", 2, 1.5, 1 / 32),
            ("two-term:2", 2, 1.5, 1 / 32),
            ("re-z3-3z", 2, 1.5, 1 / 32),
            ("re-z2", 3, 1.0, 1 / 8),
            ("pure:3", 3, 1.5, 1 / 8),
        ],
    )
    def test_soundness_over_corpus(self, source, n, lam, r):
        """No target escapes and the per-level mass ratio stays under its recorded bound."""
        field = ExpansionField(preset_expansion(source, n=n))
        config = CoveringConfig()
        report = recursive_cover(field, lam, r, config=config)
        targets = target_points(field, np.zeros(n), 0.5, r)
        assert report.escapes == 0
        assert unsettled(report, targets) == 0
        assert len(report.levels) <= level_limit(report.d_star, 0.5, r)
        if report.max_mass_ratio is not None:
            assert report.max_mass_ratio <= config.mass_ratio_bound

    def test_mass_ratio(self, saddle):
        """One terminal child of a degree-2 root: ratio 1 / 2^2."""
        report = recursive_cover(saddle, 1.0, R)
        assert report.mass_ratios == [pytest.approx(0.25)]
        assert report.max_mass_ratio == pytest.approx(0.25)

    def test_excluded_balls_carry_no_mass(self):
        """Excluded balls are reported apart from terminal ones."""
        root = ScaleBall(center=(0.0, 0.0), radius=0.5, degree=2)
        cleared = ScaleBall(center=(0.1, 0.0), radius=1e-6, degree=2, status="excluded")
        report = CoverReport(
            n=2, center=(0.0, 0.0), radius=0.5, r=R, lam=1.0, d_star=2,
            levels=[[root], [cleared]], masses=[1.0, 0.0],
        )
        assert report.terminal_count == 0
        assert len(report.excluded) == 1
        assert report.to_json()["excluded_count"] == 1

    def test_linear_has_no_targets(self):
        """x1 has N = 1 everywhere, so S_r is empty."""
        report = recursive_cover(ExpansionField(preset_expansion("x1")), 1.0, R)
        assert report.target_count == 0
        assert report.terminal_count == 0
        assert len(report.levels) == 1

    def test_lambda_too_small(self):
        """The input ball must be good scale for ceil(C Lambda)."""
        with pytest.raises(PreconditionError):
            recursive_cover(ExpansionField(preset_expansion("pure:3")), 0.5, R)

    def test_scale_order(self, saddle):
        """r must be below the input radius."""
        with pytest.raises(PreconditionError):
            recursive_cover(saddle, 1.0, 0.5)

    def test_json(self, saddle):
        """Reports serialize their levels and counts."""
        data = recursive_cover(saddle, 1.0, R).to_json()
        assert data["terminal_count"] == 1
        assert data["escapes"] == 0
        assert len(data["levels"]) == 2


class TestGrowthFit:
    """Test the log-growth fit."""

    def test_exponential_counts(self):
        """Counts e^(2 Lambda) give slope 2."""
        lams = [1.0, 2.0, 3.0]
        fit = fit_log_growth(lams, [np.exp(2 * lam) for lam in lams])
        assert fit.slope == pytest.approx(2.0)

    def test_needs_two_counts(self):
        """Zero counts are dropped."""
        with pytest.raises(PreconditionError):
            fit_log_growth([1.0, 2.0], [0, 5])


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
