"""Good-scale balls, Vitali subcovers and the degree-descending covering of S_r.

A covering run starts from one ball labelled with degree d* = ceil(C * Lambda)
and replaces every good-scale ball of degree d by smaller balls. A child is
labelled d - 1 only after its frequency drop is verified on the targets it
holds; otherwise it keeps degree d at no more than half the parent radius.
Children at scale r are terminal. The target set is the lattice sample of
S_r = {N(x, r) >= 3/2} at spacing r/4 inside the input ball.
"""

import math
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from pydantic import BaseModel, Field
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score
from sklearn.neighbors import BallTree

from .config import CoveringConfig, GeometryConfig, HhpConfig
from .errors import CoveringError, IdentityViolation, PreconditionError
from .fields import FieldEvaluator, lattice_points
from .frequency import recenter
from .geometry import ScalingFit, critical_radii
from .hhp import AlmostInvariantReport, almost_invariant_subspace
from .sampling import ball_points

STATUSES = ("good-scale", "terminal-r", "bad-set", "excluded")
LIVE = ("good-scale", "bad-set")


class ScaleBall(BaseModel):
    """B(center, radius) with its degree label.

    ``terminal-r`` balls have reached scale r (their radius is a fixed multiple
    of r); ``good-scale`` and ``bad-set`` balls continue at their degree label;
    ``excluded`` balls mark targets cleared by the critical-radius bound.
    """

    center: Tuple[float, ...]
    radius: float = Field(..., gt=0)
    degree: int = Field(..., ge=1)
    status: str = "good-scale"

    def contains(self, points: np.ndarray) -> np.ndarray:
        offset = np.atleast_2d(points) - np.asarray(self.center)
        return np.einsum("ij,ij->i", offset, offset) <= self.radius ** 2 * (1 + 1e-12)

    def to_json(self) -> Dict[str, Any]:
        return {
            "center": [float(v) for v in self.center],
            "radius": self.radius,
            "degree": self.degree,
            "status": self.status,
        }


class StepResult(BaseModel):
    """Output of one good-scale covering step."""

    children: List[ScaleBall] = Field(default_factory=list)
    good: int = 0
    bad: int = 0
    alignment_failures: int = 0
    excluded: int = 0


class CoverReport(BaseModel):
    n: int
    center: Tuple[float, ...]
    radius: float
    r: float
    lam: float
    d_star: int
    levels: List[List[ScaleBall]]
    masses: List[float]
    target_count: int = 0
    escapes: int = 0
    alignment_failures: int = 0
    required_shrink: Optional[float] = None

    @property
    def terminal(self) -> List[ScaleBall]:
        return [b for level in self.levels for b in level if b.status == "terminal-r"]

    @property
    def terminal_count(self) -> int:
        return len(self.terminal)

    @property
    def excluded(self) -> List[ScaleBall]:
        return [b for level in self.levels for b in level if b.status == "excluded"]

    @property
    def total_mass(self) -> float:
        return float(sum(b.radius ** (self.n - 2) for b in self.terminal))

    @property
    def mass_ratios(self) -> List[float]:
        """Mass of level j + 1 over (live mass of level j) * d_j^n, d_j the largest live degree."""
        ratios = []
        for parents, mass in zip(self.levels, self.masses[1:]):
            live = [b for b in parents if b.status in LIVE]
            if not live:
                continue
            parent_mass = sum(b.radius ** (self.n - 2) for b in live)
            top = max(b.degree for b in live)
            ratios.append(float(mass / (parent_mass * top ** self.n)))
        return ratios

    @property
    def max_mass_ratio(self) -> Optional[float]:
        ratios = self.mass_ratios
        return max(ratios) if ratios else None

    def table(self) -> List[Tuple[int, int, int, int, float]]:
        """(level, balls, terminal, degree label, mass) rows."""
        rows = []
        for j, (level, mass) in enumerate(zip(self.levels, self.masses)):
            degrees = {b.degree for b in level if b.status in LIVE}
            rows.append((
                j,
                len(level),
                sum(1 for b in level if b.status == "terminal-r"),
                min(degrees) if degrees else 0,
                mass,
            ))
        return rows

    def to_json(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "center": list(self.center),
            "radius": self.radius,
            "r": self.r,
            "lambda": self.lam,
            "d_star": self.d_star,
            "levels": [[b.to_json() for b in level] for level in self.levels],
            "masses": self.masses,
            "terminal_count": self.terminal_count,
            "excluded_count": len(self.excluded),
            "target_count": self.target_count,
            "escapes": self.escapes,
            "alignment_failures": self.alignment_failures,
            "required_shrink": self.required_shrink,
            "mass_ratios": self.mass_ratios,
            "max_mass_ratio": self.max_mass_ratio,
        }


# ------------------------------------------------------------------ primitives


def is_good_scale(
    f: FieldEvaluator,
    x: Sequence[float],
    t: float,
    d: int,
    eps: float,
    config: Optional[CoveringConfig] = None,
) -> bool:
    """N(y, t) <= d + eps for every y of a quasi-uniform sample of B(x, t)."""
    config = config or CoveringConfig()
    samples = ball_points(f.n, config.good_scale_base ** f.n, center=x, radius=t)
    return bool(np.all(f.frequency(samples, t) <= d + eps))


def r_prime(
    f: FieldEvaluator,
    points: np.ndarray,
    d: int,
    eps: float,
    r: float,
    top: Optional[float] = None,
    geometry: Optional[GeometryConfig] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """(r'_x, r_x) per point: r'_x = inf{s : N(x, s) >= d - eps} and r_x = max(r'_x, r).

    r'_x is ``top`` (default the domain radius) when N stays below d - eps and
    0 when N(x, 0+) >= d - eps. r_x is capped at ``top``.
    """
    top = f.domain_radius if top is None else top
    crossing = critical_radii(f, points, top, threshold=d - eps, config=geometry)
    return crossing, np.minimum(np.maximum(crossing, r), max(top, r))


def partition_good_bad(
    points: np.ndarray,
    radii: np.ndarray,
    config: Optional[CoveringConfig] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Boolean (good, bad): x is good iff r_y >= r_x / 7 for every sampled y in B(x, 5 r_x)."""
    config = config or CoveringConfig()
    if len(points) == 0:
        empty = np.zeros(0, dtype=bool)
        return empty, empty
    tree = BallTree(points)
    neighbours = tree.query_radius(points, r=config.neighbor_factor * radii)
    good = np.array(
        [bool(np.all(radii[idx] >= radii[i] / config.radius_ratio)) for i, idx in enumerate(neighbours)]
    )
    return good, ~good


def vitali(centers: np.ndarray, radii: np.ndarray) -> List[int]:
    """Greedy disjoint subfamily: descending radius, ties by center lex order."""
    centers = np.atleast_2d(centers)
    order = sorted(range(len(radii)), key=lambda i: (-radii[i], tuple(centers[i])))
    kept: List[int] = []
    for i in order:
        if all(np.linalg.norm(centers[i] - centers[j]) >= radii[i] + radii[j] for j in kept):
            kept.append(i)
    return kept



def frequency_drops(
    f: FieldEvaluator,
    center: np.ndarray,
    radius: float,
    d: int,
    eps: float,
    targets: np.ndarray,
) -> bool:
    """N(y, radius) <= d - 1 + eps at the center and at every target in B(center, radius)."""
    center = np.asarray(center, dtype=float)
    members = targets[ScaleBall(center=tuple(center), radius=radius, degree=1).contains(targets)] \
        if len(targets) else np.zeros((0, f.n))
    points = np.vstack([center[None, :], members])
    return bool(np.all(f.frequency(points, radius) <= d - 1 + eps))


def tangent_subspace(
    f: FieldEvaluator,
    x: Sequence[float],
    d: int,
    config: Optional[CoveringConfig] = None,
) -> Optional[AlmostInvariantReport]:
    """Almost-invariant subspace of the top tangent polynomial (degree <= d) of u at x.

    Returns None for fields without an exact expansion or when no component of
    degree 2..d survives the re-expansion about x.
    """
    config = config or CoveringConfig()
    expansion = getattr(f, "expansion", None)
    if expansion is None:
        return None
    point = [Fraction(float(v)).limit_denominator(config.tangent_denominator) for v in x]
    local = recenter(expansion, point)
    degrees = [k for k in local.components if 2 <= k <= d]
    if not degrees:
        return None
    q = local.components[max(degrees)]
    hhp = HhpConfig(sphere_samples_per_dim=config.alignment_samples)
    return almost_invariant_subspace(q, q, config.alignment_eps, config.tau, hhp)


def fitted_plane(centers: np.ndarray, dim: int) -> np.ndarray:
    """Orthonormal rows of the least-squares dim-plane through the centroid of the centers."""
    if dim <= 0:
        return np.zeros((0, centers.shape[1]))
    _, _, vt = np.linalg.svd(centers - centers.mean(axis=0), full_matrices=False)
    return vt[:dim]


def _off_plane(vectors: np.ndarray, plane: np.ndarray) -> np.ndarray:
    vectors = np.atleast_2d(vectors)
    return np.linalg.norm(vectors - (vectors @ plane.T) @ plane, axis=1)


def alignment_failures(
    f: FieldEvaluator,
    centers: np.ndarray,
    d: int,
    r: float,
    config: Optional[CoveringConfig] = None,
) -> Tuple[int, Optional[np.ndarray]]:
    """(failures, V) for one subfamily of small good balls.

    V is the almost-invariant subspace of the tangent polynomial at the first
    center, or the fitted (n-2)-plane when no tangent polynomial is available.
    A pair fails when its displacement leaves the tau-cone about V; a center
    fails when it sits off the fitted plane by more than tau times the family
    diameter. Both allow the sampling scale r.
    """
    config = config or CoveringConfig()
    if len(centers) < 2:
        return 0, None
    plane = fitted_plane(centers, f.n - 2)
    try:
        report = tangent_subspace(f, centers[0], d, config)
    except (PreconditionError, IdentityViolation) as e:
        logger.warning(f"No almost-invariant subspace at {tuple(centers[0])}: {e}")
        return 1, None
    subspace = report.subspace if report is not None else plane

    failures = 0
    for i in range(len(centers)):
        v = centers[i + 1:] - centers[i]
        if len(v):
            failures += int(np.sum(_off_plane(v, subspace) > config.tau * np.linalg.norm(v, axis=1) + r))
    diameter = max(np.linalg.norm(c - centers[0]) for c in centers)
    residual = _off_plane(centers - centers.mean(axis=0), plane)
    failures += int(np.sum(residual > config.tau * diameter + r))
    return failures, subspace


def _subfamilies(centers: np.ndarray, diameter: float) -> List[List[int]]:
    groups: List[List[int]] = []
    for i in range(len(centers)):
        for group in groups:
            if all(np.linalg.norm(centers[i] - centers[j]) <= diameter for j in group):
                group.append(i)
                break
        else:
            groups.append([i])
    return groups


def excluded_targets(
    f: FieldEvaluator,
    anchors: np.ndarray,
    anchor_radii: np.ndarray,
    subspace: np.ndarray,
    candidates: np.ndarray,
    small: float,
    d: int,
    r: float,
    t: float,
    config: Optional[CoveringConfig] = None,
    geometry: Optional[GeometryConfig] = None,
) -> np.ndarray:
    """Boolean mask of candidates cleared off the n-2 plane: r_c(z) > c(n) tau^d r.

    Only z with 5 r_i < |z - x_i| < small and dist(z - x_i, V) > tau |z - x_i|
    for some anchor x_i are tested.
    """
    config = config or CoveringConfig()
    near = np.zeros(len(candidates), dtype=bool)
    for x, rx in zip(anchors, anchor_radii):
        v = candidates - x
        dist = np.linalg.norm(v, axis=1)
        near |= (dist > config.neighbor_factor * rx) & (dist < small) & (
            _off_plane(v, subspace) > config.tau * dist
        )
    cleared = np.zeros(len(candidates), dtype=bool)
    if np.any(near):
        c_n = config.shrink_factor if config.shrink_factor is not None else 1.0
        radii = critical_radii(f, candidates[near], t, config=geometry)
        cleared[np.flatnonzero(near)] = radii > c_n * config.tau ** d * r
    return cleared


def _settle(
    f: FieldEvaluator,
    center: np.ndarray,
    scale: float,
    pts: np.ndarray,
    d: int,
    r: float,
    eps: float,
    t: float,
    targets: np.ndarray,
    status: str,
    config: CoveringConfig,
) -> List[ScaleBall]:
    """Turn a Vitali ball B(center, 5 scale) into children that cover its share of pts.

    Degree d - 1 only after a verified drop; a ball that keeps degree d is at most t/2
    across, re-split at a uniform smaller scale when needed.
    """
    dilation = config.vitali_dilation

    def ball(c: np.ndarray, s: float) -> ScaleBall:
        point = tuple(float(v) for v in c)
        if s <= r * (1 + 1e-12):
            return ScaleBall(center=point, radius=dilation * s, degree=max(d - 1, 1), status="terminal-r")
        radius = dilation * s
        degree = d - 1 if frequency_drops(f, c, radius, d, eps, targets) else d
        return ScaleBall(center=point, radius=radius, degree=degree, status=status)

    first = ball(center, scale)
    if first.status == "terminal-r" or first.degree < d or first.radius <= t / 2 * (1 + 1e-12):
        return [first]

    inside = pts[first.contains(pts)]
    split = max(r, t / (2 * dilation))
    return [ball(inside[k], split) for k in vitali(inside, np.full(len(inside), split))]


# ----------------------------------------------------------------- covering


def cover_good_scale(
    f: FieldEvaluator,
    ball: ScaleBall,
    d: int,
    r: float,
    eps: float,
    targets: np.ndarray,
    config: Optional[CoveringConfig] = None,
    geometry: Optional[GeometryConfig] = None,
) -> StepResult:
    """Cover the targets inside a good-scale ball of degree d.

    Every target of the ball lands in a child; children are terminal at scale r,
    carry degree d - 1 after a verified frequency drop, or keep degree d at no
    more than half the radius.
    """
    config = config or CoveringConfig()
    pts = targets[ball.contains(targets)] if len(targets) else targets
    if len(pts) == 0 or d <= 1:
        return StepResult()

    t = ball.radius
    dilation = config.vitali_dilation
    _, rx = r_prime(f, pts, d, eps, r, top=t, geometry=geometry)

    def settle(center, scale, status):
        return _settle(f, center, scale, pts, d, r, eps, t, targets, status, config)

    if config.improved_2d and f.n == 2:
        best = min(range(len(pts)), key=lambda i: (rx[i], tuple(pts[i])))
        if np.all(np.linalg.norm(pts - pts[best], axis=1) <= dilation * rx[best] * (1 + 1e-12)):
            return StepResult(children=settle(pts[best], rx[best], "good-scale"), good=len(pts))
        logger.debug(f"Single ball at {tuple(pts[best])} misses targets; using the general step")

    good, bad = partition_good_bad(pts, rx, config)
    result = StepResult(good=int(good.sum()), bad=int(bad.sum()))

    good_idx = np.flatnonzero(good)
    kept = [good_idx[i] for i in vitali(pts[good_idx], rx[good_idx])] if len(good_idx) else []
    for i in kept:
        result.children.extend(settle(pts[i], rx[i], "good-scale"))

    bad_idx = np.flatnonzero(bad)
    small = t / (math.e ** config.small_ball_exponent * d)
    small_kept = [i for i in kept if rx[i] < small]
    for group in _subfamilies(pts[small_kept], small) if small_kept else []:
        members = [small_kept[k] for k in group]
        failures, subspace = alignment_failures(f, pts[members], d, r, config)
        result.alignment_failures += failures
        if subspace is None or subspace.shape[0] != f.n - 2 or not len(bad_idx):
            continue
        cleared = excluded_targets(
            f, pts[members], rx[members], subspace, pts[bad_idx], small, d, r, t, config, geometry
        )
        c_n = config.shrink_factor if config.shrink_factor is not None else 1.0
        for z in pts[bad_idx[cleared]]:
            result.children.append(ScaleBall(
                center=tuple(float(v) for v in z),
                radius=c_n * config.tau ** d * r,
                degree=d,
                status="excluded",
            ))
        result.excluded += int(cleared.sum())
        bad_idx = bad_idx[~cleared]

    if len(bad_idx):
        if kept:
            kept_centers = pts[kept]
            gaps = np.min(np.linalg.norm(pts[bad_idx][:, None, :] - kept_centers[None, :, :], axis=2), axis=1)
            ty = np.maximum(r, gaps / config.annulus_divisor)
        else:
            ty = rx[bad_idx]
        for k in vitali(pts[bad_idx], ty):
            result.children.extend(settle(pts[bad_idx[k]], ty[k], "bad-set"))

    if result.alignment_failures:
        logger.warning(f"Alignment failed {result.alignment_failures} times in ball at {ball.center}")
    return result


def target_points(f: FieldEvaluator, center: Sequence[float], radius: float, r: float,
                  config: Optional[CoveringConfig] = None) -> np.ndarray:
    """Lattice sample of S_r = {N(x, r) >= 3/2} at spacing r/4 inside B(center, radius)."""
    config = config or CoveringConfig()
    lattice, _ = lattice_points(r / 4, radius, f.n)
    lattice = lattice[np.einsum("ij,ij->i", lattice, lattice) <= radius ** 2] + np.asarray(center)
    if len(lattice) > config.max_target_points:
        raise PreconditionError(
            f"{len(lattice)} lattice points exceed max_target_points={config.max_target_points}; raise r"
        )
    return lattice[f.frequency(lattice, r) >= 1.5]


def level_limit(d_star: int, radius: float, r: float) -> int:
    """Guard on the level count.

    A ball that keeps its degree halves, and a drop grows the radius at most
    fivefold, so each degree lasts at most log2(radius / r) + 3 d* + 2 levels.
    """
    return d_star * (math.ceil(math.log2(radius / r)) + 3 * d_star + 2) + 1


def recursive_cover(
    f: FieldEvaluator,
    lam: float,
    r: float,
    center: Optional[Sequence[float]] = None,
    radius: float = 0.5,
    config: Optional[CoveringConfig] = None,
    geometry: Optional[GeometryConfig] = None,
    jobs: int = 1,
) -> CoverReport:
    """Degree-descending covering of S_r inside B(center, radius), starting at degree ceil(C * Lambda)."""
    config = config or CoveringConfig()
    center = np.zeros(f.n) if center is None else np.asarray(center, dtype=float)
    if not 0 < r < radius:
        raise PreconditionError(f"Need 0 < r < radius, got r={r}, radius={radius}")
    d_star = max(1, math.ceil(config.degree_factor * lam))
    if not is_good_scale(f, center, radius, d_star, config.eps, config):
        raise PreconditionError(f"Frequency exceeds {d_star} + eps on the input ball; increase Lambda")

    targets = target_points(f, center, radius, r, config)
    limit = level_limit(d_star, radius, r)
    logger.info(f"Covering {len(targets)} target points, d*={d_star}, r={r}")

    root = ScaleBall(center=tuple(float(v) for v in center), radius=radius, degree=d_star)
    levels: List[List[ScaleBall]] = [[root]]
    active = [root]
    failures = 0
    while active:
        if len(levels) > limit:
            raise CoveringError(f"Level count exceeded {limit}")
        steps = Parallel(n_jobs=jobs)(
            delayed(cover_good_scale)(f, ball, ball.degree, r, config.eps, targets, config, geometry)
            for ball in active
        )
        level = [child for step in steps for child in step.children]
        failures += sum(step.alignment_failures for step in steps)
        if not level:
            break
        levels.append(level)
        active = [b for b in level if b.status in LIVE and b.degree > 1]
        logger.debug(f"Level {len(levels) - 1}: {len(level)} balls, {len(active)} active")

    settled = np.zeros(len(targets), dtype=bool)
    for b in (b for level in levels for b in level if b.status in ("terminal-r", "excluded")):
        settled |= b.contains(targets)
    loose = targets[~settled]
    required = None
    if len(loose):
        required = float(np.min(critical_radii(f, loose, radius, config=geometry)) / radius)
        logger.warning(f"{len(loose)} target points escaped every terminal ball")

    masses = [
        float(sum(b.radius ** (f.n - 2) for b in level if b.status != "excluded")) for level in levels
    ]
    report = CoverReport(
        n=f.n,
        center=tuple(float(v) for v in center),
        radius=radius,
        r=r,
        lam=lam,
        d_star=d_star,
        levels=levels,
        masses=masses,
        target_count=len(targets),
        escapes=len(loose),
        alignment_failures=failures,
        required_shrink=required,
    )
    logger.info(
        f"Cover done: {len(levels)} levels, M={report.terminal_count}, escapes={report.escapes}, "
        f"excluded={len(report.excluded)}, alignment failures={failures}"
    )
    return report


def fit_log_growth(lams: Sequence[float], counts: Sequence[int]) -> ScalingFit:
    """log M = a * Lambda + b by least squares."""
    data = [(lam, math.log(c)) for lam, c in zip(lams, counts) if c > 0]
    if len(data) < 2:
        raise PreconditionError("Need at least two positive counts to fit a growth law")
    x = np.array([[lam] for lam, _ in data])
    y = np.array([v for _, v in data])
    model = LinearRegression().fit(x, y)
    return ScalingFit(
        slope=float(model.coef_[0]),
        intercept=float(model.intercept_),
        r2=float(r2_score(y, model.predict(x))) if len(data) > 2 else 1.0,
        points=len(data),
    )
