"""Critical radii, effective critical/singular/nodal sets, Minkowski volumes and 2-D critical points."""

import base64
import math
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict
from scipy import ndimage
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score

from .config import GeometryConfig
from .errors import NotHarmonicError, PreconditionError, QuadratureError
from .fields import ExpansionField, FieldEvaluator, frequency_from_weights, lattice_points
from .frequency import Expansion, freq, height
from .poly import is_harmonic
from .sampling import FloatPoly, ball_points

MASK_KINDS = ("critical", "singular", "nodal", "frequency")


class SetMask(BaseModel):
    """Membership of lattice cells (spacing ``spacing``, centers ``origin + k * spacing``)."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: str
    radius: float
    spacing: float
    origin: np.ndarray
    members: np.ndarray

    @property
    def shape(self):
        return self.members.shape

    @property
    def count(self) -> int:
        return int(self.members.sum())

    def centers(self) -> np.ndarray:
        idx = np.argwhere(self.members)
        return self.origin + self.spacing * idx

    def all_centers(self) -> np.ndarray:
        idx = np.indices(self.members.shape).reshape(self.members.ndim, -1).T
        return self.origin + self.spacing * idx

    def to_json(self) -> Dict[str, Any]:
        bits = np.packbits(self.members.reshape(-1).astype(np.uint8))
        return {
            "kind": self.kind,
            "radius": self.radius,
            "spacing": self.spacing,
            "origin": [float(v) for v in self.origin],
            "extents": list(self.members.shape),
            "bitset": base64.b64encode(bits.tobytes()).decode("ascii"),
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "SetMask":
        shape = tuple(int(v) for v in data["extents"])
        raw = np.frombuffer(base64.b64decode(data["bitset"]), dtype=np.uint8)
        members = np.unpackbits(raw)[: int(np.prod(shape))].astype(bool).reshape(shape)
        return cls(
            kind=data["kind"],
            radius=float(data["radius"]),
            spacing=float(data["spacing"]),
            origin=np.array(data["origin"], dtype=float),
            members=members,
        )


class CriticalPoint(BaseModel):
    x: float
    y: float
    multiplicity: int


class InclusionReport(BaseModel):
    r: float
    members: int
    required_constant: float
    constant: Optional[float] = None

    @property
    def holds(self) -> bool:
        return self.constant is None or self.required_constant <= self.constant + 1e-12


class NodalReport(BaseModel):
    small_frequency: bool
    center_value_sq: float
    half_height: float
    pinched: bool
    sign_violations: int
    samples_off_plane: int

    @property
    def holds(self) -> bool:
        small_ok = (not self.small_frequency) or self.center_value_sq >= self.half_height - 1e-15
        return small_ok and self.sign_violations == 0


class ScalingFit(BaseModel):
    slope: float
    intercept: float
    r2: float
    points: int


# ------------------------------------------------------------------- radii


def _bisect_monotone(predicate, lo: np.ndarray, hi: np.ndarray, rtol: float) -> np.ndarray:
    """Largest s in [lo, hi] with predicate(s) true, for predicates true below a threshold.

    Bisection in log scale until hi / lo <= 1 + rtol; works on arrays of brackets.
    """
    lo, hi = lo.copy(), hi.copy()
    while np.any(hi > lo * (1 + rtol)):
        mid = np.sqrt(lo * hi)
        ok = predicate(mid)
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    return lo


def critical_radii(
    f: ExpansionField,
    points: np.ndarray,
    r0: float,
    threshold: float = 1.5,
    config: Optional[GeometryConfig] = None,
) -> np.ndarray:
    """sup{s <= r0 : N(x, s) < threshold} per point (vectorized critical radius)."""
    config = config or GeometryConfig()
    pts = np.atleast_2d(points)
    weights = f.taylor_weights(pts)
    s_min = config.min_scale_fraction * r0
    out = np.full(len(pts), r0)
    at_top = _freq(weights, r0) < threshold
    at_bottom = _freq(weights, s_min) < threshold
    out[~at_bottom] = 0.0
    todo = ~at_top & at_bottom
    if np.any(todo):
        w = weights[todo]
        out[todo] = _bisect_monotone(
            lambda s: _freq(w, s) < threshold,
            np.full(len(w), s_min),
            np.full(len(w), r0),
            config.bisection_rtol,
        )
    return out


def _freq(weights: np.ndarray, s) -> np.ndarray:
    return frequency_from_weights(weights, s)


def critical_radius(f: ExpansionField, x: Sequence[float], r0: float, config: Optional[GeometryConfig] = None) -> float:
    """sup{0 <= s <= r0 : N(x, s) < 3/2}; r0 when N(x, r0) < 3/2 and 0 when N >= 3/2 at all scales."""
    return float(critical_radii(f, np.asarray([x], dtype=float), r0, config=config)[0])


def d_critical_radius(
    f: ExpansionField,
    x: Sequence[float],
    d: int,
    eps0: float,
    r0: float,
    config: Optional[GeometryConfig] = None,
) -> float:
    """sup{s <= r0 : N(y, s) < d + eps0 for every sampled y in B(x, s)}."""
    config = config or GeometryConfig()
    x = np.asarray(x, dtype=float)
    unit = ball_points(f.n, config.d_critical_samples)

    def holds(s: float) -> bool:
        return bool(np.all(f.frequency(x + s * unit, s) < d + eps0))

    if holds(r0):
        return r0
    lo, hi = config.min_scale_fraction * r0, r0
    if not holds(lo):
        return 0.0
    while hi > lo * (1 + config.bisection_rtol):
        mid = math.sqrt(lo * hi)
        if holds(mid):
            lo = mid
        else:
            hi = mid
    return lo


# ------------------------------------------------------------ effective sets


def _ball_footprint(radius_cells: int, n: int) -> np.ndarray:
    axis = np.arange(-radius_cells, radius_cells + 1)
    grids = np.meshgrid(*([axis] * n), indexing="ij")
    return sum(g ** 2 for g in grids) <= radius_cells ** 2


def _pointwise(f: FieldEvaluator, points: np.ndarray, r: float, quantity: str) -> np.ndarray:
    if quantity == "grad":
        return np.sum(f.gradient(points) ** 2, axis=1)
    if quantity == "value":
        return f.value(points) ** 2
    return f.value(points) ** 2 + (r * r / f.n) * np.sum(f.gradient(points) ** 2, axis=1)


def _infimum_over_balls(f: FieldEvaluator, r: float, half_width: float, quantity: str, config: GeometryConfig):
    """inf over B_r(x) of the requested quantity, for every mask cell x (spacing r / cells_per_radius).

    The fine lattice (spacing r / lattice_per_radius) is evaluated in slabs along the
    first axis that overlap by the footprint reach, so at most ``slab_points`` values
    are held at once (and never fewer than one footprint-thick slab).
    """
    n = f.n
    step = r / config.lattice_per_radius
    count = int(np.floor((half_width + r) / step + 1e-9))
    axis = step * np.arange(-count, count + 1)
    reach = config.lattice_per_radius
    footprint = _ball_footprint(reach, n)

    stride = config.lattice_per_radius // config.cells_per_radius
    cells_per_side = int(np.floor(half_width / (stride * step) + 1e-9))
    index = count + stride * np.arange(-cells_per_side, cells_per_side + 1)
    row_points = len(axis) ** (n - 1)
    per_slab = max(1, (config.slab_points // row_points - 2 * reach) // stride + 1)

    sub = np.empty((len(index),) * n)
    for start in range(0, len(index), per_slab):
        rows = index[start:start + per_slab]
        lo, hi = max(rows[0] - reach, 0), min(rows[-1] + reach, len(axis) - 1)
        grids = np.meshgrid(axis[lo:hi + 1], *([axis] * (n - 1)), indexing="ij")
        points = np.stack([g.reshape(-1) for g in grids], axis=1)
        values = _pointwise(f, points, r, quantity).reshape(grids[0].shape)
        infimum = ndimage.minimum_filter(values, footprint=footprint, mode="nearest")
        sub[start:start + len(rows)] = infimum[np.ix_(rows - lo, *([index] * (n - 1)))]
    spacing = stride * step
    origin = np.full(n, -cells_per_side * spacing)
    return sub, spacing, origin


def _effective_mask(f: FieldEvaluator, r: float, kind: str, eps: float, half_width: Optional[float], config):
    config = config or GeometryConfig()
    half_width = config.half_width if half_width is None else half_width
    if config.lattice_per_radius % config.cells_per_radius:
        raise PreconditionError("lattice_per_radius must be a multiple of cells_per_radius")
    quantity = {"critical": "grad", "singular": "singular", "nodal": "value"}[kind]
    infimum, spacing, origin = _infimum_over_balls(f, r, half_width, quantity, config)
    shape = infimum.shape
    members = np.zeros(shape, dtype=bool)
    rows_per_slab = max(1, config.slab_points // int(np.prod(shape[1:])))
    for start in range(0, shape[0], rows_per_slab):
        stop = min(start + rows_per_slab, shape[0])
        idx = np.indices((stop - start,) + shape[1:]).reshape(len(shape), -1).T
        idx[:, 0] += start
        centers = origin + spacing * idx
        try:
            if kind == "critical":
                rhs = (config.critical_constant * f.n / (r * r)) * f.sphere_mean_sq(centers, 2 * r, subtract_center=True)
            else:
                rhs = eps * f.sphere_mean_sq(centers, 2 * r, subtract_center=False)
        except ValueError as e:
            raise QuadratureError(f"Boundary average failed at r={r}: {e}") from e
        members[start:stop] = (infimum[start:stop].reshape(-1) < rhs).reshape((stop - start,) + shape[1:])
    mask = SetMask(kind=kind, radius=r, spacing=spacing, origin=origin, members=members)
    logger.debug(f"{kind} mask r={r}: {mask.count}/{members.size} cells")
    return mask


def effective_critical_set(
    f: FieldEvaluator, r: float, half_width: Optional[float] = None, config: Optional[GeometryConfig] = None
) -> SetMask:
    """Cells x with inf_{B_r(x)} |grad u|^2 < (n / 16 r^2) avg_{dB_2r(x)} (u - u(x))^2."""
    return _effective_mask(f, r, "critical", 0.0, half_width, config)


def effective_singular_set(
    f: FieldEvaluator, r: float, half_width: Optional[float] = None, config: Optional[GeometryConfig] = None
) -> SetMask:
    """Cells x with inf_{B_r(x)} (u^2 + (r^2/n)|grad u|^2) < eps avg_{dB_2r(x)} u^2."""
    config = config or GeometryConfig()
    return _effective_mask(f, r, "singular", config.singular_eps, half_width, config)


def effective_nodal_set(
    f: FieldEvaluator,
    r: float,
    eps_n: Optional[float] = None,
    half_width: Optional[float] = None,
    config: Optional[GeometryConfig] = None,
) -> SetMask:
    """Cells x with inf_{B_r(x)} u^2 < eps_n avg_{dB_2r(x)} u^2."""
    config = config or GeometryConfig()
    eps_n = config.nodal_eps if eps_n is None else eps_n
    return _effective_mask(f, r, "nodal", eps_n, half_width, config)


def frequency_set(
    f: FieldEvaluator,
    r: float,
    half_width: Optional[float] = None,
    threshold: float = 1.5,
    config: Optional[GeometryConfig] = None,
) -> SetMask:
    """Cells x with N(x, r) >= 3/2."""
    config = config or GeometryConfig()
    half_width = config.half_width if half_width is None else half_width
    spacing = r / config.cells_per_radius
    centers, shape = lattice_points(spacing, half_width, f.n)
    members = f.frequency(centers, r) >= threshold
    origin = centers[0].copy()
    return SetMask(kind="frequency", radius=r, spacing=spacing, origin=origin, members=members.reshape(shape))


def build_mask(f: FieldEvaluator, r: float, kind: str, config: Optional[GeometryConfig] = None) -> SetMask:
    if kind == "critical":
        return effective_critical_set(f, r, config=config)
    if kind == "singular":
        return effective_singular_set(f, r, config=config)
    if kind == "nodal":
        return effective_nodal_set(f, r, config=config)
    if kind == "frequency":
        return frequency_set(f, r, config=config)
    raise PreconditionError(f"Unknown mask kind {kind!r}; expected one of {MASK_KINDS}")


# ------------------------------------------------------------------ volumes


def minkowski_volume(mask: SetMask, r: float) -> float:
    """Volume of the r-neighbourhood of the member cell centers, counted on the mask lattice."""
    if mask.members.size == 0:
        raise PreconditionError("Empty mask domain")
    if not mask.members.any():
        return 0.0
    pad = int(math.ceil(r / mask.spacing)) + 1
    padded = np.pad(mask.members, pad, mode="constant", constant_values=False)
    distance = ndimage.distance_transform_edt(~padded, sampling=mask.spacing)
    cells = int(np.count_nonzero(distance <= r * (1 + 1e-12)))
    return cells * mask.spacing ** mask.members.ndim


def fit_scaling_exponent(rs: Sequence[float], volumes: Sequence[float]) -> ScalingFit:
    """Least-squares slope of log(volume) against log(r), zero volumes dropped."""
    data = [(math.log(r), math.log(v)) for r, v in zip(rs, volumes) if v > 0]
    if len(data) < 2:
        raise PreconditionError("Need at least two nonzero volumes to fit a scaling exponent")
    x = np.array([[a] for a, _ in data])
    y = np.array([b for _, b in data])
    model = LinearRegression().fit(x, y)
    return ScalingFit(
        slope=float(model.coef_[0]),
        intercept=float(model.intercept_),
        r2=float(r2_score(y, model.predict(x))) if len(data) > 2 else 1.0,
        points=len(data),
    )


# -------------------------------------------------------------- 2-D counting


def holomorphic_coefficients(e: Expansion) -> np.ndarray:
    """c_k with u = Re(sum_k c_k (z - z0)^k), from the coefficients of x^k and x^(k-1) y."""
    if e.n != 2:
        raise PreconditionError(f"Holomorphic representation needs n=2, got n={e.n}")
    poly = e.to_polynomial()
    if not is_harmonic(poly):
        raise NotHarmonicError("Expansion is not harmonic")
    c = np.zeros(e.max_degree + 1, dtype=complex)
    for k in range(e.max_degree + 1):
        re = float(poly.coefficient((k, 0)))
        im = -float(poly.coefficient((k - 1, 1))) / k if k >= 1 else 0.0
        c[k] = e.scale * complex(re, im)
    return c


def critical_points_2d(
    e: Expansion,
    radius: Optional[float] = None,
    config: Optional[GeometryConfig] = None,
) -> List[CriticalPoint]:
    """Zeros of the holomorphic derivative, with multiplicities, optionally restricted to B(0, radius)."""
    config = config or GeometryConfig()
    c = holomorphic_coefficients(e)
    derivative = np.array([k * c[k] for k in range(1, len(c))], dtype=complex)
    if not np.any(derivative):
        raise PreconditionError("Constant expansion has no isolated critical points")
    derivative = derivative[: np.max(np.nonzero(derivative)[0]) + 1]
    zero_order = int(np.min(np.nonzero(derivative)[0]))
    reduced = derivative[zero_order:]

    roots: List[complex] = []
    if len(reduced) > 1:
        companion = np.polynomial.polynomial.polycompanion(reduced)
        roots = list(np.linalg.eigvals(companion))
        second = np.polynomial.polynomial.polyder(reduced)
        for i, z in enumerate(roots):
            for _ in range(config.newton_steps):
                slope = np.polynomial.polynomial.polyval(z, second)
                if abs(slope) < 1e-14:
                    break
                step = np.polynomial.polynomial.polyval(z, reduced) / slope
                z = z - step
                if abs(step) < 1e-16:
                    break
            roots[i] = z

    z0 = complex(float(e.x0[0]), float(e.x0[1]))
    clusters: List[List[complex]] = []
    for z in sorted(roots, key=lambda v: (round(v.real, 9), round(v.imag, 9))):
        for cluster in clusters:
            if abs(cluster[0] - z) <= config.root_cluster_tol:
                cluster.append(z)
                break
        else:
            clusters.append([z])
    points = [(complex(0.0, 0.0), zero_order)] if zero_order else []
    points += [(sum(cl) / len(cl), len(cl)) for cl in clusters]

    result = []
    for z, mult in points:
        w = z + z0
        if radius is not None and abs(w) >= radius:
            continue
        x = 0.0 if abs(w.real) < 1e-13 else w.real
        y = 0.0 if abs(w.imag) < 1e-13 else w.imag
        result.append(CriticalPoint(x=x, y=y, multiplicity=mult))
    result.sort(key=lambda p: (p.x, p.y))
    logger.debug(f"Found {sum(p.multiplicity for p in result)} critical points (with multiplicity)")
    return result


# ----------------------------------------------------------- consistency checks


def frequency_inclusion_check(
    f: ExpansionField,
    r: float,
    constant: Optional[float] = None,
    r0: float = 0.5,
    config: Optional[GeometryConfig] = None,
) -> InclusionReport:
    """Critical radius of every effective-critical cell against C r; reports the smallest workable C."""
    mask = effective_critical_set(f, r, config=config)
    centers = mask.centers()
    if len(centers):
        radii = critical_radii(f, centers, r0, config=config)
        required = float(np.max(radii) / r)
    else:
        required = 0.0
    return InclusionReport(r=r, members=len(centers), required_constant=required, constant=constant)


def nodal_nondegeneracy_check(
    e: Expansion,
    eps: float,
    tau: Optional[float] = None,
    config: Optional[GeometryConfig] = None,
) -> NodalReport:
    """Small unnormalized frequency forces u(0)^2 >= h(1)/2; pinching near 1 confines zeros near a plane."""
    config = config or GeometryConfig()
    tau = config.nodal_tau if tau is None else tau
    u0_sq = float(e.value_at_base()) ** 2 * e.scale ** 2
    h1 = float(height(e, 1))
    small = float(freq(e, 1, normalized=False)) <= 0.5
    pinched = (
        1 in e.components
        and float(freq(e, math.exp(-2.0), normalized=False)) >= 1 - eps
        and float(freq(e, math.exp(2.0), normalized=False)) <= 1 + eps
    )
    if not small and not pinched:
        raise PreconditionError("Neither N(0,1) <= 1/2 nor frequency pinched around 1")

    violations, off_plane = 0, 0
    if pinched:
        linear = FloatPoly.from_exact(e.components[1])
        normal = linear.gradient(np.zeros((1, e.n)))[0]
        normal = normal / np.linalg.norm(normal)
        pts = ball_points(e.n, config.nodal_samples)
        distance = pts @ normal
        away = np.abs(distance) > tau
        values = FloatPoly.from_exact(e.to_polynomial(), e.scale)(pts[away])
        violations = int(np.count_nonzero(np.sign(values) != np.sign(distance[away])))
        off_plane = int(away.sum())

    report = NodalReport(
        small_frequency=small,
        center_value_sq=u0_sq,
        half_height=0.5 * h1,
        pinched=bool(pinched),
        sign_violations=violations,
        samples_off_plane=off_plane,
    )
    if not report.holds:
        logger.warning(f"Nodal nondegeneracy failed: {report}")
    return report
