"""Planar divergence-form equations: finite-difference solves, generalized frequency and harmonic approximation.

The equation is div(a grad u) + b . grad u + c u = 0 on the square
[-half_width, half_width]^2 with Dirichlet data. Grid values are indexed
``values[i, j] = u(axis[i], axis[j])``.
"""

import json
import math
import struct
from fractions import Fraction
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from loguru import logger
from pydantic import BaseModel, ConfigDict, PrivateAttr
from scipy.interpolate import RectBivariateSpline
from scipy.signal import fftconvolve

from .config import CoefficientPreset, EllipticConfig, ProblemPreset
from .corpus import resolve_source
from .errors import (
    ConfigurationError,
    PreconditionError,
    ProjectionError,
    SolverError,
    UndefinedFrequencyError,
)
from .fields import ExpansionField, FieldEvaluator
from .frequency import Expansion, integer_distance
from .geometry import ScalingFit, fit_scaling_exponent
from .hhp import harmonic_from_holomorphic
from .sampling import circle_nodes, gauss_legendre

GRID_MAGIC = b"CSLG"
COEFFICIENT_KINDS = ("identity", "smooth", "linear-diagonal")


# ------------------------------------------------------------------ coefficients


class CoefficientField(BaseModel):
    """a^{ij}, b^i and c as closed-form fields satisfying the lambda bounds by construction."""

    kind: str = "identity"
    lam: float = 0.0
    critical: bool = True

    @classmethod
    def from_preset(cls, preset: CoefficientPreset) -> "CoefficientField":
        if preset.kind not in COEFFICIENT_KINDS:
            raise ConfigurationError(f"Unknown coefficient kind {preset.kind!r}")
        return cls(kind=preset.kind, lam=preset.lam, critical=preset.critical)

    def matrix(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        x, y = pts[:, 0], pts[:, 1]
        a = np.zeros((len(pts), 2, 2))
        a[:, 0, 0] = a[:, 1, 1] = 1.0
        if self.kind == "smooth":
            p = self.lam / 4 * np.sin(x) * np.cos(y)
            q = self.lam / 8 * np.sin(x + y)
            a[:, 0, 0] += p
            a[:, 1, 1] -= p
            a[:, 0, 1] = a[:, 1, 0] = q
        elif self.kind == "linear-diagonal":
            a[:, 0, 0] += self.lam * x / (1 + self.lam)
        return a

    def drift(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        if self.kind != "smooth":
            return np.zeros_like(pts)
        scale = self.lam / (2 * math.sqrt(2))
        return scale * np.stack([np.cos(pts[:, 1]), np.sin(pts[:, 0])], axis=1)

    def potential(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        if self.critical or self.kind == "identity":
            return np.zeros(len(pts))
        return self.lam / 2 * np.cos(pts[:, 0] + pts[:, 1])

    def validate(self, grid_nodes: int = 65, half_width: float = 1.0) -> None:
        """Check ellipticity, Lipschitz and size bounds on the grid nodes."""
        if not 0 <= self.lam <= 0.3:
            raise ConfigurationError(f"lambda={self.lam} outside [0, 0.3]")
        axis = np.linspace(-half_width, half_width, grid_nodes)
        h = axis[1] - axis[0]
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        pts = np.stack([xx.reshape(-1), yy.reshape(-1)], axis=1)
        a = self.matrix(pts)
        eig = np.linalg.eigvalsh(a)
        tol = 1e-12
        if eig.min() < 1 / (1 + self.lam) - tol or eig.max() > 1 + self.lam + tol:
            raise ConfigurationError(f"Ellipticity bound violated: eigenvalues in [{eig.min()}, {eig.max()}]")
        grid = a.reshape(grid_nodes, grid_nodes, 2, 2)
        lip = max(
            np.abs(np.diff(grid, axis=0)).max(initial=0.0),
            np.abs(np.diff(grid, axis=1)).max(initial=0.0),
        ) / h
        if lip > self.lam * (1 + 1e-9) + tol:
            raise ConfigurationError(f"Lipschitz bound violated: {lip} > {self.lam}")
        if np.linalg.norm(self.drift(pts), axis=1).max() > self.lam + tol:
            raise ConfigurationError("|b| exceeds lambda")
        if np.abs(self.potential(pts)).max() > self.lam + tol:
            raise ConfigurationError("|c| exceeds lambda")


def load_problem(path: Path) -> ProblemPreset:
    """Problem JSON: {"name", "coefficients": {...}, "boundary": preset or expansion path, "grid_nodes"}."""
    with open(path, "r") as f:
        data = json.load(f)
    data.setdefault("name", Path(path).stem)
    return ProblemPreset(**data)


# ----------------------------------------------------------------- grid fields


class GridField(BaseModel):
    """Node values of u on a uniform grid over [-half_width, half_width]^2."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray
    half_width: float = 1.0
    _spline: Optional[RectBivariateSpline] = PrivateAttr(default=None)

    @property
    def nodes(self) -> int:
        return self.values.shape[0]

    @property
    def spacing(self) -> float:
        return 2 * self.half_width / (self.nodes - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.nodes)

    def points(self) -> np.ndarray:
        xx, yy = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.stack([xx.reshape(-1), yy.reshape(-1)], axis=1)

    @property
    def spline(self) -> RectBivariateSpline:
        if self._spline is None:
            self._spline = RectBivariateSpline(self.axis, self.axis, self.values)
        return self._spline

    def value(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return self.spline.ev(pts[:, 0], pts[:, 1])

    def gradient(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.stack(
            [self.spline.ev(pts[:, 0], pts[:, 1], dx=1), self.spline.ev(pts[:, 0], pts[:, 1], dy=1)], axis=1
        )

    def laplacian(self) -> np.ndarray:
        """Five-point Laplacian at interior nodes, zero on the boundary."""
        u = self.values
        out = np.zeros_like(u)
        out[1:-1, 1:-1] = (
            u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2] - 4 * u[1:-1, 1:-1]
        ) / self.spacing ** 2
        return out

    def disk_integral(self, values: np.ndarray, radius: float) -> float:
        pts = self.points()
        inside = np.einsum("ij,ij->i", pts, pts) < radius ** 2
        return float(values.reshape(-1)[inside].sum() * self.spacing ** 2)

    def to_bytes(self) -> bytes:
        header = struct.pack("<4sIdII", GRID_MAGIC, 2, self.spacing, self.nodes, self.nodes)
        origin = struct.pack("<dd", -self.half_width, -self.half_width)
        return header + origin + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "GridField":
        magic, n, spacing, nx, ny = struct.unpack_from("<4sIdII", data, 0)
        if magic != GRID_MAGIC or n != 2:
            raise ConfigurationError("Not a planar grid-field file")
        offset = struct.calcsize("<4sIdII")
        ox, _ = struct.unpack_from("<dd", data, offset)
        offset += struct.calcsize("<dd")
        values = np.frombuffer(data, dtype="<f8", offset=offset, count=nx * ny).reshape(nx, ny).copy()
        return cls(values=values, half_width=-ox)

    def to_csv(self, path: Path) -> None:
        pts = self.points()
        with open(path, "w") as f:
            f.write("x,y,u\n")
            for (x, y), v in zip(pts, self.values.reshape(-1)):
                f.write(f"{float(x)!r},{float(y)!r},{float(v)!r}\n")


class GridFieldEvaluator(FieldEvaluator):
    """FieldEvaluator over a GridField; frequencies use the boundary form r * int (u - u(x)) u_r / int (u - u(x))^2."""

    def __init__(self, field: GridField, boundary_nodes: int = 128):
        self.field = field
        self.n = 2
        self.center = np.zeros(2)
        self.domain_radius = field.half_width
        self._theta = circle_nodes(boundary_nodes)
        self._unit = np.stack([np.cos(self._theta), np.sin(self._theta)], axis=1)

    def value(self, points: np.ndarray) -> np.ndarray:
        return self.field.value(points)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        return self.field.gradient(points)

    def _on_circles(self, points: np.ndarray, radius: float) -> Tuple[np.ndarray, np.ndarray]:
        pts = np.atleast_2d(points)
        ring = pts[:, None, :] + radius * self._unit[None, :, :]
        flat = ring.reshape(-1, 2)
        return self.field.value(flat).reshape(len(pts), -1), flat

    def sphere_mean_sq(self, points: np.ndarray, radius: float, subtract_center: bool = True) -> np.ndarray:
        values, _ = self._on_circles(points, radius)
        if subtract_center:
            values = values - self.field.value(points)[:, None]
        return np.mean(values ** 2, axis=1)

    def frequency(self, points: np.ndarray, radius, normalized: bool = True) -> np.ndarray:
        pts = np.atleast_2d(points)
        values, flat = self._on_circles(pts, radius)
        grads = self.field.gradient(flat).reshape(len(pts), -1, 2)
        radial = np.einsum("mkj,kj->mk", grads, self._unit)
        shifted = values - self.field.value(pts)[:, None]
        numerator = radius * np.mean(shifted * radial, axis=1)
        denominator = np.mean((shifted if normalized else values) ** 2, axis=1)
        if np.any(denominator <= 0):
            raise UndefinedFrequencyError("Frequency undefined: grid field constant on a sample circle")
        return numerator / denominator


# --------------------------------------------------------------------- solver


def solve(
    coeffs: CoefficientField,
    boundary: Callable[[np.ndarray], np.ndarray],
    config: Optional[EllipticConfig] = None,
    grid_nodes: Optional[int] = None,
) -> GridField:
    """Flux-form finite differences with half-node coefficient averaging and a direct sparse solve."""
    config = config or EllipticConfig()
    m = grid_nodes or config.grid_nodes
    hw = config.half_width
    axis = np.linspace(-hw, hw, m)
    h = axis[1] - axis[0]
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([xx.reshape(-1), yy.reshape(-1)], axis=1)

    a = coeffs.matrix(pts).reshape(m, m, 2, 2)
    b = coeffs.drift(pts).reshape(m, m, 2)
    c = coeffs.potential(pts).reshape(m, m)
    g = boundary(pts).reshape(m, m)

    A = sp.lil_matrix((m * m, m * m))
    rhs = np.zeros(m * m)
    for i in range(m):
        for j in range(m):
            k = i * m + j
            if i in (0, m - 1) or j in (0, m - 1):
                A[k, k] = 1.0
                rhs[k] = g[i, j]
                continue
            a_e = 0.5 * (a[i, j, 0, 0] + a[i + 1, j, 0, 0])
            a_w = 0.5 * (a[i, j, 0, 0] + a[i - 1, j, 0, 0])
            a_n = 0.5 * (a[i, j, 1, 1] + a[i, j + 1, 1, 1])
            a_s = 0.5 * (a[i, j, 1, 1] + a[i, j - 1, 1, 1])

            A[k, k] = -(a_e + a_w + a_n + a_s) / h ** 2 + c[i, j]
            A[k, k + m] = a_e / h ** 2 + b[i, j, 0] / (2 * h)
            A[k, k - m] = a_w / h ** 2 - b[i, j, 0] / (2 * h)
            A[k, k + 1] = a_n / h ** 2 + b[i, j, 1] / (2 * h)
            A[k, k - 1] = a_s / h ** 2 - b[i, j, 1] / (2 * h)

            # mixed terms d_x(a12 d_y u) + d_y(a12 d_x u)
            q_e, q_w = a[i + 1, j, 0, 1], a[i - 1, j, 0, 1]
            q_n, q_s = a[i, j + 1, 0, 1], a[i, j - 1, 0, 1]
            if q_e or q_w or q_n or q_s:
                scale = 1.0 / (4 * h ** 2)
                A[k, k + m + 1] += (q_e + q_n) * scale
                A[k, k + m - 1] += -(q_e + q_s) * scale
                A[k, k - m + 1] += -(q_w + q_n) * scale
                A[k, k - m - 1] += (q_w + q_s) * scale

    matrix = A.tocsr()
    try:
        u = spla.spsolve(matrix, rhs)
    except RuntimeError as e:
        raise SolverError(f"Sparse solve failed: {e}") from e
    if not np.all(np.isfinite(u)):
        raise SolverError("Sparse solve returned non-finite values (singular system)")

    residual = np.abs(matrix @ u - rhs).max()
    scale = abs(matrix).sum(axis=1).max() * np.abs(u).max() + np.abs(rhs).max()
    if residual > config.residual_tol * scale:
        raise SolverError(f"Residual {residual:.3e} above tolerance {config.residual_tol * scale:.3e}")
    logger.debug(f"Solved {coeffs.kind} (lambda={coeffs.lam}) on {m}x{m} nodes, residual {residual:.2e}")
    return GridField(values=u.reshape(m, m), half_width=hw)


def solve_problem(problem: ProblemPreset, config: Optional[EllipticConfig] = None, seed: int = 0):
    """(coefficients, boundary expansion, solution) for a problem preset or JSON problem."""
    config = config or EllipticConfig()
    coeffs = CoefficientField.from_preset(problem.coefficients)
    coeffs.validate(problem.grid_nodes or config.grid_nodes, config.half_width)
    expansion = resolve_source(problem.boundary, n=2, seed=seed)
    field = ExpansionField(expansion)
    solution = solve(coeffs, field.value, config, grid_nodes=problem.grid_nodes)
    logger.info(f"Solved problem {problem.name!r}")
    return coeffs, expansion, solution


# --------------------------------------------------------- generalized frequency


class GeneralizedFrequency(BaseModel):
    N: float
    I: float
    D: float
    H: float

    @property
    def discrepancy(self) -> float:
        return abs(self.I - self.D) / self.D if self.D else 0.0


def _sqrtm(matrix: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(matrix)
    return (v * np.sqrt(w)) @ v.T


class AnisotropicMetric:
    """Frozen-coefficient metric at a base point.

    r^2(xbar, x) = a_ij(xbar)(x - xbar)^i (x - xbar)^j, eta = a_ij(x) v^i v^j / r^2 with
    v = a(xbar)^{-1}(x - xbar), and g_ij = eta a_ij(x). Its geodesic balls about xbar are
    the ellipses xbar + r Q B_1 with Q = sqrt(a(xbar)).
    """

    def __init__(self, coeffs: CoefficientField, xbar: Sequence[float]):
        self.coeffs = coeffs
        self.xbar = np.asarray(xbar, dtype=float)
        self.a0 = coeffs.matrix(self.xbar)[0]
        self.a0_inv = np.linalg.inv(self.a0)
        self.Q = _sqrtm(self.a0)

    def ellipse(self, r: float, theta: np.ndarray) -> np.ndarray:
        unit = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        return self.xbar + r * unit @ self.Q.T

    def radius_sq(self, points: np.ndarray) -> np.ndarray:
        offset = np.atleast_2d(points) - self.xbar
        return np.einsum("ki,ki->k", offset, offset @ self.a0_inv.T)

    def eta(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        v = (points - self.xbar) @ self.a0_inv.T
        return np.einsum("ki,kij,kj->k", v, self.coeffs.matrix(points), v) / self.radius_sq(points)

    def g(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return self.eta(points)[:, None, None] * self.coeffs.matrix(points)

    def inside(self, r: float, half_width: float) -> bool:
        """Whether the ellipse of radius r fits inside the grid square."""
        extent = r * np.sqrt(np.sum(self.Q ** 2, axis=1))
        return bool(np.all(np.abs(self.xbar) + extent <= half_width * (1 + 1e-12)))


def generalized_frequency(
    u: GridField,
    coeffs: CoefficientField,
    xbar: Sequence[float],
    r: float,
    config: Optional[EllipticConfig] = None,
) -> GeneralizedFrequency:
    """N = r I / H over the ellipse {a_ij(xbar)(x - xbar)^i (x - xbar)^j < r^2}.

    In the plane sqrt(g) g^{ij} = det(a)^{-1/2} a^{ij}, so D = int det(a)^{-1/2} grad u . a grad u
    and, by Green's formula, I = boundary integral of (u - u(xbar)) det(a)^{-1/2} (a grad u) . nu.
    H carries the boundary length element sqrt(eta a_ij t^i t^j).
    """
    config = config or EllipticConfig()
    metric = AnisotropicMetric(coeffs, xbar)
    xbar = metric.xbar
    S = metric.Q
    if not metric.inside(r, u.half_width):
        raise PreconditionError(f"Ellipse of radius {r} about {tuple(xbar)} leaves the grid")

    theta = circle_nodes(config.boundary_nodes)
    unit = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    boundary = metric.ellipse(r, theta)

    u0 = float(u.value(xbar)[0])
    dtheta = 2 * np.pi / config.boundary_nodes

    # boundary terms
    tangent = r * np.stack([-np.sin(theta), np.cos(theta)], axis=1) @ S.T
    normal_len = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1)
    a_b = coeffs.matrix(boundary)
    det_b = np.linalg.det(a_b)
    grad_b = u.gradient(boundary)
    shifted = u.value(boundary) - u0
    flux = np.einsum("kij,kj,ki->k", a_b, grad_b, normal_len) / np.sqrt(det_b)
    I = float(np.sum(shifted * flux) * dtheta)

    # |t|_g = sqrt(eta a^{-1}(x) t . t) on the boundary
    metric_len = np.sqrt(metric.eta(boundary) * np.einsum("ki,kij,kj->k", tangent, np.linalg.inv(a_b), tangent))
    H = float(np.sum(shifted ** 2 * metric_len) * dtheta)
    if H <= 0:
        raise UndefinedFrequencyError(f"H vanishes on the ellipse about {tuple(xbar)}")

    # area term
    rho, w_rho = gauss_legendre(config.radial_nodes)
    rho = 0.5 * (rho + 1.0)
    w_rho = 0.5 * w_rho
    interior = xbar + r * (rho[:, None, None] * unit[None, :, :]) @ S.T
    flat = interior.reshape(-1, 2)
    a_i = coeffs.matrix(flat)
    grad_i = u.gradient(flat)
    energy = np.einsum("ki,kij,kj->k", grad_i, a_i, grad_i) / np.sqrt(np.linalg.det(a_i))
    jacobian = r * r * np.linalg.det(S)
    D = float(np.sum(energy.reshape(len(rho), -1) * (w_rho * rho)[:, None]) * dtheta * jacobian)

    return GeneralizedFrequency(N=r * I / H, I=I, D=D, H=H)


def classical_frequency(u: GridField, xbar: Sequence[float], r: float, config: Optional[EllipticConfig] = None) -> float:
    return generalized_frequency(u, CoefficientField(), xbar, r, config).N


class MonotonicityReport(BaseModel):
    radii: List[float]
    values: List[float]
    constant: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.constant <= self.bound


def almost_monotonicity_check(
    u: GridField,
    coeffs: CoefficientField,
    xbar: Sequence[float],
    radii: Sequence[float],
    config: Optional[EllipticConfig] = None,
) -> MonotonicityReport:
    """Smallest C >= 0 making exp(C r) N(xbar, r) nondecreasing on the radius grid."""
    config = config or EllipticConfig()
    radii = sorted(float(r) for r in radii)
    values = [generalized_frequency(u, coeffs, xbar, r, config).N for r in radii]
    constant = 0.0
    for (r_lo, n_lo), (r_hi, n_hi) in zip(zip(radii, values), zip(radii[1:], values[1:])):
        if n_hi < n_lo * (1 - config.monotonicity_tol):
            constant = max(constant, math.log(n_lo / n_hi) / (r_hi - r_lo))
    report = MonotonicityReport(
        radii=radii, values=values, constant=constant, bound=config.monotonicity_bound * coeffs.lam
    )
    if not report.holds:
        logger.warning(f"Almost monotonicity constant {constant:.3e} above bound {report.bound:.3e}")
    return report


def tangent_field(
    u: GridField,
    coeffs: CoefficientField,
    xbar: Sequence[float],
    r: float,
    config: Optional[EllipticConfig] = None,
) -> GridField:
    """T(y) = (u(xbar + r sqrt(a(xbar)) y) - u(xbar)) / sqrt(avg over the unit circle of the numerator^2)."""
    config = config or EllipticConfig()
    metric = AnisotropicMetric(coeffs, xbar)
    xbar, S = metric.xbar, metric.Q
    corners = xbar + r * np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float) @ S.T
    if np.abs(corners).max() > u.half_width * (1 + 1e-12):
        raise PreconditionError(f"Blow-up square of scale {r} about {tuple(xbar)} leaves the grid")
    u0 = float(u.value(xbar)[0])
    theta = circle_nodes(config.boundary_nodes)
    ring = xbar + r * np.stack([np.cos(theta), np.sin(theta)], axis=1) @ S.T
    norm = math.sqrt(float(np.mean((u.value(ring) - u0) ** 2)))
    if norm == 0:
        raise UndefinedFrequencyError(f"Tangent field undefined: u constant about {tuple(xbar)}")
    target = GridField(values=np.zeros((config.grid_nodes, config.grid_nodes)), half_width=1.0)
    mapped = xbar + r * target.points() @ S.T
    target.values = ((u.value(mapped) - u0) / norm).reshape(config.grid_nodes, config.grid_nodes)
    return target


# ------------------------------------------------------- harmonic approximation


class HarmonicApproximation(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    w: GridField
    h: GridField
    degree: int
    residual: float
    residual_bound: float

    @property
    def holds(self) -> bool:
        return self.residual <= self.residual_bound


def _self_cell(h: float) -> float:
    """(1/2pi) times the integral of log|z| over a square cell of side h centred at 0."""
    q = h / 2
    return q * q * (4 * math.log(q) + 2 * math.log(2) - 6 + math.pi) / (2 * math.pi)


def harmonic_approximation(
    T: GridField,
    degree: Optional[int] = None,
    config: Optional[EllipticConfig] = None,
) -> HarmonicApproximation:
    """Split T = w + h with Delta w = Delta T near the origin, w(0) = 0 and h harmonic.

    w is the log-kernel potential of Delta T over the box |y| <= potential_box minus
    the degree <= N harmonic Taylor part of the kernel about 0.
    """
    config = config or EllipticConfig()
    m, step = T.nodes, T.spacing
    if m % 2 == 0:
        raise PreconditionError("Harmonic approximation needs an odd node count (origin on the grid)")
    if degree is None:
        degree = max(1, round(classical_frequency(T, (0.0, 0.0), T.half_width, config)))
    if degree > (m - 1) // 8:
        raise PreconditionError(f"Degree {degree} too large for a {m}-node grid")

    source = T.laplacian()
    pts = T.points()
    in_box = (np.abs(pts) <= config.potential_box + 1e-12).all(axis=1).reshape(m, m)
    source = np.where(in_box, source, 0.0)

    offsets = step * np.arange(-(m - 1), m)
    ox, oy = np.meshgrid(offsets, offsets, indexing="ij")
    dist = np.hypot(ox, oy)
    kernel = np.zeros_like(dist)
    nonzero = dist > 0
    kernel[nonzero] = np.log(dist[nonzero]) / (2 * np.pi)
    kernel[~nonzero] = _self_cell(step) / step ** 2
    potential = step ** 2 * fftconvolve(source, kernel, mode="same")

    z = pts[:, 0] + 1j * pts[:, 1]
    f = source.reshape(-1)
    active = (f != 0) & (np.abs(z) > 0)
    ys, fs = z[active], f[active]
    correction = np.full(len(z), np.sum(fs * np.log(np.abs(ys))), dtype=complex)
    for k in range(1, degree + 1):
        correction -= np.sum(fs * ys ** (-k)) * z ** k / k
    correction = step ** 2 * correction.real / (2 * np.pi)

    w_values = potential - correction.reshape(m, m)
    w_values -= w_values[m // 2, m // 2]
    w = GridField(values=w_values, half_width=T.half_width)
    h = GridField(values=T.values - w_values, half_width=T.half_width)

    near = (np.einsum("ij,ij->i", pts, pts) < (0.5 - 2 * step) ** 2).reshape(m, m)
    residual = float(np.abs(h.laplacian()[near]).max(initial=0.0))
    bound = config.residual_factor * (step * np.abs(source).max(initial=0.0) + step ** 2 * np.abs(T.values).max())
    report = HarmonicApproximation(w=w, h=h, degree=degree, residual=residual, residual_bound=bound)
    if not report.holds:
        logger.warning(f"Harmonic approximation residual {residual:.3e} above {bound:.3e}")
    return report


def decay_exponent(w: GridField, radii: Sequence[float]) -> ScalingFit:
    """Slope of log max |w| on the annuli [t/2, t] against log t."""
    pts = w.points()
    norms = np.sqrt(np.einsum("ij,ij->i", pts, pts))
    flat = np.abs(w.values.reshape(-1))
    peaks = [float(flat[(norms >= t / 2) & (norms <= t)].max(initial=0.0)) for t in radii]
    return fit_scaling_exponent(radii, peaks)


# ------------------------------------------------------------------- bridges


class GradientBoundReport(BaseModel):
    frequency: float
    grad_sq: float
    bound: float

    @property
    def slack(self) -> float:
        return self.grad_sq - self.bound

    @property
    def holds(self) -> bool:
        return self.slack >= 0


def gradient_lower_bound_check(
    T: GridField,
    x: Sequence[float] = (0.0, 0.0),
    r: float = 1.0,
    config: Optional[EllipticConfig] = None,
) -> GradientBoundReport:
    """Frequency at most 3/2 forces |grad T(x)|^2 >= (n/2)(1 + delta)."""
    config = config or EllipticConfig()
    value = classical_frequency(T, x, r, config)
    if value > 1.5:
        raise PreconditionError(f"Frequency {value:.4f} above 3/2 at {tuple(x)}")
    grad = T.gradient(np.asarray([x], dtype=float))[0]
    n = 2
    bound = n / 2 * (1 + config.gradient_slack)
    return GradientBoundReport(frequency=value, grad_sq=float(grad @ grad), bound=bound)


def expansion_from_grid(h: GridField, degree: int, config: Optional[EllipticConfig] = None) -> Expansion:
    """Project h onto Re(c_k z^k), k <= degree, from its Fourier modes on the circle of radius projection_radius."""
    config = config or EllipticConfig()
    rho = config.projection_radius
    theta = circle_nodes(config.boundary_nodes)
    ring = rho * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    modes = np.fft.rfft(h.value(ring)) / config.boundary_nodes
    if degree >= len(modes):
        raise PreconditionError(f"Degree {degree} exceeds the resolvable modes of {config.boundary_nodes} nodes")

    coefficients = [complex(modes[0].real, 0.0)]
    # Re(c_k z^k) on the circle has Fourier coefficient c_k rho^k / 2 at frequency k
    coefficients += [2 * modes[k] / rho ** k for k in range(1, degree + 1)]
    largest = max(abs(c) * rho ** k for k, c in enumerate(coefficients)) or 1.0
    components = {}
    for k, c in enumerate(coefficients):
        if abs(c) * rho ** k <= 1e-12 * largest:
            continue
        components[k] = harmonic_from_holomorphic({k: (Fraction(c.real), Fraction(c.imag))})
    expansion = Expansion.from_components(2, components)

    check = ExpansionField(expansion)
    inner = h.points()
    inner = inner[np.einsum("ij,ij->i", inner, inner) <= 0.25 ** 2]
    reference = h.value(inner)
    error = np.abs(check.value(inner) - reference).max()
    scale = max(np.abs(reference).max(), 1e-300)
    if error > config.projection_tol * scale:
        raise ProjectionError(f"Projection residual {error / scale:.3e} above {config.projection_tol}")
    logger.debug(f"Projected grid field onto degrees {sorted(components)}")
    return expansion


class GrowthRow(BaseModel):
    t: float
    measured: float
    bound: float


class GrowthReport(BaseModel):
    rows: List[GrowthRow]

    @property
    def holds(self) -> bool:
        return all(row.measured <= row.bound for row in self.rows)


def l2_growth_check(T: GridField, degree: float, delta: float, radii: Sequence[float]) -> GrowthReport:
    """int_{B_t} T^2 <= (omega_n / n)(1 + 2 delta) t^(n + 2N - 2 delta), omega_n the circle length."""
    squared = T.values ** 2
    rows = []
    for t in radii:
        bound = math.pi * (1 + 2 * delta) * t ** (2 + 2 * degree - 2 * delta)
        rows.append(GrowthRow(t=t, measured=T.disk_integral(squared, t), bound=bound))
    return GrowthReport(rows=rows)


class LaplacianDecayReport(BaseModel):
    radii: List[float]
    norms: List[float]
    fit: Optional[ScalingFit] = None


def laplacian_decay_check(T: GridField, radii: Sequence[float]) -> LaplacianDecayReport:
    """||Delta T||_{L2(B_t)} on the given radii and its log-log slope."""
    squared = T.laplacian() ** 2
    norms = [math.sqrt(T.disk_integral(squared, t)) for t in radii]
    fit = fit_scaling_exponent(radii, norms) if sum(v > 0 for v in norms) >= 2 else None
    return LaplacianDecayReport(radii=list(radii), norms=norms, fit=fit)


class TransferReport(BaseModel):
    outer: float
    inner: float
    delta: float
    scale: float

    @property
    def holds(self) -> bool:
        return self.inner <= self.outer - self.delta / 10


def pinching_transfer_check(
    u: GridField,
    coeffs: CoefficientField,
    r1: float,
    delta: float,
    xbar: Sequence[float] = (0.0, 0.0),
    config: Optional[EllipticConfig] = None,
) -> TransferReport:
    """A frequency delta-away from the integers at r1 drops by delta/10 at transfer_scale * r1."""
    config = config or EllipticConfig()
    outer = generalized_frequency(u, coeffs, xbar, r1, config).N
    if integer_distance(outer) < delta:
        raise PreconditionError(f"N={outer:.4f} within {delta} of an integer")
    inner = generalized_frequency(u, coeffs, xbar, config.transfer_scale * r1, config).N
    return TransferReport(outer=outer, inner=inner, delta=delta, scale=config.transfer_scale)
