"""Float views of a function: values, gradients and frequencies at arbitrary points."""

from abc import ABC, abstractmethod
from fractions import Fraction
from math import comb, prod
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from .errors import UndefinedFrequencyError
from .frequency import Expansion
from .poly import monomials, sphere_average_monomial
from .sampling import FloatPoly, CHUNK


class FieldEvaluator(ABC):
    """u and grad u at points of R^n, plus the sphere quantities behind N(x, s)."""

    n: int
    center: np.ndarray
    domain_radius: float

    @abstractmethod
    def value(self, points: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def gradient(self, points: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def sphere_mean_sq(self, points: np.ndarray, radius: float, subtract_center: bool = True) -> np.ndarray:
        """Average of (u - u(x))^2 (or u^2) over the sphere of the given radius about each x."""

    @abstractmethod
    def frequency(self, points: np.ndarray, radius: float, normalized: bool = True) -> np.ndarray:
        ...


def frequency_from_weights(weights: np.ndarray, radius, normalized: bool = True) -> np.ndarray:
    """N(x, s) from per-degree weights W_k(x), so that h(s) = sum_k W_k s^2k.

    ``radius`` is a scalar or an array broadcast against the rows of ``weights``.
    """
    degrees = np.arange(weights.shape[1], dtype=float)
    s = np.asarray(radius, dtype=float).reshape(-1, 1)
    # factor s^2 out of every k >= 1 term
    powers = s ** (2.0 * np.maximum(degrees - 1.0, 0.0))
    terms = weights * powers
    if normalized:
        terms = terms[:, 1:]
        ks = degrees[1:]
    else:
        terms = terms.copy()
        terms[:, 0] = weights[:, 0] / (s[:, 0] ** 2)
        ks = degrees
    denominator = terms.sum(axis=1)
    if np.any(denominator <= 0):
        raise UndefinedFrequencyError("Frequency undefined: function constant about a sample point")
    return (terms * ks).sum(axis=1) / denominator


class ExpansionField(FieldEvaluator):
    """Float backing for an ``Expansion`` with a vectorized Taylor re-expansion engine.

    For a point x the degree-k Taylor part of u about x has coefficients
    c_alpha(x) = d^alpha u(x) / alpha!, and its sphere mass is c^T G_k c with
    G_k the exact monomial Gram block. These weights give h, N and the
    boundary averages in closed form at every point.
    """

    def __init__(self, expansion: Expansion, domain_radius: float = 1.0):
        self.expansion = expansion
        self.n = expansion.n
        self.center = np.array([float(v) for v in expansion.x0])
        self.domain_radius = domain_radius
        self.degree = expansion.max_degree
        poly = expansion.to_polynomial()
        self._poly = FloatPoly.from_exact(poly, scale=expansion.scale)
        self._grad = [self._poly.derivative(i) for i in range(self.n)]

        self._targets: List[Tuple[int, ...]] = [
            alpha for k in range(self.degree + 1) for alpha in monomials(self.n, k)
        ]
        self._sources: List[Tuple[int, ...]] = list(self._targets)
        source_index = {beta: i for i, beta in enumerate(self._sources)}
        rows, cols, vals = [], [], []
        coeffs = {alpha: float(c) * expansion.scale for alpha, c in poly.terms.items()}
        for j, alpha in enumerate(self._targets):
            for gamma, c in coeffs.items():
                if all(g >= a for g, a in zip(gamma, alpha)):
                    beta = tuple(g - a for g, a in zip(gamma, alpha))
                    rows.append(source_index[beta])
                    cols.append(j)
                    vals.append(c * prod(comb(g, a) for g, a in zip(gamma, alpha)))
        self._pair = sparse.csr_matrix(
            (vals, (rows, cols)), shape=(len(self._sources), len(self._targets))
        )
        self._exponents = np.array(self._sources, dtype=np.int64).reshape(-1, self.n)

        self._blocks: List[Tuple[slice, np.ndarray]] = []
        start = 0
        for k in range(self.degree + 1):
            mons = monomials(self.n, k)
            gram = np.array(
                [[float(sphere_average_monomial(tuple(a + b for a, b in zip(x, y)))) for y in mons] for x in mons]
            )
            self._blocks.append((slice(start, start + len(mons)), gram))
            start += len(mons)

    def _local(self, points: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(points, dtype=float)) - self.center

    def value(self, points: np.ndarray) -> np.ndarray:
        return self._poly(self._local(points))

    def gradient(self, points: np.ndarray) -> np.ndarray:
        local = self._local(points)
        return np.stack([g(local) for g in self._grad], axis=1)

    def taylor_weights(self, points: np.ndarray) -> np.ndarray:
        """W[m, k]: sphere mass of the degree-k Taylor part of u about points[m]."""
        local = self._local(points)
        out = np.zeros((len(local), self.degree + 1))
        for start in range(0, len(local), CHUNK):
            block = local[start:start + CHUNK]
            mono = np.prod(block[:, None, :] ** self._exponents[None, :, :], axis=2)
            coeffs = np.asarray(self._pair.T.dot(mono.T).T)
            for k, (sl, gram) in enumerate(self._blocks):
                c = coeffs[:, sl]
                out[start:start + CHUNK, k] = np.einsum("ij,jk,ik->i", c, gram, c)
        return out

    def sphere_mean_sq(self, points: np.ndarray, radius: float, subtract_center: bool = True) -> np.ndarray:
        weights = self.taylor_weights(points)
        powers = radius ** (2.0 * np.arange(self.degree + 1))
        if subtract_center:
            powers[0] = 0.0
        return weights @ powers

    def frequency(self, points: np.ndarray, radius, normalized: bool = True) -> np.ndarray:
        return frequency_from_weights(self.taylor_weights(points), radius, normalized)


def lattice_points(spacing: float, half_width: float, n: int) -> Tuple[np.ndarray, Tuple[int, ...]]:
    """Centers k * spacing with |k * spacing| <= half_width per axis; origin is always a center."""
    count = int(np.floor(half_width / spacing + 1e-9))
    axis = spacing * np.arange(-count, count + 1)
    grids = np.meshgrid(*([axis] * n), indexing="ij")
    points = np.stack([g.reshape(-1) for g in grids], axis=1)
    return points, (2 * count + 1,) * n


def as_float_point(point: Optional[Sequence], n: int) -> np.ndarray:
    if point is None:
        return np.zeros(n)
    return np.array([float(Fraction(v)) if isinstance(v, str) else float(v) for v in point])
