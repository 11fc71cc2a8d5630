"""Point sets, quadrature rules and float evaluation of exact polynomials."""

from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.stats import qmc

from .poly import ExactPoly

CHUNK = 4096


class FloatPoly:
    """Vectorized float evaluator compiled from an ``ExactPoly``."""

    def __init__(self, n: int, exponents: np.ndarray, coefficients: np.ndarray):
        self.n = n
        self.exponents = np.asarray(exponents, dtype=np.int64).reshape(-1, n)
        self.coefficients = np.asarray(coefficients, dtype=float).reshape(-1)

    @classmethod
    def from_exact(cls, p: ExactPoly, scale: float = 1.0) -> "FloatPoly":
        items = p.items()
        exponents = np.array([alpha for alpha, _ in items], dtype=np.int64).reshape(-1, p.n)
        coefficients = np.array([float(c) * scale for _, c in items], dtype=float)
        return cls(p.n, exponents, coefficients)

    def derivative(self, axis: int) -> "FloatPoly":
        powers = self.exponents[:, axis]
        keep = powers > 0
        exponents = self.exponents[keep].copy()
        exponents[:, axis] -= 1
        return FloatPoly(self.n, exponents, self.coefficients[keep] * powers[keep])

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(len(pts))
        if not len(self.coefficients):
            return out
        for start in range(0, len(pts), CHUNK):
            block = pts[start:start + CHUNK]
            monomials = np.prod(block[:, None, :] ** self.exponents[None, :, :], axis=2)
            out[start:start + CHUNK] = monomials @ self.coefficients
        return out

    def gradient(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.stack([self.derivative(i)(pts) for i in range(self.n)], axis=1)


def sphere_points(n: int, count: int, seed: int = 0) -> np.ndarray:
    """Seeded Monte-Carlo sample of the unit sphere in R^n."""
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((count, n))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def ball_points(
    n: int,
    count: int,
    center: Optional[Sequence[float]] = None,
    radius: float = 1.0,
) -> np.ndarray:
    """Quasi-uniform (Halton) points in a closed ball; the center is always included."""
    center = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    sampler = qmc.Halton(d=n, scramble=False)
    accepted = [np.zeros((1, n))]
    total = 1
    while total < count:
        cube = 2.0 * sampler.random(max(2 * (count - total), 16)) - 1.0
        inside = cube[np.einsum("ij,ij->i", cube, cube) <= 1.0]
        accepted.append(inside)
        total += len(inside)
    unit = np.concatenate(accepted)[:count]
    return center + radius * unit


@lru_cache(maxsize=64)
def gauss_legendre(m: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [-1, 1]."""
    return np.polynomial.legendre.leggauss(m)


def circle_nodes(m: int) -> np.ndarray:
    """Equispaced angles for the periodic trapezoid rule."""
    return 2.0 * np.pi * np.arange(m) / m
