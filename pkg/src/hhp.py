"""Homogeneous harmonic polynomials: bases, Kelvin-type map, invariant splits, cone splitting."""

import math
import threading
from fractions import Fraction
from math import comb
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import sympy
from loguru import logger
from pydantic import BaseModel, ConfigDict

from .config import HhpConfig
from .errors import IdentityViolation, NotHarmonicError, PreconditionError
from .poly import (
    ExactPoly,
    as_rational,
    embed,
    from_json,
    gradient,
    inner,
    is_harmonic,
    laplacian,
    monomials,
    norm_sq,
    partial,
    radius_squared,
    shift,
    to_json,
    variable,
)
from .sampling import FloatPoly, sphere_points


class HhpBasis(BaseModel):
    """Exactly orthogonal basis of the degree-d homogeneous harmonic polynomials.

    Elements are rational; ``norms_sq[i]`` is the exact squared norm of
    ``elements[i]``, so the unit element is ``elements[i] / sqrt(norms_sq[i])``.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    n: int
    d: int
    elements: Tuple[ExactPoly, ...]
    norms_sq: Tuple[Fraction, ...]

    @property
    def count(self) -> int:
        return len(self.elements)

    def unit_scale(self, index: int) -> float:
        return 1.0 / math.sqrt(self.norms_sq[index])

    def manifest(self) -> Dict[str, int]:
        return {"n": self.n, "d": self.d, "count": self.count}

    def to_json(self) -> Dict:
        return {
            "manifest": self.manifest(),
            "elements": [to_json(e) for e in self.elements],
            "norms_sq": [str(v) for v in self.norms_sq],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "HhpBasis":
        manifest = data["manifest"]
        elements = tuple(from_json(e) for e in data["elements"])
        if len(elements) != manifest["count"]:
            raise PreconditionError(
                f"Manifest count {manifest['count']} disagrees with {len(elements)} elements"
            )
        return cls(
            n=manifest["n"],
            d=manifest["d"],
            elements=elements,
            norms_sq=tuple(Fraction(v) for v in data["norms_sq"]),
        )


class InvariantSplit(BaseModel):
    """P = invariant_part + complement_part, orthogonal, with delta^2 the complement's mass."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    axes: Tuple[int, ...]
    invariant_part: ExactPoly
    complement_part: ExactPoly
    delta_sq: Fraction

    @property
    def delta(self) -> float:
        return math.sqrt(self.delta_sq)

    def recompose(self) -> ExactPoly:
        return self.invariant_part + self.complement_part


class AlmostInvariantReport(BaseModel):
    """Almost-invariant directions of a pair of close hhPs and the subspace containing them."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    n: int
    d: int
    eps: float
    tau: float
    threshold: float
    eigenvalues: np.ndarray
    subspace: np.ndarray
    directions: np.ndarray
    max_distance: float
    dimension_bound_applies: bool

    @property
    def dimension(self) -> int:
        return int(self.subspace.shape[0])


class SupNormReport(BaseModel):
    measured: float
    bound: float

    @property
    def ratio(self) -> float:
        return self.measured / self.bound if self.bound else 0.0


class PerpBoundReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    norm_sq: Fraction
    partial_norm_sq: Fraction
    pairing: Tuple[Fraction, Fraction]

    @property
    def holds(self) -> bool:
        return self.norm_sq <= self.partial_norm_sq


class KelvinRankReport(BaseModel):
    n: int
    d: int
    rank: int
    source_dimension: int
    target_dimension: int
    invariant_dimension: int


# --------------------------------------------------------------------- bases


def dimension(n: int, d: int) -> int:
    """dim of degree-d homogeneous harmonic polynomials in n variables."""
    if n < 1 or d < 0:
        raise PreconditionError(f"Invalid (n, d) = ({n}, {d})")
    if d == 0:
        return 1
    if d == 1:
        return n
    if n == 1:
        return 0
    return comb(n + d - 1, n - 1) - comb(n + d - 3, n - 1)


def _primitive(p: ExactPoly) -> ExactPoly:
    """Scale to coprime integer coefficients with a positive leading coefficient."""
    coeffs = [c for _, c in p.items()]
    lcm = 1
    for c in coeffs:
        lcm = lcm * c.denominator // math.gcd(lcm, c.denominator)
    ints = [int(c * lcm) for c in coeffs]
    g = 0
    for v in ints:
        g = math.gcd(g, v)
    scale = Fraction(lcm, g)
    if p.leading_coefficient() < 0:
        scale = -scale
    return p * scale


def _harmonic_kernel(n: int, d: int) -> List[ExactPoly]:
    cols = monomials(n, d)
    if d < 2:
        return [ExactPoly(n, {alpha: 1}) for alpha in cols]
    rows = {alpha: i for i, alpha in enumerate(monomials(n, d - 2))}
    matrix = sympy.zeros(len(rows), len(cols))
    for j, alpha in enumerate(cols):
        for beta, coeff in laplacian(ExactPoly(n, {alpha: 1})).terms.items():
            matrix[rows[beta], j] = sympy.Rational(coeff.numerator, coeff.denominator)
    kernel = []
    for vec in matrix.nullspace():
        terms = {
            alpha: Fraction(int(v.p), int(v.q)) for alpha, v in zip(cols, vec) if v != 0
        }
        kernel.append(ExactPoly(n, terms))
    return kernel


def _gram_schmidt(vectors: Sequence[ExactPoly]) -> Tuple[List[ExactPoly], List[Fraction]]:
    elements: List[ExactPoly] = []
    norms: List[Fraction] = []
    for v in vectors:
        w = v
        for e, ns in zip(elements, norms):
            w = w - e * (inner(v, e) / ns)
        if w.is_zero():
            continue
        w = _primitive(w)
        elements.append(w)
        norms.append(norm_sq(w))
    return elements, norms


_BASIS_CACHE: Dict[Tuple[int, int], HhpBasis] = {}
_BASIS_LOCK = threading.Lock()


def basis(n: int, d: int) -> HhpBasis:
    """Orthogonal basis from the kernel of the Laplacian, Gram-Schmidt in graded-lex order."""
    if n < 2 or d < 0:
        raise PreconditionError(f"basis needs n >= 2 and d >= 0, got ({n}, {d})")
    key = (n, d)
    with _BASIS_LOCK:
        cached = _BASIS_CACHE.get(key)
    if cached is not None:
        return cached

    elements, norms = _gram_schmidt(_harmonic_kernel(n, d))
    expected = dimension(n, d)
    if len(elements) != expected:
        raise IdentityViolation(f"basis({n}, {d}) has {len(elements)} elements, expected {expected}")
    result = HhpBasis(n=n, d=d, elements=tuple(elements), norms_sq=tuple(norms))
    logger.debug(f"Built hhP basis n={n} d={d} with {result.count} elements")

    with _BASIS_LOCK:
        return _BASIS_CACHE.setdefault(key, result)


def harmonic_from_holomorphic(coeffs: Mapping[int, Tuple[object, object]]) -> ExactPoly:
    """Re(sum_k c_k z^k) in the monomials of (x, y), with c_k = (re, im) rational pairs."""
    terms: Dict[Tuple[int, int], Fraction] = {}
    for k, (re, im) in coeffs.items():
        re, im = as_rational(re), as_rational(im)
        for j in range(k + 1):
            # i^j: real for even j, imaginary for odd j
            weight = comb(k, j) * (-1) ** (j // 2)
            value = re * weight if j % 2 == 0 else -im * weight
            if value:
                key = (k - j, j)
                terms[key] = terms.get(key, Fraction(0)) + value
    return ExactPoly(2, terms)


def basis_2d(d: int) -> HhpBasis:
    """{2 Im z^d, 2 Re z^d}; each element has squared norm 2."""
    if d < 1:
        raise PreconditionError(f"basis_2d needs d >= 1, got {d}")
    sin_part = harmonic_from_holomorphic({d: (0, -2)})
    cos_part = harmonic_from_holomorphic({d: (2, 0)})
    return HhpBasis(n=2, d=d, elements=(sin_part, cos_part), norms_sq=(Fraction(2), Fraction(2)))


def check_hhp(p: ExactPoly, degree: Optional[int] = None) -> int:
    """Return the degree of a homogeneous harmonic polynomial or raise ``NotHarmonicError``."""
    if p.is_zero():
        if degree is None:
            raise NotHarmonicError("Zero polynomial has no degree; pass it explicitly")
        return degree
    if not p.is_homogeneous(degree):
        raise NotHarmonicError(f"Polynomial is not homogeneous of degree {degree or p.degree}")
    if not is_harmonic(p):
        raise NotHarmonicError("Polynomial is not harmonic")
    return p.degree


# ------------------------------------------------------------------ identities


def gradient_inner(p: ExactPoly, q: ExactPoly) -> Fraction:
    """sum_i <d_i p, d_i q>, asserted equal to d(2d+n-2)<p, q> for hhPs of equal degree."""
    d = check_hhp(p)
    check_hhp(q, d)
    value = sum((inner(a, b) for a, b in zip(gradient(p), gradient(q))), Fraction(0))
    expected = d * (2 * d + p.n - 2) * inner(p, q)
    if value != expected:
        raise IdentityViolation(f"Gradient pairing {value} != d(2d+n-2)<p,q> = {expected}")
    return value


def gradient_norm_sq(p: ExactPoly) -> Fraction:
    return gradient_inner(p, p)


def sup_norm_bound_check(
    p: ExactPoly,
    config: Optional[HhpConfig] = None,
    samples: Optional[int] = None,
) -> SupNormReport:
    """max |P| on a dense sphere sample against sqrt(dim) * ||P||."""
    config = config or HhpConfig()
    d = check_hhp(p)
    pts = sphere_points(p.n, samples or config.sup_norm_samples, seed=config.seed)
    measured = float(np.max(np.abs(FloatPoly.from_exact(p)(pts))))
    bound = math.sqrt(dimension(p.n, d) * norm_sq(p))
    if measured > bound * (1 + 1e-12):
        raise IdentityViolation(f"Sup norm {measured} exceeds bound {bound}")
    return SupNormReport(measured=measured, bound=bound)


def kelvin(p: ExactPoly, axis: int = 0, degree: Optional[int] = None) -> ExactPoly:
    """K[p] = x_a p - |x|^2 d_a p / (2d+n-4) for p of degree d-1."""
    m = check_hhp(p, degree)
    d = m + 1
    denominator = 2 * d + p.n - 4
    out = variable(p.n, axis) * p
    if denominator:
        out = out - radius_squared(p.n) * partial(p, axis) / denominator
    return out


def invariant_basis(n: int, d: int, axes: Sequence[int]) -> HhpBasis:
    """Orthogonal basis of the hhPs of degree d that do not depend on the given axes."""
    axes = sorted(set(axes))
    if any(not 0 <= a < n for a in axes):
        raise PreconditionError(f"Axes {axes} out of range for n={n}")
    free = [i for i in range(n) if i not in axes]
    m = len(free)
    if m >= 2:
        lower = [embed(e, n, free) for e in basis(m, d).elements]
    elif m == 1 and d <= 1:
        lower = [embed(ExactPoly(1, {(d,): 1}), n, free)]
    elif m == 0 and d == 0:
        lower = [ExactPoly(n, {(0,) * n: 1})]
    else:
        lower = []
    return HhpBasis(
        n=n, d=d, elements=tuple(lower), norms_sq=tuple(norm_sq(e) for e in lower)
    )


def invariant_decompose(p: ExactPoly, axes: Sequence[int]) -> InvariantSplit:
    """Orthogonal projection onto the axes-invariant hhPs plus its complement."""
    d = check_hhp(p)
    axes = tuple(sorted(set(axes)))
    if not axes or len(axes) >= p.n:
        raise PreconditionError(f"Need between 1 and n-1 axes, got {axes}")
    inv = invariant_basis(p.n, d, axes)
    q = ExactPoly(p.n)
    for e, ns in zip(inv.elements, inv.norms_sq):
        q = q + e * (inner(p, e) / ns)
    r = p - q
    total = norm_sq(p)
    if not total:
        raise PreconditionError("Cannot decompose the zero polynomial")
    return InvariantSplit(axes=axes, invariant_part=q, complement_part=r, delta_sq=norm_sq(r) / total)


def euler_pairing_identity(p: ExactPoly, axis: int = 0) -> Tuple[Fraction, Fraction]:
    """(<p, x_a d_a p>(2d+n-2), ||d_a p||^2); equal for every hhP."""
    d = check_hhp(p)
    dp = partial(p, axis)
    lhs = inner(p, variable(p.n, axis) * dp) * (2 * d + p.n - 2)
    rhs = norm_sq(dp)
    return lhs, rhs


def perp_derivative_bound_check(h: ExactPoly, axis: int = 0) -> PerpBoundReport:
    """||h||^2 <= ||d_a h||^2 for h orthogonal to the x_a-invariant hhPs."""
    d = check_hhp(h)
    inv = invariant_basis(h.n, d, [axis])
    if any(inner(h, e) for e in inv.elements):
        raise PreconditionError("Input is not orthogonal to the axis-invariant subspace")
    pairing = euler_pairing_identity(h, axis)
    if pairing[0] != pairing[1]:
        raise IdentityViolation(f"Euler pairing failed: {pairing[0]} != {pairing[1]}")
    report = PerpBoundReport(
        norm_sq=norm_sq(h), partial_norm_sq=norm_sq(partial(h, axis)), pairing=pairing
    )
    if not report.holds:
        raise IdentityViolation(
            f"||h||^2 = {report.norm_sq} exceeds ||d h||^2 = {report.partial_norm_sq}"
        )
    return report


def restriction_norm_ratio(n: int, d: int) -> Fraction:
    """||P||^2 on the (n-2)-sphere over ||P||^2 on the (n-1)-sphere, for x1-invariant P."""
    if n < 3:
        raise PreconditionError(f"restriction_norm_ratio needs n >= 3, got {n}")
    ratio = Fraction(1)
    for k in range(1, d + 1):
        ratio *= Fraction(n + 2 * k - 2, n + 2 * k - 3)
    return ratio


# ------------------------------------------------------------- cone splitting


def partials_gram(p: ExactPoly) -> List[List[Fraction]]:
    """M_ij = <d_i P, d_j P>; v^T M v = ||d_v P||^2."""
    grads = gradient(p)
    return [[inner(a, b) for b in grads] for a in grads]


def invariant_subspace(p: ExactPoly) -> List[Tuple[Fraction, ...]]:
    """Exact basis of {v : d_v P = 0}, the kernel of the partials Gram matrix."""
    check_hhp(p)
    gram = sympy.Matrix(
        [[sympy.Rational(c.numerator, c.denominator) for c in row] for row in partials_gram(p)]
    )
    return [tuple(Fraction(int(v.p), int(v.q)) for v in vec) for vec in gram.nullspace()]


def homogeneous_about(p: ExactPoly, xbar: Sequence[object]) -> bool:
    """Whether y -> P(xbar + y) is homogeneous of the same degree."""
    d = check_hhp(p)
    return shift(p, xbar).is_homogeneous(d)


def kelvin_rank_check(n: int, d: int, axis: int = 0) -> KelvinRankReport:
    """Rank of K over basis(n, d-1) and dim P_d = dim P_d(invariant) + dim P_{d-1}."""
    if d < 1:
        raise PreconditionError(f"kelvin_rank_check needs d >= 1, got {d}")
    source = basis(n, d - 1)
    images = [kelvin(e, axis) for e in source.elements]
    inv = invariant_basis(n, d, [axis])
    for image in images:
        check_hhp(image, d)
        for e in inv.elements:
            if inner(image, e):
                raise IdentityViolation("Kelvin image is not orthogonal to the invariant subspace")
    cols = monomials(n, d)
    matrix = sympy.Matrix(
        [
            [sympy.Rational(c.numerator, c.denominator) for c in (img.coefficient(a) for a in cols)]
            for img in images
        ]
    )
    rank = int(matrix.rank()) if images else 0
    report = KelvinRankReport(
        n=n,
        d=d,
        rank=rank,
        source_dimension=source.count,
        target_dimension=dimension(n, d),
        invariant_dimension=inv.count,
    )
    if rank != source.count or report.target_dimension != inv.count + source.count:
        raise IdentityViolation(f"Kelvin rank check failed: {report}")
    return report


def almost_invariant_subspace(
    p: ExactPoly,
    p_prime: ExactPoly,
    eps: float,
    tau: Optional[float] = None,
    config: Optional[HhpConfig] = None,
) -> AlmostInvariantReport:
    """Directions v with ||d_v P|| <= sqrt(eps)||grad P|| and a subspace V containing them up to tau.

    V is spanned by the eigenvectors of the normalized partials Gram matrix with
    eigenvalue at most 4 eps d(2d+n-2) / tau^2.
    """
    config = config or HhpConfig()
    tau = config.tau if tau is None else tau
    d = check_hhp(p)
    check_hhp(p_prime, d)
    if d < 2:
        raise PreconditionError("Almost-invariant subspace needs degree >= 2")
    np_, nq = norm_sq(p), norm_sq(p_prime)
    if not np_ or not nq:
        raise PreconditionError("Degenerate (zero) polynomial")
    n = p.n
    distance_sq = 2.0 - 2.0 * float(inner(p, p_prime)) / math.sqrt(np_ * nq)
    if distance_sq > eps * (1 + 1e-9) + 1e-15:
        raise PreconditionError(f"||P - P'||^2 = {distance_sq:.3e} exceeds eps = {eps:.3e}")

    total = d * (2 * d + n - 2)
    gram = np.array([[float(c / np_) for c in row] for row in partials_gram(p)])
    gram_prime = np.array([[float(c / nq) for c in row] for row in partials_gram(p_prime)])
    eigenvalues, eigenvectors = np.linalg.eigh(gram)
    threshold = 4.0 * eps * total / tau ** 2
    subspace = eigenvectors[:, eigenvalues <= threshold].T

    bound_applies = 4.0 * eps / tau ** 2 < 1.0 / (n * n - 1)
    if bound_applies and subspace.shape[0] > n - 2:
        raise IdentityViolation(
            f"Degree-{d} polynomial has {subspace.shape[0]} almost-invariant directions in n={n}"
        )

    pts = sphere_points(n, config.sphere_samples_per_dim * n, seed=config.seed)
    small = np.einsum("ij,jk,ik->i", pts, gram, pts) <= eps * total
    small_prime = np.einsum("ij,jk,ik->i", pts, gram_prime, pts) <= eps * total
    directions = pts[small | small_prime]
    if len(directions):
        residual = directions - (directions @ subspace.T) @ subspace
        max_distance = float(np.max(np.linalg.norm(residual, axis=1)))
    else:
        max_distance = 0.0
    if max_distance > tau + 1e-12:
        raise IdentityViolation(f"Almost-invariant direction at distance {max_distance} > tau={tau}")

    logger.debug(
        f"Almost-invariant subspace: dim={subspace.shape[0]}, {len(directions)} directions, "
        f"max distance {max_distance:.2e}"
    )
    return AlmostInvariantReport(
        n=n,
        d=d,
        eps=eps,
        tau=tau,
        threshold=threshold,
        eigenvalues=eigenvalues,
        subspace=subspace,
        directions=directions,
        max_distance=max_distance,
        dimension_bound_applies=bound_applies,
    )
