"""Almgren frequency of finite harmonic expansions: heights, profiles, pinching and tangent maps.

An expansion stores its combined degree-k components ``Q_k = a_k P_k`` exactly,
so ``a_k^2 = ||Q_k||^2`` is rational and every frequency at a rational radius
is an exact rational.
"""

import math
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from scipy import integrate

from .config import FrequencyConfig
from .errors import IdentityViolation, NotHarmonicError, PreconditionError, UndefinedFrequencyError
from .hhp import check_hhp
from .poly import (
    ExactPoly,
    as_rational,
    from_json,
    graded_parts,
    is_harmonic,
    norm_sq,
    shift,
    sum_polys,
    to_json,
)
from .sampling import ball_points

Radius = Union[Fraction, float]

E = math.e


def exact_point(point: Sequence[Any]) -> Tuple[Fraction, ...]:
    """Rationals pass through; floats are converted by their exact binary value."""
    return tuple(Fraction(v) if isinstance(v, float) else as_rational(v) for v in point)


def _radius(r: Any) -> Radius:
    value = r if isinstance(r, float) else as_rational(r)
    if value <= 0:
        raise PreconditionError(f"Radius must be positive, got {r}")
    return value


class Expansion(BaseModel):
    """u(x0 + y) = scale * sum_k Q_k(y), each Q_k harmonic and homogeneous of degree k."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    n: int
    x0: Tuple[Fraction, ...]
    components: Dict[int, ExactPoly]
    scale: float = 1.0

    @classmethod
    def from_components(
        cls,
        n: int,
        components: Mapping[int, ExactPoly],
        x0: Optional[Sequence[Any]] = None,
        scale: float = 1.0,
    ) -> "Expansion":
        cleaned = {}
        for k, q in sorted(components.items()):
            if q.n != n:
                raise PreconditionError(f"Component of degree {k} lives in n={q.n}, expected {n}")
            if q.is_zero():
                continue
            check_hhp(q, k)
            cleaned[k] = q
        point = exact_point(x0) if x0 is not None else (Fraction(0),) * n
        if len(point) != n:
            raise PreconditionError(f"Base point of length {len(point)} for n={n}")
        return cls(n=n, x0=point, components=cleaned, scale=scale)

    @classmethod
    def from_polynomial(cls, u: ExactPoly, x0: Optional[Sequence[Any]] = None) -> "Expansion":
        """Split a harmonic polynomial (in local coordinates about x0) into graded components."""
        if not is_harmonic(u):
            raise NotHarmonicError("Expansion requires a harmonic polynomial")
        return cls.from_components(u.n, graded_parts(u), x0)

    def to_polynomial(self) -> ExactPoly:
        """sum_k Q_k in local coordinates (scale not applied)."""
        return sum_polys(self.components.values(), self.n)

    @property
    def degrees(self) -> List[int]:
        return sorted(self.components)

    @property
    def max_degree(self) -> int:
        return max(self.components, default=0)

    def is_constant(self) -> bool:
        return not any(k > 0 for k in self.components)

    def coefficient_sq(self, k: int) -> Fraction:
        """a_k^2 (without the float scale)."""
        q = self.components.get(k)
        return norm_sq(q) if q is not None else Fraction(0)

    def coefficient(self, k: int) -> float:
        """Signed a_k: sign of the leading graded-lex coefficient of Q_k."""
        q = self.components.get(k)
        if q is None:
            return 0.0
        sign = 1.0 if q.leading_coefficient() > 0 else -1.0
        return sign * self.scale * math.sqrt(norm_sq(q))

    def unit_component(self, k: int) -> Tuple[ExactPoly, float]:
        """(Q_k, 1/||Q_k||): the normalized P_k is Q_k times the float factor."""
        q = self.components.get(k)
        if q is None:
            raise PreconditionError(f"Expansion has no degree-{k} term")
        return q, 1.0 / math.sqrt(norm_sq(q))

    def value_at_base(self) -> Fraction:
        q = self.components.get(0)
        return q.coefficient((0,) * self.n) if q is not None else Fraction(0)

    def to_json(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "x0": [str(v) for v in self.x0],
            "scale": self.scale,
            "terms": [{"k": k, "a": "1", "P": to_json(q)} for k, q in sorted(self.components.items())],
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "Expansion":
        n = int(data["n"])
        components: Dict[int, ExactPoly] = {}
        for term in data.get("terms", []):
            k = int(term["k"])
            q = from_json(term["P"]) * Fraction(term.get("a", "1"))
            components[k] = components[k] + q if k in components else q
        x0 = [Fraction(v) for v in data.get("x0", [0] * n)]
        return cls.from_components(n, components, x0, scale=float(data.get("scale", 1.0)))


class PinchWindow(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    r2: Radius
    r1: Radius
    delta: Radius


class FrequencyProfile(BaseModel):
    """Sampled (r, N, h) along increasing radii at a fixed center."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    center: Tuple[Fraction, ...]
    radii: List[Radius]
    N: List[Radius]
    h: List[Radius]
    windows: List[PinchWindow] = Field(default_factory=list)

    def rows(self) -> List[Tuple[float, float, float]]:
        return [(float(r), float(n), float(h)) for r, n, h in zip(self.radii, self.N, self.h)]


class PinchOdeReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    r: Radius
    N: Radius
    eps: Radius
    lhs: Radius
    rhs: Radius
    corollary_drop: float
    corollary_holds: bool

    @property
    def holds(self) -> bool:
        return self.lhs >= self.rhs


class DominantDegreeReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    concentrated: bool
    degree: Optional[int]
    mass_fraction: float
    dropped: bool
    drop: float


class TangentUniquenessReport(BaseModel):
    """Slack of the four effective tangent-uniqueness bounds across the window."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    degree: int
    polynomial: ExactPoly
    pinch: float
    eps: float
    max_freq_gap: float
    min_mass_fraction: float
    max_l2_gap: float
    max_dirichlet_gap: float

    @property
    def freq_ok(self) -> bool:
        return self.max_freq_gap <= 3 * self.eps + 1e-12

    @property
    def mass_ok(self) -> bool:
        return self.min_mass_fraction >= 1 - 6 * self.eps - 1e-12

    @property
    def l2_ok(self) -> bool:
        return self.max_l2_gap <= 7 * self.eps + 1e-12

    @property
    def dirichlet_ok(self) -> bool:
        return self.max_dirichlet_gap <= 7 * self.degree * self.eps + 1e-12

    @property
    def holds(self) -> bool:
        return self.freq_ok and self.mass_ok and self.l2_ok and self.dirichlet_ok


class UniformBoundReport(BaseModel):
    max_shifted: float
    origin: float
    samples: int

    @property
    def ratio(self) -> float:
        return self.max_shifted / self.origin


class GrowthLawReport(BaseModel):
    lhs: float
    rhs: float

    @property
    def rel_error(self) -> float:
        return abs(self.lhs - self.rhs) / abs(self.rhs)


# ------------------------------------------------------------------ closed forms


def _weights(e: Expansion, r: Radius, include_constant: bool) -> List[Tuple[int, Radius]]:
    out = []
    for k in e.degrees:
        if k == 0 and not include_constant:
            continue
        a_sq = e.coefficient_sq(k)
        if isinstance(r, float):
            out.append((k, float(a_sq) * r ** (2 * k)))
        else:
            out.append((k, a_sq * r ** (2 * k)))
    return out


def height(e: Expansion, r: Any, normalized: bool = False) -> Radius:
    """h(r) = average of u^2 on the sphere of radius r; ``normalized`` drops u(x0)."""
    weights = _weights(e, _radius(r), include_constant=not normalized)
    total = sum((w for _, w in weights), Fraction(0))
    if isinstance(total, float):
        return total * e.scale ** 2
    return total if e.scale == 1.0 else float(total) * e.scale ** 2


def freq(e: Expansion, r: Any, normalized: bool = True) -> Radius:
    """N(x0, r) = sum k a_k^2 r^2k / sum a_k^2 r^2k.

    ``normalized`` excludes the constant term from the denominator (u - u(x0));
    otherwise the denominator is the full height.
    """
    weights = _weights(e, _radius(r), include_constant=not normalized)
    denominator = sum((w for _, w in weights), Fraction(0))
    if not denominator or all(k == 0 for k, _ in weights):
        raise UndefinedFrequencyError("Frequency undefined for a constant expansion")
    return sum((k * w for k, w in weights), Fraction(0)) / denominator


def freq_derivative(e: Expansion, r: Any) -> Radius:
    """r * dN/dr = 2 Var(k) under the weights a_k^2 r^2k (k >= 1)."""
    weights = _weights(e, _radius(r), include_constant=False)
    total = sum((w for _, w in weights), Fraction(0))
    if not total:
        raise UndefinedFrequencyError("Frequency undefined for a constant expansion")
    mean = sum((k * w for k, w in weights), Fraction(0)) / total
    second = sum((k * k * w for k, w in weights), Fraction(0)) / total
    return 2 * (second - mean * mean)


def recenter(e: Expansion, x: Sequence[Any]) -> Expansion:
    """Re-expand about x by exact Taylor shift, restoring one term per degree."""
    point = exact_point(x)
    if len(point) != e.n:
        raise PreconditionError(f"Point of length {len(point)} for n={e.n}")
    if point == e.x0:
        return e
    offset = [p - q for p, q in zip(point, e.x0)]
    shifted = shift(e.to_polynomial(), offset)
    return Expansion.from_components(e.n, graded_parts(shifted), point, scale=e.scale)


def freq_at(e: Expansion, x: Sequence[Any], r: Any, normalized: bool = True) -> Radius:
    shifted = recenter(e, x)
    if shifted.is_constant():
        raise UndefinedFrequencyError(f"Expansion is constant about {x}")
    return freq(shifted, r, normalized)


def tangent_map(e: Expansion, x: Sequence[Any], r: Any) -> Expansion:
    """T(y) = (u(x + r y) - u(x)) / sqrt(avg over the unit sphere of the numerator squared)."""
    radius = r if not isinstance(r, float) else Fraction(r)
    radius = _radius(radius)
    shifted = recenter(e, x)
    scaled = {k: q * radius ** k for k, q in shifted.components.items() if k > 0}
    denominator = sum((norm_sq(q) for q in scaled.values()), Fraction(0))
    if not denominator:
        raise UndefinedFrequencyError(f"Tangent map undefined: constant about {x}")
    return Expansion.from_components(e.n, scaled, scale=1.0 / math.sqrt(denominator))


def pinch(e: Expansion, x: Sequence[Any], r2: Any, r1: Any) -> Radius:
    """N(x, r1) - N(x, r2)."""
    r2, r1 = _radius(r2), _radius(r1)
    if r2 > r1:
        raise PreconditionError(f"Pinch needs r2 <= r1, got {r2} > {r1}")
    shifted = recenter(e, x)
    return freq(shifted, r1) - freq(shifted, r2)


def integer_distance(value: Radius) -> Radius:
    """dist(value, N); half-integers tie toward the lower integer."""
    floor = math.floor(value)
    frac = value - floor
    return min(frac, 1 - frac)


def pinch_ode_check(e: Expansion, r: Any) -> PinchOdeReport:
    """r N'(r) against 2 eps (1 - eps) with eps = dist(N(r), N), plus the e-fold drop corollary."""
    r = _radius(r)
    n_r = freq(e, r)
    eps = integer_distance(n_r)
    lhs = freq_derivative(e, r)
    rhs = 2 * eps * (1 - eps)
    drop = float(n_r) - float(freq(e, float(r) / E))
    # dist(N(r), N) = 2 eps' forces N(r) - N(r/e) >= eps'
    corollary_holds = drop >= float(eps) / 2 - 1e-12
    report = PinchOdeReport(
        r=r, N=n_r, eps=eps, lhs=lhs, rhs=rhs, corollary_drop=drop, corollary_holds=corollary_holds
    )
    if not report.holds:
        raise IdentityViolation(f"Pinch ODE violated at r={r}: {lhs} < {rhs}")
    return report


def dominant_degree(e: Expansion, r: Any, eps: float) -> DominantDegreeReport:
    """Either one degree carries (1 - 6 eps) of h(r), or N drops by eps over one e-fold."""
    r = _radius(r)
    weights = _weights(e, float(r), include_constant=False)
    total = sum(w for _, w in weights)
    if not total:
        raise UndefinedFrequencyError("Frequency undefined for a constant expansion")
    best_k, best_w = max(weights, key=lambda kw: (kw[1], -kw[0]))
    fraction = best_w / total
    concentrated = fraction >= 1 - 6 * eps
    drop = float(freq(e, float(r))) - float(freq(e, float(r) / E))
    dropped = drop >= eps
    if not (concentrated or dropped):
        raise IdentityViolation(f"Neither branch holds at r={r}, eps={eps}")
    return DominantDegreeReport(
        concentrated=concentrated,
        degree=best_k if concentrated else None,
        mass_fraction=fraction,
        dropped=dropped,
        drop=drop,
    )


def tangent_uniqueness_check(
    e: Expansion,
    r2: Any,
    r1: Any,
    eps: float,
    config: Optional[FrequencyConfig] = None,
) -> TangentUniquenessReport:
    """Check the four effective tangent-uniqueness bounds on a pinched window at x0."""
    config = config or FrequencyConfig()
    r2, r1 = _radius(r2), _radius(r1)
    if eps > config.eps0:
        raise PreconditionError(f"eps={eps} exceeds eps0={config.eps0}")
    if float(r2) > float(r1) / E ** 3 * (1 + 1e-12):
        raise PreconditionError(f"Window too short: r2={r2} > r1/e^3")
    measured = float(pinch(e, e.x0, r2, r1))
    if measured > eps * (1 + 1e-9) + 1e-15:
        raise PreconditionError(f"Pinch {measured:.3e} exceeds eps={eps:.3e}")

    inner_r, outer_r = float(r2) * E, float(r1) / E
    def weights_at(t: float) -> Dict[int, float]:
        return dict(_weights(e, t, include_constant=False))

    d = max(weights_at(outer_r).items(), key=lambda kw: (kw[1], -kw[0]))[0]
    q_d = e.components[d]

    wide = np.geomspace(float(r2), float(r1), config.window_points)
    max_freq_gap = max(abs(float(freq(e, float(t))) - d) for t in wide)

    min_mass, max_l2, max_dir = 1.0, 0.0, 0.0
    for t in np.geomspace(inner_r, outer_r, config.window_points):
        w = weights_at(float(t))
        total = sum(w.values())
        b_d = math.sqrt(w[d] / total)
        min_mass = min(min_mass, w[d] / total)
        max_l2 = max(max_l2, 2.0 - 2.0 * b_d)
        dirichlet = sum(k * v / total for k, v in w.items() if k != d) + d * (1 - b_d) ** 2
        max_dir = max(max_dir, dirichlet)

    report = TangentUniquenessReport(
        degree=d,
        polynomial=q_d,
        pinch=measured,
        eps=eps,
        max_freq_gap=max_freq_gap,
        min_mass_fraction=min_mass,
        max_l2_gap=max_l2,
        max_dirichlet_gap=max_dir,
    )
    logger.debug(
        f"Tangent uniqueness d={d}: |N-d|={max_freq_gap:.2e}, mass={min_mass:.6f}, "
        f"L2={max_l2:.2e}, Dirichlet={max_dir:.2e}"
    )
    return report


def uniform_bound_check(
    e: Expansion,
    r: Any,
    k: Any,
    config: Optional[FrequencyConfig] = None,
) -> UniformBoundReport:
    """max over sampled |x| <= r of N(x, k(1 - r)) against N(0, 1)."""
    config = config or FrequencyConfig()
    r, k = as_rational(r), as_rational(k)
    scale = k * (1 - r)
    pts = ball_points(e.n, config.uniform_samples, radius=float(r))
    values = []
    for p in pts:
        x = [
            x0 + Fraction(v).limit_denominator(config.sample_denominator) for x0, v in zip(e.x0, p)
        ]
        values.append(float(freq_at(e, x, scale)))
    origin = float(freq(e, Fraction(1)))
    return UniformBoundReport(max_shifted=max(values), origin=origin, samples=len(values))


def frequency_profile(
    e: Expansion,
    x: Optional[Sequence[Any]] = None,
    radii: Optional[Iterable[Any]] = None,
    config: Optional[FrequencyConfig] = None,
) -> FrequencyProfile:
    """N and h along increasing radii; monotonicity of N is asserted."""
    config = config or FrequencyConfig()
    shifted = recenter(e, x) if x is not None else e
    if radii is None:
        radii = [Fraction(i + 1, config.profile_points) for i in range(config.profile_points)]
    radii = sorted(_radius(r) for r in radii)
    values = [freq(shifted, r) for r in radii]
    heights = [height(shifted, r, normalized=True) for r in radii]
    windows = []
    for (r_lo, n_lo), (r_hi, n_hi) in zip(zip(radii, values), zip(radii[1:], values[1:])):
        if n_hi < n_lo and float(n_lo - n_hi) > 1e-12 * max(1.0, float(n_lo)):
            raise IdentityViolation(f"Frequency decreased between r={r_lo} and r={r_hi}")
        windows.append(PinchWindow(r2=r_lo, r1=r_hi, delta=n_hi - n_lo))
    return FrequencyProfile(center=shifted.x0, radii=radii, N=values, h=heights, windows=windows)


def growth_law_check(e: Expansion, t: float, r: float) -> GrowthLawReport:
    """h(t) exp(2 int_t^r N(s)/s ds) against h(r)."""
    if not 0 < t <= r:
        raise PreconditionError(f"Growth law needs 0 < t <= r, got t={t}, r={r}")
    integral, _ = integrate.quad(
        lambda s: float(freq(e, float(s))) / s, t, r, epsabs=0.0, epsrel=1e-13, limit=200
    )
    lhs = float(height(e, float(t), normalized=True)) * math.exp(2.0 * integral)
    rhs = float(height(e, float(r), normalized=True))
    return GrowthLawReport(lhs=lhs, rhs=rhs)
