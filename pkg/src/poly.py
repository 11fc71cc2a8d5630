"""Exact multivariate polynomial arithmetic over the rationals.

Polynomials are immutable maps from monomials (exponent tuples) to
``fractions.Fraction`` coefficients. Integration over the unit sphere is done in
closed form, so inner products of polynomials are exact rationals.
"""

from fractions import Fraction
from functools import lru_cache
from itertools import product
from math import comb, prod
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Sequence, Tuple, Union

from .errors import DimensionMismatchError, PreconditionError

Monomial = Tuple[int, ...]
Number = Union[int, Fraction]


def as_rational(value: Any) -> Fraction:
    """Coerce an exact number to ``Fraction``.

    Floats are refused: the exact/approximate boundary is kept explicit and
    approximate evaluation lives in ``src.fields``.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        return Fraction(int(value))
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value)
    raise PreconditionError(f"Expected an exact rational, got {type(value).__name__}: {value!r}")


def graded_lex_key(alpha: Monomial) -> Tuple[int, Tuple[int, ...]]:
    """Sort key: total degree ascending, then x1-heavy monomials first."""
    return (sum(alpha), tuple(-a for a in alpha))


class ExactPoly:
    """Polynomial in ``n`` variables with exact rational coefficients."""

    __slots__ = ("n", "_terms", "_hash")

    def __init__(self, n: int, terms: Mapping[Sequence[int], Any] = None):
        if n < 1:
            raise PreconditionError(f"Ambient dimension must be positive, got {n}")
        cleaned: Dict[Monomial, Fraction] = {}
        for alpha, coeff in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != n:
                raise DimensionMismatchError(f"Monomial {alpha} has length {len(alpha)}, expected {n}")
            if any(a < 0 for a in alpha):
                raise PreconditionError(f"Negative exponent in {alpha}")
            value = cleaned.get(alpha, Fraction(0)) + as_rational(coeff)
            if value:
                cleaned[alpha] = value
            else:
                cleaned.pop(alpha, None)
        self.n = n
        self._terms = cleaned
        self._hash = None

    @classmethod
    def _raw(cls, n: int, terms: Dict[Monomial, Fraction]) -> "ExactPoly":
        # Trusted constructor: keys validated, zero coefficients already dropped.
        obj = cls.__new__(cls)
        obj.n = n
        obj._terms = terms
        obj._hash = None
        return obj

    # ------------------------------------------------------------------ views

    @property
    def terms(self) -> Mapping[Monomial, Fraction]:
        return dict(self._terms)

    def items(self) -> List[Tuple[Monomial, Fraction]]:
        """Terms in canonical graded-lex order."""
        return sorted(self._terms.items(), key=lambda item: graded_lex_key(item[0]))

    def __iter__(self) -> Iterator[Tuple[Monomial, Fraction]]:
        return iter(self.items())

    def __len__(self) -> int:
        return len(self._terms)

    def coefficient(self, alpha: Sequence[int]) -> Fraction:
        return self._terms.get(tuple(alpha), Fraction(0))

    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        if not self._terms:
            return -1
        return max(sum(alpha) for alpha in self._terms)

    def is_homogeneous(self, degree: int = None) -> bool:
        degrees = {sum(alpha) for alpha in self._terms}
        if not degrees:
            return True
        if len(degrees) != 1:
            return False
        return degree is None or degrees == {degree}

    def leading_coefficient(self) -> Fraction:
        """Coefficient of the graded-lex leading monomial (highest degree, x1-heaviest)."""
        if not self._terms:
            return Fraction(0)
        top = self.degree
        candidates = [alpha for alpha in self._terms if sum(alpha) == top]
        return self._terms[min(candidates, key=graded_lex_key)]

    # ------------------------------------------------------------- arithmetic

    def _check(self, other: "ExactPoly") -> None:
        if self.n != other.n:
            raise DimensionMismatchError(f"Dimension mismatch: {self.n} vs {other.n}")

    def __add__(self, other: Any) -> "ExactPoly":
        if not isinstance(other, ExactPoly):
            other = constant(self.n, other)
        self._check(other)
        out = dict(self._terms)
        for alpha, coeff in other._terms.items():
            value = out.get(alpha, Fraction(0)) + coeff
            if value:
                out[alpha] = value
            else:
                out.pop(alpha, None)
        return ExactPoly._raw(self.n, out)

    __radd__ = __add__

    def __neg__(self) -> "ExactPoly":
        return ExactPoly._raw(self.n, {alpha: -c for alpha, c in self._terms.items()})

    def __sub__(self, other: Any) -> "ExactPoly":
        if not isinstance(other, ExactPoly):
            other = constant(self.n, other)
        return self + (-other)

    def __rsub__(self, other: Any) -> "ExactPoly":
        return (-self) + other

    def __mul__(self, other: Any) -> "ExactPoly":
        if isinstance(other, ExactPoly):
            self._check(other)
            out: Dict[Monomial, Fraction] = {}
            for a, c in self._terms.items():
                for b, d in other._terms.items():
                    key = tuple(x + y for x, y in zip(a, b))
                    out[key] = out.get(key, Fraction(0)) + c * d
            return ExactPoly._raw(self.n, {k: v for k, v in out.items() if v})
        scalar = as_rational(other)
        if not scalar:
            return ExactPoly._raw(self.n, {})
        return ExactPoly._raw(self.n, {alpha: c * scalar for alpha, c in self._terms.items()})

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> "ExactPoly":
        scalar = as_rational(other)
        if not scalar:
            raise ZeroDivisionError("Polynomial division by zero")
        return self * (1 / scalar)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, ExactPoly):
            return self.n == other.n and self._terms == other._terms
        if isinstance(other, (int, Fraction)):
            return self == constant(self.n, other)
        return NotImplemented

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.n, frozenset(self._terms.items())))
        return self._hash

    def __repr__(self) -> str:
        if not self._terms:
            return "0"
        parts = []
        for alpha, coeff in reversed(self.items()):
            factors = [
                f"x{i + 1}" if a == 1 else f"x{i + 1}^{a}" for i, a in enumerate(alpha) if a
            ]
            body = "*".join(factors)
            if not body:
                parts.append(str(coeff))
            elif coeff == 1:
                parts.append(body)
            elif coeff == -1:
                parts.append(f"-{body}")
            else:
                parts.append(f"{coeff}*{body}")
        return " + ".join(parts).replace("+ -", "- ")


# ------------------------------------------------------------------ builders


def constant(n: int, value: Any) -> ExactPoly:
    return ExactPoly(n, {(0,) * n: value})


def variable(n: int, index: int) -> ExactPoly:
    """The coordinate function x_{index+1} (0-based index)."""
    if not 0 <= index < n:
        raise PreconditionError(f"Axis {index} out of range for n={n}")
    alpha = [0] * n
    alpha[index] = 1
    return ExactPoly._raw(n, {tuple(alpha): Fraction(1)})


def radius_squared(n: int) -> ExactPoly:
    """|x|^2 in n variables."""
    terms = {}
    for i in range(n):
        alpha = [0] * n
        alpha[i] = 2
        terms[tuple(alpha)] = Fraction(1)
    return ExactPoly._raw(n, terms)


@lru_cache(maxsize=None)
def monomials(n: int, d: int) -> Tuple[Monomial, ...]:
    """All exponent tuples of total degree d in n variables, graded-lex (x1^d first)."""
    if n == 1:
        return ((d,),)
    out = []
    for first in range(d, -1, -1):
        for rest in monomials(n - 1, d - first):
            out.append((first,) + rest)
    return tuple(out)


def embed(p: ExactPoly, n: int, positions: Sequence[int]) -> ExactPoly:
    """Lift ``p`` into n variables; variable i of ``p`` becomes x_{positions[i]}."""
    if len(positions) != p.n or len(set(positions)) != p.n:
        raise PreconditionError(f"Need {p.n} distinct target positions, got {positions}")
    if any(not 0 <= pos < n for pos in positions):
        raise PreconditionError(f"Target positions {positions} out of range for n={n}")
    terms = {}
    for alpha, coeff in p._terms.items():
        lifted = [0] * n
        for a, pos in zip(alpha, positions):
            lifted[pos] = a
        terms[tuple(lifted)] = coeff
    return ExactPoly._raw(n, terms)


def homogeneous_part(p: ExactPoly, k: int) -> ExactPoly:
    return ExactPoly._raw(p.n, {a: c for a, c in p._terms.items() if sum(a) == k})


def graded_parts(p: ExactPoly) -> Dict[int, ExactPoly]:
    """Split into homogeneous components keyed by degree (zero parts omitted)."""
    buckets: Dict[int, Dict[Monomial, Fraction]] = {}
    for alpha, coeff in p._terms.items():
        buckets.setdefault(sum(alpha), {})[alpha] = coeff
    return {k: ExactPoly._raw(p.n, terms) for k, terms in sorted(buckets.items())}


# ------------------------------------------------------------ differentiation


def _axis_partial(p: ExactPoly, axis: int) -> ExactPoly:
    terms = {}
    for alpha, coeff in p._terms.items():
        a = alpha[axis]
        if a:
            beta = alpha[:axis] + (a - 1,) + alpha[axis + 1:]
            terms[beta] = coeff * a
    return ExactPoly._raw(p.n, terms)


def partial(p: ExactPoly, direction: Union[int, Sequence[Any]]) -> ExactPoly:
    """Exact derivative along an axis index or along a rational direction vector."""
    if isinstance(direction, int):
        if not 0 <= direction < p.n:
            raise PreconditionError(f"Axis {direction} out of range for n={p.n}")
        return _axis_partial(p, direction)
    vector = [as_rational(v) for v in direction]
    if len(vector) != p.n:
        raise DimensionMismatchError(f"Direction of length {len(vector)} for n={p.n}")
    out = ExactPoly._raw(p.n, {})
    for axis, weight in enumerate(vector):
        if weight:
            out = out + _axis_partial(p, axis) * weight
    return out


def gradient(p: ExactPoly) -> List[ExactPoly]:
    return [_axis_partial(p, i) for i in range(p.n)]


def laplacian(p: ExactPoly) -> ExactPoly:
    """Sum of pure second partials."""
    terms: Dict[Monomial, Fraction] = {}
    for alpha, coeff in p._terms.items():
        for i, a in enumerate(alpha):
            if a >= 2:
                beta = alpha[:i] + (a - 2,) + alpha[i + 1:]
                terms[beta] = terms.get(beta, Fraction(0)) + coeff * a * (a - 1)
    return ExactPoly._raw(p.n, {k: v for k, v in terms.items() if v})


def is_harmonic(p: ExactPoly) -> bool:
    return laplacian(p).is_zero()


# ----------------------------------------------------------- sphere integrals


def _double_factorial(k: int) -> int:
    # (-1)!! = 1
    return prod(range(k, 0, -2)) if k > 0 else 1


@lru_cache(maxsize=65536)
def sphere_average_monomial(alpha: Monomial) -> Fraction:
    """Average of x^alpha over the unit sphere in R^len(alpha)."""
    if any(a % 2 for a in alpha):
        return Fraction(0)
    n = len(alpha)
    numerator = prod(_double_factorial(a - 1) for a in alpha)
    denominator = prod(n + 2 * j for j in range(sum(alpha) // 2))
    return Fraction(numerator, denominator)


def inner(f: ExactPoly, g: ExactPoly) -> Fraction:
    """Sphere-averaged L^2 product <f, g>."""
    if f.n != g.n:
        raise DimensionMismatchError(f"Dimension mismatch: {f.n} vs {g.n}")
    # Only monomial pairs with matching exponent parity survive the average.
    by_parity: Dict[Tuple[int, ...], List[Tuple[Monomial, Fraction]]] = {}
    for beta, d in g._terms.items():
        by_parity.setdefault(tuple(b & 1 for b in beta), []).append((beta, d))
    total = Fraction(0)
    for alpha, c in f._terms.items():
        for beta, d in by_parity.get(tuple(a & 1 for a in alpha), ()):
            total += c * d * sphere_average_monomial(tuple(a + b for a, b in zip(alpha, beta)))
    return total


@lru_cache(maxsize=8192)
def norm_sq(p: ExactPoly) -> Fraction:
    return inner(p, p)


# ------------------------------------------------------- evaluation and shift


def evaluate(p: ExactPoly, point: Sequence[Any]) -> Fraction:
    """Exact value at a rational point."""
    x = [as_rational(v) for v in point]
    if len(x) != p.n:
        raise DimensionMismatchError(f"Point of length {len(x)} for n={p.n}")
    return sum(
        (c * prod(xi ** a for xi, a in zip(x, alpha)) for alpha, c in p._terms.items()),
        Fraction(0),
    )


def shift(p: ExactPoly, xbar: Sequence[Any]) -> ExactPoly:
    """Return q with q(y) = p(xbar + y), by exact Taylor re-expansion."""
    x = [as_rational(v) for v in xbar]
    if len(x) != p.n:
        raise DimensionMismatchError(f"Point of length {len(x)} for n={p.n}")
    if not any(x):
        return p
    terms: Dict[Monomial, Fraction] = {}
    for alpha, coeff in p._terms.items():
        ranges = [range(a + 1) if xi else (a,) for a, xi in zip(alpha, x)]
        for beta in product(*ranges):
            weight = coeff
            for a, b, xi in zip(alpha, beta, x):
                if a != b:
                    weight *= comb(a, b) * xi ** (a - b)
            terms[beta] = terms.get(beta, Fraction(0)) + weight
    return ExactPoly._raw(p.n, {k: v for k, v in terms.items() if v})


# ---------------------------------------------------------------------- JSON


def to_json(p: ExactPoly) -> Dict[str, Any]:
    return {
        "n": p.n,
        "terms": [
            {"alpha": list(alpha), "num": str(c.numerator), "den": str(c.denominator)}
            for alpha, c in p.items()
        ],
    }


def from_json(data: Mapping[str, Any]) -> ExactPoly:
    n = int(data["n"])
    terms: Dict[Tuple[int, ...], Fraction] = {}
    for term in data.get("terms", []):
        terms[tuple(term["alpha"])] = Fraction(int(term["num"]), int(term["den"]))
    return ExactPoly(n, terms)


def sum_polys(polys: Iterable[ExactPoly], n: int) -> ExactPoly:
    out = ExactPoly._raw(n, {})
    for p in polys:
        out = out + p
    return out
