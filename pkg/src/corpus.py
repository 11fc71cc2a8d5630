"""Test-function generators: seeded random expansions, pinched expansions and named presets."""

import json
import math
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.optimize import brentq

from .errors import ConfigurationError, PreconditionError
from .frequency import Expansion, pinch
from .hhp import basis, harmonic_from_holomorphic
from .poly import ExactPoly, embed, variable

Complex = Tuple[Fraction, Fraction]

PRESETS = ("x1", "re-z2", "re-z3-3z", "pure:D", "two-term:D", "random:D")


def _planar(p: ExactPoly, n: int) -> ExactPoly:
    return p if n == 2 else embed(p, n, [0, 1])


def re_z_power(d: int, n: int = 2) -> ExactPoly:
    """Re(z^d) in the (x1, x2)-plane of R^n."""
    return _planar(harmonic_from_holomorphic({d: (1, 0)}), n)


def pure_expansion(n: int, d: int) -> Expansion:
    if d < 1:
        raise PreconditionError(f"Pure expansion needs d >= 1, got {d}")
    return Expansion.from_components(n, {d: re_z_power(d, n)})


def two_term_expansion(n: int, d: int, ratio: Fraction = Fraction(1)) -> Expansion:
    """Re(z^d) + ratio * Re(z^(d+1)); in n=2 both terms carry a_k^2 = 1/2."""
    return Expansion.from_components(n, {d: re_z_power(d, n), d + 1: re_z_power(d + 1, n) * ratio})


def pinched_expansion(
    n: int,
    d: int,
    eps: float,
    r2: Fraction = Fraction(1, 21),
    r1: Fraction = Fraction(1),
    max_denominator: int = 10 ** 6,
) -> Expansion:
    """Re(z^d) + s Re(z^(d+1)) with rational s tuned so the pinch over (r2, r1) is close to eps."""
    base = two_term_expansion(n, d)
    nu = float(base.coefficient_sq(d + 1) / base.coefficient_sq(d))

    def excess(s: float) -> float:
        c = nu * s * s
        return c * r1 ** 2 / (1 + c * r1 ** 2) - c * r2 ** 2 / (1 + c * r2 ** 2) - eps

    # the pinch peaks at nu s^2 = 1 / (r1 r2)
    peak = 1.0 / math.sqrt(nu * float(r1 * r2))
    if excess(peak) < 0:
        raise PreconditionError(f"No two-term expansion reaches pinch {eps} on ({r2}, {r1})")
    s = Fraction(brentq(excess, 0.0, peak, xtol=1e-15)).limit_denominator(max_denominator)
    result = two_term_expansion(n, d, s)
    logger.debug(f"Pinched expansion d={d}: s={s}, pinch={float(pinch(result, result.x0, r2, r1)):.3e}")
    return result


def random_expansion(
    n: int,
    degree_max: int,
    seed: int,
    decay: float = 0.7,
    degree_min: int = 0,
) -> Expansion:
    """Coefficients uniform on [-1, 1] times decay^k on every basis element, rationalized."""
    rng = np.random.default_rng(seed)
    components: Dict[int, ExactPoly] = {}
    for k in range(degree_min, degree_max + 1):
        b = basis(n, k)
        draws = rng.uniform(-1.0, 1.0, size=b.count) * decay ** k
        q = ExactPoly(n)
        for element, draw, ns in zip(b.elements, draws, b.norms_sq):
            c = Fraction(float(draw) / math.sqrt(ns)).limit_denominator(1000)
            q = q + element * c
        if not q.is_zero():
            components[k] = q
    if not any(k > 0 for k in components):
        components[1] = variable(n, 0)
    return Expansion.from_components(n, components)


def corpus(n: int, size: int, degree_max: int, seed: int, decay: float = 0.7) -> List[Expansion]:
    """Seeded list of random expansions; entry i uses seed + i."""
    return [random_expansion(n, degree_max, seed + i, decay, degree_min=1) for i in range(size)]


def _cmul(a: Complex, b: Complex) -> Complex:
    return (a[0] * b[0] - a[1] * b[1], a[0] * b[1] + a[1] * b[0])


def holomorphic_derivative_example(
    roots: Sequence[Tuple[object, object]],
    lead: Tuple[object, object] = (1, 0),
) -> Expansion:
    """u = Re F with F' = lead * prod (z - z_j); the critical points of u are the z_j."""
    poly: List[Complex] = [(Fraction(lead[0]), Fraction(lead[1]))]
    for re, im in roots:
        root = (-Fraction(re), -Fraction(im))
        shifted = [(Fraction(0), Fraction(0))] + poly
        scaled = [_cmul(c, root) for c in poly] + [(Fraction(0), Fraction(0))]
        poly = [(a[0] + b[0], a[1] + b[1]) for a, b in zip(shifted, scaled)]
    antiderivative = {k + 1: (c[0] / (k + 1), c[1] / (k + 1)) for k, c in enumerate(poly)}
    return Expansion.from_polynomial(harmonic_from_holomorphic(antiderivative))


def preset_expansion(name: str, n: int = 2, seed: int = 0, decay: float = 0.7) -> Expansion:
    """Resolve a named preset (see ``PRESETS``)."""
    key, _, arg = name.partition(":")
    if key == "x1":
        return Expansion.from_components(n, {1: variable(n, 0)})
    if key == "re-z2":
        return pure_expansion(n, 2)
    if key == "re-z3-3z":
        u = harmonic_from_holomorphic({3: (1, 0), 1: (-3, 0)})
        return Expansion.from_polynomial(_planar(u, n))
    if key in ("pure", "two-term", "random"):
        if not arg.isdigit():
            raise ConfigurationError(f"Preset {name!r} needs an integer degree, e.g. {key}:3")
        d = int(arg)
        if key == "pure":
            return pure_expansion(n, d)
        if key == "two-term":
            return two_term_expansion(n, d)
        return random_expansion(n, d, seed, decay, degree_min=1)
    raise ConfigurationError(f"Unknown expansion preset {name!r}; known: {', '.join(PRESETS)}")


def resolve_source(source: str, n: int = 2, seed: int = 0, decay: float = 0.7) -> Expansion:
    """An Expansion JSON file path or a preset name."""
    path = Path(source)
    if path.suffix == ".json" and path.exists():
        with open(path, "r") as f:
            expansion = Expansion.from_json(json.load(f))
        logger.info(f"Loaded expansion (n={expansion.n}, D={expansion.max_degree}) from {path}")
        return expansion
    return preset_expansion(source, n=n, seed=seed, decay=decay)
