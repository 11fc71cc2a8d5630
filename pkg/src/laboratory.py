"""Laboratory - runs experiments and writes their reports."""

import math
import re
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from loguru import logger
from tqdm import tqdm

from .config import LabConfig, get_lab_config, load_problem_presets
from .corpus import resolve_source
from .covering import recursive_cover
from .elliptic import (
    almost_monotonicity_check,
    expansion_from_grid,
    generalized_frequency,
    harmonic_approximation,
    load_problem,
    solve_problem,
    tangent_field,
)
from .errors import LabError, PreconditionError, ProjectionError, UndefinedFrequencyError
from .fields import ExpansionField
from .frequency import (
    Expansion,
    dominant_degree,
    freq,
    frequency_profile,
    pinch,
    pinch_ode_check,
    tangent_uniqueness_check,
)
from .geometry import (
    NodalReport,
    build_mask,
    critical_points_2d,
    fit_scaling_exponent,
    minkowski_volume,
    nodal_nondegeneracy_check,
)
from .hhp import basis, dimension, kelvin_rank_check
from .poly import to_json as poly_to_json
from .reporting import write_bytes, write_csv, write_json

VOLUME_MODES = {"C": "critical", "S": "singular", "Z": "nodal", "F": "frequency"}


def source_id(source: str) -> str:
    """File-name-safe identifier for a SOURCE argument."""
    path = Path(source)
    stem = path.stem if path.suffix == ".json" else source
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", stem)


def _scan_one(field: ExpansionField, r: float, kind: str, geometry) -> tuple:
    mask = build_mask(field, r, kind, geometry)
    return mask, minkowski_volume(mask, r)


class Laboratory:
    """Orchestrates one experiment per call and returns a status dict."""

    def __init__(self, config: Optional[LabConfig] = None):
        """Initialize the laboratory.

        Args:
            config: Laboratory configuration (defaults from the environment)
        """
        self.config = config or get_lab_config()
        self.out_dir = Path(self.config.run.out_dir)
        self.problems = load_problem_presets(self.config.problems_config)
        logger.info("Laboratory initialized")
        logger.debug(f"Output directory: {self.out_dir}, jobs={self.config.run.jobs}")

    # ------------------------------------------------------------ helpers

    def _expansion(self, source: str, n: Optional[int] = None) -> Expansion:
        run = self.config.run
        return resolve_source(source, n=n or run.n, seed=run.seed, decay=run.decay)

    def _error(self, stage: str, error: Exception) -> Dict[str, Any]:
        logger.error(f"{stage} failed: {error}")
        return {"status": "error", "stage": stage, "error": str(error)}

    def _result(self, stage: str, outputs: List[Path], violations: List[str], **summary) -> Dict[str, Any]:
        status = "failed" if violations else "success"
        if violations:
            logger.warning(f"{stage}: {len(violations)} invariant(s) failed")
        else:
            logger.info(f"{stage} completed, {len(outputs)} file(s) written")
        return {
            "status": status,
            "stage": stage,
            "outputs": [str(p) for p in outputs],
            "violations": violations,
            **summary,
        }

    def _path(self, name: str) -> Path:
        return self.out_dir / name

    # ------------------------------------------------------------ hhp

    def basis(self, n: int, d: int) -> Dict[str, Any]:
        try:
            b = basis(n, d)
            expected = dimension(n, d)
            payload: Dict[str, Any] = {"basis": b.to_json(), "dimension": expected}
            if d >= 1:
                payload["kelvin"] = kelvin_rank_check(n, d).model_dump()
            out = write_json(self._path(f"basis_n{n}_d{d}.json"), payload, self.config)
        except LabError as e:
            return self._error("basis", e)
        violations = [] if b.count == expected else [f"count {b.count} != dimension {expected}"]
        return self._result("basis", [out], violations, count=b.count, dimension=expected)

    # ------------------------------------------------------------ frequency

    def frequency_profile(
        self,
        source: str,
        x: Optional[Sequence[Any]] = None,
        radii: Optional[Sequence[Any]] = None,
    ) -> Dict[str, Any]:
        try:
            e = self._expansion(source)
            profile = frequency_profile(e, x, radii, self.config.frequency)
            rows = [(float(r), float(n), str(n), float(h)) for r, n, h in zip(profile.radii, profile.N, profile.h)]
            out = write_csv(
                self._path(f"freq_profile_{source_id(source)}.csv"), ["r", "N", "N_exact", "h"], rows, self.config
            )
        except LabError as e:
            return self._error("freq-profile", e)
        return self._result("freq-profile", [out], [], points=len(rows))

    def pinch_check(self, source: str, r2: Any, r1: Any, eps: float) -> Dict[str, Any]:
        violations: List[str] = []
        try:
            e = self._expansion(source)
            measured = pinch(e, e.x0, r2, r1)
            ode = pinch_ode_check(e, r1)
            payload: Dict[str, Any] = {
                "pinch": measured,
                "ode": ode.model_dump(),
                "dominant": dominant_degree(e, r1, eps).model_dump(),
            }
            if not ode.corollary_holds:
                violations.append("e-fold drop corollary")
            if float(measured) <= eps and float(r2) <= float(r1) / math.e ** 3:
                report = tangent_uniqueness_check(e, r2, r1, eps, self.config.frequency)
                payload["tangent"] = {
                    **report.model_dump(exclude={"polynomial"}),
                    "polynomial": poly_to_json(report.polynomial),
                    "holds": report.holds,
                }
                violations += [
                    name for name, ok in (
                        ("frequency gap", report.freq_ok),
                        ("mass fraction", report.mass_ok),
                        ("L2 gap", report.l2_ok),
                        ("Dirichlet gap", report.dirichlet_ok),
                    ) if not ok
                ]
            else:
                payload["tangent"] = {"skipped": "window not pinched below eps or shorter than e^3"}
            out = write_json(self._path(f"pinch_{source_id(source)}.json"), payload, self.config)
        except LabError as e:
            return self._error("pinch-check", e)
        return self._result("pinch-check", [out], violations, pinch=float(measured))

    # ------------------------------------------------------------ geometry

    def _scan(self, stage: str, source: str, radii: Sequence[float], kind: str) -> Dict[str, Any]:
        try:
            expansion = self._expansion(source)
            field = ExpansionField(expansion)
            sid = source_id(source)
            results = Parallel(n_jobs=self.config.run.jobs)(
                delayed(_scan_one)(field, float(r), kind, self.config.geometry)
                for r in tqdm(radii, desc=f"{kind} masks", disable=len(radii) < 3)
            )
            codim = 1 if kind == "nodal" else 2
            outputs, rows = [], []
            for i, (r, (mask, volume)) in enumerate(zip(radii, results)):
                outputs.append(write_json(self._path(f"{kind}_mask_{sid}_{i}.json"), mask.to_json(), self.config))
                rows.append((sid, float(r), volume, volume / float(r) ** codim, mask.count))
            outputs.append(
                write_csv(
                    self._path(f"{kind}_volumes_{sid}.csv"),
                    ["function_id", "r", "volume", "normalized_volume", "count"],
                    rows,
                    self.config,
                )
            )
            slope = None
            if sum(1 for row in rows if row[2] > 0) >= 2:
                fit = fit_scaling_exponent([row[1] for row in rows], [row[2] for row in rows])
                slope = fit.slope
                outputs.append(write_json(self._path(f"{kind}_fit_{sid}.json"), fit.model_dump(), self.config))
        except LabError as e:
            return self._error(stage, e)
        violations: List[str] = []
        nodal = self._nodal_check(expansion) if kind == "nodal" else None
        if nodal is not None and not nodal.holds:
            violations.append(
                f"Nodal nondegeneracy failed: u(0)^2={nodal.center_value_sq:.3e}, "
                f"h(1)/2={nodal.half_height:.3e}, {nodal.sign_violations} sign violations"
            )
        return self._result(
            stage, outputs, violations, volumes=[row[2] for row in rows], slope=slope,
            nodal_check=None if nodal is None else nodal.holds,
        )

    def _nodal_check(self, e: Expansion) -> Optional[NodalReport]:
        try:
            return nodal_nondegeneracy_check(e, self.config.geometry.nodal_eps, config=self.config.geometry)
        except (PreconditionError, UndefinedFrequencyError) as err:
            logger.info(f"Nodal nondegeneracy not applicable: {err}")
            return None

    def critical_scan(self, source: str, radii: Sequence[float], mode: str = "critical") -> Dict[str, Any]:
        return self._scan("critical-scan", source, radii, mode)

    def nodal_scan(self, source: str, radii: Sequence[float]) -> Dict[str, Any]:
        return self._scan("nodal-scan", source, radii, "nodal")

    def volume_scan(self, source: str, radii: Sequence[float], mode: str = "C") -> Dict[str, Any]:
        if mode not in VOLUME_MODES:
            return self._error("volume-scan", ValueError(f"Unknown mode {mode!r}; expected one of {sorted(VOLUME_MODES)}"))
        return self._scan("volume-scan", source, radii, VOLUME_MODES[mode])

    def count2d(self, source: str, radius: Optional[float] = None) -> Dict[str, Any]:
        try:
            e = self._expansion(source, n=2)
            points = critical_points_2d(e, radius, self.config.geometry)
            total = sum(p.multiplicity for p in points)
            payload = {"points": [p.model_dump() for p in points], "count": total}
            out = write_json(self._path(f"critical_points_{source_id(source)}.json"), payload, self.config)
        except LabError as e:
            return self._error("count2d", e)
        violations = [] if radius is not None or total <= max(e.max_degree - 1, 0) else ["count exceeds D - 1"]
        return self._result("count2d", [out], violations, count=total, points=len(points))

    # ------------------------------------------------------------ covering

    def cover(self, source: str, lam: float, r: float, radius: float = 0.5) -> Dict[str, Any]:
        try:
            e = self._expansion(source)
            field = ExpansionField(e)
            report = recursive_cover(
                field, lam, r, radius=radius,
                config=self.config.covering, geometry=self.config.geometry, jobs=self.config.run.jobs,
            )
            sid = source_id(source)
            outputs = [
                write_json(self._path(f"cover_{sid}.json"), report.to_json(), self.config),
                write_csv(
                    self._path(f"cover_{sid}.csv"),
                    ["level", "balls", "terminal", "degree", "mass"],
                    report.table(),
                    self.config,
                ),
            ]
        except LabError as e:
            return self._error("cover", e)
        violations: List[str] = []
        if report.escapes:
            violations.append(
                f"{report.escapes} target points escaped (required shrink {report.required_shrink})"
            )
        if report.alignment_failures:
            violations.append(f"{report.alignment_failures} alignment failures beyond tau")
        bound = self.config.covering.mass_ratio_bound
        if report.max_mass_ratio is not None and report.max_mass_ratio > bound:
            violations.append(f"Mass ratio {report.max_mass_ratio:.3g} exceeds {bound}")
        return self._result(
            "cover", outputs, violations,
            levels=len(report.levels), terminal=report.terminal_count, escapes=report.escapes,
            excluded=len(report.excluded), max_mass_ratio=report.max_mass_ratio, table=report.table(),
        )

    # ------------------------------------------------------------ elliptic

    def elliptic(self, problem_ref: str) -> Dict[str, Any]:
        violations: List[str] = []
        cfg = self.config.elliptic
        try:
            if problem_ref in self.problems:
                problem = self.problems[problem_ref]
            elif Path(problem_ref).suffix == ".json":
                problem = load_problem(Path(problem_ref))
            else:
                raise LabError(f"Unknown problem {problem_ref!r}; known: {', '.join(sorted(self.problems))}")
            coeffs, expansion, solution = solve_problem(problem, cfg, seed=self.config.run.seed)

            origin = (0.0, 0.0)
            frequencies = [generalized_frequency(solution, coeffs, origin, r, cfg) for r in cfg.radii]
            monotonicity = almost_monotonicity_check(solution, coeffs, origin, cfg.radii, cfg)
            if not monotonicity.holds:
                violations.append("almost monotonicity")
            payload: Dict[str, Any] = {
                "problem": problem.model_dump(),
                "frequencies": [{"r": r, **g.model_dump(), "discrepancy": g.discrepancy} for r, g in zip(cfg.radii, frequencies)],
                "monotonicity": {**monotonicity.model_dump(), "holds": monotonicity.holds},
            }

            if coeffs.kind == "identity" and not expansion.is_constant():
                exact = [float(freq(expansion, r)) for r in cfg.radii]
                gap = max(abs(g.N - v) for g, v in zip(frequencies, exact))
                payload["reduction"] = {"classical": exact, "max_gap": gap}
                if gap > 1e-6:
                    violations.append("identity reduction")

            T = tangent_field(solution, coeffs, origin, cfg.tangent_radius, cfg)
            approx = harmonic_approximation(T, config=cfg)
            payload["harmonic_approximation"] = {
                "degree": approx.degree,
                "residual": approx.residual,
                "residual_bound": approx.residual_bound,
                "max_w": float(np.abs(approx.w.values).max()),
                "holds": approx.holds,
            }
            if not approx.holds:
                violations.append("harmonic approximation residual")
            try:
                bridged = expansion_from_grid(approx.h, approx.degree + 2, cfg)
                payload["bridge"] = bridged.to_json()
            except ProjectionError as e:
                logger.warning(f"Projection of h failed: {e}")
                payload["bridge"] = {"error": str(e)}

            name = source_id(problem.name)
            outputs = [
                write_json(self._path(f"elliptic_{name}.json"), payload, self.config),
                write_bytes(self._path(f"elliptic_{name}.grid"), solution.to_bytes()),
            ]
            csv_path = self._path(f"elliptic_{name}.csv")
            solution.to_csv(csv_path)
            outputs.append(csv_path)
        except LabError as e:
            return self._error("elliptic", e)
        return self._result(
            "elliptic", outputs, violations,
            frequencies=[g.N for g in frequencies], monotonicity_constant=monotonicity.constant,
        )


def parse_radius(value: str) -> Fraction:
    """'1/21', '0.25' and '3' all parse to exact rationals."""
    return Fraction(value.strip())
