from __future__ import annotations

import hashlib
import json
import platform
import time
from pathlib import Path
from typing import Any, Callable

import numpy as np
import ot
import scipy

from .. import __version__
from ..domain.errors import ConfigurationError, ConvergenceError
from ..domain.models import DensityField, Manifold, RunOutcome
from ..domain.scenario import ScenarioConfig, Tolerances
from ..infrastructure.config_loader import FgiSettings, load_config, parse_config
from ..infrastructure.mesh_io import read_mesh, write_mesh
from ..infrastructure.report_writer import ReportWriter
from ..infrastructure.run_logger import RunLogger
from .connections import connection_for
from .densities import build_densities
from .experiments import bv_estimate_report, contraction_experiment, regularized_min, wasserstein_projection
from .five_gradients import (
    anisotropic_five_gradients,
    check_five_gradients,
    competitor_defect,
    difference_quotient_l1,
    directional_fgi,
)
from .geometry_lab import curvature_algebra_checks, geodesic_from, interpolated_frame, variation_suite
from .gradients import LATTICE_AXES
from .manifolds import build_sphere_mesh, build_torus_mesh, cost_matrix
from .transport import solve_exact

COMPETITOR_STREAM = 7
FRAME_SLOP = 1e-12

Handler = Callable[[ScenarioConfig, ReportWriter, RunLogger, int], tuple[bool, dict[str, Any]]]


def config_digest(cfg: ScenarioConfig) -> str:
    canonical = json.dumps(cfg.source, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _nonincreasing(values: list[float], slop: float) -> bool:
    return all(later <= earlier + slop for earlier, later in zip(values, values[1:]))


def refinement_trend(deficits: list[float], factor: float, floor: float) -> tuple[bool, list[float | None]]:
    """
    Shrink ratios deficit[k-1] / deficit[k] along a refinement ladder. A step
    passes when the finer deficit is at or below ``floor`` or has shrunk by at
    least ``factor``.
    """
    ratios: list[float | None] = []
    passed = True
    for earlier, later in zip(deficits, deficits[1:]):
        ratios.append(earlier / later if later > 0 else None)
        if later > floor and later * factor > earlier:
            passed = False
    return passed, ratios


def _versions() -> dict[str, str]:
    return {
        "fgi-lab": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "POT": ot.__version__,
        "python": platform.python_version(),
    }


class ScenarioService:
    """
    Runs scenario configs end to end:
    1) build the manifold (once per refinement level) and the named densities
    2) dispatch the selected experiment
    3) write CSV/JSON artifacts and a run manifest, removing them again on failure
    """

    def __init__(self, settings: FgiSettings, run_logger: RunLogger | None = None):
        self.settings = settings
        self.run_logger = run_logger or RunLogger(settings.run_log_path)
        self._handlers: dict[str, Handler] = {
            "fgi": self._run_fgi,
            "directional": self._run_directional,
            "competitor": self._run_competitor,
            "heatflow": self._run_heatflow,
            "bv-projection": self._run_bv_projection,
            "bv-regularized": self._run_bv_regularized,
            "geometry-lab": self._run_geometry_lab,
        }

    def validate(self, text: str) -> ScenarioConfig:
        return parse_config(text)

    def load(self, path: Path) -> ScenarioConfig:
        return load_config(path)

    def run_scenario(
        self,
        cfg: ScenarioConfig,
        out_dir: Path | None = None,
        threads: int | None = None,
        seed_override: int | None = None,
    ) -> RunOutcome:
        if seed_override is not None:
            cfg = cfg.with_seed(seed_override)
        out = Path(out_dir or cfg.output_dir or self.settings.out_dir)
        workers = max(1, threads or self.settings.threads)
        digest = config_digest(cfg)
        run_id = f"{digest[:16]}-{cfg.seed}"
        run_logger = self.run_logger.bind(run_id, cfg.experiment.type)
        writer = ReportWriter(out)

        started = time.perf_counter()
        run_logger.log(
            "run_started",
            {"experiment": cfg.experiment.type, "seed": cfg.seed, "threads": workers, "out_dir": str(out)},
        )
        try:
            passed, summary = self._handlers[cfg.experiment.type](cfg, writer, run_logger, workers)
            writer.write_json(
                "run_manifest.json",
                {
                    "run_id": run_id,
                    "config_hash": digest,
                    "seed": cfg.seed,
                    "experiment": cfg.experiment.type,
                    "passed": passed,
                    "versions": _versions(),
                    "wall_time": time.perf_counter() - started,
                },
            )
        except (ValueError, RuntimeError, OSError) as exc:
            writer.discard()
            payload: dict[str, Any] = {"error": type(exc).__name__, "message": str(exc)}
            if isinstance(exc, ConvergenceError):
                payload["diagnostics"] = exc.diagnostics
            run_logger.log("solver_failure", payload)
            raise

        artifacts = tuple(path.name for path in writer.written)
        run_logger.log("run_finished", {"passed": passed, "artifacts": list(artifacts), **summary})
        return RunOutcome(run_id=run_id, passed=passed, artifacts=artifacts, summary=summary)

    def export_mesh(
        self,
        kind: str,
        out: Path,
        subdivisions: int = 2,
        radius: float = 1.0,
        nx: int = 16,
        ny: int = 16,
        Lx: float = 1.0,
        Ly: float = 1.0,
    ) -> Path:
        if kind == "sphere":
            M = build_sphere_mesh(subdivisions, radius)
        elif kind == "torus":
            M = build_torus_mesh(nx, ny, Lx, Ly)
        else:
            raise ConfigurationError(f"Cannot build a {kind!r} mesh.", [("/manifold/kind", "expected sphere or torus")])
        return write_mesh(M, out)

    def build_manifold(self, cfg: ScenarioConfig, level: int | None = None) -> Manifold:
        m = cfg.manifold
        if m.kind == "sphere":
            return build_sphere_mesh(m.subdivisions if level is None else level, m.radius)
        if m.kind == "torus":
            nx, ny = (m.nx, m.ny) if level is None else (level, level)
            return build_torus_mesh(nx, ny, m.Lx, m.Ly)
        if level is not None:
            raise ConfigurationError(
                "Imported meshes have no refinement ladder.", [("/experiment/ladder", "sphere or torus only")]
            )
        return read_mesh(Path(m.path))

    def _levels(self, cfg: ScenarioConfig) -> list[Manifold]:
        if cfg.experiment.ladder:
            return [self.build_manifold(cfg, level) for level in cfg.experiment.ladder]
        return [self.build_manifold(cfg)]

    def _densities(
        self, cfg: ScenarioConfig, M: Manifold
    ) -> tuple[dict[str, DensityField], DensityField | None, DensityField | None]:
        densities = build_densities(M, cfg.densities)
        return densities, densities.get(cfg.mu), densities.get(cfg.nu)

    def _run_fgi(
        self, cfg: ScenarioConfig, writer: ReportWriter, run_logger: RunLogger, workers: int
    ) -> tuple[bool, dict[str, Any]]:
        exp, tol = cfg.experiment, cfg.tolerances
        reports = []
        for M in self._levels(cfg):
            _, mu, nu = self._densities(cfg, M)
            report = check_five_gradients(
                M, mu, nu, cfg.cost, cfg.ell, exp.solver, exp.eps, self.settings.max_dense_vertices
            )
            reports.append(report)
            run_logger.log("level_completed", {"experiment": "fgi", **report.to_dict()})

        slacks = [report.slack for report in reports]
        deficits = [max(0.0, -slack) for slack in slacks]
        trend_ok, ratios = refinement_trend(deficits, tol.refinement, tol.refinement_floor)
        passed = slacks[-1] >= -tol.slack and trend_ok
        writer.write_csv(
            "fgi_ladder.csv",
            ["N", "lhs", "rhs", "slack"],
            [{"N": r.n_vertices, "lhs": r.lhs, "rhs": r.rhs, "slack": r.slack} for r in reports],
        )
        writer.write_json(
            "fgi_report.json",
            {
                "levels": [r.to_dict() for r in reports],
                "tolerance": tol.slack,
                "shrink_ratios": ratios,
                "passed": passed,
            },
        )
        return passed, {"slack": slacks[-1], "lhs": reports[-1].lhs, "shrink_ratios": ratios}

    def _run_directional(
        self, cfg: ScenarioConfig, writer: ReportWriter, run_logger: RunLogger, workers: int
    ) -> tuple[bool, dict[str, Any]]:
        exp, tol = cfg.experiment, cfg.tolerances
        axes = LATTICE_AXES if exp.axis is None else (exp.axis,)
        rows, levels = [], []
        for T in self._levels(cfg):
            _, mu, nu = self._densities(cfg, T)
            _, potentials = solve_exact(mu, nu, cost_matrix(T, cfg.cost, self.settings.max_dense_vertices))
            values = [directional_fgi(T, axis, exp.f, mu, nu, cfg.cost, potentials) for axis in LATTICE_AXES]
            row = {"N": T.n_vertices, "axis0": values[0], "axis1": values[1], "sum": values[0] + values[1]}
            level = dict(row)
            if exp.p is not None:
                level["anisotropic"] = anisotropic_five_gradients(T, exp.p, mu, nu, cfg.cost, potentials)
            rows.append(row)
            levels.append(level)
            run_logger.log("level_completed", {"experiment": "directional", **level})

        excess = [max(0.0, *(row[f"axis{axis}"] for axis in axes)) for row in rows]
        trend_ok, ratios = refinement_trend(excess, tol.refinement, tol.refinement_floor)
        passed = excess[-1] <= tol.slack and trend_ok
        writer.write_csv("directional.csv", ["N", "axis0", "axis1", "sum"], rows)
        writer.write_json(
            "directional_report.json",
            {"levels": levels, "axes": list(axes), "tolerance": tol.slack, "shrink_ratios": ratios, "passed": passed},
        )
        return passed, {"max_value": max(rows[-1][f"axis{axis}"] for axis in axes), "shrink_ratios": ratios}

    def _competitor_shifts(self, cfg: ScenarioConfig, T: Manifold) -> list[tuple[float, float]]:
        grid = T.grid
        seq = np.random.SeedSequence([cfg.seed, COMPETITOR_STREAM])
        rng = np.random.Generator(np.random.PCG64(seq))
        count = cfg.experiment.instances
        kx = rng.integers(-(grid.nx // 4), grid.nx // 4 + 1, size=count)
        ky = rng.integers(-(grid.ny // 4), grid.ny // 4 + 1, size=count)
        shifts = [(float(a * grid.hx), float(b * grid.hy)) for a, b in zip(kx, ky)]
        if cfg.experiment.shift is not None:
            shifts[0] = tuple(cfg.experiment.shift)
        return shifts

    def _run_competitor(
        self, cfg: ScenarioConfig, writer: ReportWriter, run_logger: RunLogger, workers: int
    ) -> tuple[bool, dict[str, Any]]:
        exp, tol = cfg.experiment, cfg.tolerances
        T = self._levels(cfg)[-1]
        if T.kind != "flat-torus":
            raise ConfigurationError("Competitor checks run on a flat torus.", [("/manifold/kind", "torus only")])
        _, mu, nu = self._densities(cfg, T)
        C = cost_matrix(T, cfg.cost, self.settings.max_dense_vertices)
        plan, potentials = solve_exact(mu, nu, C)

        rows = []
        for instance, shift in enumerate(self._competitor_shifts(cfg, T)):
            defect = competitor_defect(T, potentials, plan, C, shift, exp.f, mu, nu, exp.samples, cfg.seed + instance)
            rows.append(
                {
                    "instance": instance,
                    "sx": defect.shift[0],
                    "sy": defect.shift[1],
                    "second_diff": defect.second_diff,
                    "feasibility_residual": defect.feasibility_residual,
                    "mono_residual": defect.mono_residual,
                }
            )

        axis = exp.axis if exp.axis is not None else 0
        period = T.grid.Lx if axis == 0 else T.grid.Ly
        h = T.grid.hx if axis == 0 else T.grid.hy
        wave = 2.0 * np.pi / period
        coords = T.vertices[:, axis]
        ladder = [k * h for k in exp.quotient_steps]
        errors = difference_quotient_l1(T, np.sin(wave * coords), wave * np.cos(wave * coords), axis, ladder)
        run_logger.log("level_completed", {"experiment": "competitor", "instances": len(rows), "errors": errors})

        defects_ok = all(
            row["second_diff"] <= tol.identity
            and row["feasibility_residual"] <= tol.feasibility
            and row["mono_residual"] == 0.0
            for row in rows
        )
        quotients_ok = all(later < earlier for earlier, later in zip(errors, errors[1:]))
        writer.write_csv(
            "competitor.csv",
            ["instance", "sx", "sy", "second_diff", "feasibility_residual", "mono_residual"],
            rows,
        )
        writer.write_csv("difference_quotient.csv", ["t", "error"], [{"t": t, "error": e} for t, e in zip(ladder, errors)])
        return defects_ok and quotients_ok, {
            "max_second_diff": max(row["second_diff"] for row in rows),
            "max_feasibility_residual": max(row["feasibility_residual"] for row in rows),
        }

    def _run_heatflow(
        self, cfg: ScenarioConfig, writer: ReportWriter, run_logger: RunLogger, workers: int
    ) -> tuple[bool, dict[str, Any]]:
        exp, tol = cfg.experiment, cfg.tolerances
        M = self._levels(cfg)[-1]
        _, mu, nu = self._densities(cfg, M)
        points = contraction_experiment(
            M,
            mu,
            nu,
            exp.t_final,
            exp.dt,
            cfg.cost,
            workers=workers,
            run_logger=run_logger,
            max_vertices=self.settings.max_dense_vertices,
        )
        if M.curvature.K == 0.0:
            passed = _nonincreasing([p.w2 for p in points], tol.nonexpansive)
        else:
            passed = all(p.w2 <= p.bound * (1.0 + tol.contraction) for p in points)
        writer.write_csv("contraction.csv", ["t", "w2", "bound"], [{"t": p.t, "w2": p.w2, "bound": p.bound} for p in points])
        return passed, {"w2_initial": points[0].w2, "w2_final": points[-1].w2}

    def _cap_values(self, cfg: ScenarioConfig, M: Manifold, densities: dict[str, DensityField]) -> np.ndarray:
        cap = cfg.experiment.cap
        if cap.value is not None:
            return np.full(M.n_vertices, float(cap.value))
        return cap.scale * densities[cap.density].values

    def _bv_outputs(
        self,
        writer: ReportWriter,
        reports: list,
        n_vertices: list[int],
        tol: Tolerances,
        converged: list[bool] | None = None,
    ) -> tuple[bool, dict[str, Any]]:
        slacks = [report.slack for report in reports]
        deficits = [max(0.0, -slack) for slack in slacks]
        trend_ok, ratios = refinement_trend(deficits, tol.refinement, tol.refinement_floor)
        passed = slacks[-1] >= -tol.slack and trend_ok
        rows = [
            {
                "N": n,
                "mode": r.mode,
                "bv_mu_bar": r.bv_mu_bar,
                "bv_nu": r.bv_nu,
                "bv_f": r.bv_f,
                "transport_term": r.transport_term,
                "lhs": r.lhs,
                "rhs": r.rhs,
                "slack": r.slack,
            }
            for n, r in zip(n_vertices, reports)
        ]
        levels = [{"N": n, **r.to_dict()} for n, r in zip(n_vertices, reports)]
        if converged is not None:
            for level, flag in zip(levels, converged):
                level["converged"] = flag
        writer.write_csv("bv.csv", list(rows[0]), rows)
        writer.write_json(
            "bv_report.json",
            {"levels": levels, "tolerance": tol.slack, "shrink_ratios": ratios, "passed": passed},
        )
        return passed, {"slack": slacks[-1], "shrink_ratios": ratios}

    def _run_bv_projection(
        self, cfg: ScenarioConfig, writer: ReportWriter, run_logger: RunLogger, workers: int
    ) -> tuple[bool, dict[str, Any]]:
        reports, sizes = [], []
        for M in self._levels(cfg):
            densities, _, nu = self._densities(cfg, M)
            f = self._cap_values(cfg, M, densities)
            result = wasserstein_projection(nu, f, cfg.cost, self.settings.max_dense_vertices)
            report = bv_estimate_report(result.mu_bar, nu, result.plan, M, "projection", f=f, c=cfg.cost)
            reports.append(report)
            sizes.append(M.n_vertices)
            run_logger.log(
                "level_completed",
                {"experiment": "bv-projection", "N": M.n_vertices, "duality_gap": result.duality_gap, **report.to_dict()},
            )
        return self._bv_outputs(writer, reports, sizes, cfg.tolerances)

    def _run_bv_regularized(
        self, cfg: ScenarioConfig, writer: ReportWriter, run_logger: RunLogger, workers: int
    ) -> tuple[bool, dict[str, Any]]:
        exp = cfg.experiment
        reports, sizes, converged = [], [], []
        for M in self._levels(cfg):
            _, _, nu = self._densities(cfg, M)
            result = regularized_min(
                nu,
                exp.eta,
                cfg.cost,
                iterations=exp.iterations,
                tol=exp.tol,
                run_logger=run_logger,
                max_vertices=self.settings.max_dense_vertices,
            )
            plan, _ = solve_exact(result.mu_bar, nu, cost_matrix(M, cfg.cost, self.settings.max_dense_vertices))
            report = bv_estimate_report(result.mu_bar, nu, plan, M, "contraction", c=cfg.cost)
            reports.append(report)
            sizes.append(M.n_vertices)
            converged.append(result.converged)
            run_logger.log(
                "level_completed",
                {
                    "experiment": "bv-regularized",
                    "N": M.n_vertices,
                    "iterations": result.iterations,
                    "converged": result.converged,
                    **report.to_dict(),
                },
            )
        return self._bv_outputs(writer, reports, sizes, cfg.tolerances, converged)

    def _frame_case(self, M: Manifold, steps: int):
        connection = connection_for(M)
        start = M.vertices[0]
        basis = connection.tangent_basis(start)
        length = 0.5 * np.pi * M.radius if M.kind == "sphere" else 1.0
        P = geodesic_from(M, start, basis[0], length, steps)
        return interpolated_frame(P, basis, connection.tangent_basis(P.end))

    def _run_geometry_lab(
        self, cfg: ScenarioConfig, writer: ReportWriter, run_logger: RunLogger, workers: int
    ) -> tuple[bool, dict[str, Any]]:
        exp, tol = cfg.experiment, cfg.tolerances
        M = self._levels(cfg)[-1]
        checks = curvature_algebra_checks(M, exp.trials, cfg.seed, exp.sigma, workers=workers)
        cases = variation_suite(M, exp.instances, cfg.seed, exp.steps, exp.s)
        frame = self._frame_case(M, exp.steps)

        variations_ok = all(
            abs(case.first - case.first_fd) <= tol.variation and case.upper >= case.second_fd - tol.variation
            for case in cases
        )
        checks_ok = all(record.passed for record in checks)
        frame_ok = frame.defect <= 2.0 * frame.max_gap + FRAME_SLOP
        passed = variations_ok and checks_ok and frame_ok
        run_logger.log(
            "level_completed",
            {"experiment": "geometry-lab", "N": M.n_vertices, "checks": [r.to_dict() for r in checks]},
        )

        writer.write_csv(
            "variations.csv",
            ["case", "length", "first", "first_fd", "upper", "exact", "second_fd"],
            [case.to_dict() for case in cases],
        )
        writer.write_json(
            "geometry_lab.json",
            {
                "manifold": M.to_dict(),
                "curvature_checks": [record.to_dict() for record in checks],
                "frame": frame.to_dict(),
                "variation_cases": len(cases),
                "passed": passed,
            },
        )
        return passed, {
            "max_first_error": max(abs(case.first - case.first_fd) for case in cases),
            "frame_defect": frame.defect,
        }
