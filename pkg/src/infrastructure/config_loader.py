from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from jsonschema import Draft202012Validator

from ..domain.errors import ConfigurationError
from ..domain.scenario import (
    DENSITY_TYPES,
    EXPERIMENT_TYPES,
    MANIFOLD_KINDS,
    CapConfig,
    DensityConfig,
    ExperimentConfig,
    ManifoldConfig,
    ScenarioConfig,
    Tolerances,
)
from ..domain.specs import (
    COST_FAMILIES,
    ELL_FAMILIES,
    PENALTY_FAMILIES,
    SCALAR_FAMILIES,
    CostSpec,
    EllSpec,
    PenaltySpec,
    ScalarSpec,
)


def _int_from_env(name: str, default: int) -> int:
    value = os.getenv(name)
    if value in (None, ""):
        return default
    try:
        return int(value)
    except ValueError:
        return default


@dataclass(frozen=True)
class FgiSettings:
    out_dir: Path
    threads: int
    run_log_path: Path | None
    max_dense_vertices: int

    @classmethod
    def from_env(cls) -> "FgiSettings":
        log_path = os.getenv("FGI_RUN_LOG_PATH")
        return cls(
            out_dir=Path(os.getenv("FGI_OUT_DIR") or "out"),
            threads=max(1, _int_from_env("FGI_THREADS", 1)),
            run_log_path=Path(log_path) if log_path else None,
            max_dense_vertices=_int_from_env("FGI_MAX_DENSE_VERTICES", 5000),
        )


_NUMBER = {"type": "number"}
_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_NONNEGATIVE = {"type": "number", "minimum": 0}
_VECTOR = {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 3}


def _closed(properties: dict[str, Any], **extra: Any) -> dict[str, Any]:
    return {"type": "object", "additionalProperties": False, "properties": properties, **extra}


SCENARIO_SCHEMA: dict[str, Any] = _closed(
    {
        "manifold": _closed(
            {
                "kind": {"enum": list(MANIFOLD_KINDS)},
                "subdivisions": {"type": "integer", "minimum": 0, "maximum": 7},
                "radius": _POSITIVE,
                "nx": {"type": "integer", "minimum": 4},
                "ny": {"type": "integer", "minimum": 4},
                "Lx": _POSITIVE,
                "Ly": _POSITIVE,
                "path": {"type": "string", "minLength": 1},
            },
            required=["kind"],
            allOf=[{"if": {"properties": {"kind": {"const": "mesh"}}}, "then": {"required": ["path"]}}],
        ),
        "densities": {"type": "object", "additionalProperties": {"$ref": "#/$defs/density"}},
        "mu": {"type": "string"},
        "nu": {"type": "string"},
        "cost": _closed(
            {"family": {"enum": list(COST_FAMILIES)}, "p": {"type": "number", "exclusiveMinimum": 1}}
        ),
        "ell": _closed(
            {
                "family": {"enum": list(ELL_FAMILIES)},
                "p": {"type": "number", "exclusiveMinimum": 1},
                "shift": _NONNEGATIVE,
            }
        ),
        "experiment": _closed(
            {
                "type": {"enum": list(EXPERIMENT_TYPES)},
                "solver": {"enum": ["exact", "sinkhorn"]},
                "eps": _POSITIVE,
                "ladder": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "t_final": _POSITIVE,
                "dt": _POSITIVE,
                "axis": {"enum": [0, 1]},
                "f": _closed(
                    {"family": {"enum": list(SCALAR_FAMILIES)}, "p": {"type": "number", "exclusiveMinimum": 1}}
                ),
                "p": {"type": "number", "exclusiveMinimum": 1},
                "shift": {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2},
                "quotient_steps": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "cap": _closed(
                    {"value": _NONNEGATIVE, "density": {"type": "string"}, "scale": _NONNEGATIVE},
                    anyOf=[{"required": ["value"]}, {"required": ["density"]}],
                ),
                "eta": _closed({"family": {"enum": list(PENALTY_FAMILIES)}, "weight": _NONNEGATIVE}),
                "iterations": {"type": "integer", "minimum": 1},
                "tol": _POSITIVE,
                "trials": {"type": "integer", "minimum": 1},
                "sigma": _NONNEGATIVE,
                "instances": {"type": "integer", "minimum": 1},
                "samples": {"type": "integer", "minimum": 0},
                "steps": {"type": "integer", "minimum": 2},
                "s": _POSITIVE,
            },
            required=["type"],
        ),
        "tolerances": _closed(
            {
                **{
                    name: _NONNEGATIVE
                    for name in (
                        "slack",
                        "contraction",
                        "nonexpansive",
                        "identity",
                        "duality",
                        "feasibility",
                        "variation",
                        "refinement_floor",
                    )
                },
                "refinement": {"type": "number", "minimum": 1},
            }
        ),
        "seed": {"type": "integer", "minimum": 0},
        "output": _closed({"dir": {"type": "string", "minLength": 1}}),
    },
    required=["manifold", "experiment"],
)
SCENARIO_SCHEMA["$defs"] = {
    "density": _closed(
        {
            "type": {"enum": list(DENSITY_TYPES)},
            "center": _VECTOR,
            "width": _POSITIVE,
            "floor": _NONNEGATIVE,
            "axis": {"type": "array", "items": _NUMBER, "minItems": 3, "maxItems": 3},
            "angle": {"type": "number", "minimum": 0, "maximum": math.pi},
            "base": {"type": "string"},
            "v": _VECTOR,
        },
        required=["type"],
        allOf=[
            {"if": {"properties": {"type": {"const": "cap"}}}, "then": {"required": ["axis", "angle"]}},
            {"if": {"properties": {"type": {"const": "translate-of"}}}, "then": {"required": ["base", "v"]}},
        ],
    )
}

_NEEDS_MU = {"fgi", "directional", "competitor", "heatflow"}
_NEEDS_NU = {"fgi", "directional", "competitor", "heatflow", "bv-projection", "bv-regularized"}


def _pointer(parts: Any) -> str:
    return "/" + "/".join(str(part) for part in parts)


def _semantic_violations(data: dict[str, Any]) -> list[tuple[str, str]]:
    violations = []
    names = set(data.get("densities", {}))
    for key in ("mu", "nu"):
        if key in data and data[key] not in names:
            violations.append((f"/{key}", f"no density named {data[key]!r}"))
    for name, block in data.get("densities", {}).items():
        base = block.get("base")
        if base is not None and base not in names:
            violations.append((f"/densities/{name}/base", f"no density named {base!r}"))
    experiment = data.get("experiment", {})
    kind = experiment.get("type")
    if kind in _NEEDS_MU and "mu" not in data:
        violations.append(("/mu", f"required by the {kind} experiment"))
    if kind in _NEEDS_NU and "nu" not in data:
        violations.append(("/nu", f"required by the {kind} experiment"))
    if kind == "bv-projection" and "cap" not in experiment:
        violations.append(("/experiment/cap", "required by the bv-projection experiment"))
    cap_density = experiment.get("cap", {}).get("density")
    if cap_density is not None and cap_density not in names:
        violations.append(("/experiment/cap/density", f"no density named {cap_density!r}"))
    if data.get("manifold", {}).get("kind") == "mesh" and "ladder" in experiment:
        violations.append(("/experiment/ladder", "refinement ladders need a sphere or a torus"))
    return violations


def validate_scenario(data: Any) -> list[tuple[str, str]]:
    """Every schema and cross-reference violation as (json_pointer, message), sorted."""
    validator = Draft202012Validator(SCENARIO_SCHEMA)
    violations = [(_pointer(error.absolute_path), error.message) for error in validator.iter_errors(data)]
    if not violations and isinstance(data, dict):
        violations.extend(_semantic_violations(data))
    return sorted(set(violations))


def _tuple(values: Any) -> tuple[float, ...] | None:
    return tuple(float(v) for v in values) if values is not None else None


def _density(name: str, block: dict[str, Any]) -> DensityConfig:
    return DensityConfig(
        name=name,
        type=block["type"],
        center=_tuple(block.get("center")),
        width=float(block.get("width", 0.1)),
        floor=float(block.get("floor", 0.0)),
        axis=_tuple(block.get("axis")),
        angle=float(block["angle"]) if "angle" in block else None,
        base=block.get("base"),
        v=_tuple(block.get("v")),
    )


def _experiment(block: dict[str, Any]) -> ExperimentConfig:
    defaults = ExperimentConfig(type=block["type"])
    cap = block.get("cap")
    return ExperimentConfig(
        type=block["type"],
        solver=block.get("solver", defaults.solver),
        eps=float(block.get("eps", defaults.eps)),
        ladder=tuple(int(v) for v in block.get("ladder", ())),
        t_final=float(block.get("t_final", defaults.t_final)),
        dt=float(block.get("dt", defaults.dt)),
        axis=block.get("axis"),
        f=ScalarSpec(**block["f"]) if "f" in block else defaults.f,
        p=float(block["p"]) if "p" in block else None,
        shift=_tuple(block.get("shift")),
        quotient_steps=tuple(int(v) for v in block.get("quotient_steps", defaults.quotient_steps)),
        cap=CapConfig(value=cap.get("value"), density=cap.get("density"), scale=float(cap.get("scale", 1.0)))
        if cap is not None
        else None,
        eta=PenaltySpec(**block["eta"]) if "eta" in block else defaults.eta,
        iterations=int(block.get("iterations", defaults.iterations)),
        tol=float(block.get("tol", defaults.tol)),
        trials=int(block.get("trials", defaults.trials)),
        sigma=float(block["sigma"]) if "sigma" in block else None,
        instances=int(block.get("instances", defaults.instances)),
        samples=int(block.get("samples", defaults.samples)),
        steps=int(block.get("steps", defaults.steps)),
        s=float(block.get("s", defaults.s)),
    )


def scenario_from_dict(data: Any) -> ScenarioConfig:
    violations = validate_scenario(data)
    if violations:
        raise ConfigurationError(f"Scenario config has {len(violations)} violation(s).", violations)
    return ScenarioConfig(
        manifold=ManifoldConfig(**data["manifold"]),
        densities={name: _density(name, block) for name, block in sorted(data.get("densities", {}).items())},
        experiment=_experiment(data["experiment"]),
        mu=data.get("mu"),
        nu=data.get("nu"),
        cost=CostSpec(**data.get("cost", {})),
        ell=EllSpec(**data.get("ell", {})),
        tolerances=Tolerances(**data.get("tolerances", {})),
        seed=int(data.get("seed", 0)),
        output_dir=data.get("output", {}).get("dir"),
        source=data,
    )


def parse_config(text: str) -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError("Scenario config is not valid JSON.", [("/", f"line {exc.lineno}: {exc.msg}")]) from exc
    return scenario_from_dict(data)


def load_config(path: Path) -> ScenarioConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
