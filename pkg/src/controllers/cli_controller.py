from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Callable, Sequence, TextIO

from ..application.services import ScenarioService
from ..domain.errors import ConfigurationError

EXIT_PASS = 0
EXIT_TOLERANCE = 2
EXIT_ERROR = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fgi-lab", description="Five-gradients inequality lab.")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run a scenario and write its artifacts.")
    run.add_argument("--config", type=Path, required=True)
    run.add_argument("--out-dir", type=Path)
    run.add_argument("--threads", type=int)
    run.add_argument("--seed-override", type=int)

    validate = commands.add_parser("validate", help="Check a scenario config without running it.")
    validate.add_argument("--config", type=Path, required=True)

    mesh = commands.add_parser("mesh", help="Write a generated mesh in the fgi-mesh v1 format.")
    mesh.add_argument("--kind", choices=("sphere", "torus"), required=True)
    mesh.add_argument("--subdivisions", type=int, default=2)
    mesh.add_argument("--radius", type=float, default=1.0)
    mesh.add_argument("--nx", type=int, default=16)
    mesh.add_argument("--ny", type=int, default=16)
    mesh.add_argument("--Lx", type=float, default=1.0)
    mesh.add_argument("--Ly", type=float, default=1.0)
    mesh.add_argument("--out", type=Path, required=True)
    return parser


def create_cli(
    service: ScenarioService, stdout: TextIO | None = None, stderr: TextIO | None = None
) -> Callable[[Sequence[str] | None], int]:
    def emit(payload: dict[str, Any], stream: TextIO | None) -> None:
        print(json.dumps(payload, sort_keys=True, default=str), file=stream or sys.stdout)

    def run(args: argparse.Namespace) -> int:
        cfg = service.load(args.config)
        outcome = service.run_scenario(cfg, args.out_dir, args.threads, args.seed_override)
        emit(
            {
                "run_id": outcome.run_id,
                "passed": outcome.passed,
                "artifacts": list(outcome.artifacts),
                "summary": outcome.summary,
            },
            stdout,
        )
        return EXIT_PASS if outcome.passed else EXIT_TOLERANCE

    def validate(args: argparse.Namespace) -> int:
        cfg = service.load(args.config)
        emit({"valid": True, "experiment": cfg.experiment.type, "manifold": cfg.manifold.kind}, stdout)
        return EXIT_PASS

    def mesh(args: argparse.Namespace) -> int:
        path = service.export_mesh(
            args.kind,
            args.out,
            subdivisions=args.subdivisions,
            radius=args.radius,
            nx=args.nx,
            ny=args.ny,
            Lx=args.Lx,
            Ly=args.Ly,
        )
        emit({"mesh": str(path)}, stdout)
        return EXIT_PASS

    handlers = {"run": run, "validate": validate, "mesh": mesh}

    def main(argv: Sequence[str] | None = None) -> int:
        try:
            args = build_parser().parse_args(argv)
        except SystemExit as exc:
            return EXIT_PASS if not exc.code else EXIT_ERROR

        try:
            return handlers[args.command](args)
        except FileNotFoundError as exc:
            emit({"error": str(exc)}, stderr or sys.stderr)
        except ConfigurationError as exc:
            emit(
                {
                    "error": str(exc).splitlines()[0],
                    "violations": [{"path": pointer, "message": message} for pointer, message in exc.violations],
                },
                stderr or sys.stderr,
            )
        except RuntimeError as exc:
            emit({"error": type(exc).__name__, "details": str(exc)}, stderr or sys.stderr)
        except (ValueError, OSError) as exc:
            emit({"error": type(exc).__name__, "details": str(exc)}, stderr or sys.stderr)
        return EXIT_ERROR

    return main
