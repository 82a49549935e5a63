import sys
from typing import Callable, Sequence

from dotenv import load_dotenv

from .application.services import ScenarioService
from .controllers.cli_controller import create_cli
from .infrastructure import FgiSettings, RunLogger


def create_app(settings: FgiSettings | None = None) -> Callable[[Sequence[str] | None], int]:
    load_dotenv()

    settings = settings or FgiSettings.from_env()
    run_logger = RunLogger(log_path=settings.run_log_path)
    service = ScenarioService(settings, run_logger=run_logger)
    return create_cli(service)


def main(argv: Sequence[str] | None = None) -> int:
    return create_app()(argv)


if __name__ == "__main__":
    sys.exit(main())
