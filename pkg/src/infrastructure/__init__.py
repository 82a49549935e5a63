from .config_loader import FgiSettings, load_config, parse_config
from .mesh_io import read_mesh, write_mesh
from .report_writer import ReportWriter
from .run_logger import RunLogger

__all__ = [
    "FgiSettings",
    "load_config",
    "parse_config",
    "read_mesh",
    "write_mesh",
    "ReportWriter",
    "RunLogger",
]
