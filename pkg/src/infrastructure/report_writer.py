from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping

from ..domain.errors import ArtifactWriteError


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if hasattr(value, "item"):
        value = value.item()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _plain(value: Any) -> Any:
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, Path):
        return value.as_posix()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def _finite(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {key: _finite(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(item) for item in value]
    return value


def format_csv(fieldnames: list[str], rows: Iterable[Mapping[str, Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({name: _cell(row.get(name)) for name in fieldnames})
    return buffer.getvalue()


def format_json(payload: Any) -> str:
    plain = json.loads(json.dumps(payload, default=_plain))
    return json.dumps(_finite(plain), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


class ReportWriter:
    """
    Writes run artifacts into one output directory and remembers them,
    so a failed run can remove what it already wrote.
    """

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.written: list[Path] = []

    def _write(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            with path.open("w", encoding="utf-8", newline="") as fp:
                fp.write(text)
        except OSError as exc:
            raise ArtifactWriteError(path, exc.strerror or str(exc)) from exc
        if path not in self.written:
            self.written.append(path)
        return path

    def write_csv(self, name: str, fieldnames: list[str], rows: Iterable[Mapping[str, Any]]) -> Path:
        return self._write(name, format_csv(fieldnames, rows))

    def write_json(self, name: str, payload: Any) -> Path:
        return self._write(name, format_json(payload))

    def discard(self) -> None:
        for path in self.written:
            path.unlink(missing_ok=True)
        self.written = []
