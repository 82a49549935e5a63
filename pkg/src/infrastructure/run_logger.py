from __future__ import annotations

import json
import math
from datetime import datetime, timezone
from itertools import count
from pathlib import Path
from typing import Any

import numpy as np


class RunLogger:
    """
    JSONL event log for scenario runs. Each line carries the run id, the
    experiment type, a per-run sequence number, the event name and its payload.
    Numpy scalars and arrays become plain JSON; non-finite floats become strings.
    Does nothing when no log path is configured.
    """

    def __init__(self, log_path: Path | None, run_id: str = "", experiment: str | None = None):
        self.log_path = log_path
        self.run_id = run_id
        self.experiment = experiment
        self._seq = count()

    def bind(self, run_id: str, experiment: str | None = None) -> "RunLogger":
        return RunLogger(self.log_path, run_id, experiment)

    def log(self, event: str, payload: dict[str, Any]) -> None:
        if not self.log_path:
            return
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        entry = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "run_id": self.run_id,
            "experiment": self.experiment,
            "seq": next(self._seq),
            "event": event,
            "payload": _plain(payload),
        }
        with self.log_path.open("a", encoding="utf-8") as fp:
            fp.write(json.dumps(entry, ensure_ascii=False, allow_nan=False) + "\n")


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(key): _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return _plain(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    return str(value)
