import json
from pathlib import Path

import numpy as np

from src.infrastructure.run_logger import RunLogger


def _entries(log_path: Path) -> list[dict]:
    return [json.loads(line) for line in log_path.read_text(encoding="utf-8").splitlines()]


def test_entries_carry_run_and_experiment(tmp_path: Path):
    log_path = tmp_path / "logs" / "run.jsonl"
    logger = RunLogger(log_path).bind("abc-1", "heatflow")

    logger.log("level_completed", {"eps": 1e-2, "err": np.float64(3e-11), "N": np.int64(256)})
    logger.log("run_finished", {"passed": np.bool_(True), "masses": np.array([0.5, 0.5])})

    entries = _entries(log_path)
    assert [entry["event"] for entry in entries] == ["level_completed", "run_finished"]
    assert [entry["seq"] for entry in entries] == [0, 1]
    assert all(entry["run_id"] == "abc-1" and entry["experiment"] == "heatflow" for entry in entries)
    assert entries[0]["payload"] == {"eps": 1e-2, "err": 3e-11, "N": 256}
    assert entries[1]["payload"] == {"passed": True, "masses": [0.5, 0.5]}
    assert "timestamp" in entries[0]


def test_rebinding_restarts_the_sequence(tmp_path: Path):
    log_path = tmp_path / "run.jsonl"
    root = RunLogger(log_path)

    root.bind("first", "fgi").log("run_started", {})
    root.bind("second", "fgi").log("run_started", {})

    assert [(entry["run_id"], entry["seq"]) for entry in _entries(log_path)] == [("first", 0), ("second", 0)]


def test_non_finite_values_stay_valid_json(tmp_path: Path):
    log_path = tmp_path / "run.jsonl"

    RunLogger(log_path).bind("abc-2").log(
        "line_search_exhausted", {"energy": float("inf"), "history": [np.nan, 1.0], "where": (1, 2)}
    )

    [entry] = _entries(log_path)
    assert entry["experiment"] is None
    assert entry["payload"] == {"energy": "inf", "history": ["nan", 1.0], "where": [1, 2]}


def test_logger_without_path_is_a_no_op(tmp_path: Path):
    RunLogger(None).log("run_started", {"seed": 1})

    assert list(tmp_path.iterdir()) == []
