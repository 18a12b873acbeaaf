"""
Single writer for run artifacts: `results.csv` (one flushed line per row event),
path CSVs for artifact events, and `summary.json` on completion or failure.
"""
import csv
import json
import logging
import math
import platform
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import psutil
import pydantic
import scipy

import wflab
from wflab.core.event_bus import EventBus
from wflab.core.exceptions import OutputError
from wflab.ldp.pathio import format_float, write_path_csv

logger = logging.getLogger(__name__)

LEADING_COLUMNS = ("gamma", "seed", "trajectories")


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    return str(value)


def to_jsonable(value: Any) -> Any:
    """JSON-safe copy: numpy scalars and arrays unwrapped, non-finite floats as strings"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, Path):
        return str(value)
    return value


def versions() -> Dict[str, str]:
    return {
        "wflab": wflab.__version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pydantic": pydantic.VERSION,
    }


class ResultsWriter:
    """
    Event-driven writer for one run.

    Row dicts without `gamma`, `seed` or `trajectories` receive the run defaults,
    and those three columns lead the header fixed by the first row. A later row
    with a column outside that header is rejected.

    Write failures surface to the emitter as OutputError. Once one has happened
    the run can only end as "failed": a later `experiment.completed` writes a
    failed summary and raises.
    """

    def __init__(self, event_bus: EventBus, directory: Path, echo: Dict[str, Any],
                 defaults: Optional[Dict[str, Any]] = None, formats=("csv", "json")):
        self.event_bus = event_bus
        self.directory = Path(directory)
        self.echo = echo
        self.defaults = dict(defaults or {})
        self.formats = set(formats)
        self.columns: Optional[List[str]] = None
        self.rows_written = 0
        self.artifacts: List[str] = []
        self.status = "pending"
        self.write_error: Optional[OutputError] = None
        self.summary_path: Optional[Path] = None
        self._handles: List[tuple] = []
        self._csv_file = None
        self._csv = None
        self._started = time.perf_counter()
        self._started_at = datetime.now(timezone.utc)

    @property
    def results_path(self) -> Path:
        return self.directory / "results.csv"

    def attach(self) -> "ResultsWriter":
        self.directory.mkdir(parents=True, exist_ok=True)
        for pattern, callback, propagate in (
            ("results.row", self._on_row, True),
            ("results.artifact", self._on_artifact, True),
            ("experiment.completed", self._on_completed, True),
            ("experiment.failed", self._on_failed, False),
        ):
            handler_id = self.event_bus.subscribe(pattern, callback, propagate=propagate)
            self._handles.append((pattern, handler_id))
        return self

    def detach(self):
        for pattern, handler_id in self._handles:
            self.event_bus.off(pattern, handler_id)
        self._handles.clear()
        self._close()

    def _close(self):
        if self._csv_file is not None:
            self._csv_file.close()
            self._csv_file = None
            self._csv = None

    def _fail(self, message: str, cause: Exception) -> OutputError:
        error = OutputError(f"{message}: {cause}")
        if self.write_error is None:
            self.write_error = error
        logger.error(str(error))
        return error

    def _on_row(self, data: Dict[str, Any]):
        row = {**{k: v for k, v in self.defaults.items() if k in LEADING_COLUMNS}, **data["row"]}
        if self.columns is None:
            lead = [c for c in LEADING_COLUMNS if c in row]
            self.columns = lead + [c for c in row if c not in LEADING_COLUMNS]
        extra = set(row) - set(self.columns)
        if extra:
            raise self._fail(f"row {self.rows_written + 1} has columns outside the header {self.columns}",
                             KeyError(sorted(extra)))
        if "csv" in self.formats:
            try:
                if self._csv is None:
                    self._csv_file = self.results_path.open("w", newline="")
                    self._csv = csv.writer(self._csv_file, lineterminator="\n")
                    self._csv.writerow(self.columns)
                self._csv.writerow([format_cell(row.get(c)) for c in self.columns])
                self._csv_file.flush()
            except OSError as e:
                raise self._fail(f"cannot write {self.results_path}", e) from e
        self.rows_written += 1

    def _on_artifact(self, data: Dict[str, Any]):
        try:
            target = write_path_csv(data["path"], self.directory / f"{data['name']}.csv")
        except Exception as e:
            raise self._fail(f"cannot write artifact {data.get('name')!r}", e) from e
        self.artifacts.append(target.name)
        logger.info(f"Wrote {target}")

    def _write_summary(self, status: str, summary: Optional[Dict[str, Any]], error: Optional[Dict[str, Any]],
                       wall_time: Optional[float]):
        self.status = status
        self._close()
        if "json" not in self.formats:
            return
        payload = {
            "status": status,
            "kind": self.echo.get("experiment", {}).get("kind"),
            "seed": self.defaults.get("seed"),
            "config": self.echo,
            "versions": versions(),
            "host": {"cpus_physical": psutil.cpu_count(logical=False), "cpus_logical": psutil.cpu_count()},
            "started_at": self._started_at.isoformat(),
            "wall_time": wall_time if wall_time is not None else time.perf_counter() - self._started,
            "rows": self.rows_written,
            "artifacts": self.artifacts,
            "summary": summary or {},
            "error": error,
        }
        self.summary_path = self.directory / "summary.json"
        try:
            with self.summary_path.open("w") as fh:
                json.dump(to_jsonable(payload), fh, indent=2, sort_keys=True, allow_nan=False)
                fh.write("\n")
        except OSError as e:
            raise self._fail(f"cannot write {self.summary_path}", e) from e
        logger.info(f"Wrote {self.summary_path} ({status}, {self.rows_written} rows)")

    def _on_completed(self, data: Dict[str, Any]):
        if self.write_error is not None:
            error = {"type": type(self.write_error).__name__, "message": str(self.write_error)}
            self._write_summary("failed", data.get("summary"), error, data.get("wall_time"))
            raise self.write_error
        self._write_summary("completed", data.get("summary"), None, data.get("wall_time"))

    def _on_failed(self, data: Dict[str, Any]):
        error = {"type": data.get("error_type"), "message": data.get("error")}
        self._write_summary("failed", None, error, data.get("wall_time"))
