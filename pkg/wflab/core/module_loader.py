import asyncio
import importlib.util
import logging
import sys
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

from .event_bus import EventBus

logger = logging.getLogger(__name__)

EXPERIMENTS_DIR = Path(__file__).resolve().parent.parent / "experiments"


class ExperimentState(Enum):
    """Experiment lifecycle states"""
    UNLOADED = "unloaded"
    LOADING = "loading"
    INITIALIZING = "initializing"
    READY = "ready"
    RUNNING = "running"
    ERROR = "error"


class BaseExperiment(ABC):
    """
    Base class for experiments, one per CLI subcommand.

    Subclasses implement `execute`; `run` wraps it with lifecycle state and the
    `experiment.*` events. Result rows go out through `emit_row` so the results
    writer stays the only code that touches files.
    """

    kind: str = ""

    def __init__(self, event_bus: EventBus):
        self.event_bus = event_bus
        self.state = ExperimentState.INITIALIZING
        self.run_count = 0
        self.last_error: Optional[str] = None
        self.last_duration: Optional[float] = None

    @abstractmethod
    async def execute(self, config, pool) -> Dict[str, Any]:
        """Run the experiment for a validated config; returns the summary fields"""

    async def emit_row(self, row: Dict[str, Any]):
        await self.event_bus.emit("results.row", {"kind": self.kind, "row": row})

    async def emit_artifact(self, name: str, path):
        """Hand a PathGrid to the writer, stored as <name>.csv next to results.csv"""
        await self.event_bus.emit("results.artifact", {"kind": self.kind, "name": name, "path": path})

    async def run(self, config, pool) -> Dict[str, Any]:
        self.state = ExperimentState.RUNNING
        started = time.perf_counter()
        await self.event_bus.emit("experiment.started", {"kind": self.kind, "seed": config.seed})
        try:
            summary = await self.execute(config, pool)
        except Exception as e:
            self.state = ExperimentState.ERROR
            self.last_error = str(e)
            self.last_duration = time.perf_counter() - started
            logger.error(f"Experiment {self.kind} failed: {e}")
            await self.event_bus.emit("experiment.failed", {
                "kind": self.kind,
                "error": str(e),
                "error_type": type(e).__name__,
                "wall_time": self.last_duration,
            })
            raise
        self.run_count += 1
        self.state = ExperimentState.READY
        self.last_duration = time.perf_counter() - started
        await self.event_bus.emit("experiment.completed", {
            "kind": self.kind,
            "summary": summary,
            "wall_time": self.last_duration,
        })
        return summary

    def get_info(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "state": self.state.value,
            "description": (type(self).__doc__ or "").strip().split("\n")[0],
            "runs": self.run_count,
            "last_error": self.last_error,
            "last_duration": self.last_duration,
        }


@dataclass
class ExperimentInfo:
    """Information about a discovered experiment"""
    name: str
    path: Path
    experiment: Optional[BaseExperiment]
    state: ExperimentState
    loaded_at: datetime
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "path": str(self.path),
            "state": self.state.value,
            "loaded_at": self.loaded_at.isoformat(),
            "error": self.error,
            "experiment": self.experiment.get_info() if self.experiment else None,
        }


class ExperimentLoader:
    """Discovers experiments/<name>/module.py files exposing create_experiment(event_bus)"""

    def __init__(self, event_bus: EventBus):
        self.event_bus = event_bus
        self.experiments: Dict[str, BaseExperiment] = {}
        self.experiment_info: Dict[str, ExperimentInfo] = {}
        self._loading_lock = asyncio.Lock()

    async def load_experiments(self, experiments_dir=EXPERIMENTS_DIR):
        """Load every experiment package found under experiments_dir"""
        experiments_path = Path(experiments_dir)
        if not experiments_path.exists():
            logger.warning(f"Experiments directory {experiments_path} does not exist")
            return

        candidates = sorted(d for d in experiments_path.iterdir()
                            if d.is_dir() and not d.name.startswith('_') and (d / "module.py").exists())
        loaded = 0
        for experiment_dir in candidates:
            try:
                await self.load_experiment(experiment_dir.name, experiment_dir)
                loaded += 1
            except Exception as e:
                logger.error(f"Failed to load experiment {experiment_dir.name}: {e}")
        logger.info(f"Loaded {loaded}/{len(candidates)} experiments")

    async def load_experiment(self, name: str, experiment_path: Path) -> BaseExperiment:
        """Import one experiment package and register it under its kind"""
        async with self._loading_lock:
            info = ExperimentInfo(name=name, path=experiment_path, experiment=None,
                                  state=ExperimentState.LOADING, loaded_at=datetime.now())
            self.experiment_info[name] = info
            try:
                module_file = experiment_path / "module.py"
                if not module_file.exists():
                    raise FileNotFoundError(f"module.py not found in {experiment_path}")

                sys_module_name = f"wflab.experiments.{name}.module"
                sys.modules.pop(sys_module_name, None)
                spec = importlib.util.spec_from_file_location(sys_module_name, module_file)
                if spec is None or spec.loader is None:
                    raise ImportError(f"Could not load module spec for {name}")
                py_module = importlib.util.module_from_spec(spec)
                sys.modules[sys_module_name] = py_module
                try:
                    spec.loader.exec_module(py_module)
                except Exception:
                    sys.modules.pop(sys_module_name, None)
                    raise

                if not hasattr(py_module, 'create_experiment'):
                    raise AttributeError(f"Experiment {name} must have a create_experiment function")
                experiment = py_module.create_experiment(self.event_bus)
                if not isinstance(experiment, BaseExperiment):
                    raise TypeError(f"Experiment {name} must return a BaseExperiment instance. Got {type(experiment)}")
                if experiment.kind in self.experiments:
                    raise ValueError(f"Experiment kind {experiment.kind!r} is already registered")

                info.experiment = experiment
                experiment.state = ExperimentState.READY
                info.state = ExperimentState.READY
                self.experiments[experiment.kind] = experiment
                logger.debug(f"Loaded experiment {name} ({experiment.kind})")
                await self.event_bus.emit("experiment.loaded", {"name": name, "kind": experiment.kind})
                return experiment
            except Exception as e:
                info.state = ExperimentState.ERROR
                info.error = str(e)
                await self.event_bus.emit("experiment.load_error", {"name": name, "error": str(e)})
                raise

    async def unload_all(self):
        for kind in list(self.experiments):
            experiment = self.experiments.pop(kind)
            experiment.state = ExperimentState.UNLOADED
        for info in self.experiment_info.values():
            if info.state != ExperimentState.ERROR:
                info.state = ExperimentState.UNLOADED

    def get_experiment(self, kind: str) -> Optional[BaseExperiment]:
        return self.experiments.get(kind)

    def get_experiment_list(self) -> List[Dict[str, Any]]:
        result = []
        for name, info in sorted(self.experiment_info.items()):
            data = info.to_dict()
            data["loaded"] = info.experiment is not None and info.experiment.kind in self.experiments
            result.append(data)
        return result

    def get_stats(self) -> Dict[str, Any]:
        state_counts = {state.value: 0 for state in ExperimentState}
        for info in self.experiment_info.values():
            state_counts[info.state.value] += 1
        return {
            "loaded_experiments": len(self.experiments),
            "total_experiments": len(self.experiment_info),
            "failed_experiments": state_counts[ExperimentState.ERROR.value],
            "state_counts": state_counts,
        }
