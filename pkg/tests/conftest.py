"""
Test configuration and fixtures for wflab.
"""
import sys
import textwrap
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from wflab.core.event_bus import EventBus
from wflab.core.module_loader import BaseExperiment, ExperimentLoader
from wflab.core.worker_manager import WorkerPool
from wflab.ldp.simplex import FitnessMatrix, ModelParams, SimplexPoint

# theta H(p | (0.8, 0.2)) for theta = 1, p = (0.5, 0.5)
NEUTRAL_TARGET_RATE = 0.2231435513142097


class RecordingExperiment(BaseExperiment):
    """Experiment that emits two rows and echoes its config kind"""

    kind = "recording"

    def __init__(self, event_bus: EventBus):
        super().__init__(event_bus)
        self.fail_with = None

    async def execute(self, config, pool):
        await self.emit_row({"gamma": 0.5, "value": 1.25})
        if self.fail_with is not None:
            raise self.fail_with
        await self.emit_row({"gamma": 0.25, "value": float("inf")})
        return {"answer": 42}


@pytest.fixture
def event_bus():
    return EventBus()


@pytest.fixture
async def started_event_bus(event_bus):
    await event_bus.start()
    yield event_bus
    await event_bus.stop()


@pytest.fixture
def experiment_loader(started_event_bus):
    return ExperimentLoader(started_event_bus)


@pytest.fixture
def recording_experiment(started_event_bus):
    return RecordingExperiment(started_event_bus)


@pytest.fixture
def pool():
    with WorkerPool(threads=4, name="test") as p:
        yield p


@pytest.fixture
def two_type_params():
    return ModelParams(1.0, SimplexPoint([0.5, 0.5]), 0.05)


@pytest.fixture
def three_type_params():
    return ModelParams(1.5, SimplexPoint([0.2, 0.3, 0.5]), 0.1)


@pytest.fixture
def boundary_params():
    """p on a face: the third type never mutates in"""
    return ModelParams(1.0, SimplexPoint([0.4, 0.6, 0.0]), 0.1)


@pytest.fixture
def selection_matrix():
    return FitnessMatrix([[1.0, 0.0], [0.0, 0.0]])


@pytest.fixture
def random_symmetric():
    def make(n, seed=0, scale=1.0):
        rng = np.random.default_rng(seed)
        a = rng.normal(scale=scale, size=(n, n))
        return FitnessMatrix((a + a.T) / 2.0)

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def write_config(tmp_path):
    """Write a TOML config into tmp_path and return its path"""

    def write(body: str, name: str = "run.toml") -> Path:
        path = tmp_path / name
        path.write_text(textwrap.dedent(body))
        return path

    return write


@pytest.fixture
def temp_experiment_dir(tmp_path):
    """Experiments directory holding a single discoverable experiment"""
    experiment_dir = tmp_path / "experiments" / "echo"
    experiment_dir.mkdir(parents=True)
    (experiment_dir / "module.py").write_text(textwrap.dedent('''
        from wflab.core.event_bus import EventBus
        from wflab.core.module_loader import BaseExperiment


        class EchoExperiment(BaseExperiment):
            """Echo the seed"""

            kind = "echo"

            async def execute(self, config, pool):
                await self.emit_row({"seed": config.seed})
                return {"seed": config.seed}


        def create_experiment(event_bus: EventBus):
            return EchoExperiment(event_bus)
    '''))
    broken_dir = tmp_path / "experiments" / "broken"
    broken_dir.mkdir()
    (broken_dir / "module.py").write_text("VALUE = 1\n")
    return tmp_path / "experiments"
