"""
Unit tests for ExperimentLoader discovery and registration.
"""
import pytest

from wflab.core.module_loader import EXPERIMENTS_DIR, BaseExperiment, ExperimentLoader, ExperimentState
from wflab.main import EXPERIMENT_KINDS


@pytest.mark.unit
class TestExperimentLoader:
    """Test cases for ExperimentLoader"""

    def test_initialization(self, started_event_bus):
        """A new loader is empty"""
        loader = ExperimentLoader(started_event_bus)

        assert loader.event_bus is started_event_bus
        assert loader.experiments == {}
        assert loader.experiment_info == {}

    @pytest.mark.asyncio
    async def test_load_single_experiment(self, experiment_loader, temp_experiment_dir):
        """Loading a package registers it under its kind"""
        experiment = await experiment_loader.load_experiment("echo", temp_experiment_dir / "echo")

        assert isinstance(experiment, BaseExperiment)
        assert experiment.state == ExperimentState.READY
        assert experiment_loader.get_experiment("echo") is experiment
        info = experiment_loader.experiment_info["echo"]
        assert info.state == ExperimentState.READY
        assert info.error is None

    @pytest.mark.asyncio
    async def test_missing_module_file(self, experiment_loader, temp_experiment_dir):
        """A directory without module.py is an error recorded in experiment_info"""
        with pytest.raises(FileNotFoundError):
            await experiment_loader.load_experiment("absent", temp_experiment_dir / "absent")

        info = experiment_loader.experiment_info["absent"]
        assert info.state == ExperimentState.ERROR
        assert info.error is not None
        assert "absent" not in experiment_loader.experiments

    @pytest.mark.asyncio
    async def test_module_without_factory(self, experiment_loader, temp_experiment_dir):
        """module.py must define create_experiment"""
        with pytest.raises(AttributeError):
            await experiment_loader.load_experiment("broken", temp_experiment_dir / "broken")
        assert experiment_loader.experiment_info["broken"].state == ExperimentState.ERROR

    @pytest.mark.asyncio
    async def test_duplicate_kind_rejected(self, experiment_loader, temp_experiment_dir):
        """Two packages cannot register the same kind"""
        await experiment_loader.load_experiment("echo", temp_experiment_dir / "echo")
        with pytest.raises(ValueError):
            await experiment_loader.load_experiment("echo_again", temp_experiment_dir / "echo")

    @pytest.mark.asyncio
    async def test_load_directory_skips_failures(self, experiment_loader, temp_experiment_dir):
        """Directory discovery loads what it can and logs the rest"""
        await experiment_loader.load_experiments(temp_experiment_dir)

        assert list(experiment_loader.experiments) == ["echo"]
        stats = experiment_loader.get_stats()
        assert stats["loaded_experiments"] == 1
        assert stats["total_experiments"] == 2
        assert stats["failed_experiments"] == 1

    @pytest.mark.asyncio
    async def test_missing_directory_is_harmless(self, experiment_loader, tmp_path):
        """A missing experiments directory loads nothing"""
        await experiment_loader.load_experiments(tmp_path / "nowhere")
        assert experiment_loader.experiments == {}

    @pytest.mark.asyncio
    async def test_unload_all(self, experiment_loader, temp_experiment_dir):
        """unload_all deregisters every experiment"""
        experiment = await experiment_loader.load_experiment("echo", temp_experiment_dir / "echo")
        await experiment_loader.unload_all()

        assert experiment_loader.experiments == {}
        assert experiment.state == ExperimentState.UNLOADED
        assert experiment_loader.experiment_info["echo"].state == ExperimentState.UNLOADED

    @pytest.mark.asyncio
    async def test_experiment_list(self, experiment_loader, temp_experiment_dir):
        """get_experiment_list reports each package with its info"""
        await experiment_loader.load_experiments(temp_experiment_dir)
        listing = experiment_loader.get_experiment_list()

        assert [entry["name"] for entry in listing] == ["broken", "echo"]
        echo = listing[1]
        assert echo["loaded"]
        assert echo["experiment"]["kind"] == "echo"
        assert listing[0]["experiment"] is None

    @pytest.mark.asyncio
    async def test_emits_load_events(self, experiment_loader, started_event_bus, temp_experiment_dir):
        """Loads announce success and failure on the bus"""
        events = []
        started_event_bus.subscribe("experiment.load*", lambda data: events.append(data["_event_type"]))
        await experiment_loader.load_experiments(temp_experiment_dir)

        assert sorted(events) == ["experiment.load_error", "experiment.loaded"]

    @pytest.mark.asyncio
    async def test_bundled_experiments_cover_every_subcommand(self, experiment_loader):
        """Every CLI subcommand has a bundled experiment"""
        await experiment_loader.load_experiments(EXPERIMENTS_DIR)

        assert sorted(experiment_loader.experiments) == sorted(EXPERIMENT_KINDS)
        assert experiment_loader.get_stats()["failed_experiments"] == 0
