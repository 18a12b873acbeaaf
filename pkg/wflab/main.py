import argparse
import asyncio
import logging
import sys
from contextlib import asynccontextmanager
from pathlib import Path
from typing import Any, Dict, List, Optional

import uvicorn
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

import wflab
from wflab.core.config import ExperimentConfig, load_config, parse_config
from wflab.core.event_bus import EventBus
from wflab.core.exceptions import ConfigError, OutputError, WFLabError
from wflab.core.module_loader import EXPERIMENTS_DIR, ExperimentLoader
from wflab.core.results import ResultsWriter, to_jsonable
from wflab.core.worker_manager import WorkerPool

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

EXPERIMENT_KINDS = (
    "equilibrium-scan",
    "simulate",
    "girsanov-check",
    "action",
    "minimize-action",
    "quasipotential",
    "partition-entropy",
    "tube-prob",
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILURE = 3


class RunResponse(BaseModel):
    status: str
    kind: str
    directory: str
    summary: Dict[str, Any] = Field(default_factory=dict)


async def run_experiment(config: ExperimentConfig, threads: Optional[int] = None) -> Dict[str, Any]:
    """Run one experiment on its own event bus; the results writer owns the output directory"""
    event_bus = EventBus()
    await event_bus.start()
    loader = ExperimentLoader(event_bus)
    name = config.kind.replace("-", "_")
    experiment = await loader.load_experiment(name, EXPERIMENTS_DIR / name)

    sim = config.sim
    writer = ResultsWriter(
        event_bus,
        config.output.directory,
        config.echo(),
        defaults={
            "gamma": config.model.gamma,
            "seed": config.seed,
            "trajectories": sim.trajectories if sim is not None else None,
        },
        formats=config.output.formats,
    ).attach()
    pool = WorkerPool(threads if threads is not None else config.experiment.threads, name=name)
    try:
        with pool:
            summary = await experiment.run(config, pool)
    finally:
        writer.detach()
        await loader.unload_all()
        await event_bus.stop()
    if writer.status != "completed":
        raise OutputError(f"run ended with results status {writer.status!r}")
    return {"status": writer.status, "kind": config.kind, "directory": str(config.output.directory),
            "summary": summary}


# -- HTTP surface ----------------------------------------------------------------

def create_app() -> FastAPI:
    state: Dict[str, Any] = {}

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        logger.info("Starting wflab API...")
        event_bus = EventBus()
        await event_bus.start()
        loader = ExperimentLoader(event_bus)
        await loader.load_experiments(EXPERIMENTS_DIR)
        state["event_bus"] = event_bus
        state["loader"] = loader
        logger.info(f"Available experiments: {sorted(loader.experiments)}")
        yield
        logger.info("Shutting down wflab API...")
        await loader.unload_all()
        await event_bus.stop()

    app = FastAPI(
        title="wflab",
        description="Large-deviation experiments for the Wright-Fisher diffusion",
        version=wflab.__version__,
        lifespan=lifespan,
    )

    @app.get("/health")
    async def health_check():
        return {"status": "healthy", "version": wflab.__version__}

    @app.get("/api/experiments")
    async def list_experiments():
        loader = state.get("loader")
        if loader is None:
            raise HTTPException(status_code=503, detail="Experiment loader not available")
        return {"experiments": loader.get_experiment_list(), "stats": loader.get_stats()}

    @app.post("/api/experiments/{kind}/run", response_model=RunResponse)
    async def run_kind(kind: str, body: Dict[str, Any]):
        loader = state.get("loader")
        if loader is None or loader.get_experiment(kind) is None:
            raise HTTPException(status_code=404, detail=f"Unknown experiment {kind!r}")
        block = dict(body.get("experiment", {}))
        block.setdefault("kind", kind)
        try:
            if block["kind"] != kind:
                raise ConfigError(f"is {block['kind']!r}, the endpoint runs {kind!r}", field="experiment.kind")
            config = parse_config({**body, "experiment": block}, base_dir=Path.cwd())
            outcome = await run_experiment(config)
        except ConfigError as e:
            raise HTTPException(status_code=422, detail=str(e))
        except WFLabError as e:
            raise HTTPException(status_code=500, detail=str(e))
        return RunResponse(**to_jsonable(outcome))

    return app


# -- command line ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wflab", description=__doc__ or "Wright-Fisher large-deviation experiments")
    parser.add_argument("--version", action="version", version=f"wflab {wflab.__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="TOML experiment config")
    common.add_argument("--seed", type=int, help="Override the master seed")
    common.add_argument("--out", type=Path, help="Override the output directory")
    common.add_argument("--threads", type=int, help="Worker threads (default: $WFLAB_THREADS or physical cores)")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")

    for kind in EXPERIMENT_KINDS:
        sub.add_parser(kind, parents=[common], help=f"run a {kind} experiment")

    serve = sub.add_parser("serve", help="serve the HTTP API")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    return parser


def _load(args) -> ExperimentConfig:
    config = load_config(args.config)
    if config.kind != args.command:
        raise ConfigError(f"is {config.kind!r}, but the subcommand is {args.command!r}", field="experiment.kind")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        raise ConfigError("must be an unsigned 64-bit integer", field="--seed")
    if args.threads is not None and args.threads < 1:
        raise ConfigError("must be >= 1", field="--threads")
    return config.with_overrides(seed=args.seed, out=args.out, threads=args.threads)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)

    if args.command == "serve":
        uvicorn.run(create_app(), host=args.host, port=args.port)
        return EXIT_OK

    try:
        config = _load(args)
        outcome = asyncio.run(run_experiment(config, threads=args.threads))
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG
    except WFLabError as e:
        logger.error(f"Experiment failed: {e}")
        return EXIT_FAILURE
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        return EXIT_FAILURE
    logger.info(f"{outcome['kind']} finished, results in {outcome['directory']}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
