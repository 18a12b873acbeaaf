import asyncio
import logging
from typing import Any, Dict

from wflab.core.event_bus import EventBus
from wflab.core.exceptions import ConfigError, ConvergenceError, InvalidStateError, WFLabError
from wflab.core.module_loader import BaseExperiment
from wflab.ldp.minimizer import MinimizeResult, MinimizeSpec, instanton_bvp, minimize_action, refine_minimizer
from wflab.ldp.pathio import read_path_csv
from wflab.ldp.simplex import compute_C

logger = logging.getLogger(__name__)


class MinimizeActionExperiment(BaseExperiment):
    """Minimal discrete action between fixed endpoints over a fixed horizon"""

    kind = "minimize-action"

    async def _emit_history(self, result: MinimizeResult):
        for iteration, value in enumerate(result.history):
            await self.emit_row({"iteration": iteration, "action": value, "init": result.init})

    async def execute(self, config, pool) -> Dict[str, Any]:
        block = config.require("minimize")
        params = config.model.params()
        V = config.fitness_matrix()
        if block.start is None and V is not None:
            default_start = (await asyncio.to_thread(compute_C, params, V)).argmax
        else:
            default_start = params.p
        start = config.point(block.start, "minimize.start", default=default_start)
        end = config.point(block.end, "minimize.end")
        try:
            spec = MinimizeSpec(start, end, block.horizon, block.knots, block.max_iters, block.grad_tol, V)
        except InvalidStateError as e:
            raise ConfigError(str(e), field="minimize") from e
        init = read_path_csv(block.init) if block.init is not None else None

        try:
            result = await asyncio.to_thread(minimize_action, params, spec, init, pool)
        except ConvergenceError as e:
            if isinstance(e.best, MinimizeResult):
                await self._emit_history(e.best)
                await self.emit_artifact("minimizer", e.best.path)
            raise
        await self._emit_history(result)
        await self.emit_artifact("minimizer", result.path)

        summary: Dict[str, Any] = {"params": params.to_dict(), "start": start.weights, "end": end.weights,
                                   **result.to_dict()}
        if block.refine:
            refined, change = await asyncio.to_thread(refine_minimizer, params, spec, result, pool)
            await self.emit_artifact("minimizer_refined", refined.path)
            summary["refined_action"] = refined.action
            summary["refinement_change"] = change
            if change > 1e-2:
                logger.warning(f"Action moved by {change:.3g} under knot doubling; the grid is too coarse")

        if block.oracle and params.n == 2:
            try:
                _, bvp_action = await asyncio.to_thread(instanton_bvp, params, start, end, block.horizon, V)
            except WFLabError as e:
                logger.warning(f"Boundary-value oracle unavailable: {e}")
            else:
                summary["bvp_action"] = bvp_action
                if bvp_action > 0.0:
                    summary["bvp_relative_gap"] = abs(result.action - bvp_action) / bvp_action
        logger.info(f"Minimal action {result.action:.10g} ({result.init}, {result.iterations} iterations)")
        return summary


def create_experiment(event_bus: EventBus) -> BaseExperiment:
    return MinimizeActionExperiment(event_bus)
