import asyncio
import logging
import math
from typing import Any, Dict

from wflab.core.event_bus import EventBus
from wflab.core.exceptions import ConfigError, InvalidStateError
from wflab.core.module_loader import BaseExperiment
from wflab.ldp import stats
from wflab.ldp.action import PathGrid, action_neutral, action_selective
from wflab.ldp.minimizer import MinimizeSpec, minimize_action, tube_infimum_action
from wflab.ldp.pathio import read_path_csv
from wflab.ldp.simulator import estimate_tube_probability, flow_path

logger = logging.getLogger(__name__)


class TubeProbabilityExperiment(BaseExperiment):
    """Probability that simulated paths stay in a sup-norm tube around a center path, swept over gamma"""

    kind = "tube-prob"

    async def _center(self, config, params, V, cfg, pool) -> PathGrid:
        event = config.event
        sim = config.sim
        times = cfg.record_times
        start = config.point(sim.start, "sim.start", default=params.p)
        if event.center == "flow":
            return await asyncio.to_thread(flow_path, params, V, start, times)
        if event.center == "minimizer":
            block = config.require("minimize")
            end = config.point(block.end, "minimize.end")
            spec = MinimizeSpec(start, end, cfg.t_end, times.size - 1, block.max_iters, block.grad_tol, V)
            result = await asyncio.to_thread(minimize_action, params, spec, None, pool)
            return result.path
        return read_path_csv(event.center)

    async def execute(self, config, pool) -> Dict[str, Any]:
        sim = config.require("sim")
        event = config.require("event")
        if event.center is None:
            raise ConfigError("tube-prob needs a tube (center, radius)", field="event.center")
        V = config.fitness_matrix()
        gammas = config.model.gamma_list()
        params = config.model.params(gammas[0])
        cfg = config.sim_config()
        try:
            center = await self._center(config, params, V, cfg, pool)
        except InvalidStateError as e:
            raise ConfigError(str(e), field="event.center") from e
        await self.emit_artifact("center", center)
        center_action = action_neutral(params, center) if V is None else action_selective(params, V, center)
        tube = None
        if event.center != "flow":
            block = config.minimize
            limits = {} if block is None else {"max_iters": block.max_iters, "grad_tol": block.grad_tol}
            tube = await asyncio.to_thread(tube_infimum_action, params, center, event.radius, V, pool=pool, **limits)
            await self.emit_artifact("tube_infimum", tube.path)
            logger.info(f"Tube infimum action {tube.action:.6g} (center path {center_action:.6g})")

        values = []
        for gamma in gammas:
            row_params = params.with_gamma(gamma)
            estimate = await asyncio.to_thread(estimate_tube_probability, row_params, cfg, center, event.radius,
                                               sim.trajectories, V, pool)
            interval = estimate.interval
            values.append(estimate.gamma_log)
            await self.emit_row({
                "gamma": gamma,
                "seed": cfg.seed,
                "trajectories": estimate.trajectories,
                "radius": event.radius,
                "hits": estimate.hits,
                "probability": estimate.probability,
                "gamma_log_prob": estimate.gamma_log,
                "ci_lower": stats.gamma_log(gamma, interval.lower),
                "ci_upper": stats.gamma_log(gamma, interval.upper),
                "zero_hits": interval.zero_hits,
            })
            logger.info(f"gamma={gamma:g}: {estimate.hits}/{estimate.trajectories} paths in the tube")

        summary: Dict[str, Any] = {
            "params": params.to_dict(),
            "sim": cfg.to_dict(),
            "center": event.center,
            "radius": event.radius,
            "gammas": gammas,
            "gamma_log_prob": values,
            "center_action": center_action,
            "tube_action": 0.0 if tube is None else tube.action,
            "increasing_toward_zero": all(b >= a for a, b in zip(values, values[1:])),
        }
        if tube is not None:
            summary["tube_end"] = tube.end.weights
            summary["tube_infimum_in_tube"] = tube.in_tube
            last = values[-1]
            if math.isfinite(last) and tube.action > 0.0:
                ratio = -last / tube.action
                summary["action_ratio"] = ratio
                summary["within_factor_two"] = 0.5 <= ratio <= 2.0
        return summary


def create_experiment(event_bus: EventBus) -> BaseExperiment:
    return TubeProbabilityExperiment(event_bus)
