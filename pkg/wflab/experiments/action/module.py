import asyncio
import logging
import math
from typing import Any, Dict, Optional

import numpy as np

from wflab.core.event_bus import EventBus
from wflab.core.exceptions import ConfigError, InvalidStateError
from wflab.core.module_loader import BaseExperiment
from wflab.ldp.action import (
    PathGrid,
    action_neutral,
    action_selective,
    action_variational,
    admissible,
    boundary_blowup_profile,
    dyadic_approach_grid,
    gamma_V,
    gamma_V_boundary,
    linear_path,
)
from wflab.ldp.pathio import read_path_csv
from wflab.ldp.simplex import FitnessMatrix, ModelParams
from wflab.ldp.simulator import flow_path

logger = logging.getLogger(__name__)


def build_path(config, params: ModelParams, V: Optional[FitnessMatrix]) -> PathGrid:
    block = config.require("path")
    if block.shape == "file":
        path = read_path_csv(block.file)
        if path.n != params.n:
            raise ConfigError(f"path has {path.n} coordinates, expected n={params.n}", field="path.file")
        return path
    if block.dyadic_levels is not None:
        times = dyadic_approach_grid(block.dyadic_levels, block.per_level, block.horizon)
    else:
        times = np.linspace(0.0, block.horizon, block.knots + 1)
    start = config.point(block.start, "path.start", default=params.p)
    if block.shape == "constant":
        return PathGrid(times, np.tile(start.weights, (times.size, 1)))
    if block.shape == "flow":
        return flow_path(params, V, start, times)
    end = config.point(block.end, "path.end")
    s = (times / block.horizon)[:, None]
    if block.shape == "linear":
        if block.dyadic_levels is None:
            return linear_path(start, end, times)
        return PathGrid(times, start.weights + (end.weights - start.weights) * s)
    X = end.weights + (start.weights - end.weights) * (1.0 - s) ** 2
    return PathGrid(times, X)


class ActionExperiment(BaseExperiment):
    """Rate functionals of one path: neutral and selective actions, the tilt Gamma_V and the blow-up profile"""

    kind = "action"

    async def execute(self, config, pool) -> Dict[str, Any]:
        params = config.model.params()
        V = config.fitness_matrix()
        try:
            path = await asyncio.to_thread(build_path, config, params, V)
        except InvalidStateError as e:
            raise ConfigError(str(e), field="path") from e

        profile = boundary_blowup_profile(params, path)
        for (t, cumulative), x in zip(profile, path.knots):
            row: Dict[str, Any] = {"t": t, "cumulative_action": cumulative}
            row.update({f"x_{i + 1}": x[i] for i in range(params.n)})
            await self.emit_row(row)

        ok = admissible(params, path)
        neutral = action_neutral(params, path)
        summary: Dict[str, Any] = {
            "params": params.to_dict(),
            "knots": path.M,
            "horizon": path.T,
            "admissible": ok,
            "action_neutral": neutral,
            "action_variational": await asyncio.to_thread(action_variational, params, path, None),
        }
        if V is not None:
            selective = action_selective(params, V, path)
            tilt = gamma_V(params, V, path)
            summary.update({
                "action_selective": selective,
                "gamma_V": tilt,
                "gamma_V_boundary": gamma_V_boundary(params, V, path),
                "action_variational_selective": await asyncio.to_thread(action_variational, params, path, V),
            })
            if math.isfinite(neutral):
                summary["identity_residual"] = neutral - tilt - selective
        finite = [a for _, a in profile if math.isfinite(a)]
        summary["max_finite_partial_action"] = max(finite) if finite else None
        logger.info(f"Action of a {path.M}-segment path: {neutral:.10g}")
        return summary


def create_experiment(event_bus: EventBus) -> BaseExperiment:
    return ActionExperiment(event_bus)
